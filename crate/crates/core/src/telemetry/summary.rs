use std::collections::BTreeMap;

use serde::Serialize;

use super::TelemetrySample;
use crate::error::{Error, Result};

/// Nearest-rank percentile of sorted data: the value at rank
/// `ceil(p/100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of empty data");
    let rank = ((p / 100.0 * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub peer_id: String,
    pub stream_id: u8,
    pub rows: usize,
    pub duration_s: f64,
    pub rtt_samples: usize,
    pub rtt_missing: usize,
    pub rtt_min_ms: Option<f64>,
    pub rtt_median_ms: Option<f64>,
    pub rtt_p99_ms: Option<f64>,
    pub rtt_threshold_ms: f64,
    /// Fraction of RTT samples strictly below the threshold.
    pub rtt_below_threshold: Option<f64>,
    pub frames_lost: u64,
    pub frames_concealed: u64,
    pub loss_ratio: f64,
    pub lost_audio_s: f64,
    pub buffer_mean_ms: f64,
    pub buffer_p2_5_ms: f64,
    pub buffer_p97_5_ms: f64,
}

/// Summary of the rows of one stream.
pub fn summarize(rows: &[TelemetrySample], sample_rate: u32, rtt_threshold_ms: f64) -> Result<SessionSummary> {
    let last = rows.last().ok_or_else(|| Error::analysis("empty telemetry log"))?;
    if rows.iter().any(|r| r.stream_id != last.stream_id) {
        return Err(Error::analysis("rows from more than one stream"));
    }
    let mut rtts: Vec<f64> = rows.iter().filter_map(|r| r.rtt_ms).collect();
    rtts.sort_by(f64::total_cmp);
    let mut occ: Vec<f64> = rows.iter().map(|r| r.buffer_occupancy_ms).collect();
    let buffer_mean_ms = occ.iter().sum::<f64>() / occ.len() as f64;
    occ.sort_by(f64::total_cmp);
    let duration_s = last.t_s;
    let sr = sample_rate as f64;
    let rtt_stat = |f: &dyn Fn(&[f64]) -> f64| (!rtts.is_empty()).then(|| f(&rtts));
    Ok(SessionSummary {
        peer_id: last.peer_id.clone(),
        stream_id: last.stream_id,
        rows: rows.len(),
        duration_s,
        rtt_samples: rtts.len(),
        rtt_missing: rows.len() - rtts.len(),
        rtt_min_ms: rtt_stat(&|r| r[0]),
        rtt_median_ms: rtt_stat(&|r| nearest_rank(r, 50.0)),
        rtt_p99_ms: rtt_stat(&|r| nearest_rank(r, 99.0)),
        rtt_threshold_ms,
        rtt_below_threshold: rtt_stat(&|r| {
            r.iter().filter(|&&v| v < rtt_threshold_ms).count() as f64 / r.len() as f64
        }),
        frames_lost: last.frames_lost,
        frames_concealed: last.frames_concealed,
        loss_ratio: if duration_s > 0.0 { last.frames_lost as f64 / (duration_s * sr) } else { 0.0 },
        lost_audio_s: last.frames_lost as f64 / sr,
        buffer_mean_ms,
        buffer_p2_5_ms: nearest_rank(&occ, 2.5),
        buffer_p97_5_ms: nearest_rank(&occ, 97.5),
    })
}

/// One summary per stream found in the log, ordered by stream id.
pub fn summarize_by_stream(
    rows: &[TelemetrySample],
    sample_rate: u32,
    rtt_threshold_ms: f64,
) -> Result<Vec<SessionSummary>> {
    if rows.is_empty() {
        return Err(Error::analysis("empty telemetry log"));
    }
    let mut by_stream: BTreeMap<u8, Vec<TelemetrySample>> = BTreeMap::new();
    for r in rows {
        by_stream.entry(r.stream_id).or_default().push(r.clone());
    }
    by_stream.values().map(|rs| summarize(rs, sample_rate, rtt_threshold_ms)).collect()
}

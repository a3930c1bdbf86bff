//! Offline analysis of telemetry logs.
//!
//! Functions here take the rows of a single stream (see [`split_streams`]).

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::telemetry::{nearest_rank, TelemetrySample};

/// Groups rows by `(peer_id, stream_id)`, keeping row order.
pub fn split_streams(rows: &[TelemetrySample]) -> BTreeMap<(String, u8), Vec<TelemetrySample>> {
    let mut out: BTreeMap<(String, u8), Vec<TelemetrySample>> = BTreeMap::new();
    for r in rows {
        out.entry((r.peer_id.clone(), r.stream_id)).or_default().push(r.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistBin {
    pub lo_ms: f64,
    pub hi_ms: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RttHistogram {
    pub bin_ms: f64,
    pub bins: Vec<HistBin>,
    pub samples: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub p99_9_ms: f64,
    pub threshold_ms: f64,
    /// Fraction of samples strictly below `threshold_ms`.
    pub fraction_below: f64,
}

/// Histogram of the non-null RTTs with bins `[e + k*bin, e + (k+1)*bin)`,
/// where `e` is the minimum rounded down to a multiple of `bin`.
pub fn rtt_histogram(rows: &[TelemetrySample], bin_ms: f64, threshold_ms: f64) -> Result<RttHistogram> {
    if !(bin_ms > 0.0 && bin_ms.is_finite()) {
        return Err(Error::analysis(format!("bin width {bin_ms} must be positive")));
    }
    let mut rtts: Vec<f64> = rows.iter().filter_map(|r| r.rtt_ms).collect();
    if rtts.is_empty() {
        return Err(Error::analysis("no RTT samples in log"));
    }
    rtts.sort_by(f64::total_cmp);
    let (min, max) = (rtts[0], rtts[rtts.len() - 1]);
    let origin = (min / bin_ms).floor() * bin_ms;
    let edge = |k: usize| origin + k as f64 * bin_ms;
    let mut counts: Vec<u64> = Vec::new();
    for &v in &rtts {
        // first guess by division, then fix up against the exact edges
        let mut k = ((v - origin) / bin_ms).floor().max(0.0) as usize;
        while k > 0 && v < edge(k) {
            k -= 1;
        }
        while v >= edge(k + 1) {
            k += 1;
        }
        if counts.len() <= k {
            counts.resize(k + 1, 0);
        }
        counts[k] += 1;
    }
    let bins = counts.into_iter().enumerate().map(|(k, count)| HistBin { lo_ms: edge(k), hi_ms: edge(k + 1), count }).collect();
    let below = rtts.iter().filter(|&&v| v < threshold_ms).count();
    Ok(RttHistogram {
        bin_ms,
        bins,
        samples: rtts.len(),
        min_ms: min,
        max_ms: max,
        median_ms: nearest_rank(&rtts, 50.0),
        p99_ms: nearest_rank(&rtts, 99.0),
        p99_9_ms: nearest_rank(&rtts, 99.9),
        threshold_ms,
        fraction_below: below as f64 / rtts.len() as f64,
    })
}

/// Cumulative lost frames per row as `(t_s, frames)`.
///
/// A late packet can take back frames counted lost a moment earlier, so the
/// raw column may dip. Each point is the smallest count seen from that row
/// on, which is non-decreasing and ends at the last row's value.
pub fn cumulative_loss(rows: &[TelemetrySample]) -> Vec<(f64, u64)> {
    let mut out: Vec<(f64, u64)> = rows.iter().map(|r| (r.t_s, r.frames_lost)).collect();
    let mut floor = u64::MAX;
    for p in out.iter_mut().rev() {
        floor = floor.min(p.1);
        p.1 = floor;
    }
    out
}

/// Final lost frames over the frames the session lasted.
pub fn loss_ratio(rows: &[TelemetrySample], sample_rate: u32) -> Result<f64> {
    let last = rows.last().ok_or_else(|| Error::analysis("empty telemetry log"))?;
    if !(last.t_s > 0.0) || sample_rate == 0 {
        return Err(Error::analysis("zero session duration"));
    }
    Ok(last.frames_lost as f64 / (last.t_s * sample_rate as f64))
}

/// Mouth-to-ear latency: driver + half the minimum RTT + playout delay.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct M2EBudget {
    pub peer_id: String,
    pub stream_id: u8,
    pub driver_ms: f64,
    pub network_ms: f64,
    pub buffer_mean_ms: f64,
    pub buffer_lo_ms: f64,
    pub buffer_hi_ms: f64,
    pub total_mean_ms: f64,
    pub total_lo_ms: f64,
    pub total_hi_ms: f64,
}

pub fn m2e_budget(rows: &[TelemetrySample], driver_ms: f64) -> Result<M2EBudget> {
    let first = rows.first().ok_or_else(|| Error::analysis("empty telemetry log"))?;
    if !(driver_ms >= 0.0) {
        return Err(Error::analysis(format!("driver latency {driver_ms} must be >= 0")));
    }
    let min_rtt = rows
        .iter()
        .filter_map(|r| r.rtt_ms)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::analysis("no RTT samples in log"))?;
    let mut occ: Vec<f64> = rows.iter().map(|r| r.buffer_occupancy_ms).collect();
    let mean = occ.iter().sum::<f64>() / occ.len() as f64;
    occ.sort_by(f64::total_cmp);
    let network_ms = min_rtt / 2.0;
    let (lo, hi) = (nearest_rank(&occ, 2.5), nearest_rank(&occ, 97.5));
    Ok(M2EBudget {
        peer_id: first.peer_id.clone(),
        stream_id: first.stream_id,
        driver_ms,
        network_ms,
        buffer_mean_ms: mean,
        buffer_lo_ms: lo,
        buffer_hi_ms: hi,
        total_mean_ms: driver_ms + network_ms + mean,
        total_lo_ms: driver_ms + network_ms + lo,
        total_hi_ms: driver_ms + network_ms + hi,
    })
}

/// Smallest lower and largest upper bound over several sides.
pub fn pooled_envelope(budgets: &[M2EBudget]) -> Option<(f64, f64)> {
    let lo = budgets.iter().map(|b| b.total_lo_ms).min_by(f64::total_cmp)?;
    let hi = budgets.iter().map(|b| b.total_hi_ms).max_by(f64::total_cmp)?;
    Some((lo, hi))
}

pub fn write_histogram_csv<W: Write>(out: W, h: &RttHistogram) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lo_ms", "hi_ms", "count"])?;
    for b in &h.bins {
        w.write_record([format!("{:.3}", b.lo_ms), format!("{:.3}", b.hi_ms), b.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cumulative_loss_csv<W: Write>(out: W, series: &[(f64, u64)], sample_rate: u32) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t_s", "frames_lost", "lost_audio_s"])?;
    for &(t, f) in series {
        w.write_record([format!("{t:.3}"), f.to_string(), format!("{:.3}", f as f64 / sample_rate as f64)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes serializable records as CSV with a header from their field names.
pub fn write_records_csv<W: Write, T: Serialize>(out: W, records: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated columns with a `#` header line, for gnuplot.
pub fn write_dat<W: Write>(mut out: W, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    writeln!(out, "# {}", columns.join(" "))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:.3}")).collect();
        writeln!(out, "{}", cells.join(" "))?;
    }
    Ok(())
}

//! Once-per-second session measurements and their CSV log.

mod csvlog;
mod rtt;
mod summary;

pub use csvlog::{read_csv, read_csv_file, write_csv, CsvLog, HEADER, SCHEMA_LINE};
pub use rtt::{RttTracker, PROBE_TIMEOUT_US};
pub use summary::{nearest_rank, summarize, summarize_by_stream, SessionSummary};

use std::collections::VecDeque;

use serde::Serialize;

/// One row of the telemetry log: the state of one remote stream at one
/// sampling instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TelemetrySample {
    /// Session time in seconds.
    pub t_s: f64,
    /// Peer that owns the stream.
    pub peer_id: String,
    pub stream_id: u8,
    /// Latest round-trip time to `peer_id`, if a probe completed since the
    /// previous sample.
    pub rtt_ms: Option<f64>,
    pub buffer_target_ms: f64,
    pub buffer_occupancy_ms: f64,
    pub frames_played: u64,
    pub frames_lost: u64,
    pub frames_late: u64,
    pub frames_concealed: u64,
    pub frames_skipped: u64,
    /// Datagram counters of the sampling peer, summed over all streams.
    pub dgrams_sent: u64,
    pub dgrams_recv: u64,
    pub dgrams_malformed: u64,
}

pub const RING_CAPACITY: usize = 3600;

/// Bounded in-memory history of samples; the oldest are dropped first.
#[derive(Debug, Clone)]
pub struct SampleRing {
    rows: VecDeque<TelemetrySample>,
    capacity: usize,
}

impl Default for SampleRing {
    fn default() -> Self {
        Self::with_capacity(RING_CAPACITY)
    }
}

impl SampleRing {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { rows: VecDeque::with_capacity(capacity.min(RING_CAPACITY)), capacity }
    }

    pub fn push(&mut self, row: TelemetrySample) {
        if self.rows.len() == self.capacity {
            self.rows.pop_front();
        }
        self.rows.push_back(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TelemetrySample> {
        self.rows.iter()
    }

    /// Rows of the most recent sampling instant.
    pub fn latest(&self) -> Vec<TelemetrySample> {
        let Some(last) = self.rows.back() else { return Vec::new() };
        let t = last.t_s;
        let mut out: Vec<_> = self.rows.iter().rev().take_while(|r| r.t_s == t).cloned().collect();
        out.reverse();
        out
    }
}

#[cfg(test)]
pub(crate) fn row(t_s: f64, stream_id: u8) -> TelemetrySample {
    TelemetrySample {
        t_s,
        peer_id: format!("p{stream_id}"),
        stream_id,
        rtt_ms: None,
        buffer_target_ms: 0.0,
        buffer_occupancy_ms: 0.0,
        frames_played: 0,
        frames_lost: 0,
        frames_late: 0,
        frames_concealed: 0,
        frames_skipped: 0,
        dgrams_sent: 0,
        dgrams_recv: 0,
        dgrams_malformed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_drops_oldest() {
        let mut r = SampleRing::with_capacity(3);
        for t in 1..=5 {
            r.push(row(t as f64, 1));
        }
        let ts: Vec<f64> = r.iter().map(|x| x.t_s).collect();
        assert_eq!(ts, [3.0, 4.0, 5.0]);
    }

    #[test]
    fn latest_groups_by_instant() {
        let mut r = SampleRing::default();
        r.push(row(1.0, 1));
        r.push(row(1.0, 2));
        r.push(row(2.0, 1));
        r.push(row(2.0, 2));
        let l = r.latest();
        assert_eq!(l.len(), 2);
        assert!(l.iter().all(|x| x.t_s == 2.0));
        assert_eq!(l[0].stream_id, 1);
    }
}

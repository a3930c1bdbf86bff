//! Playout-delay estimation from a sliding window of transit times.

use std::collections::VecDeque;

use super::JitterBufferConfig;

/// One on-time arrival as seen by the delay estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitRecord {
    pub seq: u16,
    pub send_time_us: u64,
    pub recv_time_us: i64,
    /// Transit minus the window minimum; never negative once normalized.
    pub relative_transit_us: i64,
}

/// Nearest-rank index (0-based) of percentile `p` in `n` sorted samples.
pub(crate) fn rank_index(p: f64, n: usize) -> usize {
    // the epsilon keeps exact products like 99 * 100 / 100 from rounding up
    let rank = (p * n as f64 / 100.0 - 1e-9).ceil().max(0.0) as usize;
    rank.clamp(1, n) - 1
}

/// Whole frames needed to cover `us` microseconds, rounded up.
pub fn us_to_frames_ceil(us: i64, sample_rate: u32) -> i64 {
    let us = us.max(0);
    (us * sample_rate as i64 + 999_999) / 1_000_000
}

fn clamp_target(jitter_frames: i64, config: &JitterBufferConfig) -> u32 {
    let t = jitter_frames + config.safety_margin_frames as i64;
    t.clamp(config.min_target_frames as i64, config.max_target_frames as i64) as u32
}

/// Target playout delay for a window of records.
///
/// The `percentile`-th relative transit (nearest rank) converted to frames,
/// plus the safety margin, clamped to the configured bounds. An empty window
/// leaves `current` unchanged.
pub fn estimate_target_delay(
    window: &[TransitRecord],
    config: &JitterBufferConfig,
    sample_rate: u32,
    current: u32,
) -> u32 {
    if window.is_empty() {
        return current;
    }
    let mut rel: Vec<i64> = window.iter().map(|r| r.relative_transit_us.max(0)).collect();
    let idx = rank_index(config.percentile, rel.len());
    let (_, value, _) = rel.select_nth_unstable(idx);
    clamp_target(us_to_frames_ceil(*value, sample_rate), config)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    seq: u16,
    send_time_us: u64,
    recv_time_us: i64,
    transit_us: i64,
}

/// Time-bounded window of raw transit samples kept in sorted order, so the
/// percentile and the normalizing minimum are O(1) reads.
#[derive(Debug, Clone, Default)]
pub struct TransitWindow {
    entries: VecDeque<Entry>,
    sorted: Vec<i64>,
}

impl TransitWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, seq: u16, send_time_us: u64, recv_time_us: i64, transit_us: i64) {
        self.entries.push_back(Entry { seq, send_time_us, recv_time_us, transit_us });
        let pos = self.sorted.partition_point(|&v| v < transit_us);
        self.sorted.insert(pos, transit_us);
    }

    /// Drops samples received before `now_us - span_us`.
    pub fn expire(&mut self, now_us: i64, span_us: i64) {
        while let Some(front) = self.entries.front() {
            if front.recv_time_us >= now_us - span_us {
                break;
            }
            let v = front.transit_us;
            self.entries.pop_front();
            let pos = self.sorted.partition_point(|&x| x < v);
            self.sorted.remove(pos);
        }
    }

    pub fn min_transit(&self) -> Option<i64> {
        self.sorted.first().copied()
    }

    /// Transit of a sample relative to the current window minimum.
    pub fn relative(&self, transit_us: i64) -> i64 {
        self.min_transit().map_or(0, |m| (transit_us - m).max(0))
    }

    pub fn relative_percentile_us(&self, p: f64) -> Option<i64> {
        if self.sorted.is_empty() {
            return None;
        }
        let idx = rank_index(p, self.sorted.len());
        Some(self.sorted[idx] - self.sorted[0])
    }

    pub fn target(&self, config: &JitterBufferConfig, sample_rate: u32, current: u32) -> u32 {
        match self.relative_percentile_us(config.percentile) {
            Some(rel) => clamp_target(us_to_frames_ceil(rel, sample_rate), config),
            None => current,
        }
    }

    /// Snapshot normalized against the current minimum.
    pub fn records(&self) -> Vec<TransitRecord> {
        let min = self.min_transit().unwrap_or(0);
        self.entries
            .iter()
            .map(|e| TransitRecord {
                seq: e.seq,
                send_time_us: e.send_time_us,
                recv_time_us: e.recv_time_us,
                relative_transit_us: e.transit_us - min,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(rel: i64) -> TransitRecord {
        TransitRecord { seq: 0, send_time_us: 0, recv_time_us: 0, relative_transit_us: rel }
    }

    /// Independent oracle: full sort, nearest rank by integer arithmetic.
    fn oracle(rel: &[i64], p: u32, cfg: &JitterBufferConfig, sr: u32) -> u32 {
        let mut v: Vec<i64> = rel.iter().map(|&x| x.max(0)).collect();
        v.sort();
        let n = v.len() as u64;
        let rank = ((p as u64 * n + 99) / 100).max(1);
        let us = v[(rank - 1) as usize] as i128;
        let frames = (us * sr as i128 + 999_999).div_euclid(1_000_000) as i64;
        (frames + cfg.safety_margin_frames as i64)
            .clamp(cfg.min_target_frames as i64, cfg.max_target_frames as i64) as u32
    }

    #[test]
    fn constant_transit_gives_minimum() {
        let cfg = JitterBufferConfig::default();
        let w: Vec<_> = (0..100).map(|_| rec(0)).collect();
        assert_eq!(estimate_target_delay(&w, &cfg, 44_100, 999), 128);
    }

    #[test]
    fn uniform_ten_ms_at_p99() {
        let cfg = JitterBufferConfig::default();
        // 0, 10, ..., 10_000 us: 1001 evenly spaced samples on [0, 10 ms]
        let w: Vec<_> = (0..=1000).map(|i| rec(i * 10)).collect();
        let got = estimate_target_delay(&w, &cfg, 44_100, 0);
        // rank ceil(0.99 * 1001) = 991 -> 9_900 us -> ceil(436.59) = 437 frames + 128
        assert_eq!(got, 565);
        assert_eq!(got, oracle(&w.iter().map(|r| r.relative_transit_us).collect::<Vec<_>>(), 99, &cfg, 44_100));
    }

    #[test]
    fn heavy_tail_saturates_at_max() {
        let cfg = JitterBufferConfig::default();
        let w: Vec<_> = (0..50).map(|i| rec(100_000 + i)).collect();
        assert_eq!(estimate_target_delay(&w, &cfg, 44_100, 0), 1536);
    }

    #[test]
    fn empty_window_keeps_current() {
        let cfg = JitterBufferConfig::default();
        assert_eq!(estimate_target_delay(&[], &cfg, 44_100, 777), 777);
        assert_eq!(TransitWindow::new().target(&cfg, 44_100, 777), 777);
    }

    #[test]
    fn window_expiry() {
        let mut w = TransitWindow::new();
        for i in 0..10 {
            w.insert(i as u16, 0, i * 1_000_000, 50 + i);
        }
        w.expire(9_000_000, 4_000_000);
        assert_eq!(w.len(), 5);
        assert_eq!(w.min_transit(), Some(55));
        assert_eq!(w.relative_percentile_us(100.0), Some(4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn matches_sort_oracle(
            rel in proptest::collection::vec(-50i64..40_000, 1..400),
            p in 50u32..=100,
        ) {
            let cfg = JitterBufferConfig { percentile: p as f64, ..Default::default() };
            let w: Vec<_> = rel.iter().map(|&r| rec(r)).collect();
            prop_assert_eq!(estimate_target_delay(&w, &cfg, 44_100, 0), oracle(&rel, p, &cfg, 44_100));
        }

        #[test]
        fn monotone_in_each_sample(
            rel in proptest::collection::vec(0i64..40_000, 1..200),
            idx in any::<proptest::sample::Index>(),
            bump in 0i64..20_000,
        ) {
            let cfg = JitterBufferConfig::default();
            let mut w: Vec<_> = rel.iter().map(|&r| rec(r)).collect();
            let before = estimate_target_delay(&w, &cfg, 44_100, 0);
            let i = idx.index(w.len());
            w[i].relative_transit_us += bump;
            prop_assert!(estimate_target_delay(&w, &cfg, 44_100, 0) >= before);
        }

        #[test]
        fn incremental_window_agrees_with_pure_estimator(
            transit in proptest::collection::vec(-5_000i64..30_000, 1..300),
            p in 50u32..=100,
        ) {
            let cfg = JitterBufferConfig { percentile: p as f64, ..Default::default() };
            let mut w = TransitWindow::new();
            for (i, &t) in transit.iter().enumerate() {
                w.insert(i as u16, 0, i as i64 * 2_900, t);
            }
            w.expire(transit.len() as i64 * 2_900, 300_000);
            let pure = estimate_target_delay(&w.records(), &cfg, 44_100, 0);
            prop_assert_eq!(w.target(&cfg, 44_100, 0), pure);
        }
    }
}

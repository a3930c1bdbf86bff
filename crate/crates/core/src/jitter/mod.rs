//! Adaptive playout buffer for one incoming stream.
//!
//! Packets are placed on a frame timeline anchored at the first packet that
//! arrives (the stream origin). The playout cursor walks that timeline one
//! pull at a time; every frame it passes is counted exactly once as played,
//! lost, late, or skipped.
//!
//! A frame whose packet is missing at its deadline is concealed and counted
//! lost. If the packet shows up within `late_timeout_ms` the frames move from
//! lost to late, so the two counters partition concealed frames.
//!
//! The playout delay follows a windowed percentile of transit delay. The
//! buffer tracks the delay a minimum-transit packet would see (headroom plus
//! its relative transit); when that drifts away from the target it either
//! drops one buffered packet or plays one packet of inserted silence.

mod conceal;
mod estimator;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use conceal::{Concealment, Silence};
pub use estimator::{estimate_target_delay, us_to_frames_ceil, TransitRecord, TransitWindow};

use crate::error::{Error, Result};
use crate::wire::{seq_distance, AudioPacket, PacketHeader, StreamConfig};

/// Packets further ahead of the cursor than this are discarded.
const MAX_AHEAD_PACKETS: i64 = 4096;
const DELAY_SMOOTHING: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterBufferConfig {
    pub window_seconds: f64,
    pub percentile: f64,
    pub safety_margin_frames: u32,
    pub min_target_frames: u32,
    pub max_target_frames: u32,
    pub late_timeout_ms: u32,
}

impl Default for JitterBufferConfig {
    fn default() -> Self {
        Self {
            window_seconds: 4.0,
            percentile: 99.0,
            safety_margin_frames: 128,
            min_target_frames: 128,
            max_target_frames: 1536,
            late_timeout_ms: 1000,
        }
    }
}

impl JitterBufferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_seconds > 0.0) {
            return Err(Error::config("window_seconds must be > 0"));
        }
        if !(50.0..=100.0).contains(&self.percentile) {
            return Err(Error::config("percentile must be in [50, 100]"));
        }
        if self.min_target_frames > self.max_target_frames {
            return Err(Error::config("min_target_frames exceeds max_target_frames"));
        }
        Ok(())
    }

    fn window_us(&self) -> i64 {
        (self.window_seconds * 1e6) as i64
    }
}

/// Cumulative per-stream accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JitterCounters {
    pub frames_played: u64,
    pub frames_lost: u64,
    pub frames_late: u64,
    /// Frames of missing packets replaced by the concealment strategy.
    pub frames_concealed: u64,
    /// Buffered frames dropped to shrink the playout delay.
    pub frames_skipped: u64,
    /// Silence played to grow the playout delay.
    pub frames_inserted: u64,
    /// Silence played before the origin reached the cursor.
    pub frames_preroll: u64,
    pub packets_on_time: u64,
    pub packets_late: u64,
    pub packets_duplicate: u64,
    /// Packets older than the stream origin; excluded from frame accounting.
    pub packets_pre_origin: u64,
    pub packets_too_early: u64,
    pub skip_events: u64,
    pub insert_events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arrival {
    OnTime,
    Late,
    Duplicate,
    /// Too far ahead of the playout cursor to be the same stream epoch.
    TooEarly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjustment {
    None,
    /// One packet of silence will be played before the cursor resumes.
    Insert(u32),
    /// Buffered frames dropped at the cursor.
    Skip(u32),
}

#[derive(Debug, Clone, Copy)]
struct LostEntry {
    deadline_us: i64,
    reclassified: bool,
}

pub struct JitterBuffer {
    config: JitterBufferConfig,
    stream: StreamConfig,
    concealer: Box<dyn Concealment>,
    window: TransitWindow,
    target: u32,

    started: bool,
    origin_seq: u16,
    highest_seq: u16,
    highest_ext: i64,
    cursor_synced: bool,
    /// Next frame to play, relative to the origin.
    cursor: i64,
    /// Frame index playing at a given receiver time, from the latest pull.
    anchor: Option<(f64, i64)>,
    last_pull: Option<(i64, usize)>,

    slots: BTreeMap<i64, Vec<i16>>,
    lost: BTreeMap<i64, LostEntry>,
    delay_estimate: Option<f64>,
    pending_insert: u32,
    counters: JitterCounters,
}

impl std::fmt::Debug for JitterBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JitterBuffer")
            .field("target", &self.target)
            .field("cursor", &self.cursor)
            .field("buffered_packets", &self.slots.len())
            .field("counters", &self.counters)
            .finish()
    }
}

impl JitterBuffer {
    pub fn new(config: JitterBufferConfig, stream: StreamConfig) -> Result<Self> {
        Self::with_concealment(config, stream, Box::new(Silence))
    }

    pub fn with_concealment(
        config: JitterBufferConfig,
        stream: StreamConfig,
        concealer: Box<dyn Concealment>,
    ) -> Result<Self> {
        config.validate()?;
        stream.validate()?;
        let target = (config.safety_margin_frames)
            .clamp(config.min_target_frames, config.max_target_frames);
        Ok(Self {
            config,
            stream,
            concealer,
            window: TransitWindow::new(),
            target,
            started: false,
            origin_seq: 0,
            highest_seq: 0,
            highest_ext: 0,
            cursor_synced: false,
            cursor: 0,
            anchor: None,
            last_pull: None,
            slots: BTreeMap::new(),
            lost: BTreeMap::new(),
            delay_estimate: None,
            pending_insert: 0,
            counters: JitterCounters::default(),
        })
    }

    pub fn config(&self) -> &JitterBufferConfig {
        &self.config
    }

    /// Replaces the tuning parameters; the target is re-clamped immediately.
    pub fn set_config(&mut self, config: JitterBufferConfig) -> Result<()> {
        config.validate()?;
        self.config = config;
        self.target = self.target.clamp(config.min_target_frames, config.max_target_frames);
        Ok(())
    }

    pub fn counters(&self) -> JitterCounters {
        self.counters
    }

    pub fn target_delay_frames(&self) -> u32 {
        self.target
    }

    pub fn is_started(&self) -> bool {
        self.started
    }

    pub fn origin_seq(&self) -> Option<u16> {
        self.started.then_some(self.origin_seq)
    }

    /// Frames the cursor has moved past since the origin.
    pub fn frames_elapsed(&self) -> u64 {
        if self.cursor_synced {
            self.cursor.max(0) as u64
        } else {
            0
        }
    }

    /// Sequence number of the next packet the cursor will reach a packet
    /// boundary for.
    pub fn next_playout_seq(&self) -> Option<u16> {
        if !self.started {
            return None;
        }
        let fpp = self.fpp();
        let k = self.cursor.div_euclid(fpp) + i64::from(self.cursor.rem_euclid(fpp) != 0);
        Some(self.origin_seq.wrapping_add(k as u16))
    }

    pub fn window(&self) -> &TransitWindow {
        &self.window
    }

    fn fpp(&self) -> i64 {
        self.stream.frames_per_packet as i64
    }

    fn frames_per_us(&self) -> f64 {
        self.stream.sample_rate as f64 / 1e6
    }

    fn position_at(&self, t_us: i64) -> f64 {
        match self.anchor {
            Some((t0, frame)) => frame as f64 + (t_us as f64 - t0) * self.frames_per_us(),
            None => self.cursor as f64,
        }
    }

    fn unwrap_seq(&mut self, seq: u16) -> i64 {
        let ext = self.highest_ext + seq_distance(self.highest_seq, seq) as i64;
        if ext > self.highest_ext {
            self.highest_ext = ext;
            self.highest_seq = seq;
        }
        ext
    }

    fn start(&mut self, seq: u16, recv_time_us: i64) {
        self.started = true;
        self.origin_seq = seq;
        self.highest_seq = seq;
        self.highest_ext = 0;
        let preroll = -(self.target as i64);
        self.anchor = Some((recv_time_us as f64, preroll));
        self.cursor = preroll;
        self.cursor_synced = false;
    }

    /// Places the cursor on the packet boundary at or before the current
    /// playout position, so a packet is due exactly when its first frame is.
    /// Whole-packet skips and inserts keep it there.
    fn sync_cursor(&mut self, now_us: i64) {
        let pos = self.position_at(now_us).round() as i64;
        self.cursor = pos.min(0).div_euclid(self.fpp()) * self.fpp();
        self.cursor_synced = true;
    }

    /// Stores an incoming packet (already validated by the wire decoder).
    pub fn push(&mut self, packet: AudioPacket, recv_time_us: i64) -> Arrival {
        let seq = packet.header.seq;
        if !self.started {
            self.start(seq, recv_time_us);
        }
        let k = self.unwrap_seq(seq);
        let fpp = self.fpp();
        let start = k * fpp;

        if k < 0 {
            self.counters.packets_pre_origin += 1;
            return Arrival::Late;
        }
        if self.slots.contains_key(&k) {
            self.counters.packets_duplicate += 1;
            return Arrival::Duplicate;
        }
        if self.cursor_synced && start < self.cursor {
            let arrival = self.classify_behind(k, start, recv_time_us);
            if arrival == Arrival::Late {
                // a late packet still says how far behind the playout is
                self.observe(&packet.header, start, recv_time_us);
            }
            return arrival;
        }
        if start - self.cursor > MAX_AHEAD_PACKETS * fpp {
            self.counters.packets_too_early += 1;
            return Arrival::TooEarly;
        }

        self.observe(&packet.header, start, recv_time_us);
        self.slots.insert(k, packet.payload);
        self.counters.packets_on_time += 1;
        Arrival::OnTime
    }

    /// Feeds one arrival into the transit window and the delay estimate.
    fn observe(&mut self, header: &PacketHeader, start: i64, recv_time_us: i64) {
        let transit = recv_time_us - header.send_time_us as i64;
        self.window.insert(header.seq, header.send_time_us, recv_time_us, transit);
        let rel_frames = self.window.relative(transit) as f64 * self.frames_per_us();
        let sample = start as f64 - self.position_at(recv_time_us) + rel_frames;
        self.delay_estimate = Some(match self.delay_estimate {
            Some(d) => d + (sample - d) * DELAY_SMOOTHING,
            None => sample,
        });
    }

    fn classify_behind(&mut self, k: i64, start: i64, recv_time_us: i64) -> Arrival {
        let timeout_us = self.config.late_timeout_ms as i64 * 1000;
        if let Some(entry) = self.lost.get_mut(&k) {
            if entry.reclassified {
                self.counters.packets_duplicate += 1;
                return Arrival::Duplicate;
            }
            self.counters.packets_late += 1;
            if recv_time_us - entry.deadline_us <= timeout_us {
                entry.reclassified = true;
                // frames of this packet already concealed move from lost to late
                let fpp = self.fpp();
                let passed = (self.cursor.min(start + fpp) - start) as u64;
                self.counters.frames_lost -= passed;
                self.counters.frames_late += passed;
            }
            return Arrival::Late;
        }
        let horizon = self.stream.us_to_frames(timeout_us as f64) as i64;
        if self.cursor - start <= horizon {
            // passed without a lost entry: it was played or skipped
            self.counters.packets_duplicate += 1;
            Arrival::Duplicate
        } else {
            self.counters.packets_late += 1;
            Arrival::Late
        }
    }

    /// Moves the target one step toward `new_target` and applies at most one
    /// whole-packet correction to the playout delay.
    pub fn adapt(&mut self, new_target: u32) -> Adjustment {
        let fpp = self.fpp() as u32;
        let new_target =
            new_target.clamp(self.config.min_target_frames, self.config.max_target_frames);
        self.target = if new_target > self.target {
            new_target.min(self.target + fpp)
        } else {
            new_target.max(self.target.saturating_sub(fpp))
        };
        let Some(delay) = self.delay_estimate else {
            return Adjustment::None;
        };
        let target = self.target as f64;
        if self.pending_insert == 0 && delay < target - fpp as f64 / 2.0 {
            self.pending_insert = fpp;
            self.delay_estimate = Some(delay + fpp as f64);
            self.counters.insert_events += 1;
            return Adjustment::Insert(fpp);
        }
        if self.cursor_synced && delay > target + fpp as f64 {
            let k = self.cursor.div_euclid(fpp as i64);
            if k >= 0 && self.slots.remove(&k).is_some() {
                let end = (k + 1) * fpp as i64;
                let frames = end - self.cursor;
                self.cursor = end;
                if let Some((_, frame)) = self.anchor.as_mut() {
                    *frame += frames;
                }
                self.counters.frames_skipped += frames as u64;
                self.counters.skip_events += 1;
                self.delay_estimate = Some(delay - frames as f64);
                return Adjustment::Skip(frames as u32);
            }
        }
        Adjustment::None
    }

    /// Produces exactly `n_frames` interleaved frames for playout at `now_us`.
    pub fn pull(&mut self, n_frames: usize, now_us: i64) -> Vec<i16> {
        let mut out = vec![0i16; n_frames * self.stream.channels as usize];
        self.pull_into(&mut out, now_us);
        out
    }

    pub fn pull_into(&mut self, out: &mut [i16], now_us: i64) {
        let ch = self.stream.channels as usize;
        let n = out.len() / ch;
        out.fill(0);
        self.window.expire(now_us, self.config.window_us());
        if !self.started {
            self.last_pull = Some((now_us, n));
            return;
        }
        if !self.cursor_synced {
            self.sync_cursor(now_us);
        }

        let estimate = self.window.target(&self.config, self.stream.sample_rate, self.target);
        self.adapt(estimate);
        self.render_into(out, now_us);
    }

    /// Plays the next `out.len() / channels` frames without re-running the
    /// estimator. `pull_into` is `adapt` followed by this.
    pub fn render_into(&mut self, out: &mut [i16], now_us: i64) {
        let ch = self.stream.channels as usize;
        let n = out.len() / ch;
        out.fill(0);
        if !self.started {
            self.last_pull = Some((now_us, n));
            return;
        }
        if !self.cursor_synced {
            self.sync_cursor(now_us);
        }

        let mut i = 0usize;
        if self.pending_insert > 0 {
            let m = (self.pending_insert as usize).min(n);
            self.pending_insert -= m as u32;
            self.counters.frames_inserted += m as u64;
            i = m;
        }
        let play_start = now_us as f64 + i as f64 / self.frames_per_us();
        self.anchor = Some((play_start, self.cursor));

        let fpp = self.fpp();
        while i < n {
            let k = self.cursor.div_euclid(fpp);
            let off = self.cursor - k * fpp;
            let len = ((fpp - off) as usize).min(n - i);
            let seg = &mut out[i * ch..(i + len) * ch];
            if k < 0 {
                self.counters.frames_preroll += len as u64;
            } else if let Some(payload) = self.slots.get(&k) {
                seg.copy_from_slice(&payload[off as usize * ch..(off as usize + len) * ch]);
                self.counters.frames_played += len as u64;
                if off as usize + len == fpp as usize {
                    self.slots.remove(&k);
                }
            } else {
                self.concealer.conceal(seg, self.cursor, self.stream.channels);
                let entry = self
                    .lost
                    .entry(k)
                    .or_insert(LostEntry { deadline_us: now_us, reclassified: false });
                if entry.reclassified {
                    self.counters.frames_late += len as u64;
                } else {
                    self.counters.frames_lost += len as u64;
                }
                self.counters.frames_concealed += len as u64;
            }
            self.cursor += len as i64;
            i += len;
        }
        self.last_pull = Some((now_us, n));
        self.prune(now_us);
    }

    fn prune(&mut self, now_us: i64) {
        let timeout_us = self.config.late_timeout_ms as i64 * 1000;
        let fpp = self.fpp();
        let cursor = self.cursor;
        self.lost
            .retain(|&k, e| !(e.deadline_us < now_us - timeout_us && (k + 1) * fpp <= cursor));
        while let Some((&k, _)) = self.slots.first_key_value() {
            if (k + 1) * fpp <= cursor {
                self.slots.remove(&k);
            } else {
                break;
            }
        }
    }

    /// Frames stored at or beyond the cursor.
    pub fn occupancy_frames(&self) -> u64 {
        let fpp = self.fpp();
        self.slots
            .keys()
            .map(|&k| ((k + 1) * fpp - self.cursor.max(k * fpp)).max(0) as u64)
            .sum()
    }

    /// Buffered frames at `now_us`, including the part of the last pulled
    /// block that has not reached the output yet.
    pub fn occupancy_at(&self, now_us: i64) -> f64 {
        let mut frames = self.occupancy_frames() as f64;
        if self.started && self.cursor_synced {
            let remainder = self.cursor as f64 - self.position_at(now_us);
            frames += remainder.clamp(0.0, self.last_pull.map_or(0, |(_, n)| n) as f64);
        }
        frames + self.pending_insert as f64
    }

    /// Delay added by the buffer at `now_us`, in microseconds.
    pub fn measured_buffer_delay(&self, now_us: i64) -> u64 {
        self.stream.frames_to_us(self.occupancy_at(now_us)).round() as u64
    }

    /// Smoothed playout delay of a minimum-transit packet, in frames.
    pub fn delay_estimate_frames(&self) -> Option<f64> {
        self.delay_estimate
    }
}

use std::collections::VecDeque;

use crate::wire::{AudioPacket, PacketHeader, SEND_TIME_MASK};

/// Probes unanswered for this long are given up as missing.
pub const PROBE_TIMEOUT_US: i64 = 3_000_000;

/// Round-trip probing towards one peer, measured on the local clock only.
#[derive(Debug, Clone, Default)]
pub struct RttTracker {
    next_seq: u16,
    outstanding: VecDeque<(u16, i64)>,
    latest_us: Option<i64>,
    pub probes_sent: u64,
    pub replies: u64,
    pub missing: u64,
    pub min_us: Option<i64>,
}

impl RttTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds the next probe sent at local time `now_us`.
    pub fn ping(&mut self, stream_id: u8, now_us: i64) -> AudioPacket {
        self.expire(now_us);
        let seq = self.next_seq;
        self.next_seq = seq.wrapping_add(1);
        self.outstanding.push_back((seq, now_us));
        self.probes_sent += 1;
        AudioPacket::probe(stream_id, seq, now_us as u64 & SEND_TIME_MASK)
    }

    /// Matches a reply; returns the round trip in microseconds.
    pub fn on_reply(&mut self, reply: &PacketHeader, now_us: i64) -> Option<i64> {
        let idx = self.outstanding.iter().position(|&(seq, sent)| {
            seq == reply.seq && (sent as u64 & SEND_TIME_MASK) == reply.send_time_us
        })?;
        let (_, sent) = self.outstanding.remove(idx)?;
        let rtt = now_us - sent;
        if rtt < 0 || rtt > PROBE_TIMEOUT_US {
            self.missing += 1;
            return None;
        }
        self.replies += 1;
        self.latest_us = Some(rtt);
        self.min_us = Some(self.min_us.map_or(rtt, |m| m.min(rtt)));
        Some(rtt)
    }

    fn expire(&mut self, now_us: i64) {
        while let Some(&(_, sent)) = self.outstanding.front() {
            if now_us - sent < PROBE_TIMEOUT_US {
                break;
            }
            self.outstanding.pop_front();
            self.missing += 1;
        }
    }

    /// Latest round trip completed since the previous call, in ms.
    pub fn take_sample(&mut self, now_us: i64) -> Option<f64> {
        self.expire(now_us);
        self.latest_us.take().map(|us| us as f64 / 1000.0)
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }
}

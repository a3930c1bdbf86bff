use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::jitter::JitterCounters;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatagramKind {
    Audio,
    Metronome,
    Probe,
    ProbeReply,
}

/// Fate of one datagram on one link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatagramRecord {
    pub from: String,
    pub to: String,
    pub kind: DatagramKind,
    pub stream_id: u8,
    pub seq: u16,
    pub sent_ns: u64,
    pub dropped: bool,
    /// Scheduled arrival; arrivals after the end of the run never happen.
    pub delivered_ns: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinkStats {
    pub from: String,
    pub to: String,
    pub audio_sent: u64,
    pub audio_dropped: u64,
    pub probes_sent: u64,
    pub probes_dropped: u64,
}

/// End-of-run accounting for one stream at one receiver.
///
/// Frame counts refer to the receiver's timeline, which starts at the first
/// packet it received.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamTruth {
    pub receiver: String,
    pub sender: String,
    pub stream_id: u8,
    /// Packets the sender produced in the whole run.
    pub packets_sent: u64,
    /// Sender index of the receiver's first packet.
    pub origin_index: Option<u64>,
    pub frames_sent: u64,
    /// Frames of dropped packets the playout cursor has passed.
    pub frames_dropped_passed: u64,
    /// Sent frames the cursor has not reached yet.
    pub frames_in_flight: u64,
    pub frames_elapsed: u64,
    pub counters: JitterCounters,
}

impl StreamTruth {
    /// sent = played + lost + late + skipped + in flight.
    pub fn is_conserved(&self) -> bool {
        let c = &self.counters;
        self.frames_sent == c.frames_played + c.frames_lost + c.frames_late + c.frames_skipped + self.frames_in_flight
    }

    /// Every dropped frame behind the cursor was concealed.
    pub fn drops_concealed(&self) -> bool {
        self.counters.frames_lost + self.counters.frames_late >= self.frames_dropped_passed
    }
}

pub fn write_truth_csv<W: Write>(out: W, rows: &[StreamTruth]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "receiver",
        "sender",
        "stream_id",
        "packets_sent",
        "origin_index",
        "frames_sent",
        "frames_played",
        "frames_lost",
        "frames_late",
        "frames_concealed",
        "frames_skipped",
        "frames_inserted",
        "frames_preroll",
        "frames_in_flight",
        "frames_dropped_passed",
        "conserved",
    ])?;
    for r in rows {
        let c = &r.counters;
        w.write_record([
            r.receiver.clone(),
            r.sender.clone(),
            r.stream_id.to_string(),
            r.packets_sent.to_string(),
            r.origin_index.map(|v| v.to_string()).unwrap_or_default(),
            r.frames_sent.to_string(),
            c.frames_played.to_string(),
            c.frames_lost.to_string(),
            c.frames_late.to_string(),
            c.frames_concealed.to_string(),
            c.frames_skipped.to_string(),
            c.frames_inserted.to_string(),
            c.frames_preroll.to_string(),
            r.frames_in_flight.to_string(),
            r.frames_dropped_passed.to_string(),
            r.is_conserved().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_datagrams_csv<W: Write>(out: W, rows: &[DatagramRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["from", "to", "kind", "stream_id", "seq", "sent_ns", "dropped", "delivered_ns"])?;
    for r in rows {
        let kind = match r.kind {
            DatagramKind::Audio => "audio",
            DatagramKind::Metronome => "metronome",
            DatagramKind::Probe => "probe",
            DatagramKind::ProbeReply => "probe_reply",
        };
        w.write_record([
            r.from.clone(),
            r.to.clone(),
            kind.to_string(),
            r.stream_id.to_string(),
            r.seq.to_string(),
            r.sent_ns.to_string(),
            r.dropped.to_string(),
            r.delivered_ns.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

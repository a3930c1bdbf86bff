//! Peer engine state machine, free of sockets, threads and clocks.
//!
//! The caller drives it with capture cycles, received datagrams, playout
//! cycles, probe ticks and telemetry ticks, passing the local clock each
//! time. The UDP runtime and the network simulator are two such callers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::jitter::{JitterBuffer, JitterBufferConfig, JitterCounters};
use crate::metronome::{metronome_block, validate_bpm};
use crate::routing::{f32_to_i16, i16_to_f32, mix, Bus, RoutingMatrix, Source};
use crate::session::SessionConfig;
use crate::telemetry::{RttTracker, TelemetrySample};
use crate::wire::{self, AudioPacket, PacketHeader, StreamConfig, FLAG_METRONOME, SEND_TIME_MASK};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DatagramCounters {
    /// Datagrams handed to the network, one per recipient.
    pub sent: u64,
    pub received: u64,
    /// Undecodable datagrams and datagrams for unknown streams.
    pub malformed: u64,
}

#[derive(Debug)]
pub struct RemotePeer {
    pub id: String,
    pub addr: Option<String>,
    pub stream_id: u8,
    pub rtt: RttTracker,
}

#[derive(Debug)]
pub struct RemoteStream {
    pub stream_id: u8,
    /// Index into [`PeerCore::peers`] of the owner.
    pub peer: usize,
    pub metronome: bool,
    pub buffer: JitterBuffer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetronomeState {
    pub enabled: bool,
    pub bpm: f64,
    pub beats_per_bar: u32,
}

/// A runtime change requested through the control interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Buffer { max_target_frames: Option<u32>, percentile: Option<f64> },
    Metronome { enabled: Option<bool>, bpm: Option<f64> },
    Routing { source: Source, bus: Bus, gain: f32 },
}

/// What to do with a received datagram besides what the engine already did.
#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Audio { stream_id: u8 },
    /// A probe to answer: send these bytes back to the sender.
    Reply(Vec<u8>),
    Rtt { peer: usize, rtt_us: i64 },
    Ignored,
    Malformed,
}

pub struct PeerCore {
    stream: StreamConfig,
    local_id: String,
    local_stream: u8,
    owner: bool,
    metronome_stream: u8,
    metronome: MetronomeState,
    peers: Vec<RemotePeer>,
    streams: Vec<RemoteStream>,
    by_stream_id: [Option<usize>; 256],
    routing: RoutingMatrix,
    jitter: JitterBufferConfig,

    capture_frame: u64,
    capture_seq: u16,
    local_block: Vec<f32>,
    click_block: Vec<f32>,
    scratch: Vec<i16>,
    counters: DatagramCounters,
}

impl std::fmt::Debug for PeerCore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeerCore").field("local_id", &self.local_id).finish_non_exhaustive()
    }
}

impl PeerCore {
    pub fn new(config: &SessionConfig) -> Result<Self> {
        config.validate()?;
        let stream = config.stream;
        let peers: Vec<RemotePeer> = config
            .remotes()
            .map(|p| RemotePeer { id: p.id.clone(), addr: p.addr.clone(), stream_id: p.stream_id, rtt: RttTracker::new() })
            .collect();
        let mut streams = Vec::new();
        for (i, p) in peers.iter().enumerate() {
            streams.push(RemoteStream {
                stream_id: p.stream_id,
                peer: i,
                metronome: false,
                buffer: JitterBuffer::new(config.jitter, stream)?,
            });
        }
        if let Some(id) = config.remote_metronome_stream() {
            let owner = config.metronome.owner.as_deref().unwrap_or_default();
            let peer = peers.iter().position(|p| p.id == owner).expect("validated owner");
            streams.push(RemoteStream {
                stream_id: id,
                peer,
                metronome: true,
                buffer: JitterBuffer::new(config.jitter, stream)?,
            });
        }
        let mut by_stream_id = [None; 256];
        for (i, s) in streams.iter().enumerate() {
            by_stream_id[s.stream_id as usize] = Some(i);
        }
        let samples = stream.samples_per_packet();
        Ok(Self {
            stream,
            local_id: config.local_peer_id.clone(),
            local_stream: config.local().stream_id,
            owner: config.is_metronome_owner(),
            metronome_stream: config.metronome.stream_id,
            metronome: MetronomeState {
                enabled: config.metronome.enabled,
                bpm: config.metronome.bpm,
                beats_per_bar: config.metronome.beats_per_bar,
            },
            peers,
            streams,
            by_stream_id,
            routing: config.routing_matrix()?,
            jitter: config.jitter,
            capture_frame: 0,
            capture_seq: 0,
            local_block: vec![0.0; samples],
            click_block: vec![0.0; samples],
            scratch: vec![0; samples],
            counters: DatagramCounters::default(),
        })
    }

    pub fn stream_config(&self) -> &StreamConfig {
        &self.stream
    }

    pub fn local_id(&self) -> &str {
        &self.local_id
    }

    pub fn local_stream_id(&self) -> u8 {
        self.local_stream
    }

    pub fn peers(&self) -> &[RemotePeer] {
        &self.peers
    }

    pub fn streams(&self) -> &[RemoteStream] {
        &self.streams
    }

    pub fn stream(&self, stream_id: u8) -> Option<&RemoteStream> {
        self.by_stream_id[stream_id as usize].map(|i| &self.streams[i])
    }

    pub fn routing(&self) -> &RoutingMatrix {
        &self.routing
    }

    pub fn metronome(&self) -> MetronomeState {
        self.metronome
    }

    pub fn is_metronome_owner(&self) -> bool {
        self.owner
    }

    pub fn jitter_config(&self) -> &JitterBufferConfig {
        &self.jitter
    }

    pub fn counters(&self) -> DatagramCounters {
        self.counters
    }

    pub fn frames_captured(&self) -> u64 {
        self.capture_frame
    }

    fn packet(&self, stream_id: u8, flags: u8, seq: u16, now_us: i64, block: &[f32]) -> AudioPacket {
        AudioPacket {
            header: PacketHeader {
                stream_id,
                flags,
                seq,
                timestamp_frames: self.capture_frame as u32,
                send_time_us: now_us as u64 & SEND_TIME_MASK,
            },
            payload: block.iter().map(|&x| f32_to_i16(x)).collect(),
        }
    }

    /// Consumes one captured block and returns the datagrams to send to
    /// every remote peer.
    pub fn capture(&mut self, block: &[f32], now_us: i64) -> Result<Vec<Vec<u8>>> {
        if block.len() != self.stream.samples_per_packet() {
            return Err(Error::config(format!(
                "captured block has {} samples, expected {}",
                block.len(),
                self.stream.samples_per_packet()
            )));
        }
        self.local_block.copy_from_slice(block);
        let seq = self.capture_seq;
        let mut out = vec![wire::encode(&self.packet(self.local_stream, 0, seq, now_us, block), &self.stream)?];

        if self.owner {
            self.render_click();
            let click = self.packet(self.metronome_stream, FLAG_METRONOME, seq, now_us, &self.click_block);
            out.push(wire::encode(&click, &self.stream)?);
        }
        self.counters.sent += (out.len() * self.peers.len()) as u64;
        self.capture_seq = seq.wrapping_add(1);
        self.capture_frame += self.stream.frames_per_packet as u64;
        Ok(out)
    }

    fn render_click(&mut self) {
        let ch = self.stream.channels as usize;
        let fpp = self.stream.frames_per_packet as usize;
        if !self.metronome.enabled {
            self.click_block.fill(0.0);
            return;
        }
        let mono = metronome_block(
            self.metronome.bpm,
            self.metronome.beats_per_bar,
            self.capture_frame,
            fpp,
            self.stream.sample_rate,
        )
        .expect("metronome settings validated on change");
        for (f, v) in mono.into_iter().enumerate() {
            self.click_block[f * ch..(f + 1) * ch].fill(v);
        }
    }

    /// Handles one datagram received at local time `now_us`.
    pub fn receive(&mut self, bytes: &[u8], now_us: i64) -> Received {
        self.counters.received += 1;
        let header = match wire::decode_header(bytes) {
            Ok(h) => h,
            Err(_) => {
                self.counters.malformed += 1;
                return Received::Malformed;
            }
        };
        if header.is_probe_reply() {
            let Some(peer) = self.peers.iter().position(|p| p.stream_id == header.stream_id) else {
                self.counters.malformed += 1;
                return Received::Malformed;
            };
            return match self.peers[peer].rtt.on_reply(&header, now_us) {
                Some(rtt_us) => Received::Rtt { peer, rtt_us },
                None => Received::Ignored,
            };
        }
        if header.is_probe() {
            if bytes.len() != wire::HEADER_LEN {
                self.counters.malformed += 1;
                return Received::Malformed;
            }
            let reply = AudioPacket::probe_reply(&header, self.local_stream);
            self.counters.sent += 1;
            return Received::Reply(wire::encode(&reply, &self.stream).expect("probe has no payload"));
        }
        let Some(idx) = self.by_stream_id[header.stream_id as usize] else {
            self.counters.malformed += 1;
            return Received::Malformed;
        };
        match wire::decode(bytes, &self.stream) {
            Ok(packet) => {
                self.streams[idx].buffer.push(packet, now_us);
                Received::Audio { stream_id: header.stream_id }
            }
            Err(_) => {
                self.counters.malformed += 1;
                Received::Malformed
            }
        }
    }

    /// Counts a probe that the caller answered itself, bypassing
    /// [`PeerCore::receive`] to keep reply latency off the audio cycle.
    pub fn note_probe_answered(&mut self) {
        self.counters.received += 1;
        self.counters.sent += 1;
    }

    /// Produces one output block per bus: `[monitor, audience]`.
    pub fn playout(&mut self, now_us: i64) -> [Vec<f32>; 2] {
        let samples = self.stream.samples_per_packet();
        let mut pulled: Vec<Vec<f32>> = Vec::with_capacity(self.streams.len());
        for s in &mut self.streams {
            s.buffer.pull_into(&mut self.scratch, now_us);
            pulled.push(self.scratch.iter().map(|&v| i16_to_f32(v)).collect());
        }
        let silence = vec![0.0f32; samples];
        let inputs: Vec<&[f32]> = self
            .routing
            .sources()
            .map(|src| match src {
                Source::Stream(id) => self
                    .streams
                    .iter()
                    .position(|s| s.stream_id == id && !s.metronome)
                    .map_or(&silence[..], |i| &pulled[i][..]),
                Source::Local => &self.local_block[..],
                Source::Metronome if self.owner => &self.click_block[..],
                Source::Metronome => self
                    .streams
                    .iter()
                    .position(|s| s.metronome)
                    .map_or(&silence[..], |i| &pulled[i][..]),
            })
            .collect();
        mix(&inputs, &self.routing).expect("one input per routing row")
    }

    /// One probe per remote peer: `(peer index, datagram)`.
    pub fn probe_tick(&mut self, now_us: i64) -> Vec<(usize, Vec<u8>)> {
        let local = self.local_stream;
        let out: Vec<_> = self
            .peers
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (i, wire::encode(&p.rtt.ping(local, now_us), &self.stream).expect("probe has no payload")))
            .collect();
        self.counters.sent += out.len() as u64;
        out
    }

    /// One telemetry row per remote stream.
    pub fn sample(&mut self, t_s: f64, now_us: i64) -> Vec<TelemetrySample> {
        let rtts: Vec<Option<f64>> = self.peers.iter_mut().map(|p| p.rtt.take_sample(now_us)).collect();
        let c = self.counters;
        self.streams
            .iter()
            .map(|s| {
                let j: JitterCounters = s.buffer.counters();
                TelemetrySample {
                    t_s,
                    peer_id: self.peers[s.peer].id.clone(),
                    stream_id: s.stream_id,
                    rtt_ms: rtts[s.peer],
                    buffer_target_ms: self.stream.frames_to_us(s.buffer.target_delay_frames() as f64) / 1000.0,
                    buffer_occupancy_ms: s.buffer.measured_buffer_delay(now_us) as f64 / 1000.0,
                    frames_played: j.frames_played,
                    frames_lost: j.frames_lost,
                    frames_late: j.frames_late,
                    frames_concealed: j.frames_concealed,
                    frames_skipped: j.frames_skipped,
                    dgrams_sent: c.sent,
                    dgrams_recv: c.received,
                    dgrams_malformed: c.malformed,
                }
            })
            .collect()
    }

    /// Applies a control change atomically: on error nothing changes.
    pub fn apply(&mut self, control: &Control) -> Result<()> {
        match control {
            Control::Buffer { max_target_frames, percentile } => {
                let mut cfg = self.jitter;
                if let Some(m) = max_target_frames {
                    cfg.max_target_frames = *m;
                }
                if let Some(p) = percentile {
                    cfg.percentile = *p;
                }
                cfg.validate()?;
                for s in &mut self.streams {
                    s.buffer.set_config(cfg)?;
                }
                self.jitter = cfg;
            }
            Control::Metronome { enabled, bpm } => {
                if let Some(b) = bpm {
                    validate_bpm(*b)?;
                }
                if let Some(e) = enabled {
                    self.metronome.enabled = *e;
                }
                if let Some(b) = bpm {
                    self.metronome.bpm = *b;
                }
            }
            Control::Routing { source, bus, gain } => self.routing.set_gain(*source, *bus, *gain)?,
        }
        Ok(())
    }

    pub fn status(&self) -> Status {
        Status {
            local_peer_id: self.local_id.clone(),
            local_stream_id: self.local_stream,
            peers: self
                .peers
                .iter()
                .map(|p| PeerStatus {
                    id: p.id.clone(),
                    addr: p.addr.clone(),
                    stream_id: p.stream_id,
                    rtt_min_ms: p.rtt.min_us.map(|u| u as f64 / 1000.0),
                    probes_sent: p.rtt.probes_sent,
                    probes_answered: p.rtt.replies,
                })
                .collect(),
            streams: self
                .streams
                .iter()
                .map(|s| StreamStatus {
                    stream_id: s.stream_id,
                    peer_id: self.peers[s.peer].id.clone(),
                    metronome: s.metronome,
                    target_delay_frames: s.buffer.target_delay_frames(),
                    counters: s.buffer.counters(),
                })
                .collect(),
            metronome: self.metronome,
            metronome_owner: self.owner,
            jitter: self.jitter,
            routing: self
                .routing
                .sources()
                .map(|source| RouteStatus {
                    source,
                    monitor: self.routing.gain(source, Bus::Monitor).unwrap_or(0.0),
                    audience: self.routing.gain(source, Bus::Audience).unwrap_or(0.0),
                })
                .collect(),
            datagrams: self.counters,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PeerStatus {
    pub id: String,
    pub addr: Option<String>,
    pub stream_id: u8,
    pub rtt_min_ms: Option<f64>,
    pub probes_sent: u64,
    pub probes_answered: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StreamStatus {
    pub stream_id: u8,
    pub peer_id: String,
    pub metronome: bool,
    pub target_delay_frames: u32,
    pub counters: JitterCounters,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteStatus {
    pub source: Source,
    pub monitor: f32,
    pub audience: f32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Status {
    pub local_peer_id: String,
    pub local_stream_id: u8,
    pub peers: Vec<PeerStatus>,
    pub streams: Vec<StreamStatus>,
    pub metronome: MetronomeState,
    pub metronome_owner: bool,
    pub jitter: JitterBufferConfig,
    pub routing: Vec<RouteStatus>,
    pub datagrams: DatagramCounters,
}

#[cfg(test)]
mod tests;

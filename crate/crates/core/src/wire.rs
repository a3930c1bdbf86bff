//! Datagram layout for audio and probe packets.
//!
//! Every datagram starts with a fixed big-endian header followed by raw
//! interleaved signed 16-bit PCM:
//!
//! ```text
//! offset size field
//!  0     4    magic "MEVO"
//!  4     1    version (1)
//!  5     1    stream id
//!  6     1    flags (bit0 metronome, bit1 probe, bit2 probe reply)
//!  7     2    sequence number (wrapping)
//!  9     4    timestamp of the first payload frame (wrapping)
//! 13     6    sender clock, microseconds (48-bit)
//! 19     ..   payload
//! ```
//!
//! Probe datagrams carry no payload.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MEVO";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 19;
/// Largest UDP payload that fits a 1500-byte Ethernet MTU.
pub const MAX_DATAGRAM: usize = 1472;
pub const MAX_FRAMES_PER_PACKET: u16 = 1024;

pub const SEND_TIME_MASK: u64 = (1 << 48) - 1;

pub const FLAG_METRONOME: u8 = 0b001;
pub const FLAG_PROBE: u8 = 0b010;
pub const FLAG_PROBE_REPLY: u8 = 0b100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WireFormat {
    /// Signed 16-bit big-endian interleaved PCM.
    #[default]
    #[serde(rename = "s16be")]
    S16Be,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub sample_rate: u32,
    pub channels: u16,
    pub frames_per_packet: u16,
    pub wire_format: WireFormat,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            sample_rate: 44_100,
            channels: 1,
            frames_per_packet: 128,
            wire_format: WireFormat::S16Be,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::config("sample_rate must be > 0"));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be >= 1"));
        }
        if self.frames_per_packet == 0 || self.frames_per_packet > MAX_FRAMES_PER_PACKET {
            return Err(Error::config("frames_per_packet must be in 1..=1024"));
        }
        if self.datagram_len() > MAX_DATAGRAM {
            return Err(Error::config(format!(
                "datagram of {} bytes exceeds {} bytes",
                self.datagram_len(),
                MAX_DATAGRAM
            )));
        }
        Ok(())
    }

    /// Interleaved samples carried by one audio packet.
    pub fn samples_per_packet(&self) -> usize {
        self.frames_per_packet as usize * self.channels as usize
    }

    pub fn payload_len(&self) -> usize {
        self.samples_per_packet() * 2
    }

    pub fn datagram_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    /// Duration of one packet in microseconds.
    pub fn packet_duration_us(&self) -> f64 {
        self.frames_per_packet as f64 * 1e6 / self.sample_rate as f64
    }

    pub fn frames_to_us(&self, frames: f64) -> f64 {
        frames * 1e6 / self.sample_rate as f64
    }

    pub fn us_to_frames(&self, us: f64) -> f64 {
        us * self.sample_rate as f64 / 1e6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketHeader {
    pub stream_id: u8,
    pub flags: u8,
    pub seq: u16,
    pub timestamp_frames: u32,
    /// Sender clock in microseconds, truncated to 48 bits on the wire.
    pub send_time_us: u64,
}

impl PacketHeader {
    pub fn is_metronome(&self) -> bool {
        self.flags & FLAG_METRONOME != 0
    }

    pub fn is_probe(&self) -> bool {
        self.flags & FLAG_PROBE != 0
    }

    pub fn is_probe_reply(&self) -> bool {
        self.is_probe() && self.flags & FLAG_PROBE_REPLY != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AudioPacket {
    pub header: PacketHeader,
    /// Interleaved samples; empty for probes.
    pub payload: Vec<i16>,
}

impl AudioPacket {
    pub fn probe(stream_id: u8, seq: u16, send_time_us: u64) -> Self {
        Self {
            header: PacketHeader {
                stream_id,
                flags: FLAG_PROBE,
                seq,
                timestamp_frames: 0,
                send_time_us: send_time_us & SEND_TIME_MASK,
            },
            payload: Vec::new(),
        }
    }

    /// Reply to a probe: same sequence and echoed send time.
    pub fn probe_reply(ping: &PacketHeader, responder_stream: u8) -> Self {
        Self {
            header: PacketHeader {
                stream_id: responder_stream,
                flags: FLAG_PROBE | FLAG_PROBE_REPLY,
                seq: ping.seq,
                timestamp_frames: 0,
                send_time_us: ping.send_time_us,
            },
            payload: Vec::new(),
        }
    }
}

fn expected_payload(header: &PacketHeader, config: &StreamConfig) -> usize {
    if header.is_probe() {
        0
    } else {
        config.samples_per_packet()
    }
}

pub fn encode(packet: &AudioPacket, config: &StreamConfig) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + packet.payload.len() * 2);
    encode_into(packet, config, &mut out)?;
    Ok(out)
}

/// Encodes into `out`, replacing its contents.
pub fn encode_into(packet: &AudioPacket, config: &StreamConfig, out: &mut Vec<u8>) -> Result<()> {
    let h = &packet.header;
    if packet.payload.len() != expected_payload(h, config) {
        return Err(Error::config(format!(
            "payload has {} samples, stream expects {}",
            packet.payload.len(),
            expected_payload(h, config)
        )));
    }
    out.clear();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(h.stream_id);
    out.push(h.flags);
    out.extend_from_slice(&h.seq.to_be_bytes());
    out.extend_from_slice(&h.timestamp_frames.to_be_bytes());
    out.extend_from_slice(&(h.send_time_us & SEND_TIME_MASK).to_be_bytes()[2..]);
    for s in &packet.payload {
        out.extend_from_slice(&s.to_be_bytes());
    }
    Ok(())
}

pub fn decode_header(bytes: &[u8]) -> Result<PacketHeader> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Malformed("shorter than header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::Malformed("bad magic"));
    }
    if bytes[4] != VERSION {
        return Err(Error::Malformed("unsupported version"));
    }
    let mut send = [0u8; 8];
    send[2..].copy_from_slice(&bytes[13..19]);
    Ok(PacketHeader {
        stream_id: bytes[5],
        flags: bytes[6],
        seq: u16::from_be_bytes([bytes[7], bytes[8]]),
        timestamp_frames: u32::from_be_bytes([bytes[9], bytes[10], bytes[11], bytes[12]]),
        send_time_us: u64::from_be_bytes(send),
    })
}

pub fn decode(bytes: &[u8], config: &StreamConfig) -> Result<AudioPacket> {
    let header = decode_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    let want = expected_payload(&header, config) * 2;
    if body.len() < want {
        return Err(Error::Malformed("truncated payload"));
    }
    if body.len() > want {
        return Err(Error::Malformed("trailing bytes after payload"));
    }
    let payload = body
        .chunks_exact(2)
        .map(|b| i16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(AudioPacket { header, payload })
}

/// Signed distance from `a` to `b` on the 16-bit sequence circle.
///
/// Positive means `b` is newer. Exactly half the range apart counts as older
/// (returns -32768).
pub fn seq_distance(a: u16, b: u16) -> i32 {
    b.wrapping_sub(a) as i16 as i32
}

/// Difference of two 48-bit wire clocks, `later - earlier`, wrap-aware.
pub fn send_time_delta(later: u64, earlier: u64) -> i64 {
    let d = later.wrapping_sub(earlier) & SEND_TIME_MASK;
    if d >= 1 << 47 {
        d as i64 - (1 << 48)
    } else {
        d as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono() -> StreamConfig {
        StreamConfig::default()
    }

    fn packet(seq: u16, cfg: &StreamConfig) -> AudioPacket {
        AudioPacket {
            header: PacketHeader {
                stream_id: 3,
                flags: 0,
                seq,
                timestamp_frames: seq as u32 * cfg.frames_per_packet as u32,
                send_time_us: 1_000,
            },
            payload: vec![0; cfg.samples_per_packet()],
        }
    }

    #[test]
    fn zero_packet_layout() {
        let cfg = mono();
        let bytes = encode(&packet(0, &cfg), &cfg).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 256);
        assert_eq!(&bytes[..4], b"MEVO");
        assert!(bytes[HEADER_LEN..].iter().all(|&b| b == 0));
    }

    #[test]
    fn datagram_sizes() {
        assert_eq!(mono().datagram_len(), 19 + 128 * 2);
        assert!(mono().datagram_len() <= MAX_DATAGRAM);
        let stereo = StreamConfig { channels: 2, ..mono() };
        assert_eq!(stereo.datagram_len(), 19 + 512);
        let too_big = StreamConfig { channels: 2, frames_per_packet: 512, ..mono() };
        assert!(too_big.validate().is_err());
    }

    #[test]
    fn golden_header_bytes() {
        let cfg = StreamConfig { frames_per_packet: 2, ..mono() };
        let p = AudioPacket {
            header: PacketHeader {
                stream_id: 0x11,
                flags: FLAG_METRONOME,
                seq: 0x0203,
                timestamp_frames: 0x0405_0607,
                send_time_us: 0x0809_0a0b_0c0d,
            },
            payload: vec![1, -2],
        };
        let bytes = encode(&p, &cfg).unwrap();
        let expect: &[u8] = &[
            b'M', b'E', b'V', b'O', 1, 0x11, 0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08, 0x09,
            0x0a, 0x0b, 0x0c, 0x0d, 0x00, 0x01, 0xff, 0xfe,
        ];
        assert_eq!(bytes, expect);
    }

    #[test]
    fn payload_mismatch_is_config_error() {
        let cfg = mono();
        let mut p = packet(0, &cfg);
        p.payload.pop();
        assert!(matches!(encode(&p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn short_and_truncated_inputs() {
        let cfg = mono();
        assert_eq!(decode(&[0u8; 15], &cfg), Err(Error::Malformed("shorter than header")));
        let mut bytes = encode(&packet(1, &cfg), &cfg).unwrap();
        bytes.pop();
        assert_eq!(bytes.len() - HEADER_LEN, 255);
        assert_eq!(decode(&bytes, &cfg), Err(Error::Malformed("truncated payload")));
    }

    #[test]
    fn bad_magic_and_version() {
        let cfg = mono();
        let good = encode(&packet(1, &cfg), &cfg).unwrap();
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(decode(&b, &cfg), Err(Error::Malformed("bad magic")));
        let mut b = good;
        b[4] = 2;
        assert_eq!(decode(&b, &cfg), Err(Error::Malformed("unsupported version")));
    }

    #[test]
    fn probe_round_trip() {
        let cfg = mono();
        let ping = AudioPacket::probe(7, 42, 123_456_789);
        let bytes = encode(&ping, &cfg).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        let back = decode(&bytes, &cfg).unwrap();
        assert_eq!(back, ping);
        let pong = AudioPacket::probe_reply(&back.header, 9);
        assert!(pong.header.is_probe_reply());
        assert_eq!(pong.header.send_time_us, 123_456_789);
    }

    #[test]
    fn seq_distance_examples() {
        assert_eq!(seq_distance(5, 8), 3);
        assert_eq!(seq_distance(65535, 0), 1);
        assert_eq!(seq_distance(0, 32768), -32768);
        assert_eq!(seq_distance(8, 5), -3);
    }

    #[test]
    fn seq_distance_exhaustive_against_modular_oracle() {
        // oracle: the unique d in [-32768, 32767] with a + d == b (mod 2^16)
        for a in (0u32..65536).step_by(97) {
            for b in 0u32..65536 {
                let raw = (b + 65536 - a) % 65536;
                let d = if raw >= 32768 { raw as i32 - 65536 } else { raw as i32 };
                assert_eq!(seq_distance(a as u16, b as u16), d, "a={a} b={b}");
                if raw != 32768 {
                    assert_eq!(d, -seq_distance(b as u16, a as u16));
                }
            }
        }
    }

    #[test]
    fn timestamps_of_consecutive_packets_form_arithmetic_sequence() {
        let cfg = mono();
        let mut ts = u32::MAX - 300;
        let mut prev: Option<u32> = None;
        for seq in 0..10u16 {
            let mut p = packet(seq, &cfg);
            p.header.timestamp_frames = ts;
            let back = decode(&encode(&p, &cfg).unwrap(), &cfg).unwrap();
            if let Some(prev) = prev {
                assert_eq!(back.header.timestamp_frames, prev.wrapping_add(128));
            }
            prev = Some(back.header.timestamp_frames);
            ts = ts.wrapping_add(cfg.frames_per_packet as u32);
        }
    }

    #[test]
    fn send_time_wraps() {
        assert_eq!(send_time_delta(5, (1 << 48) - 5), 10);
        assert_eq!(send_time_delta(100, 40), 60);
        assert_eq!(send_time_delta(40, 100), -60);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn round_trip(
            stream_id in any::<u8>(),
            flags in 0u8..2,
            seq in any::<u16>(),
            ts in any::<u32>(),
            send in 0u64..(1 << 48),
            channels in 1u16..=2,
            fpp in 1u16..=256,
            seed in any::<u64>(),
        ) {
            let cfg = StreamConfig { channels, frames_per_packet: fpp, ..StreamConfig::default() };
            let mut x = seed | 1;
            let payload = (0..cfg.samples_per_packet())
                .map(|_| { x ^= x << 13; x ^= x >> 7; x ^= x << 17; x as i16 })
                .collect();
            let p = AudioPacket {
                header: PacketHeader { stream_id, flags, seq, timestamp_frames: ts, send_time_us: send },
                payload,
            };
            let bytes = encode(&p, &cfg).unwrap();
            prop_assert_eq!(bytes.len(), cfg.datagram_len());
            prop_assert_eq!(decode(&bytes, &cfg).unwrap(), p);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = decode(&bytes, &StreamConfig::default());
        }
    }
}

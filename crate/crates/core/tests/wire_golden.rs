//! Encodes and decodes the datagrams in `fixtures/wire_golden.toml`.

use mevo_core::wire::{self, AudioPacket, PacketHeader, StreamConfig};
use serde::Deserialize;

#[derive(Deserialize)]
struct Fixture {
    case: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    name: String,
    channels: u16,
    frames_per_packet: u16,
    stream_id: u8,
    flags: u8,
    seq: u16,
    timestamp_frames: u32,
    send_time_us: u64,
    payload: Vec<i16>,
    hex: String,
}

#[test]
fn golden_datagrams_round_trip() {
    let text = include_str!("fixtures/wire_golden.toml");
    let fixture: Fixture = toml::from_str(text).unwrap();
    assert_eq!(fixture.case.len(), 4);
    for c in fixture.case {
        let cfg = StreamConfig { channels: c.channels, frames_per_packet: c.frames_per_packet, ..Default::default() };
        let packet = AudioPacket {
            header: PacketHeader {
                stream_id: c.stream_id,
                flags: c.flags,
                seq: c.seq,
                timestamp_frames: c.timestamp_frames,
                send_time_us: c.send_time_us,
            },
            payload: c.payload,
        };
        let bytes = hex::decode(c.hex.replace(' ', "")).unwrap();
        assert_eq!(wire::encode(&packet, &cfg).unwrap(), bytes, "{}: encode", c.name);
        assert_eq!(wire::decode(&bytes, &cfg).unwrap(), packet, "{}: decode", c.name);
    }
}

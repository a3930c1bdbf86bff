use super::*;
use crate::session::{MetronomeConfig, PeerEntry, RouteEntry};

const PERIOD_US: i64 = 2902;

fn config(local: &str, metronome_owner: Option<&str>, routing: Vec<RouteEntry>) -> SessionConfig {
    SessionConfig {
        local_peer_id: local.into(),
        stream: StreamConfig::default(),
        jitter: JitterBufferConfig::default(),
        peers: vec![
            PeerEntry { id: "turin".into(), addr: None, stream_id: 1 },
            PeerEntry { id: "wroclaw".into(), addr: None, stream_id: 2 },
        ],
        metronome: MetronomeConfig {
            enabled: metronome_owner.is_some(),
            bpm: 120.0,
            owner: metronome_owner.map(Into::into),
            stream_id: 9,
            ..MetronomeConfig::default()
        },
        routing,
    }
}

/// Deterministic per-sample content distinct for every (seed, index).
fn content(seed: u32, cycle: u64) -> Vec<f32> {
    (0..128u64)
        .map(|i| {
            let x = (cycle * 128 + i) as u32;
            let v = x.wrapping_mul(2_654_435_761).wrapping_add(seed.wrapping_mul(40_503)) >> 17;
            i16_to_f32((v as i32 - 16_384) as i16)
        })
        .collect()
}

/// Runs two cores in lockstep over a zero-delay link for `cycles` audio
/// cycles; returns the bus outputs of both, `[turin, wroclaw]`.
fn run_pair(
    turin: &mut PeerCore,
    wroclaw: &mut PeerCore,
    cycles: u64,
    turin_seed: u32,
    wroclaw_seed: u32,
) -> [[Vec<f32>; 2]; 2] {
    let mut out: [[Vec<f32>; 2]; 2] = Default::default();
    for k in 0..cycles {
        let now = 1_000_000 + k as i64 * PERIOD_US;
        let a = turin.capture(&content(turin_seed, k), now).unwrap();
        let b = wroclaw.capture(&content(wroclaw_seed, k), now).unwrap();
        for d in &a {
            wroclaw.receive(d, now + 100);
        }
        for d in &b {
            turin.receive(d, now + 100);
        }
        for (i, core) in [&mut *turin, &mut *wroclaw].into_iter().enumerate() {
            let [m, au] = core.playout(now + 200);
            out[i][0].extend(m);
            out[i][1].extend(au);
        }
    }
    out
}

#[test]
fn remote_stream_is_played_delayed() {
    let mut t = PeerCore::new(&config("turin", None, vec![])).unwrap();
    let mut w = PeerCore::new(&config("wroclaw", None, vec![])).unwrap();
    let [_, [wmon, _]] = run_pair(&mut t, &mut w, 200, 1, 2);
    let sent: Vec<f32> = (0..200).flat_map(|k| content(1, k)).collect();
    let lag = wmon.iter().position(|&v| v != 0.0).unwrap();
    assert_eq!(&wmon[lag..], &sent[..sent.len() - lag]);
    let c = w.stream(1).unwrap().buffer.counters();
    assert_eq!(c.frames_lost, 0);
    assert_eq!(w.counters().received, 200);
    assert_eq!(t.counters().sent, 200);
}

#[test]
fn probe_round_trip() {
    let mut t = PeerCore::new(&config("turin", None, vec![])).unwrap();
    let mut w = PeerCore::new(&config("wroclaw", None, vec![])).unwrap();
    let probes = t.probe_tick(5_000_000);
    assert_eq!(probes.len(), 1);
    let Received::Reply(reply) = w.receive(&probes[0].1, 123) else { panic!("no reply") };
    assert_eq!(t.receive(&reply, 5_052_000), Received::Rtt { peer: 0, rtt_us: 52_000 });
    let rows = t.sample(1.0, 5_100_000);
    assert_eq!(rows[0].rtt_ms, Some(52.0));
    assert_eq!(t.sample(2.0, 6_100_000)[0].rtt_ms, None);
}

#[test]
fn malformed_and_unknown_datagrams_are_counted() {
    let mut t = PeerCore::new(&config("turin", None, vec![])).unwrap();
    assert_eq!(t.receive(b"junk", 0), Received::Malformed);
    let mut w = PeerCore::new(&config("wroclaw", None, vec![])).unwrap();
    let mut d = w.capture(&content(0, 0), 0).unwrap().remove(0);
    d.pop();
    assert_eq!(t.receive(&d, 0), Received::Malformed);
    d.push(0);
    d[5] = 77;
    assert_eq!(t.receive(&d, 0), Received::Malformed);
    assert_eq!(t.counters().received, 3);
    assert_eq!(t.counters().malformed, 3);
}

#[test]
fn concert_routing_isolates_turin_monitor() {
    let zero = |bus| RouteEntry { source: Source::Stream(2), bus, gain: 0.0 };
    let mk = || {
        (
            PeerCore::new(&config("turin", Some("turin"), vec![zero(Bus::Monitor)])).unwrap(),
            PeerCore::new(&config("wroclaw", Some("turin"), vec![])).unwrap(),
        )
    };
    let (mut t1, mut w1) = mk();
    let (mut t2, mut w2) = mk();
    let [[mon1, _], _] = run_pair(&mut t1, &mut w1, 300, 5, 6);
    let [[mon2, _], _] = run_pair(&mut t2, &mut w2, 300, 5, 600);
    assert!(mon1.iter().any(|&v| v != 0.0));
    assert_eq!(mon1, mon2);
}

#[test]
fn muted_metronome_stays_off_audience_bus() {
    let run = |bpm: f64| {
        let mut t = PeerCore::new(&config("turin", Some("turin"), vec![])).unwrap();
        let mut w = PeerCore::new(&config("wroclaw", Some("turin"), vec![])).unwrap();
        t.apply(&Control::Metronome { enabled: None, bpm: Some(bpm) }).unwrap();
        run_pair(&mut t, &mut w, 400, 1, 2)
    };
    let a = run(60.0);
    let b = run(200.0);
    // both sides: owner's local click and the receiver's streamed click
    assert_eq!(a[0][1], b[0][1]);
    assert_eq!(a[1][1], b[1][1]);
    assert_ne!(a[0][0], b[0][0]);
    assert_ne!(a[1][0], b[1][0]);
}

#[test]
fn disabled_metronome_streams_silence() {
    let mut t = PeerCore::new(&config("turin", Some("turin"), vec![])).unwrap();
    t.apply(&Control::Metronome { enabled: Some(false), bpm: None }).unwrap();
    let d = t.capture(&content(0, 0), 0).unwrap();
    assert_eq!(d.len(), 2);
    let p = wire::decode(&d[1], t.stream_config()).unwrap();
    assert!(p.header.is_metronome());
    assert!(p.payload.iter().all(|&s| s == 0));
}

#[test]
fn rejected_controls_change_nothing() {
    let mut t = PeerCore::new(&config("turin", Some("turin"), vec![])).unwrap();
    let before = serde_json::to_string(&t.status()).unwrap();
    for c in [
        Control::Buffer { max_target_frames: Some(10), percentile: None },
        Control::Buffer { max_target_frames: None, percentile: Some(0.0) },
        Control::Metronome { enabled: Some(false), bpm: Some(1000.0) },
        Control::Routing { source: Source::Stream(7), bus: Bus::Monitor, gain: 0.5 },
        Control::Routing { source: Source::Stream(2), bus: Bus::Monitor, gain: -0.5 },
    ] {
        assert!(t.apply(&c).is_err(), "{c:?}");
    }
    assert_eq!(serde_json::to_string(&t.status()).unwrap(), before);
}

#[test]
fn accepted_controls_show_in_status() {
    let mut t = PeerCore::new(&config("turin", Some("turin"), vec![])).unwrap();
    t.apply(&Control::Buffer { max_target_frames: Some(512), percentile: Some(95.0) }).unwrap();
    t.apply(&Control::Metronome { enabled: Some(true), bpm: Some(90.0) }).unwrap();
    t.apply(&Control::Routing { source: Source::Local, bus: Bus::Monitor, gain: 0.25 }).unwrap();
    let s = t.status();
    assert_eq!(s.jitter.max_target_frames, 512);
    assert_eq!(s.jitter.percentile, 95.0);
    assert_eq!(s.metronome.bpm, 90.0);
    let local = s.routing.iter().find(|r| r.source == Source::Local).unwrap();
    assert_eq!(local.monitor, 0.25);
    assert_eq!(s.peers.len(), 1);
    assert_eq!(s.peers[0].stream_id, 2);
}

#[test]
fn captured_block_size_is_checked() {
    let mut t = PeerCore::new(&config("turin", None, vec![])).unwrap();
    assert!(t.capture(&[0.0; 127], 0).is_err());
}

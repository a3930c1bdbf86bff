use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::load::LoadState;
use super::link::{substream, substream_seed, LinkState, Purpose};
use super::truth::{write_datagrams_csv, write_truth_csv, DatagramKind, DatagramRecord, LinkStats, StreamTruth};
use super::{ClockModel, JitterModel, Scenario};
use crate::device::{AudioDevice, SignalSource, VirtualDevice};
use crate::engine::{PeerCore, Received};
use crate::error::{Error, Result};
use crate::telemetry::{write_csv, TelemetrySample};
use crate::wire;

const NS_PER_S: u64 = 1_000_000_000;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Recording {
    pub captured: Vec<f32>,
    pub monitor: Vec<f32>,
    pub audience: Vec<f32>,
}

#[derive(Debug)]
pub struct PeerRun {
    pub id: String,
    pub drift_ppm: f64,
    /// Audio cycles completed.
    pub cycles: u64,
    pub telemetry: Vec<TelemetrySample>,
    pub recording: Option<Recording>,
    pub core: PeerCore,
}

#[derive(Debug)]
pub struct SimOutput {
    pub scenario: String,
    pub duration_s: u64,
    pub sample_rate: u32,
    pub peers: Vec<PeerRun>,
    pub streams: Vec<StreamTruth>,
    pub links: Vec<LinkStats>,
    pub datagrams: Vec<DatagramRecord>,
}

impl SimOutput {
    pub fn peer(&self, id: &str) -> Option<&PeerRun> {
        self.peers.iter().find(|p| p.id == id)
    }

    pub fn stream(&self, receiver: &str, stream_id: u8) -> Option<&StreamTruth> {
        self.streams.iter().find(|s| s.receiver == receiver && s.stream_id == stream_id)
    }

    pub fn telemetry_csv(&self, peer: &str) -> Result<Vec<u8>> {
        let p = self.peer(peer).ok_or_else(|| Error::config(format!("no peer {peer:?}")))?;
        let mut buf = Vec::new();
        write_csv(&mut buf, &p.telemetry)?;
        Ok(buf)
    }

    pub fn ground_truth_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &self.streams)?;
        Ok(buf)
    }

    /// Writes `<peer>.telemetry.csv` per peer, `ground_truth.csv`,
    /// `links.csv` and, when recorded, `datagrams.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
            let path = dir.join(name);
            let f = File::create(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            Ok((path, BufWriter::new(f)))
        };
        let mut written = Vec::new();
        for p in &self.peers {
            let (path, f) = create(&format!("{}.telemetry.csv", p.id))?;
            write_csv(f, &p.telemetry)?;
            written.push(path);
        }
        let (path, f) = create("ground_truth.csv")?;
        write_truth_csv(f, &self.streams)?;
        written.push(path);
        let (path, f) = create("links.csv")?;
        let mut w = csv::Writer::from_writer(f);
        for l in &self.links {
            w.serialize(l)?;
        }
        w.flush()?;
        written.push(path);
        if !self.datagrams.is_empty() {
            let (path, f) = create("datagrams.csv")?;
            write_datagrams_csv(f, &self.datagrams)?;
            written.push(path);
        }
        Ok(written)
    }
}

enum Kind {
    Deliver { to: usize, from: usize, bytes: Vec<u8>, index: u64 },
    /// Audio held back at the sender enters the link.
    Depart { to: usize, from: usize, bytes: Vec<u8>, index: u64 },
    Audio { peer: usize },
    Probe { k: u64 },
    Telemetry { k: u64 },
}

impl Kind {
    /// Tie-break at equal times: arrivals, departures, audio, probes, then
    /// telemetry.
    fn priority(&self) -> u8 {
        match self {
            Kind::Deliver { .. } | Kind::Depart { .. } => 0,
            Kind::Audio { .. } => 1,
            Kind::Probe { .. } => 2,
            Kind::Telemetry { .. } => 3,
        }
    }
}

struct Event {
    t: u64,
    prio: u8,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.prio, other.seq).cmp(&(self.t, self.prio, self.seq))
    }
}

struct SimPeerState {
    id: String,
    core: PeerCore,
    device: VirtualDevice,
    clock: ClockModel,
    start_ns: u64,
    send_jitter: JitterModel,
    send_rng: ChaCha8Rng,
    load: Option<LoadState>,
    last_departure_ns: u64,
    cycles: u64,
    capture: Vec<f32>,
    /// Scenario index of each of the core's remote peers.
    remote_index: Vec<usize>,
    telemetry: Vec<TelemetrySample>,
    recording: Option<Recording>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    end_ns: u64,
    nominal_ns: f64,
    fpp: u64,
    queue: BinaryHeap<Event>,
    next_seq: u64,
    peers: Vec<SimPeerState>,
    links: Vec<Vec<Option<LinkState>>>,
    link_stats: Vec<Vec<LinkStats>>,
    origin: HashMap<(usize, u8), u64>,
    dropped: HashMap<(usize, u8), Vec<u64>>,
    datagrams: Vec<DatagramRecord>,
}

/// Runs a scenario to completion in virtual time.
pub fn run(scenario: &Scenario) -> Result<SimOutput> {
    scenario.validate()?;
    let matrix = scenario.link_matrix()?;
    let n = scenario.peers.len();
    let seed = scenario.seed;

    let mut peers = Vec::with_capacity(n);
    for (i, p) in scenario.peers.iter().enumerate() {
        let cfg = scenario.session_config(i);
        let core = PeerCore::new(&cfg)?;
        let remote_index = core
            .peers()
            .iter()
            .map(|r| scenario.peer_index(&r.id).expect("configured peer"))
            .collect();
        let mut source = scenario.source(p)?;
        if let SignalSource::Noise { seed: s, .. } = &mut source {
            *s = substream_seed(seed, i as u64, *s, Purpose::Source);
        }
        peers.push(SimPeerState {
            id: p.id.clone(),
            core,
            device: VirtualDevice::new(source, scenario.stream.sample_rate, scenario.stream.channels),
            clock: p.clock(),
            start_ns: p.start_us * 1000,
            send_jitter: p.send_jitter,
            send_rng: substream(seed, i as u64, 0, Purpose::SendJitter),
            load: p.load.map(|l| LoadState::new(l, substream(seed, i as u64, 0, Purpose::Load))),
            last_departure_ns: 0,
            cycles: 0,
            capture: vec![0.0; scenario.stream.samples_per_packet()],
            remote_index,
            telemetry: Vec::with_capacity(scenario.duration_s as usize * n),
            recording: scenario.record_output.then(Recording::default),
        });
    }

    let links = matrix
        .iter()
        .enumerate()
        .map(|(a, row)| {
            row.iter()
                .enumerate()
                .map(|(b, m)| m.map(|m| LinkState::new(m, substream_seed(seed, a as u64, b as u64, Purpose::Link))))
                .collect()
        })
        .collect();
    let link_stats = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| LinkStats {
                    from: scenario.peers[a].id.clone(),
                    to: scenario.peers[b].id.clone(),
                    ..LinkStats::default()
                })
                .collect()
        })
        .collect();

    let mut sim = Sim {
        scenario,
        end_ns: scenario.duration_s * NS_PER_S,
        nominal_ns: scenario.stream.frames_per_packet as f64 * 1e9 / scenario.stream.sample_rate as f64,
        fpp: scenario.stream.frames_per_packet as u64,
        queue: BinaryHeap::new(),
        next_seq: 0,
        peers,
        links,
        link_stats,
        origin: HashMap::new(),
        dropped: HashMap::new(),
        datagrams: Vec::new(),
    };
    sim.run()?;
    Ok(sim.finish())
}

impl Sim<'_> {
    fn push(&mut self, t: u64, kind: Kind) {
        if t > self.end_ns {
            return;
        }
        let prio = kind.priority();
        self.queue.push(Event { t, prio, seq: self.next_seq, kind });
        self.next_seq += 1;
    }

    fn run(&mut self) -> Result<()> {
        for p in 0..self.peers.len() {
            let t = self.peers[p].start_ns;
            self.push(t, Kind::Audio { peer: p });
        }
        if self.scenario.probes {
            self.push(NS_PER_S / 2, Kind::Probe { k: 0 });
        }
        self.push(NS_PER_S, Kind::Telemetry { k: 1 });

        while let Some(ev) = self.queue.pop() {
            match ev.kind {
                Kind::Audio { peer } => self.audio_cycle(peer, ev.t)?,
                Kind::Deliver { to, from, bytes, index } => self.deliver(to, from, &bytes, index, ev.t),
                Kind::Depart { to, from, bytes, index } => self.transmit(from, to, ev.t, bytes, index),
                Kind::Probe { k } => {
                    self.probe(ev.t);
                    self.push((k + 1) * NS_PER_S + NS_PER_S / 2, Kind::Probe { k: k + 1 });
                }
                Kind::Telemetry { k } => {
                    for p in &mut self.peers {
                        let local = p.clock.local_us(ev.t);
                        let rows = p.core.sample(k as f64, local);
                        p.telemetry.extend(rows);
                    }
                    self.push((k + 1) * NS_PER_S, Kind::Telemetry { k: k + 1 });
                }
            }
        }
        Ok(())
    }

    fn audio_cycle(&mut self, p: usize, t: u64) -> Result<()> {
        let peer = &mut self.peers[p];
        let local = peer.clock.local_us(t);
        peer.device.read_block(&mut peer.capture)?;
        let dgrams = peer.core.capture(&peer.capture, local)?;
        if let Some(rec) = &mut peer.recording {
            rec.captured.extend_from_slice(&peer.capture);
        }
        let jitter_ns = (peer.send_jitter.sample_ms(&mut peer.send_rng) * 1e6).round() as u64;
        let busy = peer.load.as_mut().is_none_or(|l| l.busy_at(t));
        let jitter_ns = if busy { jitter_ns } else { 0 };
        let departure = peer.last_departure_ns.max(t + jitter_ns);
        peer.last_departure_ns = departure;
        let index = peer.cycles;

        let [monitor, audience] = peer.core.playout(local);
        peer.device.write_block(&monitor, &audience)?;
        if let Some(rec) = &mut peer.recording {
            rec.monitor.extend_from_slice(&monitor);
            rec.audience.extend_from_slice(&audience);
        }
        peer.cycles += 1;
        let next = peer.clock.cycle_ns(peer.start_ns, peer.cycles, self.nominal_ns);
        let remotes = peer.remote_index.clone();

        for d in dgrams {
            for &q in &remotes {
                if departure == t {
                    self.transmit(p, q, t, d.clone(), index);
                } else {
                    self.push(departure, Kind::Depart { to: q, from: p, bytes: d.clone(), index });
                }
            }
        }
        self.push(next, Kind::Audio { peer: p });
        Ok(())
    }

    fn transmit(&mut self, from: usize, to: usize, t: u64, bytes: Vec<u8>, index: u64) {
        let header = wire::decode_header(&bytes).expect("engine emits valid datagrams");
        let kind = if header.is_probe_reply() {
            DatagramKind::ProbeReply
        } else if header.is_probe() {
            DatagramKind::Probe
        } else if header.is_metronome() {
            DatagramKind::Metronome
        } else {
            DatagramKind::Audio
        };
        let audio = matches!(kind, DatagramKind::Audio | DatagramKind::Metronome);
        let at = self.links[from][to].as_mut().expect("validated link matrix").transmit(t);
        let stats = &mut self.link_stats[from][to];
        if audio {
            stats.audio_sent += 1;
        } else {
            stats.probes_sent += 1;
        }
        if at.is_none() {
            if audio {
                stats.audio_dropped += 1;
                self.dropped.entry((to, header.stream_id)).or_default().push(index);
            } else {
                stats.probes_dropped += 1;
            }
        }
        if self.scenario.record_datagrams {
            self.datagrams.push(DatagramRecord {
                from: self.peers[from].id.clone(),
                to: self.peers[to].id.clone(),
                kind,
                stream_id: header.stream_id,
                seq: header.seq,
                sent_ns: t,
                dropped: at.is_none(),
                delivered_ns: at,
            });
        }
        if let Some(at) = at {
            self.push(at, Kind::Deliver { to, from, bytes, index });
        }
    }

    fn deliver(&mut self, to: usize, from: usize, bytes: &[u8], index: u64, t: u64) {
        let peer = &mut self.peers[to];
        let local = peer.clock.local_us(t);
        match peer.core.receive(bytes, local) {
            Received::Reply(reply) => self.transmit(to, from, t, reply, 0),
            Received::Audio { stream_id } => {
                self.origin.entry((to, stream_id)).or_insert(index);
            }
            _ => {}
        }
    }

    fn probe(&mut self, t: u64) {
        for p in 0..self.peers.len() {
            let peer = &mut self.peers[p];
            let local = peer.clock.local_us(t);
            let probes = peer.core.probe_tick(local);
            let remotes = peer.remote_index.clone();
            for (ri, bytes) in probes {
                self.transmit(p, remotes[ri], t, bytes, 0);
            }
        }
    }

    fn finish(self) -> SimOutput {
        let mut streams = Vec::new();
        for (q, peer) in self.peers.iter().enumerate() {
            for s in peer.core.streams() {
                let sender_id = &peer.core.peers()[s.peer].id;
                let sender = &self.peers[peer.remote_index[s.peer]];
                let packets_sent = sender.cycles;
                let origin = self.origin.get(&(q, s.stream_id)).copied();
                let elapsed = s.buffer.frames_elapsed();
                let frames_sent = origin.map_or(0, |o| (packets_sent - o) * self.fpp);
                let frames_dropped_passed = match origin {
                    Some(o) => self
                        .dropped
                        .get(&(q, s.stream_id))
                        .into_iter()
                        .flatten()
                        .filter(|&&i| i >= o)
                        .map(|&i| elapsed.saturating_sub((i - o) * self.fpp).min(self.fpp))
                        .sum(),
                    None => 0,
                };
                streams.push(StreamTruth {
                    receiver: peer.id.clone(),
                    sender: sender_id.clone(),
                    stream_id: s.stream_id,
                    packets_sent,
                    origin_index: origin,
                    frames_sent,
                    frames_dropped_passed,
                    frames_in_flight: frames_sent.saturating_sub(elapsed),
                    frames_elapsed: elapsed,
                    counters: s.buffer.counters(),
                });
            }
        }
        let links = self
            .link_stats
            .into_iter()
            .enumerate()
            .flat_map(|(a, row)| row.into_iter().enumerate().filter(move |(b, _)| *b != a).map(|(_, l)| l))
            .collect();
        SimOutput {
            scenario: self.scenario.name.clone(),
            duration_s: self.scenario.duration_s,
            sample_rate: self.scenario.stream.sample_rate,
            peers: self
                .peers
                .into_iter()
                .zip(&self.scenario.peers)
                .map(|(p, sp)| PeerRun {
                    id: p.id,
                    drift_ppm: sp.drift_ppm,
                    cycles: p.cycles,
                    telemetry: p.telemetry,
                    recording: p.recording,
                    core: p.core,
                })
                .collect(),
            streams,
            links,
            datagrams: self.datagrams,
        }
    }
}

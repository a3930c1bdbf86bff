//! Deterministic discrete-event simulation of whole sessions.
//!
//! Peers run the real [`PeerCore`](crate::engine::PeerCore) against virtual
//! audio devices, drifting clocks and modelled links, in virtual time.

mod fixtures;
mod link;
mod load;
mod sim;
mod truth;

pub use fixtures::{replication_scenario, replication_scenario_300, REPLICATION_TOML};
pub use link::{deliveries, substream, substream_seed, JitterModel, LinkModel, LinkState, Purpose, SpikeModel};
pub use load::HostLoad;
pub use sim::{run, PeerRun, Recording, SimOutput};
pub use truth::{DatagramKind, DatagramRecord, LinkStats, StreamTruth};

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device::SignalSource;
use crate::error::{Error, Result};
use crate::jitter::JitterBufferConfig;
use crate::session::{MetronomeConfig, PeerEntry, RouteEntry, SessionConfig};
use crate::wire::StreamConfig;

pub const MAX_DRIFT_PPM: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClockModel {
    /// Audio clock rate error; positive runs fast.
    pub drift_ppm: f64,
    /// Local clock reading at virtual time zero.
    pub offset_us: i64,
}

impl ClockModel {
    /// Local clock reading at virtual time `t_ns`, in microseconds.
    pub fn local_us(&self, t_ns: u64) -> i64 {
        self.offset_us + (t_ns as f64 / (1.0 - self.drift_ppm * 1e-6) / 1000.0).floor() as i64
    }

    /// Virtual time of audio cycle `k` for a nominal period.
    pub fn cycle_ns(&self, start_ns: u64, k: u64, nominal_ns: f64) -> u64 {
        start_ns + (k as f64 * nominal_ns * (1.0 - self.drift_ppm * 1e-6)).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimPeer {
    pub id: String,
    pub stream_id: u8,
    /// Virtual audio source, e.g. `sine:440`, `noise:3`, `silence`.
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default)]
    pub drift_ppm: f64,
    #[serde(default = "default_offset")]
    pub offset_us: i64,
    /// Virtual time of the first audio cycle.
    #[serde(default)]
    pub start_us: u64,
    /// Delay between capture and the datagram leaving the host.
    #[serde(default)]
    pub send_jitter: JitterModel,
    /// Restricts send jitter to busy periods.
    #[serde(default)]
    pub load: Option<HostLoad>,
    /// Playout buffer settings for this peer, instead of the scenario's.
    #[serde(default)]
    pub jitter: Option<JitterBufferConfig>,
    #[serde(default)]
    pub routing: Vec<RouteEntry>,
}

fn default_source() -> String {
    "sine:440".into()
}

fn default_offset() -> i64 {
    1_000_000
}

impl SimPeer {
    pub fn new(id: &str, stream_id: u8) -> Self {
        Self {
            id: id.into(),
            stream_id,
            source: default_source(),
            drift_ppm: 0.0,
            offset_us: default_offset(),
            start_us: 0,
            send_jitter: JitterModel::None,
            load: None,
            jitter: None,
            routing: Vec::new(),
        }
    }

    pub fn clock(&self) -> ClockModel {
        ClockModel { drift_ppm: self.drift_ppm, offset_us: self.offset_us }
    }
}

/// A directed link between two peers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub from: String,
    pub to: String,
    /// Also create the reverse link with the same model.
    #[serde(default)]
    pub bidirectional: bool,
    pub base_owd_ms: f64,
    #[serde(default)]
    pub jitter: JitterModel,
    #[serde(default)]
    pub loss_prob: f64,
    #[serde(default)]
    pub reorder: bool,
    #[serde(default)]
    pub spikes: Option<SpikeModel>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl LinkSpec {
    pub fn new(from: &str, to: &str, model: LinkModel) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            bidirectional: false,
            base_owd_ms: model.base_owd_ms,
            jitter: model.jitter,
            loss_prob: model.loss_prob,
            reorder: model.reorder,
            spikes: model.spikes,
            seed: model.seed,
        }
    }

    pub fn model(&self) -> LinkModel {
        LinkModel {
            base_owd_ms: self.base_owd_ms,
            jitter: self.jitter,
            loss_prob: self.loss_prob,
            reorder: self.reorder,
            spikes: self.spikes,
            seed: self.seed,
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub jitter: JitterBufferConfig,
    #[serde(default)]
    pub metronome: MetronomeConfig,
    /// Send one RTT probe per second per peer pair.
    #[serde(default = "default_true")]
    pub probes: bool,
    /// Keep one ground-truth row per datagram.
    #[serde(default)]
    pub record_datagrams: bool,
    /// Keep every peer's captured input and bus outputs.
    #[serde(default)]
    pub record_output: bool,
    pub peers: Vec<SimPeer>,
    pub links: Vec<LinkSpec>,
}

impl Scenario {
    /// Two peers joined by one symmetric link.
    pub fn pair(duration_s: u64, seed: u64, link: LinkModel) -> Self {
        let mut l = LinkSpec::new("a", "b", link);
        l.bidirectional = true;
        Self {
            name: "pair".into(),
            duration_s,
            seed,
            stream: StreamConfig::default(),
            jitter: JitterBufferConfig::default(),
            metronome: MetronomeConfig::default(),
            probes: true,
            record_datagrams: false,
            record_output: false,
            peers: vec![SimPeer::new("a", 1), SimPeer::new("b", 2)],
            links: vec![l],
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let sc: Scenario = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn peer_index(&self, id: &str) -> Option<usize> {
        self.peers.iter().position(|p| p.id == id)
    }

    /// Session configuration seen by peer `idx`.
    pub fn session_config(&self, idx: usize) -> SessionConfig {
        let p = &self.peers[idx];
        SessionConfig {
            local_peer_id: p.id.clone(),
            stream: self.stream,
            jitter: p.jitter.unwrap_or(self.jitter),
            peers: self
                .peers
                .iter()
                .map(|q| PeerEntry { id: q.id.clone(), addr: None, stream_id: q.stream_id })
                .collect(),
            metronome: self.metronome.clone(),
            routing: p.routing.clone(),
        }
    }

    /// Link model per ordered pair, `[from][to]`.
    pub fn link_matrix(&self) -> Result<Vec<Vec<Option<LinkModel>>>> {
        let n = self.peers.len();
        let mut m = vec![vec![None; n]; n];
        let idx = |id: &str| self.peer_index(id).ok_or_else(|| Error::config(format!("link names unknown peer {id:?}")));
        for l in &self.links {
            let (a, b) = (idx(&l.from)?, idx(&l.to)?);
            if a == b {
                return Err(Error::config(format!("link from {:?} to itself", l.from)));
            }
            let model = l.model();
            model.validate()?;
            let mut pairs = vec![(a, b)];
            if l.bidirectional {
                pairs.push((b, a));
            }
            for (x, y) in pairs {
                if m[x][y].replace(model).is_some() {
                    return Err(Error::config(format!(
                        "link {} -> {} defined twice",
                        self.peers[x].id, self.peers[y].id
                    )));
                }
            }
        }
        for (a, row) in m.iter().enumerate() {
            for (b, cell) in row.iter().enumerate() {
                if a != b && cell.is_none() {
                    return Err(Error::config(format!(
                        "no link from {} to {}",
                        self.peers[a].id, self.peers[b].id
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration_s == 0 {
            return Err(Error::config("duration_s must be >= 1"));
        }
        if self.peers.len() < 2 {
            return Err(Error::config("a scenario needs at least two peers"));
        }
        let mut ids = HashSet::new();
        for p in &self.peers {
            if !ids.insert(p.id.as_str()) {
                return Err(Error::config(format!("duplicate peer id {:?}", p.id)));
            }
            if !(p.drift_ppm.abs() <= MAX_DRIFT_PPM) {
                return Err(Error::config(format!("drift {} ppm exceeds {MAX_DRIFT_PPM}", p.drift_ppm)));
            }
            if p.offset_us < 0 {
                return Err(Error::config("offset_us must be >= 0"));
            }
            p.send_jitter.validate()?;
            if let Some(l) = &p.load {
                l.validate()?;
            }
            self.source(p)?;
        }
        for i in 0..self.peers.len() {
            self.session_config(i).validate()?;
        }
        self.link_matrix().map(|_| ())
    }

    pub(crate) fn source(&self, p: &SimPeer) -> Result<SignalSource> {
        p.source.parse()
    }
}

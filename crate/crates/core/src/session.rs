//! Session configuration: who takes part, how audio is framed, and who
//! hears what.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jitter::JitterBufferConfig;
use crate::metronome::validate_bpm;
use crate::routing::{Bus, RoutingMatrix, Source};
use crate::wire::StreamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerEntry {
    pub id: String,
    /// UDP address; for the local peer this is the bind address.
    #[serde(default)]
    pub addr: Option<String>,
    /// Stream id this peer's capture is sent under.
    pub stream_id: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetronomeConfig {
    pub enabled: bool,
    pub bpm: f64,
    pub beats_per_bar: u32,
    /// Peer that generates the click and streams it to the others.
    pub owner: Option<String>,
    pub stream_id: u8,
    /// Keep the click off the audience bus.
    pub audience_mute: bool,
}

impl Default for MetronomeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            bpm: 120.0,
            beats_per_bar: 4,
            owner: None,
            stream_id: 255,
            audience_mute: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteEntry {
    pub source: Source,
    pub bus: Bus,
    pub gain: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub local_peer_id: String,
    #[serde(default)]
    pub stream: StreamConfig,
    #[serde(default)]
    pub jitter: JitterBufferConfig,
    pub peers: Vec<PeerEntry>,
    #[serde(default)]
    pub metronome: MetronomeConfig,
    /// Gain overrides applied on top of the default routing.
    #[serde(default)]
    pub routing: Vec<RouteEntry>,
}

impl SessionConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SessionConfig = toml::from_str(s).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        self.jitter.validate()?;
        let mut ids = HashSet::new();
        let mut streams = HashSet::new();
        for p in &self.peers {
            if p.id.is_empty() {
                return Err(Error::config("peer id must not be empty"));
            }
            if !ids.insert(p.id.as_str()) {
                return Err(Error::config(format!("duplicate peer id {:?}", p.id)));
            }
            if !streams.insert(p.stream_id) {
                return Err(Error::config(format!("duplicate stream id {}", p.stream_id)));
            }
        }
        if !ids.contains(self.local_peer_id.as_str()) {
            return Err(Error::config(format!("local peer {:?} not in peer list", self.local_peer_id)));
        }
        if self.peers.len() < 2 {
            return Err(Error::config("a session needs at least two peers"));
        }
        let m = &self.metronome;
        validate_bpm(m.bpm)?;
        if m.beats_per_bar == 0 {
            return Err(Error::config("beats_per_bar must be >= 1"));
        }
        if let Some(owner) = &m.owner {
            if !ids.contains(owner.as_str()) {
                return Err(Error::config(format!("metronome owner {owner:?} not in peer list")));
            }
            if streams.contains(&m.stream_id) {
                return Err(Error::config(format!("metronome stream id {} already in use", m.stream_id)));
            }
        }
        self.routing_matrix().map(|_| ())
    }

    pub fn local(&self) -> &PeerEntry {
        self.peers
            .iter()
            .find(|p| p.id == self.local_peer_id)
            .expect("validated config contains the local peer")
    }

    pub fn remotes(&self) -> impl Iterator<Item = &PeerEntry> {
        self.peers.iter().filter(|p| p.id != self.local_peer_id)
    }

    pub fn is_metronome_owner(&self) -> bool {
        self.metronome.owner.as_deref() == Some(self.local_peer_id.as_str())
    }

    /// Stream id of received metronome audio, if another peer owns the click.
    pub fn remote_metronome_stream(&self) -> Option<u8> {
        match &self.metronome.owner {
            Some(o) if *o != self.local_peer_id => Some(self.metronome.stream_id),
            _ => None,
        }
    }

    pub fn routing_matrix(&self) -> Result<RoutingMatrix> {
        let remote: Vec<u8> = self.remotes().map(|p| p.stream_id).collect();
        let mut m = RoutingMatrix::with_defaults(&remote, self.metronome.audience_mute);
        for r in &self.routing {
            m.set_gain(r.source, r.bus, r.gain)?;
        }
        Ok(m)
    }
}

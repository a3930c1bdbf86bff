//! Audio device abstraction and a virtual implementation for tests and
//! simulation.

use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::routing::i16_to_f32;

/// Reads and writes fixed-size interleaved blocks on a frame clock.
pub trait AudioDevice: Send {
    /// Fills `out` with the next captured block.
    fn read_block(&mut self, out: &mut [f32]) -> Result<()>;
    /// Accepts the monitor and audience bus blocks for the current cycle.
    fn write_block(&mut self, monitor: &[f32], audience: &[f32]) -> Result<()>;
}

/// Signal produced by a [`VirtualDevice`].
#[derive(Debug, Clone, PartialEq)]
pub enum SignalSource {
    Silence,
    Sine { freq_hz: f64, amplitude: f64 },
    /// Uniform white noise, seeded.
    Noise { seed: u64, amplitude: f64 },
    /// Looped sample data, interleaved.
    Samples(Vec<i16>),
}

impl SignalSource {
    /// Reads raw S16LE interleaved samples from a file.
    pub fn from_raw_file(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 2 || bytes.len() % 2 != 0 {
            return Err(Error::config(format!("{}: not a whole number of s16 samples", path.display())));
        }
        let samples = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        Ok(SignalSource::Samples(samples))
    }
}

impl FromStr for SignalSource {
    type Err = Error;

    /// `silence`, `sine`, `sine:<hz>`, `noise`, `noise:<seed>` or `file:<path>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        let bad = || Error::config(format!("bad virtual audio source {s:?}"));
        match (kind, arg) {
            ("silence", None) => Ok(SignalSource::Silence),
            ("sine", None) => Ok(SignalSource::Sine { freq_hz: 440.0, amplitude: 0.5 }),
            ("sine", Some(f)) => {
                let freq_hz: f64 = f.parse().map_err(|_| bad())?;
                if !(freq_hz > 0.0) {
                    return Err(bad());
                }
                Ok(SignalSource::Sine { freq_hz, amplitude: 0.5 })
            }
            ("noise", None) => Ok(SignalSource::Noise { seed: 0, amplitude: 0.5 }),
            ("noise", Some(seed)) => {
                Ok(SignalSource::Noise { seed: seed.parse().map_err(|_| bad())?, amplitude: 0.5 })
            }
            ("file", Some(p)) => SignalSource::from_raw_file(Path::new(p)),
            _ => Err(bad()),
        }
    }
}

/// Device whose clock is driven by the caller.
///
/// Every `read_block` advances one block; written bus blocks are optionally
/// kept for inspection.
pub struct VirtualDevice {
    source: SignalSource,
    channels: u16,
    sample_rate: u32,
    frame: u64,
    rng: Option<ChaCha8Rng>,
    record: bool,
    monitor: Vec<f32>,
    audience: Vec<f32>,
}

impl VirtualDevice {
    pub fn new(source: SignalSource, sample_rate: u32, channels: u16) -> Self {
        let rng = match &source {
            SignalSource::Noise { seed, .. } => Some(ChaCha8Rng::seed_from_u64(*seed)),
            _ => None,
        };
        Self {
            source,
            channels,
            sample_rate,
            frame: 0,
            rng,
            record: false,
            monitor: Vec::new(),
            audience: Vec::new(),
        }
    }

    /// Keeps every written block.
    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn frames_read(&self) -> u64 {
        self.frame
    }

    pub fn monitor(&self) -> &[f32] {
        &self.monitor
    }

    pub fn audience(&self) -> &[f32] {
        &self.audience
    }

    /// Value of the source at an absolute frame and channel, where defined
    /// without state.
    pub fn sample_at(&self, frame: u64, channel: u16) -> Option<f32> {
        match &self.source {
            SignalSource::Silence => Some(0.0),
            SignalSource::Sine { freq_hz, amplitude } => {
                let t = frame as f64 / self.sample_rate as f64;
                Some((amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin()) as f32)
            }
            SignalSource::Samples(s) => {
                let i = (frame * self.channels as u64 + channel as u64) as usize % s.len();
                Some(i16_to_f32(s[i]))
            }
            SignalSource::Noise { .. } => None,
        }
    }
}

impl AudioDevice for VirtualDevice {
    fn read_block(&mut self, out: &mut [f32]) -> Result<()> {
        let ch = self.channels as usize;
        if out.len() % ch != 0 {
            return Err(Error::config("block is not a whole number of frames"));
        }
        let frames = out.len() / ch;
        for f in 0..frames {
            let frame = self.frame + f as u64;
            for c in 0..ch {
                out[f * ch + c] = match (&self.source, self.rng.as_mut()) {
                    (SignalSource::Noise { amplitude, .. }, Some(rng)) => {
                        (amplitude * rng.random_range(-1.0..1.0)) as f32
                    }
                    _ => self.sample_at(frame, c as u16).unwrap_or(0.0),
                };
            }
        }
        self.frame += frames as u64;
        Ok(())
    }

    fn write_block(&mut self, monitor: &[f32], audience: &[f32]) -> Result<()> {
        if self.record {
            self.monitor.extend_from_slice(monitor);
            self.audience.extend_from_slice(audience);
        }
        Ok(())
    }
}

//! Listening topology: which source is heard on which output bus.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// A remote audio stream, by stream id.
    Stream(u8),
    /// This peer's own capture.
    Local,
    Metronome,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Stream(id) => write!(f, "stream:{id}"),
            Source::Local => f.write_str("local"),
            Source::Metronome => f.write_str("metronome"),
        }
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Source::Local),
            "metronome" => Ok(Source::Metronome),
            _ => s
                .strip_prefix("stream:")
                .and_then(|id| id.parse().ok())
                .map(Source::Stream)
                .ok_or_else(|| Error::config(format!("unknown source {s:?}"))),
        }
    }
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bus {
    /// What the musicians hear.
    Monitor,
    /// What the in-room audience hears.
    Audience,
}

impl Bus {
    pub const ALL: [Bus; 2] = [Bus::Monitor, Bus::Audience];

    fn index(self) -> usize {
        match self {
            Bus::Monitor => 0,
            Bus::Audience => 1,
        }
    }
}

impl FromStr for Bus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monitor" | "musician_monitor" => Ok(Bus::Monitor),
            "audience" => Ok(Bus::Audience),
            _ => Err(Error::config(format!("unknown bus {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingMatrix {
    rows: Vec<(Source, [f32; 2])>,
    metronome_audience_mute: bool,
}

impl RoutingMatrix {
    /// Every remote stream on both buses, the metronome on the monitor bus
    /// only, the local capture nowhere.
    pub fn with_defaults(remote_streams: &[u8], metronome_audience_mute: bool) -> Self {
        let mut rows: Vec<(Source, [f32; 2])> =
            remote_streams.iter().map(|&id| (Source::Stream(id), [1.0, 1.0])).collect();
        rows.push((Source::Local, [0.0, 0.0]));
        rows.push((Source::Metronome, [1.0, if metronome_audience_mute { 0.0 } else { 1.0 }]));
        Self { rows, metronome_audience_mute }
    }

    pub fn sources(&self) -> impl Iterator<Item = Source> + '_ {
        self.rows.iter().map(|(s, _)| *s)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn metronome_audience_mute(&self) -> bool {
        self.metronome_audience_mute
    }

    pub fn set_metronome_audience_mute(&mut self, mute: bool) {
        self.metronome_audience_mute = mute;
    }

    pub fn gain(&self, source: Source, bus: Bus) -> Option<f32> {
        self.rows
            .iter()
            .find(|(s, _)| *s == source)
            .map(|(s, g)| self.effective(*s, g, bus.index()))
    }

    fn effective(&self, source: Source, gains: &[f32; 2], bus: usize) -> f32 {
        if source == Source::Metronome && bus == Bus::Audience.index() && self.metronome_audience_mute {
            0.0
        } else {
            gains[bus]
        }
    }

    pub fn set_gain(&mut self, source: Source, bus: Bus, gain: f32) -> Result<()> {
        if !(0.0..=1.0).contains(&gain) {
            return Err(Error::config(format!("gain {gain} outside [0, 1]")));
        }
        let row = self
            .rows
            .iter_mut()
            .find(|(s, _)| *s == source)
            .ok_or_else(|| Error::config(format!("no routing row for {source}")))?;
        row.1[bus.index()] = gain;
        Ok(())
    }

    /// Zeroes a source on every bus.
    pub fn mute(&mut self, source: Source) -> Result<()> {
        for bus in Bus::ALL {
            self.set_gain(source, bus, 0.0)?;
        }
        Ok(())
    }
}

/// Mixes one block per matrix row onto the two buses.
///
/// `inputs[i]` feeds row `i`. Sums are taken in row order and clamped to
/// [-1, 1].
pub fn mix(inputs: &[&[f32]], matrix: &RoutingMatrix) -> Result<[Vec<f32>; 2]> {
    if inputs.len() != matrix.rows.len() {
        return Err(Error::config(format!(
            "{} inputs for {} routing rows",
            inputs.len(),
            matrix.rows.len()
        )));
    }
    let len = inputs.first().map_or(0, |b| b.len());
    if inputs.iter().any(|b| b.len() != len) {
        return Err(Error::config("input blocks differ in length"));
    }
    let mut buses = [vec![0.0f32; len], vec![0.0f32; len]];
    for (bus_idx, bus) in buses.iter_mut().enumerate() {
        for (input, (source, gains)) in inputs.iter().zip(&matrix.rows) {
            let g = matrix.effective(*source, gains, bus_idx);
            if g == 0.0 {
                continue;
            }
            for (o, &x) in bus.iter_mut().zip(input.iter()) {
                *o += g * x;
            }
        }
        for o in bus.iter_mut() {
            *o = o.clamp(-1.0, 1.0);
        }
    }
    Ok(buses)
}

pub fn i16_to_f32(s: i16) -> f32 {
    s as f32 / 32768.0
}

pub fn f32_to_i16(x: f32) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity() {
        let mut m = RoutingMatrix::with_defaults(&[1], true);
        m.mute(Source::Metronome).unwrap();
        let a = [0.1f32, -0.5, 0.25];
        let z = [0.0f32; 3];
        let [mon, aud] = mix(&[&a, &z, &z], &m).unwrap();
        assert_eq!(mon, a);
        assert_eq!(aud, a);
    }

    #[test]
    fn saturation() {
        let m = RoutingMatrix::with_defaults(&[1, 2], true);
        let full = [1.0f32; 4];
        let z = [0.0f32; 4];
        let [mon, _] = mix(&[&full, &full, &z, &z], &m).unwrap();
        assert_eq!(mon, vec![1.0; 4]);
    }

    #[test]
    fn half_gains_average() {
        let mut m = RoutingMatrix::with_defaults(&[1, 2], true);
        m.set_gain(Source::Stream(1), Bus::Monitor, 0.5).unwrap();
        m.set_gain(Source::Stream(2), Bus::Monitor, 0.5).unwrap();
        let a = [0.5f32, -0.25, 1.0, 0.0];
        let b = [0.25f32, 0.25, -1.0, 0.75];
        let z = [0.0f32; 4];
        let [mon, _] = mix(&[&a, &b, &z, &z], &m).unwrap();
        let expect: Vec<f32> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        assert_eq!(mon, expect);
    }

    #[test]
    fn dimension_mismatch() {
        let m = RoutingMatrix::with_defaults(&[1], true);
        let a = [0.0f32; 2];
        assert!(mix(&[&a], &m).is_err());
        let b = [0.0f32; 3];
        assert!(mix(&[&a, &a, &b], &m).is_err());
    }

    #[test]
    fn gain_range_and_unknown_rows() {
        let mut m = RoutingMatrix::with_defaults(&[1], true);
        assert!(m.set_gain(Source::Stream(1), Bus::Monitor, 1.5).is_err());
        assert!(m.set_gain(Source::Stream(9), Bus::Monitor, 0.5).is_err());
    }

    #[test]
    fn muted_metronome_never_reaches_audience() {
        let mut m = RoutingMatrix::with_defaults(&[1], true);
        m.set_gain(Source::Metronome, Bus::Audience, 1.0).unwrap();
        assert_eq!(m.gain(Source::Metronome, Bus::Audience), Some(0.0));
        m.set_metronome_audience_mute(false);
        assert_eq!(m.gain(Source::Metronome, Bus::Audience), Some(1.0));
    }

    #[test]
    fn source_names() {
        for s in [Source::Stream(7), Source::Local, Source::Metronome] {
            assert_eq!(s.to_string().parse::<Source>().unwrap(), s);
        }
        assert!("stream:x".parse::<Source>().is_err());
    }

    #[test]
    fn sample_conversion_round_trips() {
        for s in i16::MIN..=i16::MAX {
            assert_eq!(f32_to_i16(i16_to_f32(s)), s);
        }
    }

    proptest! {
        #[test]
        fn zero_row_is_absent(
            a in proptest::collection::vec(-1.0f32..1.0, 16),
            b in proptest::collection::vec(-1.0f32..1.0, 16),
            c in proptest::collection::vec(-1.0f32..1.0, 16),
        ) {
            let mut m = RoutingMatrix::with_defaults(&[1, 2], true);
            m.mute(Source::Stream(2)).unwrap();
            let z = vec![0.0f32; 16];
            let with = mix(&[&a, &b, &z, &z], &m).unwrap();
            let other = mix(&[&a, &c, &z, &z], &m).unwrap();
            prop_assert_eq!(with, other);
        }
    }
}

//! Sample-locked metronome click generator.

use crate::error::{Error, Result};

pub const MIN_BPM: f64 = 20.0;
pub const MAX_BPM: f64 = 300.0;

const CLICK_HZ: f64 = 1000.0;
const CLICK_SECONDS: f64 = 0.020;
const FADE_SECONDS: f64 = 0.005;
const ACCENT_AMPLITUDE: f64 = 0.8;
const BEAT_AMPLITUDE: f64 = 0.5;

pub fn validate_bpm(bpm: f64) -> Result<()> {
    if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
        return Err(Error::config(format!("bpm {bpm} outside [{MIN_BPM}, {MAX_BPM}]")));
    }
    Ok(())
}

/// Frame index of beat `k`.
pub fn onset_frame(k: u64, bpm: f64, sample_rate: u32) -> u64 {
    (k as f64 * 60.0 * sample_rate as f64 / bpm).round() as u64
}

/// Mono click track for frames `[frame_index, frame_index + n_frames)`.
///
/// Each beat is a 1 kHz sine burst of 20 ms whose last 5 ms fade linearly
/// to zero; the first beat of every bar is louder.
pub fn metronome_block(
    bpm: f64,
    beats_per_bar: u32,
    frame_index: u64,
    n_frames: usize,
    sample_rate: u32,
) -> Result<Vec<f32>> {
    validate_bpm(bpm)?;
    if beats_per_bar == 0 {
        return Err(Error::config("beats_per_bar must be >= 1"));
    }
    let sr = sample_rate as f64;
    let click_len = (CLICK_SECONDS * sr).ceil() as u64;
    let mut out = vec![0.0f32; n_frames];

    // first beat whose click could still be sounding at frame_index
    let mut k = ((frame_index.saturating_sub(click_len)) as f64 * bpm / (60.0 * sr)).floor() as u64;
    let end = frame_index + n_frames as u64;
    loop {
        let onset = onset_frame(k, bpm, sample_rate);
        if onset >= end {
            break;
        }
        let amp = if k % beats_per_bar as u64 == 0 { ACCENT_AMPLITUDE } else { BEAT_AMPLITUDE };
        let from = onset.max(frame_index);
        for f in from..end {
            let t = (f - onset) as f64 / sr;
            if t >= CLICK_SECONDS {
                break;
            }
            let env = if t < CLICK_SECONDS - FADE_SECONDS {
                1.0
            } else {
                (CLICK_SECONDS - t) / FADE_SECONDS
            };
            let v = amp * env * (2.0 * std::f64::consts::PI * CLICK_HZ * t).sin();
            out[(f - frame_index) as usize] = v as f32;
        }
        k += 1;
    }
    Ok(out)
}

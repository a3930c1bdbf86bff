use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random delay added on top of a fixed base delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JitterModel {
    #[default]
    None,
    /// Uniform on `[a_ms, b_ms]`.
    Uniform { a_ms: f64, b_ms: f64 },
    /// `min_ms` plus an exponential excess with mean `mean_excess_ms`.
    ShiftedExponential { min_ms: f64, mean_excess_ms: f64 },
    /// With probability `prob` a delay uniform on `[0, max_ms]`, else none.
    Stall { prob: f64, max_ms: f64 },
}

impl JitterModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            JitterModel::None => true,
            JitterModel::Uniform { a_ms, b_ms } => a_ms >= 0.0 && b_ms >= a_ms && b_ms.is_finite(),
            JitterModel::ShiftedExponential { min_ms, mean_excess_ms } => {
                min_ms >= 0.0 && mean_excess_ms >= 0.0 && (min_ms + mean_excess_ms).is_finite()
            }
            JitterModel::Stall { prob, max_ms } => (0.0..=1.0).contains(&prob) && max_ms >= 0.0 && max_ms.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid jitter model {self:?}")))
        }
    }

    /// One draw in milliseconds. Always consumes exactly one value from
    /// `rng` so that draw sequences do not depend on the model kind.
    pub fn sample_ms(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            JitterModel::None => {
                let _: u64 = rng.random();
                0.0
            }
            JitterModel::Uniform { a_ms, b_ms } => a_ms + (b_ms - a_ms) * rng.random::<f64>(),
            JitterModel::ShiftedExponential { min_ms, mean_excess_ms } => {
                let e: f64 = Exp1.sample(rng);
                min_ms + mean_excess_ms * e
            }
            JitterModel::Stall { prob, max_ms } => {
                let u: f64 = rng.random();
                if u < prob { max_ms * u / prob } else { 0.0 }
            }
        }
    }
}

/// Rare congestion episodes: extra delay that jumps to an exponentially
/// distributed height and decays linearly back to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeModel {
    /// Mean episodes per second (Poisson arrivals).
    pub rate_per_s: f64,
    /// Mean peak extra delay.
    pub mean_peak_ms: f64,
    pub duration_ms: f64,
}

impl SpikeModel {
    fn validate(&self) -> Result<()> {
        if !(self.rate_per_s >= 0.0 && self.mean_peak_ms >= 0.0 && self.duration_ms > 0.0)
            || !(self.rate_per_s + self.mean_peak_ms + self.duration_ms).is_finite()
        {
            return Err(Error::config(format!("invalid spike model {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkModel {
    pub base_owd_ms: f64,
    #[serde(default)]
    pub jitter: JitterModel,
    #[serde(default)]
    pub loss_prob: f64,
    /// Let jitter reorder datagrams; otherwise delivery is forced FIFO.
    #[serde(default)]
    pub reorder: bool,
    #[serde(default)]
    pub spikes: Option<SpikeModel>,
    /// Fixed seed for this link instead of one derived from the scenario.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl LinkModel {
    pub fn constant(base_owd_ms: f64) -> Self {
        Self { base_owd_ms, jitter: JitterModel::None, loss_prob: 0.0, reorder: false, spikes: None, seed: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_owd_ms >= 0.0 && self.base_owd_ms.is_finite()) {
            return Err(Error::config(format!("base_owd_ms {} must be >= 0", self.base_owd_ms)));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(Error::config(format!("loss_prob {} outside [0, 1]", self.loss_prob)));
        }
        self.jitter.validate()?;
        if let Some(s) = &self.spikes {
            s.validate()?;
        }
        Ok(())
    }
}

/// Random stream purposes.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Purpose {
    Link = 0,
    Loss = 1,
    Jitter = 2,
    Spikes = 3,
    SendJitter = 4,
    Source = 5,
    Load = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of an independent random substream.
pub fn substream_seed(seed: u64, a: u64, b: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(seed);
    for v in [a, b, purpose as u64] {
        h = splitmix64(h ^ v);
    }
    h
}

pub fn substream(seed: u64, a: u64, b: u64, purpose: Purpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, a, b, purpose))
}

const NS_PER_MS: f64 = 1e6;

#[derive(Debug, Clone)]
struct Spikes {
    model: SpikeModel,
    rng: ChaCha8Rng,
    next_start_ns: f64,
    /// (start, peak) of episodes that may still be active.
    active: Vec<(f64, f64)>,
}

impl Spikes {
    fn new(model: SpikeModel, mut rng: ChaCha8Rng) -> Self {
        let next_start_ns = Self::gap(&model, &mut rng);
        Self { model, rng, next_start_ns, active: Vec::new() }
    }

    fn gap(model: &SpikeModel, rng: &mut ChaCha8Rng) -> f64 {
        if model.rate_per_s <= 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(rng);
        e / model.rate_per_s * 1e9
    }

    fn extra_ms(&mut self, t_ns: f64) -> f64 {
        while self.next_start_ns <= t_ns {
            let e: f64 = Exp1.sample(&mut self.rng);
            self.active.push((self.next_start_ns, e * self.model.mean_peak_ms));
            self.next_start_ns += Self::gap(&self.model, &mut self.rng);
        }
        let dur = self.model.duration_ms * NS_PER_MS;
        self.active.retain(|&(s, _)| t_ns < s + dur);
        self.active.iter().map(|&(s, peak)| peak * (1.0 - (t_ns - s) / dur)).sum()
    }
}

/// Stateful transmitter over one directed link.
#[derive(Debug, Clone)]
pub struct LinkState {
    model: LinkModel,
    loss_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    spikes: Option<Spikes>,
    last_delivery_ns: u64,
}

impl LinkState {
    pub fn new(model: LinkModel, seed: u64) -> Self {
        let s = model.seed.unwrap_or(seed);
        Self {
            model,
            loss_rng: substream(s, 0, 0, Purpose::Loss),
            jitter_rng: substream(s, 0, 0, Purpose::Jitter),
            spikes: model.spikes.map(|m| Spikes::new(m, substream(s, 0, 0, Purpose::Spikes))),
            last_delivery_ns: 0,
        }
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    /// Delivery time of a datagram sent at `sent_ns`, or `None` if dropped.
    /// Calls must come in non-decreasing `sent_ns` order.
    pub fn transmit(&mut self, sent_ns: u64) -> Option<u64> {
        let u: f64 = self.loss_rng.random();
        let jitter_ms = self.model.jitter.sample_ms(&mut self.jitter_rng);
        let spike_ms = self.spikes.as_mut().map_or(0.0, |s| s.extra_ms(sent_ns as f64));
        if u < self.model.loss_prob {
            return None;
        }
        let delay_ns = ((self.model.base_owd_ms + jitter_ms + spike_ms) * NS_PER_MS).round() as u64;
        let mut at = sent_ns + delay_ns;
        if !self.model.reorder {
            at = at.max(self.last_delivery_ns);
        }
        self.last_delivery_ns = self.last_delivery_ns.max(at);
        Some(at)
    }
}

/// Delivery schedule for sorted send times: `None` marks a drop.
pub fn deliveries(link: &LinkModel, sends: &[u64], seed: u64) -> Vec<Option<u64>> {
    let mut state = LinkState::new(*link, seed);
    sends.iter().map(|&t| state.transmit(t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sends(n: u64, period_ns: u64) -> Vec<u64> {
        (0..n).map(|k| k * period_ns).collect()
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let link = LinkModel { loss_prob: 1.0, ..LinkModel::constant(10.0) };
        assert!(deliveries(&link, &sends(1000, 1_000_000), 1).iter().all(Option::is_none));
    }

    #[test]
    fn constant_delay_keeps_spacing() {
        let s = sends(1000, 2_902_494);
        let d = deliveries(&LinkModel::constant(25.99), &s, 3);
        for (sent, got) in s.iter().zip(&d) {
            assert_eq!(got.unwrap(), sent + 25_990_000);
        }
    }

    #[test]
    fn same_seed_same_schedule() {
        let link = LinkModel {
            jitter: JitterModel::ShiftedExponential { min_ms: 0.1, mean_excess_ms: 2.0 },
            loss_prob: 0.05,
            reorder: true,
            spikes: Some(SpikeModel { rate_per_s: 5.0, mean_peak_ms: 10.0, duration_ms: 50.0 }),
            ..LinkModel::constant(5.0)
        };
        let s = sends(5000, 1_000_000);
        assert_eq!(deliveries(&link, &s, 9), deliveries(&link, &s, 9));
        assert_ne!(deliveries(&link, &s, 9), deliveries(&link, &s, 10));
    }

    #[test]
    fn loss_draws_do_not_move_jitter_draws() {
        let base = LinkModel {
            jitter: JitterModel::Uniform { a_ms: 0.0, b_ms: 10.0 },
            reorder: true,
            ..LinkModel::constant(1.0)
        };
        let lossy = LinkModel { loss_prob: 0.3, ..base };
        let s = sends(2000, 1_000_000);
        let a = deliveries(&base, &s, 4);
        let b = deliveries(&lossy, &s, 4);
        for (x, y) in a.iter().zip(&b) {
            if let Some(y) = y {
                assert_eq!(Some(*y), *x);
            }
        }
    }

    #[test]
    fn fifo_without_reorder() {
        let link = LinkModel { jitter: JitterModel::Uniform { a_ms: 0.0, b_ms: 30.0 }, ..LinkModel::constant(1.0) };
        let d: Vec<u64> = deliveries(&link, &sends(10_000, 1_000_000), 5).into_iter().flatten().collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        let r = LinkModel { reorder: true, ..link };
        let d: Vec<u64> = deliveries(&r, &sends(10_000, 1_000_000), 5).into_iter().flatten().collect();
        assert!(d.windows(2).any(|w| w[0] > w[1]));
    }

    #[test]
    fn causality() {
        let link = LinkModel {
            jitter: JitterModel::ShiftedExponential { min_ms: 0.0, mean_excess_ms: 3.0 },
            reorder: true,
            spikes: Some(SpikeModel { rate_per_s: 1.0, mean_peak_ms: 20.0, duration_ms: 100.0 }),
            ..LinkModel::constant(0.0)
        };
        let s = sends(10_000, 1_000_000);
        for (sent, got) in s.iter().zip(deliveries(&link, &s, 6)) {
            assert!(got.unwrap() >= *sent);
        }
    }

    /// Chi-square goodness of fit of uniform(0, 10) ms delays over 20 bins.
    #[test]
    fn uniform_jitter_fits() {
        let link = LinkModel { jitter: JitterModel::Uniform { a_ms: 0.0, b_ms: 10.0 }, reorder: true, ..LinkModel::constant(0.0) };
        let s = sends(100_000, 1_000_000);
        let mut bins = [0u64; 20];
        for (sent, got) in s.iter().zip(deliveries(&link, &s, 7)) {
            let ms = (got.unwrap() - sent) as f64 / 1e6;
            bins[((ms / 0.5) as usize).min(19)] += 1;
        }
        let expect = 100_000.0 / 20.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 19 degrees of freedom, 99.9% quantile
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    /// Binomial drop count against its 3-sigma band.
    #[test]
    fn loss_rate_within_binomial_band() {
        let p = 0.00177;
        let n = 1_000_000u64;
        let link = LinkModel { loss_prob: p, ..LinkModel::constant(1.0) };
        let dropped = deliveries(&link, &sends(n, 1_000), 8).iter().filter(|d| d.is_none()).count() as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((dropped - n as f64 * p).abs() < 3.0 * sigma, "{dropped}");
    }

    #[test]
    fn shifted_exponential_moments() {
        let m = JitterModel::ShiftedExponential { min_ms: 1.0, mean_excess_ms: 2.0 };
        let mut rng = substream(1, 2, 3, Purpose::Jitter);
        let draws: Vec<f64> = (0..200_000).map(|_| m.sample_ms(&mut rng)).collect();
        let min = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!(min >= 1.0);
        assert!((mean - 3.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn stall_draws_are_rare_and_bounded() {
        let m = JitterModel::Stall { prob: 0.1, max_ms: 20.0 };
        let mut rng = substream(4, 5, 6, Purpose::SendJitter);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| m.sample_ms(&mut rng)).collect();
        let stalls: Vec<f64> = draws.iter().copied().filter(|&d| d > 0.0).collect();
        let frac = stalls.len() as f64 / n as f64;
        // binomial sd is sqrt(0.1 * 0.9 / n) ~ 0.00067
        assert!((frac - 0.1).abs() < 0.003, "{frac}");
        assert!(stalls.iter().all(|&d| d <= 20.0));
        let mean = stalls.iter().sum::<f64>() / stalls.len() as f64;
        assert!((mean - 10.0).abs() < 0.15, "{mean}");
    }

    #[test]
    fn spikes_decay_to_zero() {
        let model = SpikeModel { rate_per_s: 0.0, mean_peak_ms: 10.0, duration_ms: 100.0 };
        let mut s = Spikes::new(model, substream(1, 0, 0, Purpose::Spikes));
        s.active.push((0.0, 10.0));
        assert_eq!(s.extra_ms(0.0), 10.0);
        assert!((s.extra_ms(50e6) - 5.0).abs() < 1e-9);
        assert_eq!(s.extra_ms(100e6), 0.0);
        assert!(s.active.is_empty());
    }

    #[test]
    fn invalid_models() {
        assert!(LinkModel { loss_prob: 1.5, ..LinkModel::constant(1.0) }.validate().is_err());
        assert!(LinkModel::constant(-1.0).validate().is_err());
        assert!(JitterModel::Uniform { a_ms: 2.0, b_ms: 1.0 }.validate().is_err());
        assert!(JitterModel::Stall { prob: 1.5, max_ms: 1.0 }.validate().is_err());
    }
}

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Alternating idle and busy periods on a sending host.
///
/// Send jitter only applies while the host is busy. Period lengths are
/// exponential; the host starts idle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostLoad {
    pub mean_idle_s: f64,
    pub mean_busy_s: f64,
}

impl HostLoad {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_idle_s > 0.0 && self.mean_busy_s > 0.0)
            || !(self.mean_idle_s + self.mean_busy_s).is_finite()
        {
            return Err(Error::config(format!("invalid host load {self:?}")));
        }
        Ok(())
    }

    /// Long-run fraction of time spent busy.
    pub fn busy_fraction(&self) -> f64 {
        self.mean_busy_s / (self.mean_idle_s + self.mean_busy_s)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LoadState {
    model: HostLoad,
    rng: ChaCha8Rng,
    busy: bool,
    until_ns: f64,
}

impl LoadState {
    pub(crate) fn new(model: HostLoad, mut rng: ChaCha8Rng) -> Self {
        let until_ns = Self::period(model.mean_idle_s, &mut rng);
        Self { model, rng, busy: false, until_ns }
    }

    fn period(mean_s: f64, rng: &mut impl Rng) -> f64 {
        let e: f64 = Exp1.sample(rng);
        e * mean_s * 1e9
    }

    /// Whether the host is busy at `t_ns`; calls must not go back in time.
    pub(crate) fn busy_at(&mut self, t_ns: u64) -> bool {
        while self.until_ns <= t_ns as f64 {
            self.busy = !self.busy;
            let mean = if self.busy { self.model.mean_busy_s } else { self.model.mean_idle_s };
            self.until_ns += Self::period(mean, &mut self.rng);
        }
        self.busy
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{substream, Purpose};

    #[test]
    fn busy_fraction_matches_means() {
        let model = HostLoad { mean_idle_s: 3.0, mean_busy_s: 1.0 };
        let mut s = LoadState::new(model, substream(7, 0, 0, Purpose::Load));
        let step = 10_000_000u64;
        let n = 2_000_000u64;
        let busy = (0..n).filter(|i| s.busy_at(i * step)).count() as f64 / n as f64;
        // about 5000 cycles, so the fraction is within a few percent
        assert!((busy - model.busy_fraction()).abs() < 0.02, "{busy}");
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(HostLoad { mean_idle_s: 0.0, mean_busy_s: 1.0 }.validate().is_err());
        assert!(HostLoad { mean_idle_s: 1.0, mean_busy_s: f64::NAN }.validate().is_err());
    }
}

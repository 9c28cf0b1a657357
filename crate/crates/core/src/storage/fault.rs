use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded Bernoulli fault source.
#[derive(Debug)]
pub struct FaultInjector {
    rate: f64,
    rng: ChaCha8Rng,
}

impl FaultInjector {
    pub fn new(rate: f64, seed: u64) -> Self {
        FaultInjector {
            rate: rate.clamp(0.0, 1.0),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn never() -> Self {
        FaultInjector::new(0.0, 0)
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn should_fail(&mut self) -> bool {
        if self.rate <= 0.0 {
            false
        } else if self.rate >= 1.0 {
            true
        } else {
            self.rng.random_bool(self.rate)
        }
    }
}

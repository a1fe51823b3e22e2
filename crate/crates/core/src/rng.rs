//! Seeded random streams.
//!
//! Every chain draws from ChaCha8, a counter-based generator. A run seed selects
//! the key and each consumer gets its own stream id, so minibatch indices and
//! Gaussian innovations never share state:
//!
//! | stream            | consumer                               |
//! |-------------------|----------------------------------------|
//! | `4r`              | minibatch indices of replicate `r`     |
//! | `4r + 1`          | Gaussian innovations of replicate `r`  |
//! | `4r + 2`          | initial state of replicate `r`         |
//! | `4r + 3`          | reserved                               |
//! | `u64::MAX`        | synthetic data generation              |
//!
//! Because the batch stream does not depend on whether innovations are drawn,
//! an SGD and an SGLD run with the same seed see identical batch sequences.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Batch = 0,
    Innovation = 1,
    Init = 2,
}

pub fn stream(seed: u64, replicate: u64, kind: StreamKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate.wrapping_mul(4).wrapping_add(kind as u64));
    rng
}

pub fn data_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Standard normal draws by the Box–Muller transform; the second variate of each pair is cached.
#[derive(Debug, Clone)]
pub struct Gaussian<R> {
    rng: R,
    spare: Option<f64>,
}

impl<R: RngCore> Gaussian<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, spare: None }
    }

    pub fn sample(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.sample();
        }
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

//! Seeded random streams.
//!
//! Every stream is ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)` and switched to a fixed stream id, so a port only
//! needs ChaCha20 and the two transforms below:
//!
//! * uniform: the next `u64` shifted right by 11, times 2⁻⁵³, in [0, 1);
//! * normal: Box–Muller on two uniforms, `r = sqrt(-2 ln(1 - u1))`, yielding
//!   `r cos(2π u2)` and then `r sin(2π u2)` before drawing again.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const SCENE_STREAM: u64 = 0;
pub const CORRUPTION_STREAM: u64 = 1;
pub const UPGRADE_STREAM: u64 = 2;
pub const FACTOR_STREAM: u64 = 3;

pub fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
pub fn uniform(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draws by the Box–Muller transform.
#[derive(Debug, Default)]
pub struct Normal {
    spare: Option<f64>,
}

impl Normal {
    pub fn new() -> Self {
        Normal { spare: None }
    }

    pub fn sample(&mut self, rng: &mut ChaCha20Rng) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = uniform(rng);
        let u2 = uniform(rng);
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Uniform index in 0..n by rejection, free of modulo bias.
pub fn below(rng: &mut ChaCha20Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return v % n;
        }
    }
}

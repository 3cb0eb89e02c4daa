//! Seedable random streams.
//!
//! Every stochastic quantity in the crate is drawn from [`SaRng`], a thin
//! wrapper around PCG-XSL-RR 128/64 (`rand_pcg::Pcg64`). Uniforms use the top
//! 53 bits of each 64-bit output, normals use the Box–Muller transform and
//! indices use Lemire's multiply-shift with rejection. None of these depend
//! on platform word size, so streams are bitwise reproducible everywhere.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

/// Identifier written into output metadata.
pub const RNG_ID: &str = "pcg64-xsl-rr-128/64;uniform=53bit;normal=box-muller;index=lemire";

#[derive(Clone, Debug)]
pub struct SaRng {
    inner: Pcg64,
    spare_normal: Option<f64>,
}

impl SaRng {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    /// Independent stream for `(seed, index)`, e.g. one per ensemble path.
    pub fn derived(seed: u64, index: u64) -> Self {
        Self::seed_from_u64(splitmix64(seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - U lies in (0, 1], keeping ln finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    /// Uniform draw from `{0, .., bound - 1}`. `bound` must be nonzero.
    pub fn index(&mut self, bound: usize) -> usize {
        assert!(bound > 0, "index bound must be positive");
        let range = bound as u64;
        let threshold = range.wrapping_neg() % range;
        loop {
            let product = (self.next_u64() as u128) * (range as u128);
            if (product as u64) >= threshold {
                return (product >> 64) as usize;
            }
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

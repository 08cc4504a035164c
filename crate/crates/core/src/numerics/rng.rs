//! Seeded, platform-independent random number generation.
//!
//! The generator is a counter-based 64-bit mixer (SplitMix64): the state is a
//! Weyl sequence and each output is a hash of the state. Equal seeds produce
//! bitwise-equal draw sequences on every platform, which the whole pipeline
//! relies on for reproducibility.

use super::Matrix;

const WEYL_INCREMENT: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream of pseudo-random draws.
///
/// Single-owner by design: streams are passed by value or `&mut`, never
/// shared, so a draw sequence is always well defined.
#[derive(Debug, Clone)]
pub struct RngStream {
    state: u64,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            state: seed,
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(WEYL_INCREMENT);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`; safe to pass through `ln`.
    #[inline]
    fn next_f64_pos(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the Box–Muller transform. Draws come in
    /// pairs; the second value is cached so every call consumes it in order.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64_pos();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        assert!(std >= 0.0, "normal requires std >= 0, got {std}");
        mean + std * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform index in `0..n` (Lemire reduction; bias is < 2⁻⁶⁴·n).
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index requires n > 0");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Mixes a base seed with a sequence of tags into a new seed.
///
/// Used to hand each pipeline stage (data, init, shuffling, ICA) and each
/// sweep cell its own stream, so adding grid points never perturbs the draws
/// of existing ones.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut h = mix(base ^ WEYL_INCREMENT);
    for &t in tags {
        h = mix(h.wrapping_add(WEYL_INCREMENT) ^ mix(t.wrapping_add(WEYL_INCREMENT)));
    }
    h
}

/// Fills a `rows × cols` matrix with i.i.d. Gaussian entries, row-major draw
/// order. `std = 0` yields a matrix of `mean`s.
pub fn rng_normal(rng: &mut RngStream, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
    assert!(std >= 0.0, "rng_normal requires std >= 0, got {std}");
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(mean + std * rng.standard_normal());
    }
    Matrix::new_unchecked(rows, cols, data)
}

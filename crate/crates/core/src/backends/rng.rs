//! SplitMix64 and the handful of variates the synthetic detector draws.
//!
//! Every variate is defined in terms of raw `next_u64` outputs so another
//! implementation can reproduce the stream bit for bit:
//!
//! * `uniform()`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`; one output.
//! * `gaussian()`: Box-Muller cosine branch from two `uniform()` draws
//!   `u1, u2`: `sqrt(-2 ln(1 - u1)) * cos(2π u2)`; two outputs.
//! * `poisson(λ)`: Knuth's product method; `k + 1` outputs for result `k`.
//! * `below(n)`: `floor(uniform() * n)` clamped to `n - 1`; one output.

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Stream for one frame: `seed ^ (frame_index * GOLDEN_GAMMA)`.
    pub fn for_frame(seed: u64, frame_index: u64) -> Self {
        Self::new(seed ^ frame_index.wrapping_mul(GOLDEN_GAMMA))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform() * (hi - lo)
    }

    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn poisson(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut product = self.uniform();
        while product > limit {
            k += 1;
            product *= self.uniform();
        }
        k
    }

    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.uniform() * n as f64) as u64).min(n - 1)
    }
}

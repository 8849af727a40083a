//! Deterministic seeded random number generator.
//!
//! SplitMix64: the 64-bit state advances by the golden-ratio increment and
//! each output is a finalizer hash of the advanced state. Every derived draw
//! uses only IEEE-exact arithmetic (no libm), so the sequence for a given
//! seed is bit-identical across runs and platforms, which is what makes
//! checkpoints and splits reproducible.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Independent stream derived from `(seed, stream)`; used so that e.g.
    /// per-epoch shuffles and weight init never share a sequence.
    pub fn for_stream(seed: u64, stream: u64) -> Self {
        let mut r = Rng::new(seed ^ stream.wrapping_mul(GOLDEN).rotate_left(17));
        r.next_u64();
        r
    }

    /// Raw state, snapshotted into checkpoints.
    pub fn state(&self) -> u64 {
        self.state
    }

    pub fn from_state(state: u64) -> Self {
        Rng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        (lo as f64 + (hi as f64 - lo as f64) * self.next_f64()) as f32
    }

    /// Approximate normal draw: sum of twelve uniforms minus six (unit
    /// variance by construction, tails truncated at ±6). Chosen over
    /// Box-Muller because it avoids libm and therefore stays bit-identical
    /// across platforms. Consumes exactly twelve raw outputs.
    pub fn normal(&mut self, mean: f32, std: f32) -> f32 {
        let mut acc = 0.0f64;
        for _ in 0..12 {
            acc += self.next_f64();
        }
        (mean as f64 + std as f64 * (acc - 6.0)) as f32
    }

    /// Uniform integer in [0, n). n must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

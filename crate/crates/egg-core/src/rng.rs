//! Small deterministic PRNG (splitmix64).
//!
//! Every seeded choice in this crate — corpus sampling, mock completions,
//! weight initialization, epoch shuffles, the bundled toy task — goes through
//! this generator, so runs are reproducible bit-for-bit across platforms and
//! independent of any external RNG crate's internals. The algorithm is the
//! standard splitmix64 finalizer; outputs can be recomputed by hand or by a
//! few-line transcription in a test oracle.

/// splitmix64 generator.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Seed a named sub-stream so different uses of the same run seed do not
    /// share a sequence.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self::new(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Next value in `[0, bound)` by modulo reduction. The modulo bias is
    /// below 2^-40 for every bound used in this crate.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "next_below bound must be positive");
        self.next_u64() % bound
    }

    /// Uniform float in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Sample `count` distinct indices from `0..len`, in selection order.
    ///
    /// Positions are drawn one at a time from the remaining candidates with
    /// `Vec::remove`, which keeps the candidate list ordered between draws.
    pub fn sample_indices(&mut self, len: usize, count: usize) -> Vec<usize> {
        assert!(count <= len, "cannot sample {count} from {len}");
        let mut remaining: Vec<usize> = (0..len).collect();
        let mut picked = Vec::with_capacity(count);
        for _ in 0..count {
            let at = self.next_below(remaining.len() as u64) as usize;
            picked.push(remaining.remove(at));
        }
        picked
    }
}

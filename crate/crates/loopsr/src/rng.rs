//! Deterministic pseudo-random number generation.
//!
//! Every stochastic component in this crate (weight init, domain
//! randomization, observation noise, action sampling) draws from [`Rng`],
//! a small xoshiro256++ generator seeded through splitmix64. Keeping the
//! generator in-crate pins the byte-exact reproducibility contract: the
//! same seed produces the same stream on every platform and build.

/// splitmix64 step, also used as a stateless hash for terrain fields.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a (seed, index) pair to a value in [-1, 1].
///
/// Used by the rough-terrain field: the same (seed, cell) always maps to
/// the same height-noise sample.
pub fn hash_unit(seed: u64, k: i64) -> f64 {
    let h = splitmix64(seed ^ splitmix64(k as u64));
    // 53 high bits -> [0,1) -> [-1,1]
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * u - 1.0
}

/// xoshiro256++ generator.
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        let mut state = seed;
        let mut s = [0u64; 4];
        for slot in s.iter_mut() {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            *slot = splitmix64(state);
        }
        Rng { s }
    }

    /// Derive an independent child stream, e.g. one per parallel env.
    pub fn derive(&self, stream: u64) -> Self {
        Rng::seed_from(splitmix64(self.s[0] ^ splitmix64(stream.wrapping_add(0x51ed_2701))))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = (self.s[0].wrapping_add(self.s[3]))
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via Box-Muller (always consumes two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = (self.uniform()).max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Index sampled from a probability vector (entries >= 0, sum ~ 1).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let draw = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if draw < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle of indices 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            idx.swap(i, j);
        }
        idx
    }
}

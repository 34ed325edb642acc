//! Reproducible scenario sampling.
//!
//! Each draw is keyed by `(seed, iteration, stage)`: the generator for
//! iteration `k` is the ChaCha stream `k` of the seed, positioned at a block
//! reserved for stage `t`. Draws are therefore independent across stages and
//! iterations and do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{NodeKey, Topology};

/// 32-bit words reserved per stage.
const WORDS_PER_STAGE: u128 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathSampler {
    seed: u64,
}

impl PathSampler {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    /// Uniform draw in `[0, 1)` for stage `t` of iteration `k`.
    pub fn uniform(&self, k: usize, t: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        rng.set_word_pos(WORDS_PER_STAGE * t as u128);
        rng.gen::<f64>()
    }

    /// Path `n_1, ..., n_T` of iteration `k`.
    pub fn sample_path(&self, topo: &Topology<'_>, k: usize) -> Vec<NodeKey> {
        let mut path = vec![topo.first_stage()];
        for t in 2..=topo.horizon() {
            let children = topo.children(*path.last().unwrap());
            let probs: Vec<f64> = children.iter().map(|&c| topo.prob(c)).collect();
            path.push(children[pick(&probs, self.uniform(k, t))]);
        }
        path
    }
}

/// Index `j` with `sum_{i<j} p_i <= u < sum_{i<=j} p_i`.
pub fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.len() - 1
}

//! GHOST-based fork-choice study: a round-driven simulator of the balance
//! attack that keeps two forks alive by topping up whichever side's
//! partition is about to fall behind. Measures the fork length an
//! adversary of power `f` can sustain at a given block rate, which is the
//! confirmation depth an honest client would need to outlast.

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash_oracle::derive_rng;

/// Block tree with incrementally maintained subtree weights (block
/// counts). Ids are assigned in insertion order; 0 is genesis.
#[derive(Clone, Debug, Default)]
pub struct GhostTree {
    parent: Vec<u32>,
    children: Vec<Vec<u32>>,
    weight: Vec<u64>,
}

impl GhostTree {
    pub fn new() -> Self {
        GhostTree {
            parent: vec![0],
            children: vec![Vec::new()],
            weight: vec![1],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        false // genesis is always present
    }

    pub fn insert(&mut self, parent: u32) -> u32 {
        assert!((parent as usize) < self.parent.len(), "unknown parent");
        let id = self.parent.len() as u32;
        self.parent.push(parent);
        self.children.push(Vec::new());
        self.weight.push(1);
        self.children[parent as usize].push(id);
        let mut cur = parent;
        loop {
            self.weight[cur as usize] += 1;
            if cur == 0 {
                break;
            }
            cur = self.parent[cur as usize];
        }
        id
    }

    pub fn weight(&self, id: u32) -> u64 {
        self.weight[id as usize]
    }

    /// Heaviest-subtree descent from the root; ties go to the smallest
    /// block id (the deterministic rule honest nodes share).
    pub fn ghost_path(&self) -> Vec<u32> {
        let mut path = vec![0u32];
        let mut cur = 0usize;
        while !self.children[cur].is_empty() {
            // children are in id order, so max_by_key keeps the first
            // (smallest id) among equal weights only with a strict compare
            let mut best = self.children[cur][0];
            for &c in &self.children[cur][1..] {
                if self.weight[c as usize] > self.weight[best as usize] {
                    best = c;
                }
            }
            path.push(best);
            cur = best as usize;
        }
        path
    }

    /// O(n^2) weight recomputation, for cross-checking the incremental
    /// bookkeeping.
    pub fn recompute_weights(&self) -> Vec<u64> {
        let n = self.parent.len();
        let mut w = vec![1u64; n];
        // ids only point backwards, so a reverse sweep settles children first
        for id in (1..n).rev() {
            w[self.parent[id] as usize] += w[id];
        }
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Expected blocks (honest + adversarial) generated per round.
    pub blocks_per_round: f64,
    /// Adversary's expected share of those blocks.
    pub f: f64,
    /// Round cap per trial; surviving attacks are censored here.
    pub max_rounds: u32,
    pub trials: u32,
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("f = {0} must lie in [0, 1/2)")]
    BadFraction(f64),
    #[error("blocks_per_round must be positive")]
    BadRate,
    #[error("need at least one trial and one round")]
    Empty,
}

/// One trial: rounds of Poisson honest mining per partition and Poisson
/// adversarial mining split odd/even across the two branch banks; each
/// round the adversary releases just enough saved blocks to keep both
/// partitions convinced their own branch is heavier, and the attack dies
/// the moment a bank cannot cover the requirement. Returns the fork
/// length: the depth of the shorter branch when the attack dies.
fn run_trial(cfg: &AttackConfig, trial: u64) -> u32 {
    let mut rng = derive_rng(cfg.seed, "conflux", trial);
    let honest_mean = cfg.blocks_per_round * (1.0 - cfg.f) / 2.0;
    let adv_mean = cfg.blocks_per_round * cfg.f;
    let honest = Poisson::new(honest_mean.max(f64::MIN_POSITIVE)).unwrap();
    let draw_adv = |rng: &mut rand_chacha::ChaCha12Rng| -> u64 {
        if adv_mean <= 0.0 {
            0
        } else {
            Poisson::new(adv_mean).unwrap().sample(rng) as u64
        }
    };

    // the seed fork: A1,A2 to one partition, B1,B2 to the other
    let (mut a_honest, mut b_honest) = (0u64, 0u64);
    let (mut a_adv, mut b_adv) = (2u64, 2u64);
    let (mut bank_a, mut bank_b) = (0u64, 0u64);
    let (mut depth_a, mut depth_b) = (2u32, 2u32);
    let mut parity = false; // alternates adversary blocks between banks

    for _ in 0..cfg.max_rounds {
        let x_a = honest.sample(&mut rng) as u64;
        let x_b = honest.sample(&mut rng) as u64;
        let mined = draw_adv(&mut rng);
        for _ in 0..mined {
            if parity {
                bank_b += 1;
            } else {
                bank_a += 1;
            }
            parity = !parity;
        }
        a_honest += x_a;
        b_honest += x_b;
        // keep each partition's own branch strictly heavier in its view;
        // each side sees the opponent's newest top-up a round late, so the
        // requirement is measured against pre-release opponent weight
        let (a_pre, b_pre) = (a_honest + a_adv, b_honest + b_adv);
        let need_a = (b_pre + 1).saturating_sub(a_pre);
        let need_b = (a_pre + 1).saturating_sub(b_pre);
        if need_a > bank_a || need_b > bank_b {
            break;
        }
        bank_a -= need_a;
        bank_b -= need_b;
        a_adv += need_a;
        b_adv += need_b;
        debug_assert!(a_honest + a_adv > b_pre);
        debug_assert!(b_honest + b_adv > a_pre);
        // honest mining extends each branch's tip by one level per round
        if x_a > 0 {
            depth_a += 1;
        }
        if x_b > 0 {
            depth_b += 1;
        }
    }
    depth_a.min(depth_b)
}

/// Fork-length samples over independent trials (parallel, deterministic:
/// each trial derives its own RNG stream from the trial index).
pub fn run_attack(cfg: &AttackConfig) -> Result<Vec<u32>, AttackError> {
    if !(0.0..0.5).contains(&cfg.f) {
        return Err(AttackError::BadFraction(cfg.f));
    }
    if cfg.blocks_per_round <= 0.0 {
        return Err(AttackError::BadRate);
    }
    if cfg.trials == 0 || cfg.max_rounds == 0 {
        return Err(AttackError::Empty);
    }
    Ok((0..cfg.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(cfg, trial))
        .collect())
}

/// Empirical upper quantile: smallest value v with at least a `q` fraction
/// of samples <= v.
pub fn quantile(samples: &[u32], q: f64) -> u32 {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Smallest f on `grid` whose `q`-quantile fork length reaches `target`,
/// if any.
pub fn minimal_f_sustaining(
    blocks_per_round: f64,
    grid: &[f64],
    target: u32,
    q: f64,
    trials: u32,
    max_rounds: u32,
    seed: u64,
) -> Option<f64> {
    for &f in grid {
        let cfg = AttackConfig {
            blocks_per_round,
            f,
            max_rounds,
            trials,
            seed,
        };
        let samples = run_attack(&cfg).expect("valid sweep point");
        if quantile(&samples, q) >= target {
            return Some(f);
        }
    }
    None
}

//! Reference single-chain Nakamoto simulator, used as the k = 1 oracle:
//! run on the same seed and network parameters, its per-node chains (minus
//! the last T blocks) must match the parallel-chain protocol's confirmed
//! sequences snapshot for snapshot. It deliberately shares only the oracle
//! query, RNG derivation, genesis hash, and snapshot digest with the main
//! engine, so agreement between the two is evidence, not tautology.

use std::collections::HashMap;

use rand_chacha::ChaCha12Rng;

use crate::chainstore::genesis_hash;
use crate::consensus::ScbEntry;
use crate::hash_oracle::{derive_rng, HashOracle, HashValue};
use crate::simnet::config::{AdversaryKind, ConfigError, SimConfig};
use crate::simnet::report::{scb_digest, ScbSnapshot};

#[derive(Clone, Copy, Debug)]
struct NakBlock {
    prev: HashValue,
    height: u64,
}

#[derive(Clone)]
struct Tree {
    blocks: HashMap<HashValue, NakBlock>,
    /// hashes of the longest path, genesis first
    path: Vec<HashValue>,
    tip: HashValue,
    tip_height: u64,
    /// blocks waiting for their parent, keyed by the missing parent
    pending: HashMap<HashValue, Vec<(HashValue, HashValue)>>,
}

impl Tree {
    fn new() -> Self {
        let g = genesis_hash(0);
        let mut blocks = HashMap::new();
        blocks.insert(g, NakBlock { prev: g, height: 0 });
        Tree {
            blocks,
            path: vec![g],
            tip: g,
            tip_height: 0,
            pending: HashMap::new(),
        }
    }

    fn insert(&mut self, hash: HashValue, prev: HashValue) {
        if self.blocks.contains_key(&hash) {
            return;
        }
        let Some(parent) = self.blocks.get(&prev) else {
            self.pending.entry(prev).or_default().push((hash, prev));
            return;
        };
        let height = parent.height + 1;
        self.blocks.insert(hash, NakBlock { prev, height });
        // longest path wins; equal heights break toward the smaller hash
        if height > self.tip_height || (height == self.tip_height && hash < self.tip) {
            if self.path.last() == Some(&prev) {
                self.path.push(hash);
            } else {
                let mut rebuilt = Vec::with_capacity(height as usize + 1);
                let mut cur = hash;
                loop {
                    rebuilt.push(cur);
                    let b = self.blocks[&cur];
                    if b.height == 0 {
                        break;
                    }
                    cur = b.prev;
                }
                rebuilt.reverse();
                self.path = rebuilt;
            }
            self.tip = hash;
            self.tip_height = height;
        }
        if let Some(children) = self.pending.remove(&hash) {
            for (h, p) in children {
                self.insert(h, p);
            }
        }
    }
}

struct Withheld {
    bank: Vec<(HashValue, HashValue)>,
}

/// Per-checkpoint fingerprints of every node's chain minus the last T
/// blocks, encoded exactly like the main engine's confirmed-sequence
/// snapshots (rank = height, chain id 0).
pub struct NakReport {
    pub snapshots: Vec<ScbSnapshot>,
    pub honest_mined: u64,
    pub adversary_mined: u64,
}

fn snapshot_of(tree: &Tree, node: u32, tick: u64, t_depth: u64) -> ScbSnapshot {
    let cut = tree.path.len().saturating_sub(t_depth as usize).max(1);
    let entries: Vec<ScbEntry> = tree.path[..cut]
        .iter()
        .enumerate()
        .map(|(i, h)| ScbEntry {
            block_hash: *h,
            rank: i as u64,
            chain_id: 0,
        })
        .collect();
    ScbSnapshot {
        node,
        tick,
        len: entries.len() as u64,
        digest: scb_digest(&entries),
        confirm_bar: entries.len() as u64,
        honest_len: entries.len() as u64,
    }
}

/// Run the reference protocol under the same tick/delivery/adversary model
/// as the main engine. Only `None`, `HonestShadow`, and `Withholder`
/// adversaries translate to a single chain.
pub fn run_reference(config: &SimConfig) -> Result<NakReport, ConfigError> {
    config.validate()?;
    assert_eq!(config.params.k, 1, "reference protocol is single-chain");
    let params = config.params;
    let t_depth = params.t;
    let n_honest = config.n_honest();
    let budget = config.adversary_budget();
    let ce = config.checkpoint_interval();

    let mut trees: Vec<Tree> = (0..n_honest).map(|_| Tree::new()).collect();
    let mut rngs: Vec<ChaCha12Rng> = (0..n_honest)
        .map(|i| derive_rng(config.seed, "node", i as u64))
        .collect();
    let mut adv_tree = Tree::new();
    let mut adv_rng = derive_rng(config.seed, "adversary", 0);
    let mut withheld = Withheld { bank: Vec::new() };

    // (deliver_tick -> [(to, hash, prev)])
    let mut events: HashMap<u64, Vec<(u32, HashValue, HashValue)>> = HashMap::new();
    let mut snapshots = Vec::new();
    let mut honest_mined = 0u64;
    let mut adversary_mined = 0u64;

    for t in 1..=config.ticks {
        let mut releases: Vec<(HashValue, HashValue)> = Vec::new();

        // ReceiveState
        if let Some(due) = events.remove(&t) {
            for (to, hash, prev) in due {
                trees[to as usize].insert(hash, prev);
            }
        }

        // Mining, one query per honest node in id order
        for id in 0..n_honest {
            if let Some(h) = HashOracle::attempt_oracle(&mut rngs[id as usize], &params) {
                let prev = trees[id as usize].tip;
                trees[id as usize].insert(h, prev);
                honest_mined += 1;
                // broadcast at the delivery bound; adversary sees it now
                let due = events.entry(t + config.delta).or_default();
                for to in 0..n_honest {
                    if to != id {
                        due.push((to, h, prev));
                    }
                }
                adv_tree.insert(h, prev);
                if matches!(config.adversary, AdversaryKind::Withholder) {
                    releases.append(&mut withheld.bank);
                }
            }
        }

        // Adversary queries
        for _ in 0..budget {
            if let Some(h) = HashOracle::attempt_oracle(&mut adv_rng, &params) {
                let prev = adv_tree.tip;
                adv_tree.insert(h, prev);
                adversary_mined += 1;
                match config.adversary {
                    AdversaryKind::Withholder => withheld.bank.push((h, prev)),
                    _ => releases.push((h, prev)),
                }
            }
        }
        let due = events.entry(t + 1).or_default();
        for (h, prev) in releases {
            for to in 0..n_honest {
                due.push((to, h, prev));
            }
        }

        if t % ce == 0 || t == config.ticks {
            for (id, tree) in trees.iter().enumerate() {
                snapshots.push(snapshot_of(tree, id as u32, t, t_depth));
            }
        }
    }

    Ok(NakReport {
        snapshots,
        honest_mined,
        adversary_mined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash_oracle::{MiningMode, ProtocolParams};

    fn cfg(f: f64, adversary: AdversaryKind, ticks: u64, seed: u64) -> SimConfig {
        SimConfig {
            params: ProtocolParams::new(1, 1.0 / 100.0, 6),
            mode: MiningMode::Oracle,
            n: 10,
            f,
            delta: 2,
            ticks,
            seed,
            checkpoint_every: 0,
            adversary,
            payload_bytes: 32,
        }
    }

    #[test]
    fn reference_is_deterministic() {
        let c = cfg(0.3, AdversaryKind::Withholder, 5000, 11);
        let a = run_reference(&c).unwrap();
        let b = run_reference(&c).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert!(a.honest_mined > 0);
    }

    #[test]
    fn buffered_children_attach_on_parent_arrival() {
        let mut tree = Tree::new();
        let g = genesis_hash(0);
        let a = HashValue([1; 32]);
        let b = HashValue([2; 32]);
        tree.insert(b, a); // child first: parked
        assert_eq!(tree.tip_height, 0);
        tree.insert(a, g);
        assert_eq!(tree.tip_height, 2);
        assert_eq!(tree.path, vec![g, a, b]);
    }

    #[test]
    fn equal_height_fork_prefers_smaller_hash() {
        let mut tree = Tree::new();
        let g = genesis_hash(0);
        let big = HashValue([9; 32]);
        let small = HashValue([3; 32]);
        tree.insert(big, g);
        assert_eq!(tree.tip, big);
        tree.insert(small, g);
        assert_eq!(tree.tip, small);
        assert_eq!(tree.path, vec![g, small]);
    }

    /// The whole point of this module: same seed, same adversary, k = 1 —
    /// the main engine's confirmed sequences must match the reference
    /// chain minus its last T blocks at every (node, tick) snapshot.
    #[test]
    fn matches_parallel_engine_at_k1() {
        for (f, adversary) in [
            (0.0, AdversaryKind::None),
            (0.3, AdversaryKind::Withholder),
        ] {
            let c = cfg(f, adversary, 8000, 23);
            let nak = run_reference(&c).unwrap();
            let ohie = crate::simnet::run(&c).unwrap();
            let mut ohie_snaps: Vec<_> = ohie
                .snapshots
                .iter()
                .map(|s| (s.node, s.tick, s.len, s.digest))
                .collect();
            let mut nak_snaps: Vec<_> = nak
                .snapshots
                .iter()
                .map(|s| (s.node, s.tick, s.len, s.digest))
                .collect();
            ohie_snaps.sort();
            nak_snaps.sort();
            assert_eq!(ohie_snaps, nak_snaps, "diverged at f = {f}");
        }
    }
}

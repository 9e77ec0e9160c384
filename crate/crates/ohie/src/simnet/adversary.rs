//! Byzantine strategies. The adversary keeps its own full `NodeState`
//! view (it sees every message the moment it is sent), mines through the
//! shared oracle under its per-tick query budget, and decides when its
//! blocks reach the honest nodes.

use std::sync::Arc;

use rand_chacha::ChaCha12Rng;

use crate::chainstore::{Attachment, Block, NodeState};
use crate::consensus::{self, ProcessOutcome};
use crate::hash_oracle::{chain_index, derive_rng, HashOracle, HashValue, ProtocolParams};

use super::config::{AdversaryKind, SimConfig};

/// Engine-side services the strategy may use during its turn. Injected
/// blocks are queued for delivery at `tick + 1` (within the delta bound).
pub struct AdvCtx<'a> {
    pub oracle: &'a mut HashOracle,
    pub params: &'a ProtocolParams,
    pub tick: u64,
    /// trailing pointer of honest node 0's public view; forging candidates
    /// against it keeps them acceptable everywhere.
    pub public_trailing: HashValue,
    /// (block, attachment) pairs to deliver to every honest node next tick.
    pub released: Vec<(Arc<Block>, Attachment)>,
}

pub struct Adversary {
    kind: AdversaryKind,
    rng: ChaCha12Rng,
    pub view: NodeState,
    /// Withheld (block, attachment) pairs per chain, oldest first.
    banks: Vec<Vec<(Arc<Block>, Attachment)>>,
    nonce: u64,
    payload: Vec<u8>,
    burst_cycle: u64,
    pub mined: u64,
    pub released_count: u64,
    /// Ticks at which a trailing_liar burst ended.
    pub burst_ends: Vec<u64>,
}

impl Adversary {
    pub fn new(config: &SimConfig) -> Self {
        let k = config.params.k;
        let burst_cycle = match config.adversary {
            AdversaryKind::TrailingLiar { burst_ticks, pause_ticks } => burst_ticks + pause_ticks,
            _ => 0,
        };
        Adversary {
            kind: config.adversary.clone(),
            rng: derive_rng(config.seed, "adversary", 0),
            view: NodeState::new(k),
            banks: vec![Vec::new(); k as usize],
            nonce: 0,
            payload: vec![0xAD; config.payload_bytes],
            burst_cycle,
            mined: 0,
            released_count: 0,
            burst_ends: Vec::new(),
        }
    }

    /// Called for every block the honest network sends; the adversary's
    /// view absorbs it immediately. Honest blocks may trigger releases.
    pub fn observe(
        &mut self,
        oracle: &HashOracle,
        params: &ProtocolParams,
        block: Arc<Block>,
        att: Attachment,
        honest: bool,
        released: &mut Vec<(Arc<Block>, Attachment)>,
    ) {
        let chain = chain_index(&att.hash, params.k);
        let outcome = consensus::process_block(&mut self.view, oracle, params, block, att);
        if !honest || !matches!(self.kind, AdversaryKind::Withholder) {
            return;
        }
        if matches!(outcome, ProcessOutcome::Accepted { .. } | ProcessOutcome::Buffered(_)) {
            // an honest block for this chain is out: dump the stash
            for (b, a) in self.banks[chain as usize].drain(..) {
                self.released_count += 1;
                released.push((b, a));
            }
        }
    }

    fn liar_active(&self, tick: u64, burst_ticks: u64) -> bool {
        (tick - 1) % self.burst_cycle < burst_ticks
    }

    /// Spend the per-tick query budget and decide what to publish.
    pub fn on_tick(&mut self, budget: u32, ctx: &mut AdvCtx<'_>) {
        match self.kind.clone() {
            AdversaryKind::None => {}
            AdversaryKind::HonestShadow => {
                for _ in 0..budget {
                    if let Some((b, a)) = self.try_mine(ctx, None) {
                        ctx.released.push((b, a));
                        self.released_count += 1;
                    }
                }
            }
            AdversaryKind::Withholder => {
                let public = ctx.public_trailing;
                for _ in 0..budget {
                    if let Some((b, a)) = self.try_mine(ctx, Some(public)) {
                        let chain = chain_index(&a.hash, ctx.params.k) as usize;
                        self.banks[chain].push((b, a));
                    }
                }
            }
            AdversaryKind::TrailingLiar { burst_ticks, .. } => {
                if self.liar_active(ctx.tick, burst_ticks) {
                    for _ in 0..budget {
                        let forged = crate::chainstore::genesis_hash(0);
                        if let Some((b, a)) = self.try_mine(ctx, Some(forged)) {
                            ctx.released.push((b, a));
                            self.released_count += 1;
                        }
                    }
                    if (ctx.tick - 1) % self.burst_cycle == burst_ticks - 1 {
                        self.burst_ends.push(ctx.tick);
                    }
                }
            }
            AdversaryKind::ChainFocus { target } => {
                let public = ctx.public_trailing;
                for _ in 0..budget {
                    if let Some((b, a)) = self.try_mine(ctx, Some(public)) {
                        if chain_index(&a.hash, ctx.params.k) == target {
                            ctx.released.push((b, a));
                            self.released_count += 1;
                        }
                        // off-target successes are thrown away
                    }
                }
            }
        }
    }

    /// One oracle query for a candidate assembled from the adversary's own
    /// view; successes are self-processed so later queries build on them.
    fn try_mine(
        &mut self,
        ctx: &mut AdvCtx<'_>,
        trailing_override: Option<HashValue>,
    ) -> Option<(Arc<Block>, Attachment)> {
        self.nonce += 1;
        let nonce = (1u64 << 63 | self.nonce).to_le_bytes();
        let mut candidate =
            consensus::assemble_candidate(&self.view, self.payload.clone(), nonce).ok()?;
        if let Some(tr) = trailing_override {
            candidate.trailing = tr;
        }
        let h = ctx
            .oracle
            .mining_attempt(&mut self.rng, ctx.params, &candidate)
            .expect("validated params")?;
        self.mined += 1;
        let (block, att) =
            consensus::on_mining_success(&mut self.view, ctx.oracle, ctx.params, candidate, h)
                .expect("self-mined block must be acceptable");
        Some((block, att))
    }
}

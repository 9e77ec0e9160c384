//! The tick loop. Each tick: deliver due messages, give every honest node
//! one oracle query, broadcast successes through the adversary-mediated
//! queue (worst-case delivery at exactly tick + delta), then let the
//! adversary spend its budget and publish whatever it chooses (delivered
//! next tick). Node 0 doubles as the metrics observer.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rand_chacha::ChaCha12Rng;

use crate::chainstore::{genesis_hash, Attachment, Block, NodeState};
use crate::consensus::{self, confirm_view, output_scb, ProcessOutcome};
use crate::hash_oracle::{chain_index, derive_rng, HashOracle, HashValue, ProtocolParams};

use super::adversary::{AdvCtx, Adversary};
use super::config::{ConfigError, SimConfig};
use super::report::{
    scb_digest, ConfirmedBlock, MineEvent, RefEntry, RunReport, ScbSnapshot, TraceRow,
};

struct Delivery {
    to: u32,
    block: Arc<Block>,
    att: Attachment,
}

struct HonestNode {
    state: NodeState,
    rng: ChaCha12Rng,
}

/// Queue `(block, att)` for every honest node except `from` at
/// `tick + delta`, and show it to the adversary immediately (it sees every
/// message as it is sent). Withholder releases triggered by the sighting
/// land in `adv_released`.
#[allow(clippy::too_many_arguments)]
fn broadcast(
    events: &mut BTreeMap<u64, Vec<Delivery>>,
    adversary: &mut Adversary,
    adv_released: &mut Vec<(Arc<Block>, Attachment)>,
    oracle: &HashOracle,
    params: &ProtocolParams,
    n_honest: u32,
    from: u32,
    tick: u64,
    delta: u64,
    block: Arc<Block>,
    att: Attachment,
    honest: bool,
) {
    let due = events.entry(tick + delta).or_default();
    for to in 0..n_honest {
        if to != from {
            due.push(Delivery {
                to,
                block: Arc::clone(&block),
                att: att.clone(),
            });
        }
    }
    adversary.observe(oracle, params, block, att, honest, adv_released);
}

pub fn run(config: &SimConfig) -> Result<RunReport, ConfigError> {
    config.validate()?;
    let params = config.params;
    let k = params.k;
    let t_depth = params.t;
    let n_honest = config.n_honest();
    let budget = config.adversary_budget();
    let ce = config.checkpoint_interval();
    let payload = vec![0u8; config.payload_bytes];

    let mut oracle = HashOracle::new(config.mode);
    let mut nodes: Vec<HonestNode> = (0..n_honest)
        .map(|i| HonestNode {
            state: NodeState::new(k),
            rng: derive_rng(config.seed, "node", i as u64),
        })
        .collect();
    let mut adversary = Adversary::new(config);

    let mut events: BTreeMap<u64, Vec<Delivery>> = BTreeMap::new();
    let mut broadcast_done: HashSet<HashValue> = HashSet::new();
    let mut honest_set: HashSet<HashValue> = HashSet::new();
    let mut miner_of: HashMap<HashValue, u32> = HashMap::new();
    let mut mined_tick: HashMap<HashValue, u64> = HashMap::new();
    for i in 0..k {
        honest_set.insert(genesis_hash(i));
        mined_tick.insert(genesis_hash(i), 0);
    }

    let mut honest_mined: u64 = 0;
    let mut rejected: BTreeMap<String, u64> = BTreeMap::new();
    let mut mine_events: Vec<MineEvent> = Vec::new();
    let mut snapshots: Vec<ScbSnapshot> = Vec::new();
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut latency_partial: Vec<u64> = Vec::new();
    let mut latency_full: Vec<u64> = Vec::new();
    let mut confirmed: Vec<ConfirmedBlock> = Vec::new();
    let mut partial_prev: Vec<usize> = vec![0; k as usize];
    let mut pending_full: BTreeMap<(u64, u32), HashValue> = BTreeMap::new();
    let mut prev_bar: u64 = 1;
    let mut confirm_bar_monotone = true;

    for t in 1..=config.ticks {
        let mut adv_released: Vec<(Arc<Block>, Attachment)> = Vec::new();

        // ReceiveState: deliver everything due this tick, in queue order.
        if let Some(due) = events.remove(&t) {
            for d in due {
                let outcome = consensus::process_block(
                    &mut nodes[d.to as usize].state,
                    &oracle,
                    &params,
                    Arc::clone(&d.block),
                    d.att.clone(),
                );
                match outcome {
                    ProcessOutcome::Accepted { stored } => {
                        // first honest acceptance re-broadcasts (covers
                        // adversary blocks and buffered cascades)
                        for h in stored {
                            if broadcast_done.insert(h) {
                                let sb = nodes[d.to as usize].state.get(&h).expect("stored");
                                let (b, a) = (Arc::clone(&sb.block), sb.attachment.clone());
                                let honest = honest_set.contains(&h);
                                broadcast(
                                    &mut events,
                                    &mut adversary,
                                    &mut adv_released,
                                    &oracle,
                                    &params,
                                    n_honest,
                                    d.to,
                                    t,
                                    config.delta,
                                    b,
                                    a,
                                    honest,
                                );
                            }
                        }
                    }
                    ProcessOutcome::Rejected(r) => {
                        *rejected.entry(format!("{r:?}")).or_default() += 1;
                    }
                    ProcessOutcome::Buffered(_) | ProcessOutcome::Duplicate => {}
                }
            }
        }

        // Mining: one query per honest node, in id order.
        for id in 0..n_honest {
            let node = &mut nodes[id as usize];
            let nonce = (((id as u64 + 1) << 48) | t).to_le_bytes();
            let candidate = consensus::assemble_candidate(&node.state, payload.clone(), nonce)
                .expect("payload under limit");
            let Ok(attempt) = oracle.mining_attempt(&mut node.rng, &params, &candidate) else {
                unreachable!("params validated");
            };
            if let Some(h) = attempt {
                let chain = chain_index(&h, k);
                let max_tip = (0..k).map(|i| node.state.tip_next_rank(i)).max().unwrap();
                let pre_gap = max_tip - node.state.tip_next_rank(chain);
                let (block, att) =
                    consensus::on_mining_success(&mut node.state, &oracle, &params, candidate, h)
                        .expect("own block accepted");
                let post_max = (0..k).map(|i| node.state.tip_next_rank(i)).max().unwrap();
                let post_deficit = post_max - node.state.tip_next_rank(chain);
                mine_events.push(MineEvent {
                    tick: t,
                    chain,
                    pre_gap,
                    post_deficit,
                });
                honest_mined += 1;
                honest_set.insert(att.hash);
                miner_of.insert(att.hash, id);
                mined_tick.insert(att.hash, t);
                broadcast_done.insert(att.hash);
                broadcast(
                    &mut events,
                    &mut adversary,
                    &mut adv_released,
                    &oracle,
                    &params,
                    n_honest,
                    id,
                    t,
                    config.delta,
                    block,
                    att,
                    true,
                );
            }
        }

        // Adversary turn: its query budget, then all releases go out at
        // t + 1 (within the delta bound since delta >= 1).
        let public_trailing = nodes[0].state.trailing();
        let mut ctx = AdvCtx {
            oracle: &mut oracle,
            params: &params,
            tick: t,
            public_trailing,
            released: Vec::new(),
        };
        adversary.on_tick(budget, &mut ctx);
        let released = ctx.released;
        let due = events.entry(t + 1).or_default();
        for (b, a) in adv_released.into_iter().chain(released) {
            mined_tick.entry(a.hash).or_insert(t);
            for to in 0..n_honest {
                due.push(Delivery {
                    to,
                    block: Arc::clone(&b),
                    att: a.clone(),
                });
            }
        }

        // Observer bookkeeping on node 0.
        let st0 = &nodes[0].state;
        let view = confirm_view(st0, t_depth);
        if view.confirm_bar < prev_bar {
            confirm_bar_monotone = false;
        }
        prev_bar = prev_bar.max(view.confirm_bar);
        for i in 0..k {
            let pl = st0.partially_confirmed(i, t_depth);
            let prev = partial_prev[i as usize];
            if pl.len() < prev {
                partial_prev[i as usize] = pl.len();
                continue;
            }
            for idx in prev..pl.len() {
                if idx == 0 {
                    continue; // genesis
                }
                let h = pl[idx];
                latency_partial.push(t - mined_tick[&h]);
                let rank = st0.get(&h).expect("on path").attachment.rank;
                pending_full.insert((rank, i), h);
            }
            partial_prev[i as usize] = pl.len();
        }
        while let Some((&(rank, _), _)) = pending_full.first_key_value() {
            if rank >= view.confirm_bar {
                break;
            }
            let (_, h) = pending_full.pop_first().unwrap();
            latency_full.push(t - mined_tick[&h]);
            let bytes = st0.get(&h).expect("confirmed").block.transactions.len() as u64;
            confirmed.push(ConfirmedBlock {
                tick: t,
                miner: *miner_of.get(&h).unwrap_or(&u32::MAX),
                payload_bytes: bytes,
            });
        }

        if t % ce == 0 || t == config.ticks {
            let mut scb_len0 = 0;
            for (id, node) in nodes.iter().enumerate() {
                let scb = output_scb(&node.state, t_depth);
                let honest_len =
                    scb.iter().filter(|e| honest_set.contains(&e.block_hash)).count() as u64;
                let bar = confirm_view(&node.state, t_depth).confirm_bar;
                if id == 0 {
                    scb_len0 = scb.len() as u64;
                }
                snapshots.push(ScbSnapshot {
                    node: id as u32,
                    tick: t,
                    len: scb.len() as u64,
                    digest: scb_digest(&scb),
                    confirm_bar: bar,
                    honest_len,
                });
            }
            let st0 = &nodes[0].state;
            let tip_next_ranks: Vec<u64> = (0..k).map(|i| st0.tip_next_rank(i)).collect();
            let rank_gap =
                tip_next_ranks.iter().max().unwrap() - tip_next_ranks.iter().min().unwrap();
            trace.push(TraceRow {
                tick: t,
                chain_lens: (0..k).map(|i| st0.longest_path(i).len() as u64 - 1).collect(),
                tip_next_ranks,
                confirm_bar: view.confirm_bar,
                scb_len: scb_len0,
                honest_mined_cum: honest_mined,
                adversary_mined_cum: adversary.mined,
                rank_gap,
            });
        }
    }

    // Final confirmed sequences; the longest one anchors the consistency
    // checker's prefix verification.
    let mut reference: Vec<RefEntry> = Vec::new();
    for node in &nodes {
        let scb = output_scb(&node.state, t_depth);
        if scb.len() > reference.len() {
            reference = scb
                .iter()
                .map(|e| RefEntry {
                    block_hash: e.block_hash,
                    rank: e.rank,
                    chain_id: e.chain_id,
                    honest: honest_set.contains(&e.block_hash),
                })
                .collect();
        }
    }

    let st0 = &nodes[0].state;
    let chains_origin: Vec<Vec<bool>> = (0..k)
        .map(|i| {
            st0.longest_path(i)[1..]
                .iter()
                .map(|h| honest_set.contains(h))
                .collect()
        })
        .collect();
    let final_chain_lengths: Vec<u64> =
        (0..k).map(|i| st0.longest_path(i).len() as u64 - 1).collect();

    // Lemma-3 style sweep: any block two honest nodes both store must
    // carry the same (rank, next_rank) on both.
    let mut attachment_determinism_ok = true;
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            for (h, sb) in nodes[a].state.iter_blocks() {
                if let Some(other) = nodes[b].state.get(h) {
                    if (sb.attachment.rank, sb.attachment.next_rank)
                        != (other.attachment.rank, other.attachment.next_rank)
                    {
                        attachment_determinism_ok = false;
                    }
                }
            }
        }
    }

    Ok(RunReport {
        config: config.clone(),
        n_honest,
        adversary_budget: budget,
        honest_mined,
        adversary_mined: adversary.mined,
        adversary_released: adversary.released_count,
        rejected,
        burst_ends: adversary.burst_ends.clone(),
        snapshots,
        reference_scb: reference,
        trace,
        mine_events,
        latency_partial,
        latency_full,
        confirmed,
        chains_origin,
        final_chain_lengths,
        attachment_determinism_ok,
        confirm_bar_monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash_oracle::MiningMode;
    use crate::hash_oracle::ProtocolParams;
    use crate::simnet::config::AdversaryKind;

    fn cfg(k: u32, f: f64, adversary: AdversaryKind, ticks: u64) -> SimConfig {
        let n = 10;
        let delta = 2;
        SimConfig {
            params: ProtocolParams::new(k, 1.0 / (5.0 * delta as f64 * n as f64 * k as f64), 4),
            mode: MiningMode::Oracle,
            n,
            f,
            delta: delta as u64,
            ticks,
            seed: 42,
            checkpoint_every: 0,
            adversary,
            payload_bytes: 64,
        }
    }

    #[test]
    fn identical_configs_give_identical_reports() {
        let c = cfg(4, 0.3, AdversaryKind::Withholder, 4000);
        let r1 = run(&c).unwrap();
        let r2 = run(&c).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
        assert!(r1.honest_mined > 0);
        assert!(r1.adversary_mined > 0);
    }

    #[test]
    fn no_adversary_single_chain_scb_matches_everywhere() {
        let c = cfg(1, 0.0, AdversaryKind::None, 3000);
        let r = run(&c).unwrap();
        assert_eq!(r.adversary_mined, 0);
        assert!(r.attachment_determinism_ok);
        assert!(r.confirm_bar_monotone);
        // every snapshot is a prefix of the longest final sequence
        let entries: Vec<_> = r.reference_scb.iter().map(|e| e.entry()).collect();
        for s in &r.snapshots {
            assert_eq!(
                s.digest,
                crate::simnet::report::scb_digest(&entries[..s.len as usize])
            );
        }
        // single chain: confirmed ranks are dense from genesis
        for (i, e) in r.reference_scb.iter().enumerate() {
            assert_eq!(e.rank, i as u64);
            assert_eq!(e.chain_id, 0);
        }
    }

    #[test]
    fn honest_catch_up_deficit_is_zero() {
        let c = cfg(
            4,
            0.3,
            AdversaryKind::TrailingLiar {
                burst_ticks: 200,
                pause_ticks: 200,
            },
            4000,
        );
        let r = run(&c).unwrap();
        assert!(!r.burst_ends.is_empty());
        assert!(r.mine_events.iter().all(|e| e.post_deficit == 0));
        assert!(r.attachment_determinism_ok);
    }

    #[test]
    fn withholder_releases_blocks() {
        let c = cfg(2, 0.3, AdversaryKind::Withholder, 4000);
        let r = run(&c).unwrap();
        assert!(r.adversary_mined > 0);
        assert!(r.adversary_released > 0);
        assert!(r.adversary_released <= r.adversary_mined);
    }

    #[test]
    fn adversary_budget_is_floor_fn() {
        let c = cfg(2, 0.34, AdversaryKind::HonestShadow, 10);
        assert_eq!(c.adversary_budget(), 3);
        assert_eq!(c.n_honest(), 7);
    }
}

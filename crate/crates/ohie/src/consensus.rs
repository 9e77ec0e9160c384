//! Protocol logic: the five-step block verification, rank/next_rank
//! assignment, candidate assembly for mining, and total-order output.
//!
//! A block's `rank` is fixed by its parent's `next_rank`; its `next_rank`
//! is the trailing target's `next_rank`, bumped to `rank + 1` if needed.
//! `output_scb` cuts each chain's longest path at depth `T`, takes
//! `confirm_bar` as the minimum over chains of the last partially-confirmed
//! block's `next_rank`, and emits everything below the bar ordered by
//! (rank, chain id).

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chainstore::{Attachment, Block, InsertOutcome, NodeState};
use crate::hash_oracle::{chain_index, is_pow_valid, HashOracle, HashValue, ProtocolParams};
use crate::merkle::{self, expected_proof_len};

/// Maximum payload accepted into a candidate block.
pub const MAX_PAYLOAD_BYTES: usize = 20 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadPow,
    BadHash,
    BadProof,
    BadParent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferReason {
    MissingParent,
    MissingTrailing,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProcessOutcome {
    /// Stored, with every hash accepted by the call (cascades included).
    Accepted { stored: Vec<HashValue> },
    /// Valid so far but waiting on an unknown reference; not byzantine.
    Buffered(BufferReason),
    /// Failed verification or duplicate; byzantine or replay.
    Rejected(RejectReason),
    Duplicate,
}

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD_BYTES}-byte limit")]
    PayloadTooLarge(usize),
    #[error("self-processing a mined block failed: {0:?}")]
    SelfProcess(ProcessOutcome),
    #[error("merkle error: {0}")]
    Merkle(#[from] crate::merkle::MerkleError),
}

/// Full verification and storage of a received (block, attachment) pair.
/// Checks, in order: PoW leading zeros, hash binding via the oracle, the
/// Merkle leaf proof at the hash-selected index, then parent and trailing
/// existence (unknown references buffer rather than reject). Supplied
/// rank/next_rank are never trusted; storage recomputes them.
pub fn process_block(
    state: &mut NodeState,
    oracle: &HashOracle,
    params: &ProtocolParams,
    block: Arc<Block>,
    attachment: Attachment,
) -> ProcessOutcome {
    if !is_pow_valid(&attachment.hash, params) {
        return ProcessOutcome::Rejected(RejectReason::BadPow);
    }
    if !oracle.verify(&block, &attachment.hash) {
        return ProcessOutcome::Rejected(RejectReason::BadHash);
    }
    let i = chain_index(&attachment.hash, params.k);
    if attachment.leaf_proof.siblings.len() != expected_proof_len(params.k)
        || !merkle::verify(&block.root, i, &attachment.leaf, &attachment.leaf_proof)
    {
        return ProcessOutcome::Rejected(RejectReason::BadProof);
    }
    let missing_trailing = block.trailing;
    match state.insert(block, attachment) {
        InsertOutcome::Accepted { stored } => ProcessOutcome::Accepted { stored },
        InsertOutcome::Buffered { missing } => {
            if missing == missing_trailing {
                ProcessOutcome::Buffered(BufferReason::MissingTrailing)
            } else {
                ProcessOutcome::Buffered(BufferReason::MissingParent)
            }
        }
        InsertOutcome::Duplicate => ProcessOutcome::Duplicate,
        InsertOutcome::BadParentChain => ProcessOutcome::Rejected(RejectReason::BadParent),
    }
}

/// Assemble a mining candidate from the node's current Merkle root and
/// trailing pointer.
pub fn assemble_candidate(
    state: &NodeState,
    payload: Vec<u8>,
    nonce: [u8; 8],
) -> Result<Block, ConsensusError> {
    if payload.len() > MAX_PAYLOAD_BYTES {
        return Err(ConsensusError::PayloadTooLarge(payload.len()));
    }
    Ok(Block {
        transactions: payload,
        root: state.merkle().root(),
        trailing: state.trailing(),
        nonce,
    })
}

/// After a PoW success on `block` with hash `h`: build the attachment
/// (leaf and proof for the hash-selected chain), self-process, and return
/// the pair as stored (attachment carries the finalized ranks).
pub fn on_mining_success(
    state: &mut NodeState,
    oracle: &HashOracle,
    params: &ProtocolParams,
    block: Block,
    h: HashValue,
) -> Result<(Arc<Block>, Attachment), ConsensusError> {
    debug_assert!(is_pow_valid(&h, params));
    let i = chain_index(&h, params.k);
    let leaf = state.merkle().leaf(i)?;
    let leaf_proof = state.merkle().prove(i)?;
    let attachment = Attachment {
        hash: h,
        leaf,
        leaf_proof,
        rank: 0,
        next_rank: 0,
    };
    let block = Arc::new(block);
    match process_block(state, oracle, params, Arc::clone(&block), attachment) {
        ProcessOutcome::Accepted { .. } => {}
        other => return Err(ConsensusError::SelfProcess(other)),
    }
    let stored = state
        .get(&h)
        .expect("just accepted")
        .attachment
        .clone();
    Ok((block, stored))
}

/// One fully-confirmed block in the total order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScbEntry {
    pub block_hash: HashValue,
    pub rank: u64,
    pub chain_id: u32,
}

/// Per-chain confirmation coordinates: `y[i]` is the `next_rank` of the
/// last partially-confirmed block on chain `i` (1 when the chain has none),
/// and `confirm_bar` is their minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfirmView {
    pub y: Vec<u64>,
    pub confirm_bar: u64,
}

pub fn confirm_view(state: &NodeState, t: u64) -> ConfirmView {
    let k = state.k();
    let mut y = Vec::with_capacity(k as usize);
    for i in 0..k {
        let partial = state.partially_confirmed(i, t);
        let yi = match partial.last() {
            Some(h) => state.get(h).expect("on path").attachment.next_rank,
            None => 1,
        };
        y.push(yi);
    }
    let confirm_bar = y.iter().copied().min().unwrap_or(1);
    ConfirmView { y, confirm_bar }
}

/// The sequence of confirmed blocks: all partially-confirmed blocks with
/// rank below `confirm_bar`, sorted by (rank, chain id).
pub fn output_scb(state: &NodeState, t: u64) -> Vec<ScbEntry> {
    let view = confirm_view(state, t);
    let mut out = Vec::new();
    for i in 0..state.k() {
        for h in state.partially_confirmed(i, t) {
            let rank = state.get(h).expect("on path").attachment.rank;
            if rank < view.confirm_bar {
                out.push(ScbEntry {
                    block_hash: *h,
                    rank,
                    chain_id: i,
                });
            }
        }
    }
    out.sort_by_key(|e| (e.rank, e.chain_id));
    out
}

/// JSON-lines export of an SCB, one entry per line.
pub fn scb_to_json_lines(entries: &[ScbEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e).expect("serializable"));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chainstore::genesis_hash;
    use crate::hash_oracle::{derive_rng, synthesize_for_chain, MiningMode};
    use rand_chacha::ChaCha12Rng;

    fn setup(k: u32) -> (ProtocolParams, HashOracle, ChaCha12Rng) {
        let params = ProtocolParams::new(k, 1.0 / (k as f64 * 16.0), 2);
        (params, HashOracle::new(MiningMode::Oracle), derive_rng(77, "consensus", k as u64))
    }

    /// Mine one block on a forced chain: assemble from the state, register
    /// a synthesized hash for the target chain, and self-process.
    fn mine_on_chain(
        state: &mut NodeState,
        oracle: &mut HashOracle,
        params: &ProtocolParams,
        rng: &mut ChaCha12Rng,
        chain: u32,
        nonce: u64,
        trailing_override: Option<HashValue>,
    ) -> (Arc<Block>, Attachment) {
        let mut block = assemble_candidate(state, vec![1, 2, 3], nonce.to_le_bytes()).unwrap();
        if let Some(tr) = trailing_override {
            block.trailing = tr;
        }
        let h = synthesize_for_chain(rng, params, chain);
        oracle.register(&block, h);
        on_mining_success(state, oracle, params, block, h).unwrap()
    }

    #[test]
    fn fresh_state_candidate_and_first_block() {
        let (params, mut oracle, mut rng) = setup(4);
        let mut state = NodeState::new(4);
        let candidate = assemble_candidate(&state, vec![], [0; 8]).unwrap();
        assert_eq!(candidate.trailing, genesis_hash(0));
        assert_eq!(candidate.root, state.merkle().root());

        // first mined block on chain 2: leaf = genesis 2, (rank, next) = (1, 2)
        let (_, att) = mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 2, 1, None);
        assert_eq!(att.leaf, genesis_hash(2));
        assert_eq!((att.rank, att.next_rank), (1, 2));
    }

    #[test]
    fn identical_state_gives_identical_candidate() {
        let state_a = NodeState::new(4);
        let state_b = NodeState::new(4);
        let ca = assemble_candidate(&state_a, vec![9], [7; 8]).unwrap();
        let cb = assemble_candidate(&state_b, vec![9], [7; 8]).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn candidate_root_changes_after_accept() {
        let (params, mut oracle, mut rng) = setup(4);
        let mut state = NodeState::new(4);
        let fresh_root = state.merkle().root();
        mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 2, 1, None);
        assert_ne!(state.merkle().root(), fresh_root);
    }

    #[test]
    fn payload_limit_enforced() {
        let state = NodeState::new(1);
        let err = assemble_candidate(&state, vec![0; MAX_PAYLOAD_BYTES + 1], [0; 8]);
        assert!(matches!(err, Err(ConsensusError::PayloadTooLarge(_))));
    }

    /// Grow chain 1 to a (4,5) block, then mine three successive blocks on
    /// chain 0 trailing at it: tuples must be (1,5), (5,6), (6,7).
    #[test]
    fn rank_catch_up_replay() {
        let (params, mut oracle, mut rng) = setup(3);
        let mut state = NodeState::new(3);
        let mut tuple_45 = HashValue::ZERO;
        for n in 0..4u64 {
            let (_, att) =
                mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 1, n, Some(genesis_hash(0)));
            tuple_45 = att.hash;
        }
        assert_eq!(
            (state.get(&tuple_45).unwrap().attachment.rank, state.get(&tuple_45).unwrap().attachment.next_rank),
            (4, 5)
        );
        let mut tuples = Vec::new();
        for n in 10..13u64 {
            let (_, att) =
                mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 0, n, Some(tuple_45));
            tuples.push((att.rank, att.next_rank));
        }
        assert_eq!(tuples, vec![(1, 5), (5, 6), (6, 7)]);
    }

    #[test]
    fn rank_rule_examples() {
        // parent next_rank 5, trailing next_rank 5 -> (5, 6);
        // parent next_rank 1, trailing next_rank 5 -> (1, 5)
        let (params, mut oracle, mut rng) = setup(2);
        let mut state = NodeState::new(2);
        let mut last = HashValue::ZERO;
        for n in 0..4u64 {
            let (_, att) =
                mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 0, n, Some(genesis_hash(0)));
            last = att.hash;
        }
        // chain-0 tip now has next_rank 5
        assert_eq!(state.get(&last).unwrap().attachment.next_rank, 5);
        let (_, att) = mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 0, 20, Some(last));
        assert_eq!((att.rank, att.next_rank), (5, 6));
        let (_, att) = mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 1, 21, Some(last));
        assert_eq!((att.rank, att.next_rank), (1, 5));
    }

    #[test]
    fn bad_pow_rejected() {
        let (params, oracle, mut rng) = setup(2);
        let mut state = NodeState::new(2);
        let block = Arc::new(assemble_candidate(&state, vec![], [1; 8]).unwrap());
        let mut h = synthesize_for_chain(&mut rng, &params, 0);
        h.0[0] = 0x80; // break the leading zeros
        let att = Attachment {
            hash: h,
            leaf: genesis_hash(0),
            leaf_proof: state.merkle().prove(0).unwrap(),
            rank: 0,
            next_rank: 0,
        };
        assert_eq!(
            process_block(&mut state, &oracle, &params, block, att),
            ProcessOutcome::Rejected(RejectReason::BadPow)
        );
    }

    #[test]
    fn unregistered_hash_rejected() {
        let (params, oracle, mut rng) = setup(2);
        let mut state = NodeState::new(2);
        let block = Arc::new(assemble_candidate(&state, vec![], [1; 8]).unwrap());
        let h = synthesize_for_chain(&mut rng, &params, 0);
        let att = Attachment {
            hash: h,
            leaf: genesis_hash(0),
            leaf_proof: state.merkle().prove(0).unwrap(),
            rank: 0,
            next_rank: 0,
        };
        assert_eq!(
            process_block(&mut state, &oracle, &params, block, att),
            ProcessOutcome::Rejected(RejectReason::BadHash)
        );
    }

    #[test]
    fn wrong_index_proof_rejected() {
        let (params, mut oracle, mut rng) = setup(4);
        let mut state = NodeState::new(4);
        let block = assemble_candidate(&state, vec![], [1; 8]).unwrap();
        let h = synthesize_for_chain(&mut rng, &params, 2);
        oracle.register(&block, h);
        // proof for leaf 1 presented with a chain-2 hash
        let att = Attachment {
            hash: h,
            leaf: genesis_hash(1),
            leaf_proof: state.merkle().prove(1).unwrap(),
            rank: 0,
            next_rank: 0,
        };
        assert_eq!(
            process_block(&mut state, &oracle, &params, Arc::new(block), att),
            ProcessOutcome::Rejected(RejectReason::BadProof)
        );
    }

    #[test]
    fn missing_references_buffer() {
        let (params, mut oracle, mut rng) = setup(2);
        let mut state = NodeState::new(2);
        let mut remote = NodeState::new(2);
        // build two blocks on a remote node; deliver only the second
        let (_b1, a1) = mine_on_chain(&mut remote, &mut oracle, &params, &mut rng, 0, 1, None);
        // trailing pinned to genesis so only the parent is unknown
        let genesis = crate::chainstore::genesis_hash(0);
        let (b2, a2) =
            mine_on_chain(&mut remote, &mut oracle, &params, &mut rng, 0, 2, Some(genesis));
        let b2_hash = a2.hash;
        assert_eq!(
            process_block(&mut state, &oracle, &params, b2, a2),
            ProcessOutcome::Buffered(BufferReason::MissingParent)
        );
        // default trailing points at the freshly mined b2, also unknown here
        let (b3, a3) = mine_on_chain(&mut remote, &mut oracle, &params, &mut rng, 0, 3, None);
        assert_eq!(b3.trailing, b2_hash);
        let _ = a1;
        assert_eq!(
            process_block(&mut state, &oracle, &params, b3, a3),
            ProcessOutcome::Buffered(BufferReason::MissingTrailing)
        );
    }

    #[test]
    fn advisory_ranks_are_overwritten() {
        let (params, mut oracle, mut rng) = setup(2);
        let mut state = NodeState::new(2);
        let mut remote = NodeState::new(2);
        let (b, mut a) = mine_on_chain(&mut remote, &mut oracle, &params, &mut rng, 0, 1, None);
        a.rank = 999;
        a.next_rank = 12_345;
        process_block(&mut state, &oracle, &params, b, a.clone());
        let stored = state.get(&a.hash).unwrap();
        assert_eq!((stored.attachment.rank, stored.attachment.next_rank), (1, 2));
    }

    #[test]
    fn fresh_state_scb_is_geneses() {
        let state = NodeState::new(3);
        // every genesis is confirmed from the start, in chain order
        let scb = output_scb(&state, 2);
        let got: Vec<(u64, u32)> = scb.iter().map(|e| (e.rank, e.chain_id)).collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (0, 2)]);
        let view = confirm_view(&state, 2);
        assert_eq!(view.confirm_bar, 1);
        assert_eq!(view.y, vec![1, 1, 1]);
    }

    /// Three-chain fixture with T = 2, mined in bursts so that the last
    /// partially-confirmed blocks carry next_rank (5, 7, 9): confirm_bar
    /// comes out at 5 and exactly 9 blocks (genesis included) fall below.
    #[test]
    fn confirm_bar_and_scb_count() {
        let (params, mut oracle, mut rng) = setup(3);
        let t = params.t; // T = 2
        let mut state = NodeState::new(3);
        let mut nonce = 0u64;
        let mut burst = |state: &mut NodeState, oracle: &mut HashOracle, rng: &mut ChaCha12Rng, chain: u32, count: u64| {
            let mut tuples = Vec::new();
            for _ in 0..count {
                nonce += 1;
                let (_, att) = mine_on_chain(state, oracle, &params, rng, chain, nonce, None);
                tuples.push((att.rank, att.next_rank));
            }
            tuples
        };
        // chain 1 races ahead: (1,2) (2,3) (3,4) (4,5)
        assert_eq!(
            burst(&mut state, &mut oracle, &mut rng, 1, 4),
            vec![(1, 2), (2, 3), (3, 4), (4, 5)]
        );
        // chain 0 catches up through the trailing pointer
        assert_eq!(
            burst(&mut state, &mut oracle, &mut rng, 0, 3),
            vec![(1, 5), (5, 6), (6, 7)]
        );
        // chain 1 extends past the catch-up
        assert_eq!(
            burst(&mut state, &mut oracle, &mut rng, 1, 3),
            vec![(5, 7), (7, 8), (8, 9)]
        );
        // chain 2 finally starts, jumping straight to rank territory 9
        assert_eq!(
            burst(&mut state, &mut oracle, &mut rng, 2, 3),
            vec![(1, 9), (9, 10), (10, 11)]
        );
        let view = confirm_view(&state, t);
        assert_eq!(view.y, vec![5, 7, 9]);
        assert_eq!(view.confirm_bar, 5);
        let scb = output_scb(&state, t);
        assert_eq!(scb.len(), 9);
        // sorted by (rank, chain), genesis blocks first
        for w in scb.windows(2) {
            assert!((w[0].rank, w[0].chain_id) < (w[1].rank, w[1].chain_id));
        }
        assert_eq!(scb[0].rank, 0);
        assert_eq!(
            scb.iter().map(|e| (e.rank, e.chain_id)).collect::<Vec<_>>(),
            vec![(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 1), (3, 1), (4, 1)]
        );
    }

    #[test]
    fn single_chain_ranks_count_up() {
        let (params, mut oracle, mut rng) = setup(1);
        let mut state = NodeState::new(1);
        for j in 1..=40u64 {
            let (_, att) = mine_on_chain(&mut state, &mut oracle, &params, &mut rng, 0, j, None);
            assert_eq!((att.rank, att.next_rank), (j, j + 1));
        }
        // SCB = chain minus the last T blocks, in chain order
        let scb = output_scb(&state, 10);
        assert_eq!(scb.len(), 31); // genesis + 30 of the 40
        for (idx, e) in scb.iter().enumerate() {
            assert_eq!(e.rank, idx as u64);
        }
    }

    #[test]
    fn scb_entries_unique_and_below_bar() {
        let (params, mut oracle, mut rng) = setup(3);
        let mut state = NodeState::new(3);
        for n in 0..30u64 {
            let chain = (n % 3) as u32;
            mine_on_chain(&mut state, &mut oracle, &params, &mut rng, chain, n, None);
        }
        let view = confirm_view(&state, params.t);
        let scb = output_scb(&state, params.t);
        let mut seen = std::collections::HashSet::new();
        for e in &scb {
            assert!(e.rank < view.confirm_bar);
            assert!(seen.insert(e.block_hash));
        }
    }
}

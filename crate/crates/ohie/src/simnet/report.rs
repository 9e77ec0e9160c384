//! Run artifacts: snapshots, traces, events, and the aggregate report.
//! Everything is a deterministic function of the config, so serialized
//! reports from identical configs are byte-identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::ScbEntry;
use crate::hash_oracle::HashValue;

use super::config::SimConfig;

/// Compact fingerprint of one node's confirmed sequence at a checkpoint.
/// The digest is a rolling chain over entries, so any prefix of a longer
/// sequence can be checked against it without storing the entries.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScbSnapshot {
    pub node: u32,
    pub tick: u64,
    pub len: u64,
    pub digest: HashValue,
    pub confirm_bar: u64,
    /// Entries whose block was honest-mined (genesis counts as honest).
    pub honest_len: u64,
}

/// Rolling digest chain: d_0 = H("scb"), d_i = H(d_{i-1} || entry_i).
pub fn scb_digest_seed() -> HashValue {
    HashValue(Sha256::digest(b"scb").into())
}

pub fn scb_digest_step(prev: &HashValue, e: &ScbEntry) -> HashValue {
    let mut h = Sha256::new();
    h.update(prev.0);
    h.update(e.block_hash.0);
    h.update(e.rank.to_le_bytes());
    h.update(e.chain_id.to_le_bytes());
    HashValue(h.finalize().into())
}

pub fn scb_digest(entries: &[ScbEntry]) -> HashValue {
    let mut d = scb_digest_seed();
    for e in entries {
        d = scb_digest_step(&d, e);
    }
    d
}

/// One confirmed entry of the reference (longest final) sequence, kept in
/// full so snapshot digests can be re-verified as prefixes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefEntry {
    pub block_hash: HashValue,
    pub rank: u64,
    pub chain_id: u32,
    pub honest: bool,
}

impl RefEntry {
    pub fn entry(&self) -> ScbEntry {
        ScbEntry {
            block_hash: self.block_hash,
            rank: self.rank,
            chain_id: self.chain_id,
        }
    }
}

/// Node-0 time series row, sampled at checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    /// Blocks past genesis on each chain's longest path.
    pub chain_lens: Vec<u64>,
    pub tip_next_ranks: Vec<u64>,
    pub confirm_bar: u64,
    pub scb_len: u64,
    pub honest_mined_cum: u64,
    pub adversary_mined_cum: u64,
    /// max - min of tip_next_ranks.
    pub rank_gap: u64,
}

/// Rank catch-up record taken in the miner's own view when an honest node
/// mines a block: the gap its chain had before the block, and the deficit
/// (max tip next_rank minus its chain's) right after.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineEvent {
    pub tick: u64,
    pub chain: u32,
    pub pre_gap: u64,
    pub post_deficit: u64,
}

/// Full confirmation of one block in node 0's view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfirmedBlock {
    pub tick: u64,
    /// Honest miner id, or u32::MAX for adversary blocks and genesis.
    pub miner: u32,
    pub payload_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub n_honest: u32,
    pub adversary_budget: u32,
    pub honest_mined: u64,
    pub adversary_mined: u64,
    pub adversary_released: u64,
    pub rejected: BTreeMap<String, u64>,
    pub burst_ends: Vec<u64>,
    pub snapshots: Vec<ScbSnapshot>,
    /// Longest final confirmed sequence across nodes (consistency anchor).
    pub reference_scb: Vec<RefEntry>,
    pub trace: Vec<TraceRow>,
    pub mine_events: Vec<MineEvent>,
    /// Ticks from mining to partial confirmation, node 0.
    pub latency_partial: Vec<u64>,
    /// Ticks from mining to full confirmation, node 0.
    pub latency_full: Vec<u64>,
    pub confirmed: Vec<ConfirmedBlock>,
    /// Per chain, origin flags (true = honest) of node 0's final path past
    /// genesis, in path order.
    pub chains_origin: Vec<Vec<bool>>,
    pub final_chain_lengths: Vec<u64>,
    /// Blocks stored by two or more honest nodes always carried identical
    /// (rank, next_rank); checked exhaustively at run end.
    pub attachment_determinism_ok: bool,
    /// confirm_bar on node 0 never decreased.
    pub confirm_bar_monotone: bool,
}

impl RunReport {
    /// CSV of the node-0 time series; one row per checkpoint.
    pub fn trace_csv(&self) -> String {
        let k = self.config.params.k as usize;
        let mut s = String::from("tick");
        for i in 0..k {
            s.push_str(&format!(",len_{i}"));
        }
        for i in 0..k {
            s.push_str(&format!(",tip_next_rank_{i}"));
        }
        s.push_str(",confirm_bar,scb_len,honest_mined,adversary_mined,rank_gap\n");
        for r in &self.trace {
            s.push_str(&r.tick.to_string());
            for v in &r.chain_lens {
                s.push_str(&format!(",{v}"));
            }
            for v in &r.tip_next_ranks {
                s.push_str(&format!(",{v}"));
            }
            s.push_str(&format!(
                ",{},{},{},{},{}\n",
                r.confirm_bar, r.scb_len, r.honest_mined_cum, r.adversary_mined_cum, r.rank_gap
            ));
        }
        s
    }

    /// CSV of per-snapshot confirmed-sequence sizes.
    pub fn snapshots_csv(&self) -> String {
        let mut s = String::from("node,tick,scb_len,honest_len,confirm_bar,digest\n");
        for snap in &self.snapshots {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                snap.node,
                snap.tick,
                snap.len,
                snap.honest_len,
                snap.confirm_bar,
                snap.digest.to_hex()
            ));
        }
        s
    }
}

//! One node's view: `k` block trees rooted at the per-chain genesis blocks,
//! the longest path per chain, the Merkle tree over current tips, the
//! trailing block (maximum `next_rank` anywhere in the view), and a pending
//! buffer that enforces parent-before-child processing when blocks arrive
//! out of order.
//!
//! `insert` recomputes `rank`/`next_rank` locally from the stored parent and
//! trailing target; attachment values carried on the wire are advisory only.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::hash_oracle::{chain_index, hash_block, HashValue};
use crate::merkle::{MerkleProof, MerkleTree};

pub const DEFAULT_PENDING_CAP: usize = 100_000;

/// The mined unit. `transactions` is an opaque payload; `root` commits to
/// all chain tips; `trailing` names the block with the largest `next_rank`
/// the miner had seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    #[serde(with = "payload_hex")]
    pub transactions: Vec<u8>,
    pub root: HashValue,
    pub trailing: HashValue,
    pub nonce: [u8; 8],
}

mod payload_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

impl Block {
    /// Canonical serialization: length-prefixed fields in fixed order
    /// (transactions, root, trailing, nonce). Deterministic across nodes.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.transactions.len() + 96);
        out.extend_from_slice(&(self.transactions.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.transactions);
        out.extend_from_slice(&32u64.to_le_bytes());
        out.extend_from_slice(&self.root.0);
        out.extend_from_slice(&32u64.to_le_bytes());
        out.extend_from_slice(&self.trailing.0);
        out.extend_from_slice(&8u64.to_le_bytes());
        out.extend_from_slice(&self.nonce);
        out
    }
}

/// Post-mining metadata. `rank` and `next_rank` are finalized locally on
/// acceptance; wire values are advisory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub hash: HashValue,
    pub leaf: HashValue,
    pub leaf_proof: MerkleProof,
    pub rank: u64,
    pub next_rank: u64,
}

#[derive(Clone, Debug)]
pub struct StoredBlock {
    pub block: Arc<Block>,
    pub attachment: Attachment,
    pub chain: u32,
    pub height: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InsertOutcome {
    /// Stored; lists every hash stored by this call, cascaded pending
    /// blocks included, in acceptance order.
    Accepted { stored: Vec<HashValue> },
    /// A referenced block (leaf parent or trailing target) is unknown.
    Buffered { missing: HashValue },
    /// Already stored; state unchanged.
    Duplicate,
    /// The leaf parent exists but lives on a different chain than the
    /// block's hash assigns it to.
    BadParentChain,
}

/// The per-chain genesis block. All nodes construct identical copies.
pub fn genesis_block(chain: u32) -> Block {
    Block {
        transactions: b"genesis".to_vec(),
        root: HashValue::ZERO,
        trailing: HashValue::ZERO,
        nonce: (chain as u64).to_le_bytes(),
    }
}

pub fn genesis_hash(chain: u32) -> HashValue {
    hash_block(&genesis_block(chain))
}

#[derive(Clone, Debug)]
struct PendingEntry {
    block: Arc<Block>,
    attachment: Attachment,
    seq: u64,
}

#[derive(Clone, Copy, Debug)]
struct Tip {
    hash: HashValue,
    height: u64,
}

/// Single-owner state: exactly one simulated node mutates it.
pub struct NodeState {
    k: u32,
    blocks: HashMap<HashValue, StoredBlock>,
    tips: Vec<Tip>,
    /// Longest path per chain, genesis first, kept in sync with `tips`.
    paths: Vec<Vec<HashValue>>,
    merkle: MerkleTree,
    trailing: HashValue,
    /// (next_rank, chain, hash) of the current trailing block; ordering key
    /// is max next_rank, then min chain id, then min hash.
    trailing_key: (u64, u32, HashValue),
    pending: BTreeMap<HashValue, Vec<PendingEntry>>,
    pending_hashes: HashSet<HashValue>,
    pending_order: VecDeque<(HashValue, u64)>,
    pending_seq: u64,
    pending_cap: usize,
}

impl NodeState {
    pub fn new(k: u32) -> Self {
        assert!(k >= 1);
        let mut blocks = HashMap::new();
        let mut tips = Vec::with_capacity(k as usize);
        let mut paths = Vec::with_capacity(k as usize);
        for i in 0..k {
            let b = Arc::new(genesis_block(i));
            let h = hash_block(&b);
            blocks.insert(
                h,
                StoredBlock {
                    block: b,
                    attachment: Attachment {
                        hash: h,
                        leaf: HashValue::ZERO,
                        leaf_proof: MerkleProof {
                            leaf_index: i,
                            siblings: Vec::new(),
                        },
                        rank: 0,
                        next_rank: 1,
                    },
                    chain: i,
                    height: 0,
                },
            );
            tips.push(Tip { hash: h, height: 0 });
            paths.push(vec![h]);
        }
        let leaves: Vec<HashValue> = tips.iter().map(|t| t.hash).collect();
        let merkle = MerkleTree::build(&leaves).expect("k >= 1");
        let trailing = tips[0].hash;
        NodeState {
            k,
            blocks,
            tips,
            paths,
            merkle,
            trailing,
            trailing_key: (1, 0, trailing),
            pending: BTreeMap::new(),
            pending_hashes: HashSet::new(),
            pending_order: VecDeque::new(),
            pending_seq: 0,
            pending_cap: DEFAULT_PENDING_CAP,
        }
    }

    pub fn with_pending_cap(mut self, cap: usize) -> Self {
        self.pending_cap = cap;
        self
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn contains(&self, h: &HashValue) -> bool {
        self.blocks.contains_key(h)
    }

    pub fn get(&self, h: &HashValue) -> Option<&StoredBlock> {
        self.blocks.get(h)
    }

    pub fn iter_blocks(&self) -> impl Iterator<Item = (&HashValue, &StoredBlock)> {
        self.blocks.iter()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn pending_len(&self) -> usize {
        self.pending_hashes.len()
    }

    pub fn merkle(&self) -> &MerkleTree {
        &self.merkle
    }

    /// Hash of the trailing block (maximum next_rank; ties to the smallest
    /// chain id, then the smallest hash).
    pub fn trailing(&self) -> HashValue {
        self.trailing
    }

    pub fn tip(&self, chain: u32) -> HashValue {
        self.tips[chain as usize].hash
    }

    pub fn tip_next_rank(&self, chain: u32) -> u64 {
        self.blocks[&self.tips[chain as usize].hash].attachment.next_rank
    }

    /// Longest genesis-to-leaf path of chain `i` (ties broken by smallest
    /// tip hash), genesis first.
    pub fn longest_path(&self, chain: u32) -> &[HashValue] {
        &self.paths[chain as usize]
    }

    /// The longest path minus its last `t` blocks. Genesis is always kept:
    /// it can never be displaced, and dropping it while a chain is still
    /// shorter than `t` would let a rank-0 entry appear in the confirmed
    /// sequence *after* later-ranked entries were already emitted.
    pub fn partially_confirmed(&self, chain: u32, t: u64) -> &[HashValue] {
        let path = &self.paths[chain as usize];
        let keep = path.len().saturating_sub(t as usize).max(1);
        &path[..keep]
    }

    /// Store a block whose crypto checks (PoW, hash binding, Merkle proof)
    /// have already passed. Handles dependency buffering, recomputes
    /// rank/next_rank from the stored parent and trailing target, and
    /// cascades any pending blocks this one unblocks.
    pub fn insert(&mut self, block: Arc<Block>, attachment: Attachment) -> InsertOutcome {
        let primary =
            match self.try_store(&block, &attachment) {
                StoreResult::Stored(h) => h,
                StoreResult::Missing(missing) => {
                    self.buffer(block, attachment, missing);
                    return InsertOutcome::Buffered { missing };
                }
                StoreResult::Duplicate => return InsertOutcome::Duplicate,
                StoreResult::BadParentChain => return InsertOutcome::BadParentChain,
            };
        let mut stored = vec![primary];
        let mut queue: VecDeque<PendingEntry> = VecDeque::new();
        self.drain_pending_for(primary, &mut queue);
        while let Some(entry) = queue.pop_front() {
            match self.try_store(&entry.block, &entry.attachment) {
                StoreResult::Stored(h) => {
                    stored.push(h);
                    self.drain_pending_for(h, &mut queue);
                }
                StoreResult::Missing(missing) => {
                    // still blocked on its other reference
                    self.buffer(entry.block, entry.attachment, missing);
                }
                StoreResult::Duplicate | StoreResult::BadParentChain => {}
            }
        }
        InsertOutcome::Accepted { stored }
    }

    fn drain_pending_for(&mut self, h: HashValue, queue: &mut VecDeque<PendingEntry>) {
        if let Some(mut entries) = self.pending.remove(&h) {
            entries.sort_by_key(|e| e.seq);
            for e in entries {
                self.pending_hashes.remove(&e.attachment.hash);
                queue.push_back(e);
            }
        }
    }

    fn buffer(&mut self, block: Arc<Block>, attachment: Attachment, missing: HashValue) {
        if self.pending_hashes.contains(&attachment.hash) {
            return;
        }
        if self.pending_hashes.len() >= self.pending_cap {
            // resource exhaustion: drop the oldest buffered block
            while let Some((key, seq)) = self.pending_order.pop_front() {
                let mut removed = false;
                if let Some(entries) = self.pending.get_mut(&key) {
                    if let Some(pos) = entries.iter().position(|e| e.seq == seq) {
                        let e = entries.remove(pos);
                        self.pending_hashes.remove(&e.attachment.hash);
                        removed = true;
                    }
                    if entries.is_empty() {
                        self.pending.remove(&key);
                    }
                }
                if removed {
                    break;
                }
            }
        }
        let seq = self.pending_seq;
        self.pending_seq += 1;
        self.pending_hashes.insert(attachment.hash);
        self.pending_order.push_back((missing, seq));
        self.pending
            .entry(missing)
            .or_default()
            .push(PendingEntry {
                block,
                attachment,
                seq,
            });
    }

    fn try_store(&mut self, block: &Arc<Block>, attachment: &Attachment) -> StoreResult {
        let h = attachment.hash;
        if self.blocks.contains_key(&h) {
            return StoreResult::Duplicate;
        }
        let chain = chain_index(&h, self.k);
        let (parent_height, rank) = match self.blocks.get(&attachment.leaf) {
            None => return StoreResult::Missing(attachment.leaf),
            Some(p) if p.chain != chain => return StoreResult::BadParentChain,
            Some(p) => (p.height, p.attachment.next_rank),
        };
        let trailing_next = match self.blocks.get(&block.trailing) {
            None => return StoreResult::Missing(block.trailing),
            Some(c) => c.attachment.next_rank,
        };
        let next_rank = trailing_next.max(rank + 1);
        let height = parent_height + 1;
        let mut att = attachment.clone();
        att.rank = rank;
        att.next_rank = next_rank;
        self.blocks.insert(
            h,
            StoredBlock {
                block: Arc::clone(block),
                attachment: att,
                chain,
                height,
            },
        );
        self.advance_tip(chain, h, height);
        self.advance_trailing(next_rank, chain, h);
        StoreResult::Stored(h)
    }

    fn advance_tip(&mut self, chain: u32, h: HashValue, height: u64) {
        let tip = &self.tips[chain as usize];
        let better = height > tip.height || (height == tip.height && h < tip.hash);
        if !better {
            return;
        }
        let parent = self.blocks[&h].attachment.leaf;
        self.tips[chain as usize] = Tip { hash: h, height };
        let path = &mut self.paths[chain as usize];
        if path.last() == Some(&parent) {
            path.push(h);
        } else {
            // reorg onto a different branch: rebuild by walking leaf links
            let mut rebuilt = Vec::with_capacity(height as usize + 1);
            let mut cur = h;
            loop {
                rebuilt.push(cur);
                let sb = &self.blocks[&cur];
                if sb.height == 0 {
                    break;
                }
                cur = sb.attachment.leaf;
            }
            rebuilt.reverse();
            *path = rebuilt;
        }
        let leaves: Vec<HashValue> = self.tips.iter().map(|t| t.hash).collect();
        self.merkle = MerkleTree::build(&leaves).expect("k >= 1");
    }

    fn advance_trailing(&mut self, next_rank: u64, chain: u32, h: HashValue) {
        let (cur_next, cur_chain, cur_hash) = self.trailing_key;
        let better = next_rank > cur_next
            || (next_rank == cur_next && (chain < cur_chain || (chain == cur_chain && h < cur_hash)));
        if better {
            self.trailing_key = (next_rank, chain, h);
            self.trailing = h;
        }
    }

    /// Recompute the trailing block from scratch and return its hash.
    /// Used as a cross-check against the incrementally maintained value.
    pub fn update_trailing(&mut self) -> HashValue {
        let mut best: Option<(u64, u32, HashValue)> = None;
        for (h, sb) in &self.blocks {
            let key = (sb.attachment.next_rank, sb.chain, *h);
            let better = match best {
                None => true,
                Some((n, c, bh)) => {
                    key.0 > n || (key.0 == n && (key.1 < c || (key.1 == c && key.2 < bh)))
                }
            };
            if better {
                best = Some(key);
            }
        }
        let (n, c, h) = best.expect("genesis blocks always present");
        self.trailing_key = (n, c, h);
        self.trailing = h;
        h
    }

    /// Debug/golden-test export: every stored (block, attachment) pair plus
    /// per-chain tips, as JSON.
    pub fn export_json(&self) -> serde_json::Value {
        let mut entries: Vec<_> = self.blocks.values().collect();
        entries.sort_by_key(|sb| (sb.chain, sb.height, sb.attachment.hash));
        serde_json::json!({
            "k": self.k,
            "tips": self.tips.iter().map(|t| t.hash.to_hex()).collect::<Vec<_>>(),
            "trailing": self.trailing.to_hex(),
            "blocks": entries.iter().map(|sb| serde_json::json!({
                "block": *sb.block,
                "attachment": sb.attachment,
                "chain": sb.chain,
                "height": sb.height,
            })).collect::<Vec<_>>(),
        })
    }
}

enum StoreResult {
    Stored(HashValue),
    Missing(HashValue),
    Duplicate,
    BadParentChain,
}

//! Merkle tree over the `k` chain-tip hashes. One PoW attempt commits to all
//! `k` candidate parents through the root; the solved hash then selects which
//! leaf (parent) is actually extended, and the proof lets receivers check the
//! binding with `ceil(log2 k)` off-path digests.
//!
//! Interior nodes use a distinct domain-separation prefix so the tree hash
//! behaves as an oracle independent of block hashing. When the leaf count is
//! not a power of two, the leaf list is padded with the all-zero digest, in
//! chain-id order first. A single-leaf tree hashes its leaf once so that the
//! root never equals a leaf verbatim.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hash_oracle::{HashValue, MERKLE_DOMAIN};

#[derive(Debug, Error, PartialEq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree from an empty leaf list")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: u32, leaves: usize },
}

fn node_hash(left: &HashValue, right: &HashValue) -> HashValue {
    let mut h = Sha256::new();
    h.update([MERKLE_DOMAIN]);
    h.update(left.0);
    h.update(right.0);
    HashValue(h.finalize().into())
}

fn single_hash(leaf: &HashValue) -> HashValue {
    let mut h = Sha256::new();
    h.update([MERKLE_DOMAIN]);
    h.update(leaf.0);
    HashValue(h.finalize().into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u32,
    /// Off-path digests, leaf-to-root order.
    pub siblings: Vec<HashValue>,
}

/// Immutable after build; rebuild from the current tips after every accepted
/// block (full rebuild is fine at `k` in the hundreds).
#[derive(Clone, Debug)]
pub struct MerkleTree {
    leaf_count: usize,
    /// levels[0] is the padded leaf layer; the last level has one node.
    levels: Vec<Vec<HashValue>>,
    root: HashValue,
}

impl MerkleTree {
    pub fn build(leaves: &[HashValue]) -> Result<Self, MerkleError> {
        if leaves.is_empty() {
            return Err(MerkleError::EmptyLeaves);
        }
        let padded = leaves.len().next_power_of_two();
        let mut level: Vec<HashValue> = leaves.to_vec();
        level.resize(padded, HashValue::ZERO);

        if padded == 1 {
            let root = single_hash(&level[0]);
            return Ok(MerkleTree {
                leaf_count: 1,
                levels: vec![level],
                root,
            });
        }

        let mut levels = vec![level];
        while levels.last().unwrap().len() > 1 {
            let prev = levels.last().unwrap();
            let next: Vec<HashValue> = prev
                .chunks(2)
                .map(|pair| node_hash(&pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        let root = levels.last().unwrap()[0];
        Ok(MerkleTree {
            leaf_count: leaves.len(),
            levels,
            root,
        })
    }

    pub fn root(&self) -> HashValue {
        self.root
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn leaf(&self, index: u32) -> Result<HashValue, MerkleError> {
        if index as usize >= self.leaf_count {
            return Err(MerkleError::IndexOutOfRange {
                index,
                leaves: self.leaf_count,
            });
        }
        Ok(self.levels[0][index as usize])
    }

    pub fn prove(&self, index: u32) -> Result<MerkleProof, MerkleError> {
        if index as usize >= self.leaf_count {
            return Err(MerkleError::IndexOutOfRange {
                index,
                leaves: self.leaf_count,
            });
        }
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index as usize;
        for level in &self.levels[..self.levels.len() - 1] {
            siblings.push(level[i ^ 1]);
            i >>= 1;
        }
        Ok(MerkleProof {
            leaf_index: index,
            siblings,
        })
    }
}

/// Expected proof length for a tree over `k` leaves.
pub fn expected_proof_len(k: u32) -> usize {
    if k <= 1 {
        0
    } else {
        (k.next_power_of_two().trailing_zeros()) as usize
    }
}

/// Fold `leaf` with the off-path digests (directions from the bits of `i`)
/// and compare against `root`. Returns false on malformed inputs rather than
/// erroring.
pub fn verify(root: &HashValue, i: u32, leaf: &HashValue, proof: &MerkleProof) -> bool {
    let depth = proof.siblings.len();
    if depth >= 32 || (depth < 32 && (i as u64) >> depth != 0) {
        return false;
    }
    if proof.siblings.is_empty() {
        return single_hash(leaf) == *root;
    }
    let mut acc = *leaf;
    let mut idx = i;
    for sib in &proof.siblings {
        acc = if idx & 1 == 0 {
            node_hash(&acc, sib)
        } else {
            node_hash(sib, &acc)
        };
        idx >>= 1;
    }
    acc == *root
}

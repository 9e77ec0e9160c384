//! Parallel-chain proof-of-work consensus: `k` Nakamoto-style chains bound
//! together by a Merkle commitment over chain tips, with a rank-based total
//! order across chains. Ships with a deterministic tick-driven network
//! simulator, pluggable byzantine strategies, a reference single-chain
//! Nakamoto implementation, and a GHOST balance-attack study.

pub mod chainstore;
pub mod cli;
pub mod conflux;
pub mod consensus;
pub mod hash_oracle;
pub mod merkle;
pub mod nakamoto;
pub mod simnet;

pub use chainstore::{Attachment, Block, InsertOutcome, NodeState};
pub use consensus::{ConfirmView, ProcessOutcome, ScbEntry};
pub use hash_oracle::{HashOracle, HashValue, MiningMode, ProtocolParams};
pub use merkle::{MerkleProof, MerkleTree};
pub use simnet::{run, RunReport, SimConfig};

//! Random-oracle hash model: PoW validity, block-to-chain assignment, and
//! two mining modes. `RealHash` hashes candidate blocks and checks leading
//! zeros; `Oracle` replaces the hash with a seeded Bernoulli draw per query
//! and synthesizes a digest consistent with the PoW and chain-assignment
//! rules, so large simulations do not pay for real proof-of-work.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chainstore::Block;

pub const HASH_BYTES: usize = 32;

/// Domain-separation prefix for block hashing (the paper's H1).
const BLOCK_DOMAIN: u8 = 0x01;
/// Domain-separation prefix for Merkle interior nodes (the paper's H2).
pub(crate) const MERKLE_DOMAIN: u8 = 0x02;

/// A 256-bit digest. Comparable for equality and ordered lexicographically.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HashValue(pub [u8; HASH_BYTES]);

impl HashValue {
    pub const ZERO: HashValue = HashValue([0u8; HASH_BYTES]);

    /// Number of leading zero bits.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut count = 0;
        for byte in self.0 {
            if byte == 0 {
                count += 8;
            } else {
                count += byte.leading_zeros();
                break;
            }
        }
        count
    }

    /// The trailing 48 bits interpreted as a big-endian unsigned integer.
    pub fn last48(&self) -> u64 {
        let mut x = 0u64;
        for &b in &self.0[HASH_BYTES - 6..] {
            x = (x << 8) | b as u64;
        }
        x
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        let arr: [u8; HASH_BYTES] = bytes
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(HashValue(arr))
    }
}

impl fmt::Debug for HashValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashValue({})", &self.to_hex()[..16])
    }
}

impl Serialize for HashValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for HashValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        HashValue::from_hex(&s).map_err(D::Error::custom)
    }
}

/// Protocol constants: chain count `k`, per-chain per-query success
/// probability `p`, hash width `lambda`, confirmation depth `t`, and the
/// block-interval multiplier `c` used when deriving `p` from the network
/// parameters. The PoW difficulty `d = log2(1/(k*p))` is derived.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProtocolParams {
    pub k: u32,
    pub p: f64,
    #[serde(default = "default_lambda")]
    pub lambda: u32,
    pub t: u64,
    #[serde(default = "default_c")]
    pub c: u32,
}

fn default_lambda() -> u32 {
    256
}

fn default_c() -> u32 {
    5
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("k must be >= 1")]
    BadK,
    #[error("p must be in (0, 1]")]
    BadP,
    #[error("T must be >= 1")]
    BadT,
    #[error("lambda must be in [48, 256]")]
    BadLambda,
    #[error("d + ceil(log2 k) = {0} exceeds lambda = {1}")]
    DifficultyTooLarge(u32, u32),
    #[error("real-hash mode requires k*p to be an exact power of two (got {0})")]
    NonIntegerDifficulty(f64),
}

impl ProtocolParams {
    pub fn new(k: u32, p: f64, t: u64) -> Self {
        ProtocolParams {
            k,
            p,
            lambda: default_lambda(),
            t,
            c: default_c(),
        }
    }

    /// Leading-zero requirement, `log2(1/(k*p))` rounded to the nearest
    /// integer and clamped to at least 1.
    pub fn d(&self) -> u32 {
        let d = -(self.k as f64 * self.p).log2();
        (d.round() as i64).max(1) as u32
    }

    pub fn validate(&self, mode: MiningMode) -> Result<(), ParamsError> {
        if self.k < 1 {
            return Err(ParamsError::BadK);
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(ParamsError::BadP);
        }
        if self.t < 1 {
            return Err(ParamsError::BadT);
        }
        if self.lambda < 48 || self.lambda > 256 {
            return Err(ParamsError::BadLambda);
        }
        let d = self.d();
        let log2k = 32 - (self.k - 1).leading_zeros(); // ceil(log2 k), 0 for k=1
        if d + log2k.max(1) > self.lambda || d + 48 > self.lambda {
            return Err(ParamsError::DifficultyTooLarge(d + log2k, self.lambda));
        }
        if mode == MiningMode::RealHash {
            let exact = 2f64.powi(-(d as i32));
            let kp = self.k as f64 * self.p;
            if (kp - exact).abs() > 1e-12 * exact {
                return Err(ParamsError::NonIntegerDifficulty(kp));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    RealHash,
    Oracle,
}

impl Default for MiningMode {
    fn default() -> Self {
        MiningMode::Oracle
    }
}

/// Deterministic digest of a block's canonical serialization.
pub fn hash_block(block: &Block) -> HashValue {
    let mut h = Sha256::new();
    h.update([BLOCK_DOMAIN]);
    h.update(block.canonical_bytes());
    HashValue(h.finalize().into())
}

/// True iff the first `d` bits of `h` are zero.
pub fn is_pow_valid(h: &HashValue, params: &ProtocolParams) -> bool {
    h.leading_zero_bits() >= params.d()
}

/// Chain assignment: trailing 48 bits of the hash, mod `k`. For power-of-two
/// `k` this equals the integer formed by the last `log2 k` bits.
pub fn chain_index(h: &HashValue, k: u32) -> u32 {
    if k == 1 {
        return 0;
    }
    (h.last48() % k as u64) as u32
}

/// Draw a hash uniformly among those that are PoW-valid and assigned to
/// `chain`: `d` leading zero bits, uniform middle, trailing 48 bits drawn
/// uniformly from the residue class of `chain` mod `k`.
pub fn synthesize_for_chain(rng: &mut ChaCha12Rng, params: &ProtocolParams, chain: u32) -> HashValue {
    let mut bytes = [0u8; HASH_BYTES];
    rng.fill(&mut bytes[..]);
    // zero the first d bits
    let d = params.d() as usize;
    let full = d / 8;
    bytes[..full].fill(0);
    if d % 8 != 0 {
        bytes[full] &= 0xffu8 >> (d % 8);
    }
    // encode the chain in the trailing 48 bits
    let k = params.k as u64;
    let span = ((1u64 << 48) - 1 - chain as u64) / k + 1;
    let x = chain as u64 + k * rng.gen_range(0..span);
    for (i, byte) in bytes[HASH_BYTES - 6..].iter_mut().enumerate() {
        *byte = (x >> (8 * (5 - i))) as u8;
    }
    HashValue(bytes)
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle mining attempted in real-hash mode")]
    ModeMismatch,
    #[error(transparent)]
    Params(#[from] ParamsError),
}

/// The shared random oracle. In `Oracle` mode it keeps a registry mapping a
/// block's content digest to the hash value drawn for it at mining time, so
/// that verification is consistent across all nodes of one simulation.
pub struct HashOracle {
    mode: MiningMode,
    registry: HashMap<HashValue, HashValue>,
}

impl HashOracle {
    pub fn new(mode: MiningMode) -> Self {
        HashOracle {
            mode,
            registry: HashMap::new(),
        }
    }

    pub fn mode(&self) -> MiningMode {
        self.mode
    }

    /// One oracle query in `Oracle` mode: succeeds with probability `k*p`;
    /// on success draws a uniform chain and a valid hash for it.
    pub fn attempt_oracle(rng: &mut ChaCha12Rng, params: &ProtocolParams) -> Option<HashValue> {
        let kp = (params.k as f64 * params.p).min(1.0);
        if !rng.gen_bool(kp) {
            return None;
        }
        let chain = if params.k == 1 {
            0
        } else {
            rng.gen_range(0..params.k)
        };
        Some(synthesize_for_chain(rng, params, chain))
    }

    /// One query in `RealHash` mode: hash the candidate and report validity.
    pub fn attempt_real(block: &Block, params: &ProtocolParams) -> Option<HashValue> {
        let h = hash_block(block);
        if is_pow_valid(&h, params) {
            Some(h)
        } else {
            None
        }
    }

    /// One proof-of-work query for a fully assembled candidate block.
    pub fn mining_attempt(
        &mut self,
        rng: &mut ChaCha12Rng,
        params: &ProtocolParams,
        candidate: &Block,
    ) -> Result<Option<HashValue>, OracleError> {
        params.validate(self.mode)?;
        match self.mode {
            MiningMode::RealHash => Ok(Self::attempt_real(candidate, params)),
            MiningMode::Oracle => {
                let res = Self::attempt_oracle(rng, params);
                if let Some(h) = res {
                    self.register(candidate, h);
                }
                Ok(res)
            }
        }
    }

    /// Bind a block's content to an oracle-drawn hash. First registration
    /// wins; the oracle answers consistently afterwards.
    pub fn register(&mut self, block: &Block, h: HashValue) -> HashValue {
        *self.registry.entry(hash_block(block)).or_insert(h)
    }

    /// The paper's `H1.verify`: does `h` equal the oracle's answer for this
    /// block's content?
    pub fn verify(&self, block: &Block, h: &HashValue) -> bool {
        match self.mode {
            MiningMode::RealHash => hash_block(block) == *h,
            MiningMode::Oracle => self.registry.get(&hash_block(block)) == Some(h),
        }
    }
}

/// Seed-derived RNG stream, stable across platforms. Streams are separated
/// by a label and an index so simulated actors never share state.
pub fn derive_rng(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

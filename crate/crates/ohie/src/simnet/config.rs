use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash_oracle::{MiningMode, ParamsError, ProtocolParams};

/// Byzantine strategy plugged into a run. Every strategy spends at most
/// `floor(f*n)` oracle queries per tick and cannot forge proof-of-work.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum AdversaryKind {
    /// No adversarial blocks; still delays every honest message by the
    /// full `delta` (that is the engine's baseline delivery rule).
    None,
    /// Mines honestly and releases immediately; pure extra hash power
    /// plus worst-case propagation.
    HonestShadow,
    /// Selfish-style: mines privately on its own view and dumps the
    /// withheld blocks for chain `i` as soon as an honest block for
    /// chain `i` shows up.
    Withholder,
    /// Mines with the candidate's trailing pointer forged to a genesis
    /// block, in on/off bursts, trying to stall rank catch-up.
    TrailingLiar { burst_ticks: u64, pause_ticks: u64 },
    /// Spends the whole budget but discards every success that the hash
    /// does not land on `target`; tries to overload one chain.
    ChainFocus { target: u32 },
}

impl Default for AdversaryKind {
    fn default() -> Self {
        AdversaryKind::None
    }
}

fn default_payload() -> usize {
    256
}

/// Full description of one simulated run; `run` is a pure function of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: ProtocolParams,
    #[serde(default)]
    pub mode: MiningMode,
    /// Total units of mining power; one unit = one query per tick.
    pub n: u32,
    /// Adversary's share of the power, in [0, 1/2).
    pub f: f64,
    /// Maximum delivery delay for honest messages, in ticks.
    pub delta: u64,
    pub ticks: u64,
    pub seed: u64,
    /// Snapshot interval; 0 means `max(1, ticks / 100)`.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub adversary: AdversaryKind,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Params(#[from] ParamsError),
    #[error("adversary fraction f = {0} must lie in [0, 0.5)")]
    BadFraction(f64),
    #[error("need at least one node")]
    NoNodes,
    #[error("delta must be at least 1 tick")]
    BadDelta,
    #[error("run length must be positive")]
    NoTicks,
    #[error("chain_focus target {target} out of range for k = {k}")]
    BadTarget { target: u32, k: u32 },
    #[error("trailing_liar burst length must be positive")]
    BadBurst,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.params.validate(self.mode)?;
        if !(0.0..0.5).contains(&self.f) {
            return Err(ConfigError::BadFraction(self.f));
        }
        if self.n == 0 {
            return Err(ConfigError::NoNodes);
        }
        if self.delta == 0 {
            return Err(ConfigError::BadDelta);
        }
        if self.ticks == 0 {
            return Err(ConfigError::NoTicks);
        }
        match self.adversary {
            AdversaryKind::ChainFocus { target } if target >= self.params.k => {
                return Err(ConfigError::BadTarget { target, k: self.params.k })
            }
            AdversaryKind::TrailingLiar { burst_ticks, .. } if burst_ticks == 0 => {
                return Err(ConfigError::BadBurst)
            }
            _ => {}
        }
        Ok(())
    }

    /// Honest node count: the non-adversarial power, one node per unit.
    pub fn n_honest(&self) -> u32 {
        ((self.n as f64 * (1.0 - self.f)).round() as u32).max(1)
    }

    /// Adversary oracle queries per tick.
    pub fn adversary_budget(&self) -> u32 {
        (self.f * self.n as f64).floor() as u32
    }

    pub fn checkpoint_interval(&self) -> u64 {
        if self.checkpoint_every > 0 {
            self.checkpoint_every
        } else {
            (self.ticks / 100).max(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SimConfig {
        SimConfig {
            params: ProtocolParams::new(4, 1.0 / 256.0, 4),
            mode: MiningMode::Oracle,
            n: 20,
            f: 0.25,
            delta: 4,
            ticks: 1000,
            seed: 1,
            checkpoint_every: 0,
            adversary: AdversaryKind::Withholder,
            payload_bytes: 64,
        }
    }

    #[test]
    fn valid_config_passes() {
        base().validate().unwrap();
    }

    #[test]
    fn budget_and_honest_split() {
        let c = base();
        assert_eq!(c.adversary_budget(), 5);
        assert_eq!(c.n_honest(), 15);
        assert_eq!(c.checkpoint_interval(), 10);
    }

    #[test]
    fn bad_fields_rejected() {
        let mut c = base();
        c.f = 0.5;
        assert!(c.validate().is_err());
        let mut c = base();
        c.delta = 0;
        assert!(c.validate().is_err());
        let mut c = base();
        c.adversary = AdversaryKind::ChainFocus { target: 4 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let c = base();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<SimConfig>(&t).unwrap(), c);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&j).unwrap(), c);
    }
}

//! Property checkers over a finished run. The underlying guarantees are
//! probabilistic, so every checker reports a violating-window fraction;
//! pass thresholds belong to whoever consumes the verdict. Consistency is
//! the exception: any violation there is fatal.

use serde::{Deserialize, Serialize};

use super::report::{scb_digest_seed, scb_digest_step, RunReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub windows: u64,
    pub violations: u64,
    pub fatal: bool,
}

impl Verdict {
    pub fn fraction(&self) -> f64 {
        if self.windows == 0 {
            0.0
        } else {
            self.violations as f64 / self.windows as f64
        }
    }

    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Guaranteed minimum honest fraction in any depth-T block window.
pub fn quality_rate(f: f64) -> f64 {
    (1.0 - 2.0 * f) / (1.0 - f)
}

/// Every snapshot must be a prefix of the longest final confirmed
/// sequence, and snapshot lengths must respect the observation order:
/// same node / later tick, or different node at least delta+1 ticks
/// later, can never have seen a shorter sequence.
pub fn check_consistency(report: &RunReport) -> Verdict {
    let mut v = Verdict {
        fatal: true,
        ..Default::default()
    };
    // prefix digests of the reference, index = length
    let mut prefix = Vec::with_capacity(report.reference_scb.len() + 1);
    let mut d = scb_digest_seed();
    prefix.push(d);
    for e in &report.reference_scb {
        d = scb_digest_step(&d, &e.entry());
        prefix.push(d);
    }
    for s in &report.snapshots {
        v.windows += 1;
        match prefix.get(s.len as usize) {
            Some(p) if *p == s.digest => {}
            _ => v.violations += 1,
        }
    }
    let delta = report.config.delta;
    for (i, s1) in report.snapshots.iter().enumerate() {
        for s2 in &report.snapshots[i + 1..] {
            let ordered = if s1.node == s2.node {
                s1.tick < s2.tick
            } else {
                s1.tick + delta < s2.tick
            };
            if ordered {
                v.windows += 1;
                if s1.len > s2.len {
                    v.violations += 1;
                }
            }
        }
    }
    v
}

/// Each chain must gain at least T blocks over every 2T/(p*n)-tick span
/// of the checkpoint grid.
pub fn check_growth(report: &RunReport) -> Verdict {
    let mut v = Verdict::default();
    let params = &report.config.params;
    let w = (2.0 * params.t as f64 / (params.p * report.config.n as f64)).ceil() as u64;
    let rows = &report.trace;
    for c in 0..params.k as usize {
        for (i, start) in rows.iter().enumerate() {
            if let Some(end) = rows[i..].iter().find(|r| r.tick >= start.tick + w) {
                v.windows += 1;
                if end.chain_lens[c] - start.chain_lens[c] < params.t {
                    v.violations += 1;
                }
            }
        }
    }
    v
}

/// Every T consecutive blocks on every final chain must contain at least
/// a (1-2f)/(1-f) fraction of honest blocks.
pub fn check_quality(report: &RunReport) -> Verdict {
    let mut v = Verdict::default();
    let t = report.config.params.t as usize;
    let need = quality_rate(report.config.f) * t as f64 - 1e-9;
    for origins in &report.chains_origin {
        if origins.len() < t {
            continue;
        }
        let mut honest = origins[..t].iter().filter(|&&b| b).count();
        v.windows += 1;
        if (honest as f64) < need {
            v.violations += 1;
        }
        for i in t..origins.len() {
            honest += origins[i] as usize;
            honest -= origins[i - t] as usize;
            v.windows += 1;
            if (honest as f64) < need {
                v.violations += 1;
            }
        }
    }
    v
}

/// After a warm-up of 2T/(pn) ticks, every span of (gamma+2)*2T/(pn) + 2*delta
/// ticks must add at least gamma*k*(1-2f)/(1-f)*T honest blocks to the
/// confirmed sequence (observed on node 0's snapshots).
pub fn check_quality_growth(report: &RunReport, gamma: u64) -> Verdict {
    let mut v = Verdict::default();
    let params = &report.config.params;
    let base = 2.0 * params.t as f64 / (params.p * report.config.n as f64);
    let warmup = base.ceil() as u64;
    let w = ((gamma + 2) as f64 * base).ceil() as u64 + 2 * report.config.delta;
    let need = gamma as f64 * params.k as f64 * quality_rate(report.config.f) * params.t as f64
        - 1e-9;
    let rows: Vec<_> = report
        .snapshots
        .iter()
        .filter(|s| s.node == 0)
        .collect();
    for (i, start) in rows.iter().enumerate() {
        if start.tick < warmup {
            continue;
        }
        if let Some(end) = rows[i..].iter().find(|r| r.tick >= start.tick + w) {
            v.windows += 1;
            if (end.honest_len.saturating_sub(start.honest_len) as f64) < need {
                v.violations += 1;
            }
        }
    }
    v
}

/// Rank catch-up under bursty trailing forgery: for every burst, the first
/// honest block mined on each chain after the burst (plus the delivery
/// bound) must leave its chain's tip next_rank at the maximum across
/// chains, i.e. a post-mining deficit of zero (gap at most one once
/// concurrent mining elsewhere is counted).
pub fn check_rank_catch_up(report: &RunReport) -> Verdict {
    let mut v = Verdict::default();
    let k = report.config.params.k;
    let delta = report.config.delta;
    for &b in &report.burst_ends {
        for chain in 0..k {
            if let Some(e) = report
                .mine_events
                .iter()
                .find(|e| e.chain == chain && e.tick > b + delta)
            {
                v.windows += 1;
                if e.post_deficit > 1 {
                    v.violations += 1;
                }
            }
        }
    }
    v
}

pub fn run_all(report: &RunReport, gamma: u64) -> Vec<(&'static str, Verdict)> {
    vec![
        ("consistency", check_consistency(report)),
        ("growth", check_growth(report)),
        ("quality", check_quality(report)),
        ("quality_growth", check_quality_growth(report, gamma)),
        ("rank_catch_up", check_rank_catch_up(report)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hash_oracle::{MiningMode, ProtocolParams};
    use crate::simnet::config::{AdversaryKind, SimConfig};
    use crate::simnet::engine::run;

    fn report(k: u32, f: f64, t: u64, adversary: AdversaryKind, ticks: u64) -> RunReport {
        let n = 10;
        let delta = 2;
        let config = SimConfig {
            params: ProtocolParams::new(k, 1.0 / (5.0 * delta as f64 * n as f64 * k as f64), t),
            mode: MiningMode::Oracle,
            n,
            f,
            delta: delta as u64,
            ticks,
            seed: 7,
            checkpoint_every: 0,
            adversary,
            payload_bytes: 32,
        };
        run(&config).unwrap()
    }

    #[test]
    fn quality_rate_arithmetic() {
        assert!((quality_rate(0.0) - 1.0).abs() < 1e-12);
        assert!((quality_rate(1.0 / 3.0) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn clean_run_passes_consistency_and_quality() {
        let r = report(2, 0.0, 4, AdversaryKind::None, 8000);
        let cons = check_consistency(&r);
        assert!(cons.ok(), "{cons:?}");
        assert!(cons.windows > 0);
        // f = 0: every block honest, threshold = T
        let q = check_quality(&r);
        assert!(q.ok(), "{q:?}");
    }

    #[test]
    fn withholder_run_stays_consistent() {
        let r = report(4, 0.3, 6, AdversaryKind::Withholder, 10_000);
        assert!(check_consistency(&r).ok());
        assert!(r.attachment_determinism_ok);
    }

    #[test]
    fn consistency_flags_tampered_snapshot() {
        let mut r = report(2, 0.0, 4, AdversaryKind::None, 3000);
        let last = r.snapshots.len() - 1;
        r.snapshots[last].len += 1;
        assert!(!check_consistency(&r).ok());
    }

    #[test]
    fn trailing_liar_catch_up_holds() {
        let r = report(
            4,
            0.3,
            4,
            AdversaryKind::TrailingLiar {
                burst_ticks: 500,
                pause_ticks: 500,
            },
            10_000,
        );
        let v = check_rank_catch_up(&r);
        assert!(v.windows > 0);
        assert!(v.ok(), "{v:?}");
    }
}

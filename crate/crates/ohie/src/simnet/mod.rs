//! Deterministic tick-driven network simulator: honest nodes get one
//! proof-of-work query per tick, the adversary gets `floor(f*n)` queries
//! and mediates all message delivery within a `delta`-tick bound.

pub mod adversary;
pub mod checks;
pub mod config;
pub mod engine;
pub mod report;

pub use config::{AdversaryKind, SimConfig};
pub use engine::run;
pub use report::{RunReport, ScbSnapshot, TraceRow};

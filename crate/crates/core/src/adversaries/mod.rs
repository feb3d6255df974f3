//! Fault plans, Byzantine strategies and the single-round mirror attack.

pub mod mirror;
mod plan;
pub mod strategies;

pub use mirror::{compute_target_index, mirror_attack, AttackReport, SingleRoundProtocol, SkipOne, SkipProfile};
pub use plan::{crash_cut, Behavior, CorruptSchedule, CrashPoint, DelayPolicy, FaultKind, FaultPlan};

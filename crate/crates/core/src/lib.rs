//! Simulator for the Data Retrieval model: k peers on a clique download an
//! n-bit input from a shared read-only source while some peers are faulty.

pub mod adversaries;
pub mod async_sim;
pub mod bits;
pub mod byz_download;
pub mod crash_async;
pub mod crash_sync;
pub mod error;
pub mod event;
pub mod fast_download;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod sifting;
pub mod source;
pub mod sync_sim;
pub mod trivial;

pub use bits::{BitString, PartialBits};
pub use error::SimError;
pub use metrics::{Recipients, RunMetrics, Stamp};
pub use model::{AdversaryId, CommMode, InputVector, PeerId, ProtocolId, Ratio, SimConfig, Timing};

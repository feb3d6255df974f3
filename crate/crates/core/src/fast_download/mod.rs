//! Download protocols that trade messages for fewer queries: two rounds,
//! interval doubling, and interval doubling with boosting for the broadcast
//! model.

pub mod boost;
pub mod compress;
pub mod logn;
pub mod scheme;
pub mod two_round;

pub use boost::{boosted_flood_plan, boosted_layout, boosted_peers, schedule, BoostedPeer, Step, UStat};
pub use compress::{compress_all, Compressed, Draw, RecordingRng, ReplayRng, Transcript};
pub use logn::{logn_flood_plan, logn_layout, logn_peers, LogNPeer};
pub use scheme::{
    level_threshold, select_phi_2round, two_round_plan, Claim, FloodPlan, FsTree, Layout, TwoRoundPlan,
};
pub use two_round::{two_round_flood_plan, two_round_peers, TwoRoundPeer};

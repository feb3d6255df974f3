//! The baseline: every peer reads the whole input in one round.

use crate::bits::BitString;
use crate::error::SimError;
use crate::model::{PeerId, SimConfig};
use crate::sync_sim::{MessageCtx, Payload, QueryCtx, SyncPeer, Wire};

/// Never sent; the baseline needs no communication.
#[derive(Clone, Debug)]
pub enum NoMsg {}

impl Payload for NoMsg {
    fn payload_bits(&self, _: Wire) -> u64 {
        match *self {}
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryAllPeer {
    n: usize,
    output: Option<BitString>,
}

impl QueryAllPeer {
    pub fn new(n: usize) -> Self {
        QueryAllPeer { n, output: None }
    }
}

impl SyncPeer for QueryAllPeer {
    type Msg = NoMsg;

    fn on_query(&mut self, ctx: &mut QueryCtx<'_, NoMsg>) -> Result<(), SimError> {
        if self.output.is_none() {
            ctx.query_range(1, self.n);
        }
        Ok(())
    }

    fn on_message(&mut self, ctx: &mut MessageCtx<'_, NoMsg>) -> Result<(), SimError> {
        if let Some(bits) = ctx.answers.range(1) {
            self.output = Some(bits.clone());
        }
        Ok(())
    }

    fn output(&self) -> Option<&BitString> {
        self.output.as_ref()
    }
}

pub fn query_all_peers(cfg: &SimConfig) -> Vec<QueryAllPeer> {
    PeerId::all(cfg.k).map(|_| QueryAllPeer::new(cfg.n)).collect()
}

//! Event cloud: content-based forwarding plus a queryable history.

mod broker;
pub mod persist;
mod store;

use thiserror::Error;

use crate::event::{Event, EventError};
use crate::pattern::{MatchError, Pattern};

pub use broker::{Broker, SubscriberRef, SubscriptionId};
pub use store::{shard_of, shard_of_etype, HistoryStore};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
    #[error("invalid range [{from}, {to})")]
    InvalidRange { from: u64, to: u64 },
    #[error("n_shards must be at least 1")]
    InvalidShardCount,
    #[error("event has no sequence number")]
    MissingSeq,
    #[error("duplicate sequence number {0}")]
    DuplicateSeq(u64),
    #[error("event at ts {ts} arrives after deliveries were sealed through {sealed_through}")]
    Late { ts: u64, sealed_through: u64 },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("run log line {line}: {source}")]
    Log { line: usize, source: EventError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read access to stored events, as needed by rules that look back in time.
pub trait EventHistory {
    fn query_history(&self, from: u64, to: u64, pattern: &Pattern) -> Result<Vec<Event>, CloudError>;
}

impl EventHistory for HistoryStore {
    fn query_history(&self, from: u64, to: u64, pattern: &Pattern) -> Result<Vec<Event>, CloudError> {
        self.query(from, to, pattern)
    }
}

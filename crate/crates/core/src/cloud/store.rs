use std::collections::{BTreeMap, HashSet};

use crate::event::Event;
use crate::pattern::Pattern;

use super::CloudError;

/// Shard index of an event: FNV-1a over the event type, so every event of a
/// given type lands in the same shard on every run and platform.
pub fn shard_of(event: &Event, n_shards: usize) -> usize {
    shard_of_etype(&event.etype, n_shards)
}

pub fn shard_of_etype(etype: &str, n_shards: usize) -> usize {
    assert!(n_shards >= 1, "n_shards must be at least 1");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in etype.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (hash % n_shards as u64) as usize
}

#[derive(Debug, Default, Clone)]
struct Shard {
    log: Vec<Event>,
    /// (ts, seq) -> position in `log`.
    index: BTreeMap<(u64, u64), usize>,
}

/// Append-only, time-indexed event history split into per-etype shards.
#[derive(Debug, Clone)]
pub struct HistoryStore {
    shards: Vec<Shard>,
    seqs: HashSet<u64>,
}

impl HistoryStore {
    pub fn new(n_shards: usize) -> Result<Self, CloudError> {
        if n_shards == 0 {
            return Err(CloudError::InvalidShardCount);
        }
        Ok(HistoryStore { shards: vec![Shard::default(); n_shards], seqs: HashSet::new() })
    }

    /// Rebuilds a store from events that already carry sequence numbers,
    /// e.g. a replayed run log.
    pub fn from_events(n_shards: usize, events: impl IntoIterator<Item = Event>) -> Result<Self, CloudError> {
        let mut store = HistoryStore::new(n_shards)?;
        for event in events {
            store.append(event)?;
        }
        Ok(store)
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn shard_len(&self, shard: usize) -> usize {
        self.shards[shard].log.len()
    }

    pub fn append(&mut self, event: Event) -> Result<(), CloudError> {
        let seq = event.seq.ok_or(CloudError::MissingSeq)?;
        if !self.seqs.insert(seq) {
            return Err(CloudError::DuplicateSeq(seq));
        }
        let idx = shard_of(&event, self.shards.len());
        let shard = &mut self.shards[idx];
        shard.index.insert((event.ts, seq), shard.log.len());
        shard.log.push(event);
        Ok(())
    }

    /// Events with `ts` in `[from, to)` matching `pattern`, ordered by
    /// `(ts, source, seq)`.
    pub fn query(&self, from: u64, to: u64, pattern: &Pattern) -> Result<Vec<Event>, CloudError> {
        if from > to {
            return Err(CloudError::InvalidRange { from, to });
        }
        let mut out = Vec::new();
        if from == to {
            return Ok(out);
        }
        let wanted: Option<HashSet<usize>> = pattern
            .etype_filter
            .as_ref()
            .map(|etypes| etypes.iter().map(|t| shard_of_etype(t, self.shards.len())).collect());
        for (i, shard) in self.shards.iter().enumerate() {
            if wanted.as_ref().is_some_and(|w| !w.contains(&i)) {
                continue;
            }
            for (_, &pos) in shard.index.range((from, 0)..(to, 0)) {
                let event = &shard.log[pos];
                if pattern.matches(event)? {
                    out.push(event.clone());
                }
            }
        }
        sort_for_delivery(&mut out);
        Ok(out)
    }

    /// Every stored event in publish (seq) order.
    pub fn events_by_seq(&self) -> Vec<Event> {
        let mut all: Vec<Event> = self.shards.iter().flat_map(|s| s.log.iter().cloned()).collect();
        all.sort_by_key(|e| e.seq);
        all
    }
}

pub(crate) fn sort_for_delivery(events: &mut [Event]) {
    events.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}

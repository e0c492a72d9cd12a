use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::event::Event;
use crate::pattern::Pattern;

use super::store::HistoryStore;
use super::{CloudError, EventHistory};

/// Delivery callback. Must not publish back into the same broker
/// synchronously; hand the event to a queue instead.
pub type SubscriberRef = Arc<dyn Fn(&Arc<Event>) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubscriptionId(pub u64);

#[derive(Clone)]
struct Subscription {
    pattern: Pattern,
    subscriber: SubscriberRef,
    /// First seq this subscription may see; nothing retroactive.
    from_seq: u64,
    active: Arc<AtomicBool>,
}

type PendingKey = (u64, String, u64);

struct State {
    next_seq: u64,
    store: HistoryStore,
    subscriptions: BTreeMap<SubscriptionId, Subscription>,
    next_subscription: u64,
    pending: BTreeMap<PendingKey, Arc<Event>>,
    sealed_through: Option<u64>,
}

/// Content-based publish/subscribe broker with an event history.
///
/// `publish` stores the event and stages it for delivery; `flush` hands
/// every staged event to the matching subscriptions in `(ts, source, seq)`
/// order and seals those timestamps. Publishing at or before a sealed
/// timestamp is rejected, which is what keeps per-subscriber delivery
/// ordered across flushes.
pub struct Broker {
    state: Mutex<State>,
    delivery: Mutex<()>,
}

impl Broker {
    pub fn new(n_shards: usize) -> Result<Self, CloudError> {
        Ok(Broker {
            state: Mutex::new(State {
                next_seq: 1,
                store: HistoryStore::new(n_shards)?,
                subscriptions: BTreeMap::new(),
                next_subscription: 1,
                pending: BTreeMap::new(),
                sealed_through: None,
            }),
            delivery: Mutex::new(()),
        })
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn publish(&self, mut event: Event) -> Result<u64, CloudError> {
        if event.seq.is_some() {
            return Err(CloudError::InvalidEvent("seq already assigned".into()));
        }
        event.validate().map_err(|e| CloudError::InvalidEvent(e.to_string()))?;
        let mut state = self.state();
        if let Some(sealed) = state.sealed_through {
            if event.ts <= sealed {
                return Err(CloudError::Late { ts: event.ts, sealed_through: sealed });
            }
        }
        let seq = state.next_seq;
        state.next_seq += 1;
        event.seq = Some(seq);
        let event = Arc::new(event);
        state.store.append(Event::clone(&event))?;
        state.pending.insert((event.ts, event.source.clone(), seq), event);
        Ok(seq)
    }

    /// Publishes and immediately delivers.
    pub fn publish_now(&self, event: Event) -> Result<u64, CloudError> {
        let seq = self.publish(event)?;
        self.flush();
        Ok(seq)
    }

    /// Delivers every staged event; returns how many events were flushed.
    pub fn flush(&self) -> usize {
        let _delivering = self.delivery.lock().unwrap_or_else(|p| p.into_inner());
        let (batch, subscriptions) = {
            let mut state = self.state();
            if state.pending.is_empty() {
                return 0;
            }
            let batch = std::mem::take(&mut state.pending);
            let max_ts = batch.keys().next_back().map(|k| k.0);
            state.sealed_through = state.sealed_through.max(max_ts);
            let subs: Vec<Subscription> = state.subscriptions.values().cloned().collect();
            (batch, subs)
        };
        for event in batch.values() {
            let seq = event.seq.unwrap_or(0);
            for sub in &subscriptions {
                if seq < sub.from_seq || !sub.active.load(Ordering::Acquire) {
                    continue;
                }
                // An incomparable predicate is a non-match for delivery.
                if sub.pattern.matches(event).unwrap_or(false) {
                    (sub.subscriber)(event);
                }
            }
        }
        batch.len()
    }

    pub fn subscribe(&self, pattern: Pattern, subscriber: SubscriberRef) -> SubscriptionId {
        let mut state = self.state();
        let id = SubscriptionId(state.next_subscription);
        state.next_subscription += 1;
        let from_seq = state.next_seq;
        state.subscriptions.insert(
            id,
            Subscription { pattern, subscriber, from_seq, active: Arc::new(AtomicBool::new(true)) },
        );
        id
    }

    /// Subscribes with an unbounded channel as the delivery queue.
    pub fn subscribe_channel(&self, pattern: Pattern) -> (SubscriptionId, Receiver<Arc<Event>>) {
        let (tx, rx) = mpsc::channel();
        let tx = Mutex::new(tx);
        let id = self.subscribe(
            pattern,
            Arc::new(move |e: &Arc<Event>| {
                let _ = tx.lock().map(|tx| tx.send(Arc::clone(e)));
            }),
        );
        (id, rx)
    }

    pub fn unsubscribe(&self, id: SubscriptionId) -> Result<(), CloudError> {
        let removed = self.state().subscriptions.remove(&id);
        match removed {
            Some(sub) => {
                sub.active.store(false, Ordering::Release);
                Ok(())
            }
            None => Err(CloudError::UnknownSubscription(id.0)),
        }
    }

    pub fn subscription_count(&self) -> usize {
        self.state().subscriptions.len()
    }

    pub fn query_history(&self, from: u64, to: u64, pattern: &Pattern) -> Result<Vec<Event>, CloudError> {
        self.state().store.query(from, to, pattern)
    }

    /// Full log in publish order.
    pub fn log(&self) -> Vec<Event> {
        self.state().store.events_by_seq()
    }

    pub fn len(&self) -> usize {
        self.state().store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_seq(&self) -> u64 {
        self.state().next_seq - 1
    }

    pub fn sealed_through(&self) -> Option<u64> {
        self.state().sealed_through
    }
}

impl EventHistory for Broker {
    fn query_history(&self, from: u64, to: u64, pattern: &Pattern) -> Result<Vec<Event>, CloudError> {
        Broker::query_history(self, from, to, pattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;
    use crate::event::etype;

    fn alert(ts: u64) -> Event {
        Event::new(etype::ALERT_RSN, "dcep", ts, attrs! {"sensor" => "rsn-001"})
    }

    fn measure(source: &str, ts: u64) -> Event {
        Event::new(etype::RADIATION_MEASURE, source, ts, attrs! {"value" => 0.5})
    }

    #[test]
    fn first_seq_is_one() {
        let b = Broker::new(1).unwrap();
        assert_eq!(b.publish(alert(0)).unwrap(), 1);
        assert_eq!(b.publish(alert(0)).unwrap(), 2);
    }

    #[test]
    fn rejects_assigned_seq() {
        let b = Broker::new(1).unwrap();
        let mut e = alert(0);
        e.seq = Some(4);
        assert!(matches!(b.publish(e), Err(CloudError::InvalidEvent(_))));
    }

    #[test]
    fn single_match_delivered_once() {
        let b = Broker::new(2).unwrap();
        let (_, rx) = b.subscribe_channel(Pattern::etype(etype::ALERT_RSN));
        b.publish(measure("rsn-001", 0)).unwrap();
        let seq = b.publish(alert(0)).unwrap();
        b.flush();
        b.flush();
        let got: Vec<_> = rx.try_iter().collect();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].seq, Some(seq));
    }

    #[test]
    fn no_retroactive_delivery() {
        let b = Broker::new(1).unwrap();
        b.publish_now(alert(0)).unwrap();
        let (_, rx) = b.subscribe_channel(Pattern::etype(etype::ALERT_RSN));
        b.flush();
        assert_eq!(rx.try_iter().count(), 0);
        // Staged but unflushed events published before subscribing are not delivered either.
        b.publish(alert(1)).unwrap();
        let (_, rx2) = b.subscribe_channel(Pattern::any());
        b.flush();
        assert_eq!(rx2.try_iter().count(), 0);
        assert_eq!(b.query_history(0, 2, &Pattern::any()).unwrap().len(), 2);
    }

    #[test]
    fn unsubscribe_twice_fails() {
        let b = Broker::new(1).unwrap();
        let (id, rx) = b.subscribe_channel(Pattern::any());
        b.unsubscribe(id).unwrap();
        assert!(matches!(b.unsubscribe(id), Err(CloudError::UnknownSubscription(_))));
        b.publish_now(alert(0)).unwrap();
        assert_eq!(rx.try_iter().count(), 0);
    }

    #[test]
    fn flush_orders_by_ts_source_seq() {
        let b = Broker::new(4).unwrap();
        let (_, rx) = b.subscribe_channel(Pattern::any());
        b.publish(measure("rsn-002", 30)).unwrap();
        b.publish(measure("rsn-001", 30)).unwrap();
        b.publish(alert(30)).unwrap();
        b.publish(measure("rsn-001", 0)).unwrap();
        b.flush();
        let keys: Vec<_> = rx.try_iter().map(|e| (e.ts, e.source.clone())).collect();
        assert_eq!(
            keys,
            [(0, "rsn-001".into()), (30, "dcep".into()), (30, "rsn-001".into()), (30, "rsn-002".into())]
        );
    }

    #[test]
    fn sealed_timestamps_reject_late_events() {
        let b = Broker::new(1).unwrap();
        b.publish_now(alert(60)).unwrap();
        assert!(matches!(b.publish(alert(60)), Err(CloudError::Late { .. })));
        assert!(matches!(b.publish(alert(10)), Err(CloudError::Late { .. })));
        assert!(b.publish(alert(61)).is_ok());
    }

    #[test]
    fn ten_per_minute_from_five_sensors() {
        let b = Broker::new(4).unwrap();
        let before = b.last_seq();
        for ts in [0, 30_000] {
            for i in 1..=5 {
                b.publish(measure(&format!("rsn-00{i}"), ts)).unwrap();
            }
            b.flush();
        }
        assert_eq!(b.last_seq() - before, 10);
        assert_eq!(b.query_history(0, 60_000, &Pattern::etype(etype::RADIATION_MEASURE)).unwrap().len(), 10);
    }

    #[test]
    fn concurrent_publishers_get_unique_seqs() {
        let b = Arc::new(Broker::new(4).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let b = Arc::clone(&b);
                std::thread::spawn(move || {
                    (0..250).map(|_| b.publish(measure(&format!("s{t}"), 5)).unwrap()).collect::<Vec<_>>()
                })
            })
            .collect();
        let mut seqs: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (1..=1000).collect::<Vec<_>>());
    }
}

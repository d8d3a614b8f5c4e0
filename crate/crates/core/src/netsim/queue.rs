use std::collections::BTreeMap;

/// Handle for cancelling a scheduled event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub due: u64,
    pub seq: u64,
}

/// Events ordered by `(due, seq)`; `seq` is the insertion counter, so equal
/// due ticks pop in insertion order.
#[derive(Debug, Clone)]
pub struct EventQueue<E> {
    now: u64,
    next_seq: u64,
    events: BTreeMap<EventKey, E>,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue { now: 0, next_seq: 0, events: BTreeMap::new() }
    }
}

impl<E> EventQueue<E> {
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn schedule_at(&mut self, due: u64, event: E) -> EventKey {
        let key = EventKey { due: due.max(self.now), seq: self.next_seq };
        self.next_seq += 1;
        self.events.insert(key, event);
        key
    }

    pub fn schedule_in(&mut self, delay: u64, event: E) -> EventKey {
        self.schedule_at(self.now + delay, event)
    }

    pub fn cancel(&mut self, key: EventKey) -> Option<E> {
        self.events.remove(&key)
    }

    pub fn peek_due(&self) -> Option<u64> {
        self.events.keys().next().map(|k| k.due)
    }

    /// Removes the earliest event and advances the clock to its due tick.
    pub fn pop(&mut self) -> Option<(EventKey, E)> {
        let (key, event) = self.events.pop_first()?;
        self.now = key.due;
        Some((key, event))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EventKey, &E)> {
        self.events.iter()
    }
}

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::SimTime;

/// Identifies a scheduled event so it can be cancelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle {
    fire_at: SimTime,
    seq: u64,
}

impl EventHandle {
    pub fn fire_at(&self) -> SimTime {
        self.fire_at
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

/// A dispatched event.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub payload: P,
}

struct Entry<P> {
    fire_at: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the smallest (fire_at, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}

/// Event queue with a monotone clock. Events fire in `(fire_at, seq)` order,
/// where `seq` is the insertion counter, so simultaneous events dispatch in
/// the order they were scheduled.
pub struct EventQueue<P> {
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    now: SimTime,
    next_seq: u64,
    last_dispatched: Option<(SimTime, u64)>,
    halted: bool,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            now: SimTime::ZERO,
            next_seq: 0,
            last_dispatched: None,
            halted: false,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still waiting, cancelled ones excluded.
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Schedules `payload` at `at`.
    ///
    /// Panics if `at` lies before the current clock: that is a bug in the
    /// caller and the run cannot be trusted past it.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> EventHandle {
        assert!(
            at >= self.now,
            "event scheduled in the past: at={} now={}",
            at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry {
            fire_at: at,
            seq,
            payload,
        });
        EventHandle { fire_at: at, seq }
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> EventHandle {
        self.schedule(self.now + delay, payload)
    }

    /// Removes a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.seq >= self.next_seq {
            return false;
        }
        if let Some(last) = self.last_dispatched {
            if (handle.fire_at, handle.seq) <= last {
                return false;
            }
        }
        self.cancelled.insert(handle.seq)
    }

    /// Payloads of events still waiting, in no particular order.
    pub fn pending_payloads(&self) -> impl Iterator<Item = &P> {
        self.heap
            .iter()
            .filter(|e| !self.cancelled.contains(&e.seq))
            .map(|e| &e.payload)
    }

    /// Makes the running `run_until` return after the current dispatch.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    /// Pops the next live event with `fire_at <= end` and advances the clock.
    pub fn pop_until(&mut self, end: SimTime) -> Option<Event<P>> {
        while let Some(top) = self.heap.peek() {
            if top.fire_at > end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked entry");
            if !self.cancelled.is_empty() && self.cancelled.remove(&entry.seq) {
                continue;
            }
            debug_assert!(entry.fire_at >= self.now, "clock went backwards");
            self.now = entry.fire_at;
            self.last_dispatched = Some((entry.fire_at, entry.seq));
            return Some(Event {
                fire_at: entry.fire_at,
                seq: entry.seq,
                payload: entry.payload,
            });
        }
        None
    }

    /// Dispatches every event with `fire_at <= end` to `handler`, which may
    /// schedule or cancel further events. Returns the dispatch count.
    ///
    /// On normal completion the clock is left at `end`. If the handler calls
    /// [`halt`](Self::halt) the clock stays at the last dispatched event.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        self.halted = false;
        let mut count = 0;
        while let Some(ev) = self.pop_until(end) {
            count += 1;
            handler(self, ev);
            if self.halted {
                return count;
            }
        }
        if end > self.now {
            self.now = end;
        }
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_at_current_time_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime::ZERO, "a");
        assert_eq!(h.fire_at(), SimTime::ZERO);
        let mut seen = vec![];
        q.run_until(SimTime::ZERO, |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec!["a"]);
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn schedule_in_past_aborts() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(SimTime(10), |_, _| {});
        q.schedule(SimTime(5), ());
    }

    #[test]
    fn empty_queue_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let n = q.run_until(SimTime::from_secs(10), |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(q.now(), SimTime::from_secs(10));
    }

    #[test]
    fn same_time_events_keep_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(2), "first t2");
        q.schedule(SimTime(1), "t1");
        q.schedule(SimTime(2), "second t2");
        let mut seen = vec![];
        let n = q.run_until(SimTime(5), |_, ev| seen.push(ev.payload));
        assert_eq!(n, 3);
        assert_eq!(seen, vec!["t1", "first t2", "second t2"]);
    }

    #[test]
    fn cancel_semantics() {
        let mut q = EventQueue::new();
        let a = q.schedule(SimTime(1), 'a');
        let b = q.schedule(SimTime(2), 'b');
        assert!(q.cancel(b));
        assert!(!q.cancel(b));
        let mut seen = vec![];
        q.run_until(SimTime(10), |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec!['a']);
        assert!(!q.cancel(a));
        assert_eq!(q.pending(), 0);
    }

    #[test]
    fn cancel_same_time_event_scheduled_during_dispatch() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(1), 0u32);
        let mut handle = None;
        let mut seen = vec![];
        q.run_until(SimTime(1), |q, ev| {
            seen.push(ev.payload);
            if ev.payload == 0 {
                let h = q.schedule(SimTime(1), 1);
                q.schedule(SimTime(1), 2);
                assert!(q.cancel(h));
                handle = Some(h);
            }
        });
        assert_eq!(seen, vec![0, 2]);
        assert!(!q.cancel(handle.unwrap()));
    }

    #[test]
    fn halt_stops_early() {
        let mut q = EventQueue::new();
        for t in 1..=5 {
            q.schedule(SimTime(t), t);
        }
        let n = q.run_until(SimTime(100), |q, ev| {
            if ev.payload == 3 {
                q.halt();
            }
        });
        assert_eq!(n, 3);
        assert_eq!(q.now(), SimTime(3));
        assert_eq!(q.pending(), 2);
    }

    proptest! {
        #[test]
        fn dispatch_matches_sorted_oracle(
            times in proptest::collection::vec(0u64..50, 0..200),
            cancel_mask in proptest::collection::vec(any::<bool>(), 200),
        ) {
            let mut q = EventQueue::new();
            let mut expected: Vec<(u64, usize)> = Vec::new();
            for (i, &t) in times.iter().enumerate() {
                let h = q.schedule(SimTime(t), i);
                if cancel_mask[i] {
                    prop_assert!(q.cancel(h));
                } else {
                    expected.push((t, i));
                }
            }
            // Stable sort by time keeps insertion order among ties.
            expected.sort_by_key(|&(t, _)| t);
            let mut got = Vec::new();
            let mut last = SimTime::ZERO;
            q.run_until(SimTime(100), |_, ev| {
                assert!(ev.fire_at >= last);
                last = ev.fire_at;
                got.push((ev.fire_at.0, ev.payload));
            });
            prop_assert_eq!(got, expected);
        }
    }
}

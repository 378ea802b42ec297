use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::{NodeId, SimTime};

/// Handle returned by [`EventQueue::schedule`]; used to cancel the event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// A scheduled event as handed to the dispatcher.
#[derive(Clone, Debug)]
pub struct Event<K> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: NodeId,
    pub kind: K,
}

struct Entry<K>(Event<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.0.seq == other.0.seq
    }
}

impl<K> Eq for Entry<K> {}

impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<K> Ord for Entry<K> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.fire_at, other.0.seq).cmp(&(self.0.fire_at, self.0.seq))
    }
}

/// Priority queue of events ordered by `(fire_at, seq)` plus the clock.
pub struct EventQueue<K> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<K>>,
    cancelled: HashSet<u64>,
    processed: u64,
}

impl<K> Default for EventQueue<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> EventQueue<K> {
    pub fn new() -> Self {
        EventQueue {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            processed: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Events still pending (cancelled ones included until they surface).
    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Total events handed out by [`EventQueue::pop_until`].
    pub fn processed(&self) -> u64 {
        self.processed
    }

    /// Schedules `kind` for `target` at `fire_at`.
    ///
    /// # Panics
    /// If `fire_at` lies before the current clock.
    pub fn schedule(&mut self, fire_at: SimTime, target: NodeId, kind: K) -> EventHandle {
        assert!(
            fire_at >= self.now,
            "event scheduled in the past: {} < {}",
            fire_at,
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(Event {
            fire_at,
            seq,
            target,
            kind,
        }));
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay_us: u64, target: NodeId, kind: K) -> EventHandle {
        self.schedule(self.now + delay_us, target, kind)
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        self.cancelled.insert(handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock
    /// to its time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<K>> {
        loop {
            let top = self.heap.peek()?;
            if top.0.fire_at > t_end {
                return None;
            }
            let Entry(ev) = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&ev.seq) {
                continue;
            }
            self.now = ev.fire_at;
            self.processed += 1;
            return Some(ev);
        }
    }

    /// Moves the clock forward to `t` without processing anything.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event up to and including `t_end` and leaves the
    /// clock at `t_end`. Returns how many events were handled.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<K>),
    {
        let mut n = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, ev);
            n += 1;
        }
        self.advance_to(t_end);
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(q: &mut EventQueue<&'static str>, t: u64) -> Vec<(u64, &'static str)> {
        let mut out = Vec::new();
        q.run_until(SimTime(t), |q, ev| out.push((q.now().0, ev.kind)));
        out
    }

    #[test]
    fn same_time_fires_first() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(1), 0, "later");
        q.schedule(SimTime(0), 0, "now");
        assert_eq!(drain(&mut q, 5), vec![(0, "now"), (1, "later")]);
    }

    #[test]
    fn ties_break_by_seq() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(2), 0, "a");
        q.schedule(SimTime(1), 0, "b");
        q.schedule(SimTime(2), 0, "c");
        assert_eq!(drain(&mut q, 2), vec![(1, "b"), (2, "a"), (2, "c")]);
    }

    #[test]
    fn cancelled_never_fires() {
        let mut q = EventQueue::new();
        let h = q.schedule(SimTime(3), 0, "gone");
        q.schedule(SimTime(4), 0, "kept");
        assert!(q.cancel(h));
        assert!(!q.cancel(h));
        assert_eq!(drain(&mut q, 10), vec![(4, "kept")]);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        let n = q.run_until(SimTime(1_000_000), |_, _| {});
        assert_eq!(n, 0);
        assert_eq!(q.now(), SimTime(1_000_000));
    }

    #[test]
    fn counts_processed() {
        let mut q = EventQueue::new();
        for t in [1, 2, 2] {
            q.schedule(SimTime(t), 0, "x");
        }
        assert_eq!(q.run_until(SimTime(10), |_, _| {}), 3);
    }

    #[test]
    #[should_panic(expected = "in the past")]
    fn past_schedule_panics() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(5), 0, ());
        q.run_until(SimTime(5), |_, _| {});
        q.schedule(SimTime(4), 0, ());
    }

    #[test]
    fn handler_can_schedule() {
        let mut q = EventQueue::new();
        q.schedule(SimTime(1), 0, 3u32);
        let mut seen = Vec::new();
        q.run_until(SimTime(100), |q, ev| {
            seen.push(ev.fire_at.0);
            if ev.kind > 0 {
                q.schedule_in(10, 0, ev.kind - 1);
            }
        });
        assert_eq!(seen, vec![1, 11, 21, 31]);
    }
}

use std::collections::VecDeque;

use crate::sim::{SimRng, SimTime};

/// RED parameters, in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RedParams {
    pub min_th: f64,
    pub max_th: f64,
    pub max_p: f64,
    pub weight: f64,
    /// Mark (instead of drop) ECN-capable traffic above `max_th`.
    pub mark_above_max: bool,
    /// Typical frame service time, used to decay the average over idle time.
    pub idle_frame_us: u64,
}

impl Default for RedParams {
    fn default() -> Self {
        RedParams {
            min_th: 2.0,
            max_th: 8.0,
            max_p: 0.1,
            weight: 0.002,
            mark_above_max: true,
            idle_frame_us: 8_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RedVerdict {
    Enqueued,
    Marked,
    /// Dropped by the RED decision.
    EarlyDrop,
    /// Dropped because the queue was full.
    TailDrop,
}

impl RedVerdict {
    pub fn accepted(self) -> bool {
        matches!(self, RedVerdict::Enqueued | RedVerdict::Marked)
    }
}

/// Outgoing queue of a node. Items are datagrams; occupancy is counted in
/// the frames they will take on air. Without RED parameters it is a plain
/// tail-drop queue.
#[derive(Clone, Debug)]
pub struct RelayQueue<T> {
    items: VecDeque<(T, usize)>,
    occupancy: usize,
    pub capacity: usize,
    pub red: Option<RedParams>,
    pub ecn_enabled: bool,
    avg: f64,
    idle_since: Option<SimTime>,
    drops: u64,
    marks: u64,
}

impl<T> RelayQueue<T> {
    pub fn new(capacity: usize, red: Option<RedParams>, ecn_enabled: bool) -> Self {
        RelayQueue {
            items: VecDeque::new(),
            occupancy: 0,
            capacity,
            red,
            ecn_enabled,
            avg: 0.0,
            idle_since: Some(SimTime::ZERO),
            drops: 0,
            marks: 0,
        }
    }

    pub fn tail_drop(capacity: usize) -> Self {
        Self::new(capacity, None, false)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Frames held.
    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn average(&self) -> f64 {
        self.avg
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn marks(&self) -> u64 {
        self.marks
    }

    pub fn front(&self) -> Option<&T> {
        self.items.front().map(|(t, _)| t)
    }

    pub fn front_mut(&mut self) -> Option<&mut T> {
        self.items.front_mut().map(|(t, _)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter().map(|(t, _)| t)
    }

    pub fn pop(&mut self, now: SimTime) -> Option<T> {
        let (t, frames) = self.items.pop_front()?;
        self.occupancy -= frames;
        if self.items.is_empty() {
            self.idle_since = Some(now);
        }
        Some(t)
    }

    /// Unconditional push, bypassing RED; still bounded by capacity.
    pub fn push(&mut self, item: T, frames: usize) -> RedVerdict {
        if self.occupancy + frames > self.capacity {
            self.drops += 1;
            return RedVerdict::TailDrop;
        }
        self.items.push_back((item, frames));
        self.occupancy += frames;
        self.idle_since = None;
        RedVerdict::Enqueued
    }

    /// RED/ECN admission. `mark` is applied to the item when it is admitted
    /// with a congestion mark.
    pub fn red_enqueue(
        &mut self,
        mut item: T,
        frames: usize,
        ecn_capable: bool,
        now: SimTime,
        rng: &mut SimRng,
        mark: impl FnOnce(&mut T),
    ) -> RedVerdict {
        let Some(red) = self.red else {
            return self.push(item, frames);
        };
        if let Some(since) = self.idle_since {
            let m = now.since(since) as f64 / red.idle_frame_us as f64;
            self.avg *= (1.0 - red.weight).powf(m);
        }
        self.avg = (1.0 - red.weight) * self.avg + red.weight * self.occupancy as f64;
        let can_mark = self.ecn_enabled && ecn_capable;
        let congested = if self.avg < red.min_th {
            false
        } else if self.avg < red.max_th {
            let pb = red.max_p * (self.avg - red.min_th) / (red.max_th - red.min_th);
            rng.chance(pb)
        } else {
            true
        };
        if congested {
            let markable = can_mark && (self.avg < red.max_th || red.mark_above_max);
            if !markable {
                self.drops += 1;
                return RedVerdict::EarlyDrop;
            }
            mark(&mut item);
            return match self.push(item, frames) {
                RedVerdict::Enqueued => {
                    self.marks += 1;
                    RedVerdict::Marked
                }
                other => other,
            };
        }
        self.push(item, frames)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> SimRng {
        SimRng::new(5, 5)
    }

    #[test]
    fn empty_queue_enqueues_unmarked() {
        let mut q = RelayQueue::new(16, Some(RedParams::default()), true);
        let v = q.red_enqueue(0u32, 1, true, SimTime::ZERO, &mut rng(), |x| *x = 1);
        assert_eq!(v, RedVerdict::Enqueued);
        assert_eq!(q.front(), Some(&0));
    }

    #[test]
    fn average_at_max_marks() {
        let red = RedParams {
            weight: 1.0,
            ..RedParams::default()
        };
        let mut q = RelayQueue::new(16, Some(red), true);
        for i in 0..8 {
            q.push(i, 1);
        }
        let v = q.red_enqueue(99u32, 1, true, SimTime::ZERO, &mut rng(), |x| *x = 1000);
        assert_eq!(v, RedVerdict::Marked);
        assert_eq!(q.iter().last(), Some(&1000));
        let v = q.red_enqueue(98u32, 1, false, SimTime::ZERO, &mut rng(), |_| {});
        assert_eq!(v, RedVerdict::EarlyDrop);
    }

    #[test]
    fn tail_drop_at_capacity() {
        let mut q = RelayQueue::tail_drop(4);
        assert_eq!(q.push(1, 3), RedVerdict::Enqueued);
        assert_eq!(q.push(2, 2), RedVerdict::TailDrop);
        assert_eq!(q.push(3, 1), RedVerdict::Enqueued);
        assert_eq!(q.occupancy(), 4);
        assert_eq!(q.pop(SimTime::ZERO), Some(1));
        assert_eq!(q.occupancy(), 1);
    }

    #[test]
    fn mark_probability_bounded_between_thresholds() {
        let red = RedParams {
            weight: 1.0,
            ..RedParams::default()
        };
        let mut r = rng();
        let mut marked = 0;
        let n = 20_000;
        for _ in 0..n {
            let mut q = RelayQueue::new(16, Some(red), true);
            for i in 0..7 {
                q.push(i, 1);
            }
            if q.red_enqueue(0u32, 1, true, SimTime::ZERO, &mut r, |_| {}) == RedVerdict::Marked {
                marked += 1;
            }
        }
        let frac = marked as f64 / n as f64;
        let pb = 0.1 * 5.0 / 6.0;
        assert!(frac <= red.max_p);
        assert!((frac - pb).abs() < 0.01, "{frac}");
    }
}

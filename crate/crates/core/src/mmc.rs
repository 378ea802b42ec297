//! Listen-after-send duty cycling: sleepy-leaf schedule with adaptive
//! intervals, per-child indirect queues at the parent, and radio-on
//! metering.

use std::collections::VecDeque;

use crate::sim::{SimTime, MS, SEC};

#[derive(Clone, Debug, PartialEq)]
pub struct DutyConfig {
    pub base_sleep_us: u64,
    pub adaptive: bool,
    pub adaptive_interval_us: u64,
    /// Listen time after a poll whose ACK carried no frame-pending bit.
    pub data_request_timeout_us: u64,
    /// Longest wait for a frame announced by the frame-pending bit.
    pub pending_listen_cap_us: u64,
    pub preemption: bool,
    pub indirect_capacity: usize,
    pub indirect_retries: u8,
}

impl Default for DutyConfig {
    fn default() -> Self {
        DutyConfig {
            base_sleep_us: SEC,
            adaptive: false,
            adaptive_interval_us: 100 * MS,
            data_request_timeout_us: 15 * MS,
            pending_listen_cap_us: 250 * MS,
            preemption: true,
            indirect_capacity: 8,
            indirect_retries: 0,
        }
    }
}

/// Transport events that predict downstream traffic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DutyTrigger {
    SynReceived,
    AckExpected,
    CoapResponseExpected,
    IdleRestored,
}

/// Poll schedule of one sleepy leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct DutyCycleState {
    pub base_sleep_interval: u64,
    pub adaptive_interval: u64,
    pub current_sleep_interval: u64,
    pub adaptive_until: SimTime,
    pub data_request_timeout: u64,
    pub adaptive: bool,
}

impl DutyCycleState {
    pub fn new(cfg: &DutyConfig) -> Self {
        DutyCycleState {
            base_sleep_interval: cfg.base_sleep_us,
            adaptive_interval: cfg.adaptive_interval_us.min(cfg.base_sleep_us),
            current_sleep_interval: cfg.base_sleep_us,
            adaptive_until: SimTime::ZERO,
            data_request_timeout: cfg.data_request_timeout_us,
            adaptive: cfg.adaptive,
        }
    }

    pub fn is_adapted(&self) -> bool {
        self.current_sleep_interval != self.base_sleep_interval
    }

    /// Applies a transport trigger; `hold_us` is how long the short
    /// interval lasts past it. Returns the interval now in force.
    pub fn adapt_duty(&mut self, now: SimTime, trigger: DutyTrigger, hold_us: u64) -> u64 {
        if !self.adaptive {
            return self.current_sleep_interval;
        }
        match trigger {
            DutyTrigger::IdleRestored => {
                if now >= self.adaptive_until {
                    self.current_sleep_interval = self.base_sleep_interval;
                }
            }
            _ => {
                self.current_sleep_interval = self.adaptive_interval;
                self.adaptive_until = self.adaptive_until.max(now + hold_us);
            }
        }
        self.current_sleep_interval
    }

    /// Interval to wait before the next poll scheduled at `now`.
    pub fn next_interval(&mut self, now: SimTime) -> u64 {
        self.adapt_duty(now, DutyTrigger::IdleRestored, 0)
    }
}

/// Downstream frames a parent holds for one sleepy child.
#[derive(Clone, Debug)]
pub struct IndirectQueue<F> {
    frames: VecDeque<F>,
    capacity: usize,
    drops: u64,
    /// A frame for this child is on its way through the parent's MAC.
    pub in_progress: bool,
    pub retry_count: u8,
}

impl<F> IndirectQueue<F> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        IndirectQueue {
            frames: VecDeque::new(),
            capacity,
            drops: 0,
            in_progress: false,
            retry_count: 0,
        }
    }

    /// Queues a frame, dropping the oldest one not in progress if full.
    /// Returns the dropped frame.
    pub fn parent_enqueue_indirect(&mut self, frame: F) -> Option<F> {
        let mut dropped = None;
        if self.frames.len() >= self.capacity {
            let idx = if self.in_progress { 1 } else { 0 };
            if idx < self.frames.len() {
                dropped = self.frames.remove(idx);
                self.drops += 1;
            } else {
                self.drops += 1;
                return Some(frame);
            }
        }
        self.frames.push_back(frame);
        dropped
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn front(&self) -> Option<&F> {
        self.frames.front()
    }

    /// Frames queued behind the front one.
    pub fn more_after_front(&self) -> bool {
        self.frames.len() > 1
    }

    pub fn pop(&mut self) -> Option<F> {
        self.in_progress = false;
        self.retry_count = 0;
        self.frames.pop_front()
    }
}

/// Accumulates radio-on time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RadioMeter {
    on_since: Option<SimTime>,
    total: u64,
}

impl RadioMeter {
    pub fn new_on(now: SimTime) -> Self {
        RadioMeter {
            on_since: Some(now),
            total: 0,
        }
    }

    pub fn is_on(&self) -> bool {
        self.on_since.is_some()
    }

    pub fn set_on(&mut self, now: SimTime) {
        if self.on_since.is_none() {
            self.on_since = Some(now);
        }
    }

    pub fn set_off(&mut self, now: SimTime) {
        if let Some(s) = self.on_since.take() {
            self.total += now - s;
        }
    }

    /// Total on-time up to `now`.
    pub fn on_time(&self, now: SimTime) -> u64 {
        self.total + self.on_since.map(|s| now.since(s)).unwrap_or(0)
    }
}

/// Radio-on fraction over `[start, end)` given on-time readings taken at
/// both ends.
pub fn duty_metric(on_at_start: u64, on_at_end: u64, start: SimTime, end: SimTime) -> f64 {
    let window = end.since(start);
    if window == 0 {
        return 0.0;
    }
    ((on_at_end - on_at_start) as f64 / window as f64).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adaptive_then_restore() {
        let cfg = DutyConfig {
            adaptive: true,
            ..DutyConfig::default()
        };
        let mut d = DutyCycleState::new(&cfg);
        let t0 = SimTime::from_secs(10);
        assert_eq!(d.adapt_duty(t0, DutyTrigger::SynReceived, 500 * MS), 100 * MS);
        assert_eq!(d.next_interval(t0 + 200 * MS), 100 * MS);
        assert_eq!(d.next_interval(t0 + 500 * MS), SEC);
    }

    #[test]
    fn fixed_schedule_ignores_triggers() {
        let mut d = DutyCycleState::new(&DutyConfig::default());
        assert_eq!(d.adapt_duty(SimTime::ZERO, DutyTrigger::AckExpected, SEC), SEC);
    }

    #[test]
    fn indirect_drop_oldest() {
        let mut q = IndirectQueue::new(2);
        assert!(q.parent_enqueue_indirect(1).is_none());
        assert!(q.parent_enqueue_indirect(2).is_none());
        assert_eq!(q.parent_enqueue_indirect(3), Some(1));
        q.in_progress = true;
        assert_eq!(q.parent_enqueue_indirect(4), Some(3));
        assert_eq!(q.pop(), Some(2));
        assert_eq!(q.drops(), 2);
    }

    #[test]
    fn meter_and_metric() {
        let mut m = RadioMeter::default();
        m.set_on(SimTime::from_millis(10));
        m.set_off(SimTime::from_millis(25));
        assert_eq!(m.on_time(SimTime::from_secs(240)), 15 * MS);
        let dc = duty_metric(0, m.on_time(SimTime::from_secs(240)), SimTime::ZERO, SimTime::from_secs(240));
        assert!((dc - 15.0 / 240_000.0).abs() < 1e-12);
        let on = RadioMeter::new_on(SimTime::ZERO);
        assert_eq!(duty_metric(0, on.on_time(SimTime::from_secs(5)), SimTime::ZERO, SimTime::from_secs(5)), 1.0);
    }
}

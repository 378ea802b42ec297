//! Application traffic: bulk, web request/response, sense-and-send with a
//! bounded application queue, and multi-flow event detection.

use std::collections::VecDeque;

use crate::sim::{SimTime, MS, SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkloadKind {
    Bulk,
    Web,
    SenseAndSend,
    EventDetection,
}

impl WorkloadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Bulk => "bulk",
            WorkloadKind::Web => "web",
            WorkloadKind::SenseAndSend => "sense",
            WorkloadKind::EventDetection => "event",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "bulk" => WorkloadKind::Bulk,
            "web" => WorkloadKind::Web,
            "sense" => WorkloadKind::SenseAndSend,
            "event" => WorkloadKind::EventDetection,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    Tcp,
    Coap,
    Cocoa,
    NonConfirmable,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Tcp => "tcp",
            Transport::Coap => "coap",
            Transport::Cocoa => "cocoa",
            Transport::NonConfirmable => "noncon",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "tcp" => Transport::Tcp,
            "coap" => Transport::Coap,
            "cocoa" => Transport::Cocoa,
            "noncon" => Transport::NonConfirmable,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub reading_bytes: usize,
    pub period_us: u64,
    pub batch: usize,
    pub request_bytes: usize,
    pub response_bytes: usize,
    /// Mean gap between web requests.
    pub request_interval_us: u64,
    pub flows: usize,
    pub interval_us: u64,
    pub persistent: bool,
    pub app_queue: usize,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            kind: WorkloadKind::Bulk,
            reading_bytes: 82,
            period_us: SEC,
            batch: 64,
            request_bytes: 40,
            response_bytes: 82,
            request_interval_us: 5 * SEC,
            flows: 4,
            interval_us: 40 * SEC,
            persistent: false,
            app_queue: 512,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.reading_bytes >= 8, "reading_bytes must be at least 8"),
            (self.period_us > 0, "period must be positive"),
            (self.batch > 0, "batch must be positive"),
            (self.response_bytes > 0, "response_bytes must be positive"),
            (self.request_bytes > 0, "request_bytes must be positive"),
            (self.request_interval_us >= 10 * MS, "request interval too short"),
            (self.flows > 0, "flows must be positive"),
            (self.interval_us > 0, "interval must be positive"),
            (self.app_queue > 0, "app_queue must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(msg.to_string());
            }
        }
        Ok(())
    }
}

/// One sensor reading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Reading {
    pub id: u64,
    pub generated_at: SimTime,
}

/// Encodes a reading as `size` bytes starting with its id.
pub fn reading_bytes(id: u64, size: usize) -> Vec<u8> {
    let mut v = vec![0u8; size];
    v[..8].copy_from_slice(&id.to_le_bytes());
    for (i, b) in v.iter_mut().enumerate().skip(8) {
        *b = (id as u8).wrapping_add(i as u8);
    }
    v
}

/// Recovers the id of a reading encoded by [`reading_bytes`].
pub fn reading_id(bytes: &[u8]) -> u64 {
    u64::from_le_bytes(bytes[..8].try_into().expect("reading shorter than 8 B"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Enqueue {
    Accepted,
    /// The oldest reading was dropped to make room.
    OverflowDrop(Reading),
}

/// Bounded FIFO of readings awaiting the transport; drops the oldest on
/// overflow.
#[derive(Clone, Debug)]
pub struct AppQueue {
    items: VecDeque<Reading>,
    capacity: usize,
    overflow_drops: u64,
}

impl AppQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        AppQueue {
            items: VecDeque::new(),
            capacity,
            overflow_drops: 0,
        }
    }

    pub fn app_enqueue(&mut self, r: Reading) -> Enqueue {
        let out = if self.items.len() >= self.capacity {
            self.overflow_drops += 1;
            Enqueue::OverflowDrop(self.items.pop_front().expect("full queue"))
        } else {
            Enqueue::Accepted
        };
        self.items.push_back(r);
        out
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn overflow_drops(&self) -> u64 {
        self.overflow_drops
    }

    pub fn front(&self) -> Option<&Reading> {
        self.items.front()
    }

    /// Removes up to `n` readings from the front.
    pub fn take(&mut self, n: usize) -> Vec<Reading> {
        let n = n.min(self.items.len());
        self.items.drain(..n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(id: u64) -> Reading {
        Reading {
            id,
            generated_at: SimTime::ZERO,
        }
    }

    #[test]
    fn accepts_until_full_then_drops_oldest() {
        let mut q = AppQueue::new(2);
        assert_eq!(q.app_enqueue(r(1)), Enqueue::Accepted);
        assert_eq!(q.app_enqueue(r(2)), Enqueue::Accepted);
        assert_eq!(q.app_enqueue(r(3)), Enqueue::OverflowDrop(r(1)));
        assert_eq!(q.overflow_drops(), 1);
        assert_eq!(q.take(5).iter().map(|x| x.id).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn stalled_transport_overflow_rate() {
        // 1 Hz generation, transport drains one reading every 4 s for 600 s
        let mut q = AppQueue::new(64);
        let mut drops_after_full = Vec::new();
        for t in 0..600u64 {
            q.app_enqueue(r(t));
            if t % 4 == 3 {
                q.take(1);
            }
            if t == 200 || t == 599 {
                drops_after_full.push(q.overflow_drops());
            }
        }
        // steady state: 1 - 1/4 readings per second overflow
        let rate = (drops_after_full[1] - drops_after_full[0]) as f64 / 399.0;
        assert!((rate - 0.75).abs() < 0.01, "{rate}");
    }

    #[test]
    fn reading_roundtrip() {
        let b = reading_bytes(123_456, 82);
        assert_eq!(b.len(), 82);
        assert_eq!(reading_id(&b), 123_456);
    }
}

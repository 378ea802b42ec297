//! IEEE 802.15.4 link model: frame timing, CSMA-CA and retry policy,
//! reception arbitration, and RED/ECN relay queues.

mod queue;

pub use queue::{RedParams, RedVerdict, RelayQueue};

use crate::sim::{NodeId, SimRng, SimTime, Topology};
use crate::sixlowpan::MAX_FRAME_BYTES;

/// Air time per byte at 250 kb/s.
pub const US_PER_BYTE: u64 = 32;
/// Link-layer ACK frame length.
pub const ACK_FRAME_BYTES: u16 = 11;

// Fixed per-attempt overhead, split by phase. The phases add up to
// `RADIO_OVERHEAD_US`, which makes a 127 B frame cost 7200 us.
/// Frame upload to the radio and RX-to-TX preparation before CSMA.
pub const LOAD_US: u64 = 1344;
/// Clear channel assessment window.
pub const CCA_US: u64 = 128;
/// RX/TX turnaround, both before the frame and before an ACK.
pub const TURNAROUND_US: u64 = 192;
/// macAckWaitDuration, measured from the end of the data frame.
pub const ACK_WAIT_US: u64 = 864;
/// Driver work after the ACK window closes.
pub const POST_US: u64 = 608;
pub const RADIO_OVERHEAD_US: u64 = LOAD_US + CCA_US + TURNAROUND_US + ACK_WAIT_US + POST_US;

/// `(air_us, radio_busy_us)` for a frame of `len` bytes.
pub fn occupancy_for_frame(len: usize) -> (u64, u64) {
    assert!(len <= MAX_FRAME_BYTES, "frame of {len} B exceeds 127 B");
    let air = len as u64 * US_PER_BYTE;
    (air, air + RADIO_OVERHEAD_US)
}

/// Unslotted CSMA-CA parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsmaParams {
    pub min_be: u8,
    pub max_be: u8,
    pub max_backoffs: u8,
    pub unit_backoff_us: u64,
}

impl Default for CsmaParams {
    fn default() -> Self {
        CsmaParams {
            min_be: 3,
            max_be: 5,
            max_backoffs: 4,
            unit_backoff_us: 320,
        }
    }
}

impl CsmaParams {
    /// Random backoff for the given backoff exponent.
    pub fn backoff(&self, be: u8, rng: &mut SimRng) -> u64 {
        let slots = rng.upto((1u64 << be) - 1);
        slots * self.unit_backoff_us
    }
}

/// Link transmission policy for one class of frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkTxPolicy {
    pub max_retries: u8,
    /// Upper bound of the uniform wait inserted before each retry.
    pub retry_delay_us: u64,
    pub csma: CsmaParams,
    /// When set, the radio cannot receive during CSMA backoff.
    pub deaf_listening: bool,
}

impl Default for LinkTxPolicy {
    fn default() -> Self {
        LinkTxPolicy {
            max_retries: 4,
            retry_delay_us: 0,
            csma: CsmaParams::default(),
            deaf_listening: false,
        }
    }
}

impl LinkTxPolicy {
    pub fn max_attempts(&self) -> u32 {
        1 + self.max_retries as u32
    }

    pub fn retry_delay(&self, rng: &mut SimRng) -> u64 {
        rng.upto(self.retry_delay_us)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data,
    Ack,
    DataRequest,
}

/// One link frame. `body` is whatever the layer above hands down.
#[derive(Clone, Debug)]
pub struct Frame<B> {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: FrameKind,
    /// Total length in bytes, MAC header included.
    pub len: u16,
    pub mac_overhead: u16,
    pub requires_ack: bool,
    /// Frame-pending bit: the sender holds more frames for `dst`.
    pub pending: bool,
    pub seq: u8,
    pub body: B,
}

impl<B> Frame<B> {
    pub fn payload_len(&self) -> u16 {
        self.len - self.mac_overhead
    }

    pub fn is_valid(&self) -> bool {
        self.len as usize <= MAX_FRAME_BYTES
            && (11..=23).contains(&self.mac_overhead)
            && self.mac_overhead <= self.len
    }
}

/// An over-the-air transmission interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AirTx {
    pub src: NodeId,
    pub start: SimTime,
    pub end: SimTime,
}

impl AirTx {
    pub fn overlaps(&self, other: &AirTx) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Why a frame was or was not decoded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RxOutcome {
    Decoded,
    Collision,
    Asleep,
    /// Receiver transmitting or otherwise not listening (half duplex).
    Busy,
    Random,
}

/// What the receiver was doing while `target` was in the air.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ListenState {
    Listening,
    Slept,
    Busy,
}

/// Decides the fate of `target` at `receiver`. `others` holds every other
/// transmission that may have overlapped it; only those from the
/// receiver's interferers count. `draw` is a uniform sample in [0, 1) for
/// the link delivery probability.
pub fn arbitrate_reception(
    topo: &Topology,
    receiver: NodeId,
    target: &AirTx,
    others: &[AirTx],
    listen: ListenState,
    draw: f64,
) -> RxOutcome {
    match listen {
        ListenState::Slept => return RxOutcome::Asleep,
        ListenState::Busy => return RxOutcome::Busy,
        ListenState::Listening => {}
    }
    let interferers = topo.interferers(receiver);
    let collided = others.iter().any(|o| {
        o != target && interferers.contains(&o.src) && o.overlaps(target)
    });
    if collided {
        return RxOutcome::Collision;
    }
    let p = topo.delivery(target.src, receiver).unwrap_or(0.0);
    if draw < p {
        RxOutcome::Decoded
    } else {
        RxOutcome::Random
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{build_topology, TopologySpec};

    #[test]
    fn full_frame_costs_7200() {
        assert_eq!(occupancy_for_frame(127), (4064, 7200));
        assert_eq!(RADIO_OVERHEAD_US, 3136);
    }

    #[test]
    fn ack_frame_air() {
        let (air, busy) = occupancy_for_frame(ACK_FRAME_BYTES as usize);
        assert_eq!(air, 352);
        assert_eq!(busy, 352 + RADIO_OVERHEAD_US);
    }

    #[test]
    fn air_is_linear() {
        for len in 1..=63 {
            assert_eq!(occupancy_for_frame(2 * len).0, 2 * occupancy_for_frame(len).0);
        }
    }

    #[test]
    fn raw_ceiling_near_141_kbps() {
        let frames_per_s = 1e6 / occupancy_for_frame(127).1 as f64;
        let kbps = frames_per_s * 127.0 * 8.0 / 1000.0;
        assert!((kbps - 141.1).abs() < 0.1, "{kbps}");
    }

    #[test]
    #[should_panic]
    fn oversize_frame_panics() {
        occupancy_for_frame(128);
    }

    fn tx(src: NodeId, start: u64, end: u64) -> AirTx {
        AirTx {
            src,
            start: SimTime(start),
            end: SimTime(end),
        }
    }

    #[test]
    fn arbitration_cases() {
        let t = build_topology(&TopologySpec::Chain { hops: 2 }, 1.0, 2).unwrap();
        let a = tx(0, 0, 4000);
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[a], ListenState::Listening, 0.5),
            RxOutcome::Decoded
        );
        let b = tx(2, 1000, 5000);
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[a, b], ListenState::Listening, 0.5),
            RxOutcome::Collision
        );
        assert_eq!(
            arbitrate_reception(&t, 1, &b, &[a, b], ListenState::Listening, 0.5),
            RxOutcome::Collision
        );
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[a], ListenState::Slept, 0.5),
            RxOutcome::Asleep
        );
        let later = tx(2, 4000, 8000);
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[a, later], ListenState::Listening, 0.5),
            RxOutcome::Decoded
        );
    }

    #[test]
    fn delivery_draw_applies() {
        let t = build_topology(&TopologySpec::Chain { hops: 1 }, 0.7, 2).unwrap();
        let a = tx(0, 0, 100);
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[], ListenState::Listening, 0.69),
            RxOutcome::Decoded
        );
        assert_eq!(
            arbitrate_reception(&t, 1, &a, &[], ListenState::Listening, 0.7),
            RxOutcome::Random
        );
    }

    #[test]
    fn backoff_within_window() {
        let c = CsmaParams::default();
        let mut rng = SimRng::new(1, 1);
        for _ in 0..1000 {
            let b = c.backoff(3, &mut rng);
            assert!(b <= 7 * 320 && b % 320 == 0);
        }
    }
}

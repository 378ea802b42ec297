use std::collections::BTreeMap;

use crate::analytics::RetxCounts;
use crate::sim::{NodeId, Role};
use crate::workloads::Transport;

/// Per directed link, keyed by (sender, receiver).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkStats {
    /// Data and poll frames put on the air, retries included.
    pub attempts: u64,
    pub retries: u64,
    pub delivered: u64,
    /// Frames given up after the last retry.
    pub failed: u64,
    pub cca_failures: u64,
    pub rx_decoded: u64,
    pub rx_collision: u64,
    pub rx_asleep: u64,
    pub rx_busy: u64,
    pub rx_random: u64,
    pub acks_sent: u64,
    pub acks_lost: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeStats {
    pub label: u32,
    pub role: Option<Role>,
    pub sleepy: bool,
    /// Radio-on fraction over the measurement window.
    pub duty_cycle: f64,
    pub radio_on_us: u64,
    pub mac_busy_us: u64,
    pub originated: u64,
    pub forwarded: u64,
    pub queue_drops: u64,
    pub red_drops: u64,
    pub red_marks: u64,
    pub indirect_drops: u64,
    /// Datagrams abandoned after a fragment ran out of link retries.
    pub mac_drops: u64,
    pub reasm_expired: u64,
    pub reasm_evicted: u64,
    pub injected_drops: u64,
    pub polls: u64,
    pub dup_frames: u64,
}

/// One web request.
#[derive(Clone, Debug, PartialEq)]
pub struct RequestRecord {
    pub flow: u32,
    pub id: u64,
    pub start_us: u64,
    pub end_us: Option<u64>,
    pub bytes: u64,
}

impl RequestRecord {
    pub fn latency_us(&self) -> Option<u64> {
        self.end_us.map(|e| e - self.start_us)
    }
}

/// Sender-side TCP state sampled periodically.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub t_us: u64,
    pub flow: u32,
    pub cwnd: u64,
    pub ssthresh: u64,
    pub flight: u64,
    pub snd_wnd: u64,
    pub srtt_us: u64,
    pub rto_us: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowStats {
    pub id: u32,
    pub app: &'static str,
    pub transport: Transport,
    pub src: NodeId,
    pub dst: NodeId,
    /// (time, bytes) of application data handed to the receiver.
    pub deliveries: Vec<(u64, u64)>,
    /// TCP RTT samples, or CoAP exchange times.
    pub rtt_samples_us: Vec<u64>,
    pub segments_sent: u64,
    pub segments_received: u64,
    pub retx: RetxCounts,
    pub rto_fires: u64,
    pub ecn_reductions: u64,
    pub connections: u64,
    pub aborts: u64,
    pub coap_transmissions: u64,
    pub coap_retransmissions: u64,
    pub coap_give_ups: u64,
    /// Readings (sense) generated, delivered, dropped on queue overflow,
    /// lost with an aborted connection or a given-up exchange, and still
    /// queued or in flight at the end.
    pub generated: u64,
    pub delivered: u64,
    pub overflow: u64,
    pub lost: u64,
    pub pending: u64,
    pub requests: Vec<RequestRecord>,
    pub integrity_errors: u64,
}

impl FlowStats {
    pub fn new(id: u32, app: &'static str, transport: Transport, src: NodeId, dst: NodeId) -> Self {
        FlowStats {
            id,
            app,
            transport,
            src,
            dst,
            deliveries: Vec::new(),
            rtt_samples_us: Vec::new(),
            segments_sent: 0,
            segments_received: 0,
            retx: RetxCounts::default(),
            rto_fires: 0,
            ecn_reductions: 0,
            connections: 0,
            aborts: 0,
            coap_transmissions: 0,
            coap_retransmissions: 0,
            coap_give_ups: 0,
            generated: 0,
            delivered: 0,
            overflow: 0,
            lost: 0,
            pending: 0,
            requests: Vec::new(),
            integrity_errors: 0,
        }
    }

    /// Delivered bytes within `[start, end)`.
    pub fn bytes_between(&self, start: u64, end: u64) -> u64 {
        self.deliveries
            .iter()
            .filter(|(t, _)| *t >= start && *t < end)
            .map(|(_, b)| b)
            .sum()
    }

    /// Post-retry loss of data segments.
    pub fn segment_loss(&self) -> f64 {
        if self.segments_sent == 0 {
            0.0
        } else {
            self.segments_sent.saturating_sub(self.segments_received) as f64 / self.segments_sent as f64
        }
    }
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct WorldOutput {
    pub flows: Vec<FlowStats>,
    /// Radio nodes followed by the cloud host.
    pub nodes: Vec<NodeStats>,
    pub links: BTreeMap<(NodeId, NodeId), LinkStats>,
    pub series: Vec<SeriesPoint>,
    pub trace: Vec<String>,
    pub events: u64,
    pub warmup_us: u64,
    pub end_us: u64,
    pub stop_us: u64,
}

//! The simulated network: nodes with a CSMA MAC on a shared medium,
//! 6LoWPAN forwarding, sleepy leaves polling their parents, a wired cloud
//! host behind the border router, and the transports and applications
//! running on top.

mod apps;
mod mac;
mod stack;
mod stats;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::coap::{CoapClient, CoapMsg, CoapServer};
use crate::experiments::ScenarioConfig;
use crate::mmc::{DutyConfig, DutyCycleState, IndirectQueue, RadioMeter};
use crate::phy::{AirTx, Frame, LinkTxPolicy, RedParams, RelayQueue};
use crate::sim::{EventHandle, EventQueue, Layer, NodeId, Role, SimRng, SimTime, Topology};
use crate::sixlowpan::{Fragment, HeaderBudget, Reassembler};
use crate::tcp::{Segment, TcpConfig, TcpConn};
use crate::workloads::Transport;

pub use stats::{FlowStats, LinkStats, NodeStats, RequestRecord, SeriesPoint, WorldOutput};

use apps::AppState;
use mac::Mac;

/// What a datagram carries.
#[derive(Clone, Debug)]
pub enum Body {
    /// `to` is the index of the receiving endpoint within the connection.
    Tcp { conn: u32, to: u8, seg: Segment },
    Coap { flow: u32, to: u8, msg: CoapMsg },
}

/// A network-layer datagram. The transport payload travels separately
/// from the header through fragmentation.
#[derive(Clone, Debug)]
pub struct Datagram {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub ect: bool,
    pub ce: bool,
    pub body: Body,
}

impl Datagram {
    pub fn payload_len(&self) -> usize {
        match &self.body {
            Body::Tcp { seg, .. } => seg.payload.len(),
            Body::Coap { msg, .. } => msg.payload.len(),
        }
    }

    pub fn is_coap(&self) -> bool {
        matches!(self.body, Body::Coap { .. })
    }

    fn take_payload(&mut self) -> Vec<u8> {
        match &mut self.body {
            Body::Tcp { seg, .. } => std::mem::take(&mut seg.payload),
            Body::Coap { msg, .. } => std::mem::take(&mut msg.payload),
        }
    }

    fn put_payload(&mut self, p: Vec<u8>) {
        match &mut self.body {
            Body::Tcp { seg, .. } => seg.payload = p,
            Body::Coap { msg, .. } => msg.payload = p,
        }
    }
}

#[derive(Clone, Debug)]
pub enum FrameBody {
    Frag(Fragment<Datagram>),
    Poll,
    Ack,
}

pub type MacFrame = Frame<FrameBody>;

/// Application running on a flow.
#[derive(Clone, Debug, PartialEq)]
pub enum AppSpec {
    /// Saturating stream from `src` to `dst`.
    Bulk,
    /// `dst` (the client) fetches `response_bytes` from `src` (the server).
    Web {
        request_bytes: usize,
        response_bytes: usize,
        interval_us: u64,
        persistent: bool,
        /// Stop after this many requests.
        max_requests: Option<u64>,
    },
    /// Periodic readings from `src` to `dst` through an application queue.
    Sense {
        reading_bytes: usize,
        period_us: u64,
        batch: usize,
        app_queue: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub transport: Transport,
    pub app: AppSpec,
    pub start_us: u64,
}

/// Knobs of the world that are not part of a topology or flow.
#[derive(Clone, Debug)]
pub struct WorldParams {
    pub seed: u64,
    pub budget: HeaderBudget,
    pub coap_budget: HeaderBudget,
    pub link: LinkTxPolicy,
    pub queue_capacity: usize,
    pub red: Option<RedParams>,
    pub ecn: bool,
    pub duty: Option<DutyConfig>,
    pub injected_loss: f64,
    pub wired_delay_us: u64,
    pub reassembly_timeout_us: u64,
    pub fragment_forwarding: bool,
    pub tcp: TcpConfig,
    pub coap: crate::coap::CoapConfig,
    /// CoAP payload bytes per message for bulk and sense traffic.
    pub coap_block: usize,
    pub warmup_us: u64,
    /// Traffic generation stops here.
    pub stop_us: u64,
    /// The run ends here.
    pub end_us: u64,
    pub sample_us: u64,
    pub trace: bool,
}

impl WorldParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let budget = cfg.budget().expect("validated config");
        let stop = cfg.duration_us();
        WorldParams {
            seed: cfg.seed,
            budget,
            coap_budget: budget.with_first_delta(cfg.coap_header_delta),
            link: cfg.link_policy(),
            queue_capacity: cfg.queue_capacity,
            red: cfg.red_params(),
            ecn: cfg.ecn,
            duty: cfg.duty_cycle.then(|| cfg.duty_config()),
            injected_loss: cfg.injected_loss,
            wired_delay_us: cfg.wired_delay_ms * crate::sim::MS,
            reassembly_timeout_us: cfg.reassembly_timeout_ms * crate::sim::MS,
            fragment_forwarding: cfg.fragment_forwarding,
            tcp: cfg.tcp_config(),
            coap: cfg.coap_config(),
            coap_block: cfg.coap_block_bytes(),
            warmup_us: cfg.warmup_us(),
            stop_us: stop,
            end_us: stop + cfg.drain_us(),
            sample_us: cfg.sample_ms * crate::sim::MS,
            trace: cfg.trace,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Ev {
    /// The current MAC phase of the target node ended.
    Mac,
    AirEnd(u64),
    /// The target node puts its pending link ACK on the air.
    AckTx,
    Poll,
    ListenEnd(u64),
    Wired(Box<Datagram>),
    TcpTimer(u32, u8),
    CoapTimer(u32, u8),
    App(u32, apps::AppEv),
    Sample,
    Warmup,
}

/// A datagram queued for the radio, stamped with an arrival counter so
/// local and relayed traffic are served in arrival order.
type Queued = (u64, Datagram);

/// A fragment waiting in a relay queue.
type QueuedFrame = (u64, MacFrame);

/// Forwarding state for a fragmented datagram passing through a relay,
/// keyed by (previous hop, incoming tag).
#[derive(Clone, Debug)]
pub(crate) struct FwdEntry {
    pub next: NodeId,
    pub tag: u16,
    /// Payload bytes not yet seen.
    pub left: usize,
    /// Set once a fragment was dropped; later fragments are discarded.
    pub dead: bool,
    pub deadline: SimTime,
}

/// Sleepy-leaf polling state.
#[derive(Clone, Debug)]
pub(crate) struct LeafDuty {
    pub state: DutyCycleState,
    pub poll_due: bool,
    pub poll_at: SimTime,
    pub poll_ev: Option<EventHandle>,
    /// Open listen window: (generation, closes at).
    pub window: Option<(u64, SimTime)>,
    pub gen: u64,
}

pub(crate) struct Node {
    pub role: Role,
    pub sleepy: bool,
    pub asleep: bool,
    pub last_wake: SimTime,
    pub meter: RadioMeter,
    pub listening: bool,
    pub listen_since: SimTime,
    pub mac: Mac,
    /// A link ACK waiting for its turnaround, or on the air.
    pub ack_out: Option<MacFrame>,
    pub ack_busy: bool,
    /// Transmissions in progress that this node can hear.
    pub heard_active: u32,
    pub heard_last_end: SimTime,
    pub tx_seq: u8,
    pub last_rx_seq: BTreeMap<NodeId, u8>,
    pub local_q: VecDeque<Queued>,
    pub relay_q: RelayQueue<QueuedFrame>,
    pub fwd: BTreeMap<(NodeId, u16), FwdEntry>,
    /// Frames left of the datagram being sent.
    pub cur: VecDeque<MacFrame>,
    pub frag_tag: u16,
    pub reasm: Reassembler<Datagram>,
    pub indirect: BTreeMap<NodeId, IndirectQueue<MacFrame>>,
    pub awake_children: BTreeSet<NodeId>,
    pub duty: Option<LeafDuty>,
    pub stats: NodeStats,
    pub rng_csma: SimRng,
    pub rng_retry: SimRng,
    pub rng_channel: SimRng,
    pub rng_queue: SimRng,
}

pub(crate) struct TcpEnd {
    pub node: NodeId,
    pub conn: TcpConn,
    pub timer: Option<(SimTime, EventHandle)>,
    /// Application bytes written into / read out of this endpoint.
    pub written: u64,
    pub read: u64,
    pub done: bool,
}

pub(crate) struct TcpSlot {
    pub flow: u32,
    /// ends[0] opened actively, ends[1] passively.
    pub ends: [TcpEnd; 2],
    /// Index of the endpoint whose outgoing data the flow measures.
    pub sender: u8,
    /// Web bookkeeping: request bytes the client still has to write,
    /// response bytes the server still has to write, requests served and
    /// responses completed on this connection.
    pub req_to_write: u64,
    pub resp_to_write: u64,
    pub served: u64,
    pub completed: u64,
}

pub(crate) struct CoapEnd {
    pub node: NodeId,
    pub client: CoapClient,
    pub server: CoapServer,
    pub timer: Option<(SimTime, EventHandle)>,
}

pub(crate) struct Flow {
    pub spec: FlowSpec,
    pub conn: Option<u32>,
    pub coap: Option<[CoapEnd; 2]>,
    pub app: AppState,
    pub stats: FlowStats,
}

/// The whole simulated network.
pub struct World {
    pub(crate) p: WorldParams,
    pub(crate) topo: Topology,
    pub(crate) q: EventQueue<Ev>,
    pub(crate) nodes: Vec<Node>,
    /// Index of the wired cloud host (one past the last radio node).
    pub(crate) cloud: NodeId,
    pub(crate) br: NodeId,
    pub(crate) active_air: BTreeMap<u64, (AirTx, MacFrame)>,
    pub(crate) recent_air: Vec<AirTx>,
    pub(crate) next_air: u64,
    pub(crate) next_dg: u64,
    pub(crate) next_enq: u64,
    pub(crate) links: BTreeMap<(NodeId, NodeId), LinkStats>,
    pub(crate) conns: Vec<TcpSlot>,
    pub(crate) flows: Vec<Flow>,
    pub(crate) rng_injected: SimRng,
    pub(crate) rng_app: SimRng,
    pub(crate) rng_transport: SimRng,
    pub(crate) series: Vec<SeriesPoint>,
    pub(crate) trace: Vec<String>,
    pub(crate) cloud_stats: NodeStats,
    pub(crate) meter_at_warmup: Vec<u64>,
}

impl World {
    pub fn new(p: WorldParams, topo: Topology, flows: Vec<FlowSpec>) -> Self {
        let n = topo.len();
        let cloud = n as NodeId;
        let br = topo.border_router();
        let mut nodes = Vec::with_capacity(n);
        for id in topo.nodes() {
            let role = topo.role(id);
            let sleepy = p.duty.is_some() && role == Role::Leaf;
            let duty = if sleepy {
                let cfg = p.duty.as_ref().expect("checked");
                Some(LeafDuty {
                    state: DutyCycleState::new(cfg),
                    poll_due: false,
                    poll_at: SimTime::ZERO,
                    poll_ev: None,
                    window: None,
                    gen: 0,
                })
            } else {
                None
            };
            nodes.push(Node {
                role,
                sleepy,
                asleep: false,
                last_wake: SimTime::ZERO,
                meter: RadioMeter::new_on(SimTime::ZERO),
                listening: true,
                listen_since: SimTime::ZERO,
                mac: Mac::default(),
                ack_out: None,
                ack_busy: false,
                heard_active: 0,
                heard_last_end: SimTime::ZERO,
                tx_seq: 0,
                last_rx_seq: BTreeMap::new(),
                local_q: VecDeque::new(),
                relay_q: RelayQueue::new(p.queue_capacity, p.red, p.ecn),
                fwd: BTreeMap::new(),
                cur: VecDeque::new(),
                frag_tag: 0,
                reasm: Reassembler::new(p.reassembly_timeout_us),
                indirect: BTreeMap::new(),
                awake_children: BTreeSet::new(),
                duty,
                stats: NodeStats::default(),
                rng_csma: SimRng::for_node(p.seed, id, Layer::Csma),
                rng_retry: SimRng::for_node(p.seed, id, Layer::Retry),
                rng_channel: SimRng::for_node(p.seed, id, Layer::Channel),
                rng_queue: SimRng::for_node(p.seed, id, Layer::Queue),
            });
        }
        let mut w = World {
            rng_injected: SimRng::for_node(p.seed, br, Layer::Injected),
            rng_app: SimRng::for_node(p.seed, cloud, Layer::App),
            rng_transport: SimRng::for_node(p.seed, cloud, Layer::Transport),
            p,
            topo,
            q: EventQueue::new(),
            nodes,
            cloud,
            br,
            active_air: BTreeMap::new(),
            recent_air: Vec::new(),
            next_air: 0,
            next_dg: 0,
            next_enq: 0,
            links: BTreeMap::new(),
            conns: Vec::new(),
            flows: Vec::new(),
            series: Vec::new(),
            trace: Vec::new(),
            cloud_stats: NodeStats::default(),
            meter_at_warmup: Vec::new(),
        };
        for id in 0..n as NodeId {
            if w.nodes[id as usize].sleepy {
                w.sleepy_start(id);
            }
        }
        for spec in flows {
            w.add_flow(spec);
        }
        w.q.schedule(SimTime(w.p.warmup_us), w.cloud, Ev::Warmup);
        w.q.schedule(SimTime(w.p.sample_us), w.cloud, Ev::Sample);
        w
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn now(&self) -> SimTime {
        self.q.now()
    }

    pub fn cloud(&self) -> NodeId {
        self.cloud
    }

    pub(crate) fn is_radio(&self, n: NodeId) -> bool {
        n != self.cloud
    }

    /// Runs to the end time and returns the collected statistics.
    pub fn run(mut self) -> WorldOutput {
        let end = SimTime(self.p.end_us);
        while let Some(ev) = self.q.pop_until(end) {
            self.dispatch(ev.target, ev.kind);
        }
        self.q.advance_to(end);
        self.finish()
    }

    fn dispatch(&mut self, target: NodeId, kind: Ev) {
        if self.p.trace {
            let line = format!("{} {} {}", self.now().micros(), target, trace_kind(&kind));
            self.trace.push(line);
        }
        match kind {
            Ev::Mac => self.mac_phase_end(target),
            Ev::AirEnd(id) => self.air_end(id),
            Ev::AckTx => self.ack_tx_start(target),
            Ev::Poll => self.poll_due(target),
            Ev::ListenEnd(gen) => self.listen_end(target, gen),
            Ev::Wired(dg) => self.wired_arrival(target, *dg),
            Ev::TcpTimer(c, e) => self.tcp_timer(c, e),
            Ev::CoapTimer(f, e) => self.coap_timer(f, e),
            Ev::App(f, a) => self.app_event(f, a),
            Ev::Sample => self.sample(),
            Ev::Warmup => {
                let now = self.now();
                self.meter_at_warmup = self.nodes.iter().map(|n| n.meter.on_time(now)).collect();
            }
        }
    }
}

fn trace_kind(k: &Ev) -> String {
    match k {
        Ev::Mac => "mac".into(),
        Ev::AirEnd(id) => format!("air-end {id}"),
        Ev::AckTx => "ack-tx".into(),
        Ev::Poll => "poll".into(),
        Ev::ListenEnd(g) => format!("listen-end {g}"),
        Ev::Wired(d) => format!("wired dg{} {}->{}", d.id, d.src, d.dst),
        Ev::TcpTimer(c, e) => format!("tcp-timer c{c}/{e}"),
        Ev::CoapTimer(f, e) => format!("coap-timer f{f}/{e}"),
        Ev::App(f, a) => format!("app f{f} {a:?}"),
        Ev::Sample => "sample".into(),
        Ev::Warmup => "warmup".into(),
    }
}

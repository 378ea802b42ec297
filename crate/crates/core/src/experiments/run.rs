use thiserror::Error;

use super::config::{ScenarioConfig, SinkKind, TopoKind};
use crate::analytics::{aggregate_metrics, FlowMetrics, FlowTrace, Quartiles, RetxCounts};
use crate::net::{AppSpec, FlowSpec, World, WorldOutput, WorldParams};
use crate::sim::{build_topology, NodeId, Topology, TopologyError};
use crate::workloads::{Transport, WorkloadKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("unknown node label {0}")]
    UnknownLabel(u32),
}

/// Network-wide figures of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    /// Aggregate over all flows (goodput summed, the rest pooled).
    pub metrics: FlowMetrics,
    pub flows: usize,
    pub goodput_bps: f64,
    pub segment_loss: f64,
    pub rtt_mean_us: f64,
    pub reliability: f64,
    /// Mean radio duty cycle of the sleepy nodes, 0 when none sleep.
    pub leaf_duty_cycle: f64,
    pub generated: u64,
    pub delivered: u64,
    pub overflow: u64,
    pub lost: u64,
    pub pending: u64,
    pub requests: usize,
    pub requests_done: usize,
    pub latency_median_us: f64,
    pub coap_transmissions: u64,
    pub coap_give_ups: u64,
    /// Quartiles of per-flow, per-interval goodput.
    pub interval_goodput: Quartiles,
    pub integrity_errors: u64,
    pub events: u64,
}

/// Everything produced by [`run_scenario`].
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ScenarioConfig,
    pub labels: Vec<u32>,
    pub flow_metrics: Vec<FlowMetrics>,
    pub summary: Summary,
    pub output: WorldOutput,
}

fn resolve(topo: &Topology, label: u32) -> Result<NodeId, RunError> {
    topo.by_label(label).ok_or(RunError::UnknownLabel(label))
}

/// Flows for the configured workload.
pub fn build_flows(cfg: &ScenarioConfig, topo: &Topology) -> Result<Vec<FlowSpec>, RunError> {
    let cloud = topo.len() as NodeId;
    let sink = match cfg.sink {
        SinkKind::Border => topo.border_router(),
        SinkKind::Cloud => cloud,
    };
    let sources: Vec<NodeId> = if cfg.sources.0.is_empty() {
        match cfg.topology {
            TopoKind::Chain => vec![cfg.hops as NodeId],
            TopoKind::Tree => cfg
                .tree_leaves
                .0
                .iter()
                .map(|&l| resolve(topo, l))
                .collect::<Result<_, _>>()?,
        }
    } else {
        cfg.sources.0.iter().map(|&l| resolve(topo, l)).collect::<Result<_, _>>()?
    };
    if sources.is_empty() {
        return Err(RunError::Config("no traffic sources".into()));
    }
    if sources.contains(&sink) {
        return Err(RunError::Config("a source cannot be the sink".into()));
    }
    let w = cfg.workload_spec();
    let flow = |src, app| FlowSpec {
        src,
        dst: sink,
        transport: cfg.transport,
        app,
        start_us: 0,
    };
    let flows = match cfg.workload {
        WorkloadKind::Bulk => sources.iter().map(|&s| flow(s, AppSpec::Bulk)).collect(),
        WorkloadKind::EventDetection => sources.iter().take(w.flows).map(|&s| flow(s, AppSpec::Bulk)).collect(),
        WorkloadKind::Web => vec![flow(
            sources[0],
            AppSpec::Web {
                request_bytes: w.request_bytes,
                response_bytes: w.response_bytes,
                interval_us: w.request_interval_us,
                persistent: w.persistent,
                max_requests: None,
            },
        )],
        WorkloadKind::SenseAndSend => sources
            .iter()
            .map(|&s| {
                flow(
                    s,
                    AppSpec::Sense {
                        reading_bytes: w.reading_bytes,
                        period_us: w.period_us,
                        batch: w.batch,
                        app_queue: w.app_queue,
                    },
                )
            })
            .collect(),
    };
    if cfg.transport == Transport::NonConfirmable
        && matches!(cfg.workload, WorkloadKind::Bulk | WorkloadKind::EventDetection | WorkloadKind::Web)
    {
        return Err(RunError::Config("nonconfirmable transport only drives sense-and-send".into()));
    }
    Ok(flows)
}

/// Runs one scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult, RunError> {
    cfg.validate().map_err(RunError::Config)?;
    let topo = build_topology(&cfg.topology_spec(), cfg.link_delivery, cfg.interference_hops.min(255) as u8)?;
    let flows = build_flows(cfg, &topo)?;
    let labels: Vec<u32> = topo.nodes().map(|n| topo.label(n)).collect();
    let world = World::new(WorldParams::from_config(cfg), topo, flows);
    let output = world.run();
    let (flow_metrics, summary) = summarize(cfg, &output);
    Ok(RunResult {
        config: cfg.clone(),
        labels,
        flow_metrics,
        summary,
        output,
    })
}

fn flow_trace(f: &crate::net::FlowStats, duty: f64) -> FlowTrace {
    FlowTrace {
        deliveries: f.deliveries.clone(),
        rtt_samples_us: f.rtt_samples_us.clone(),
        segments_sent: f.segments_sent,
        segments_lost: f.segments_sent.saturating_sub(f.segments_received),
        retx: f.retx,
        generated: f.generated,
        delivered_units: f.delivered,
        pending_units: f.pending,
        duty_cycle: duty,
    }
}

fn summarize(cfg: &ScenarioConfig, out: &WorldOutput) -> (Vec<FlowMetrics>, Summary) {
    let start = out.warmup_us;
    let end = out.stop_us;
    let node_duty = |n: NodeId| out.nodes.get(n as usize).map_or(0.0, |s| s.duty_cycle);
    let flow_metrics: Vec<FlowMetrics> = out
        .flows
        .iter()
        .map(|f| aggregate_metrics(&flow_trace(f, node_duty(f.src)), start, end))
        .collect();

    let mut pooled = FlowTrace::default();
    let mut retx = RetxCounts::default();
    for f in &out.flows {
        pooled.deliveries.extend_from_slice(&f.deliveries);
        pooled.rtt_samples_us.extend_from_slice(&f.rtt_samples_us);
        pooled.segments_sent += f.segments_sent;
        pooled.segments_lost += f.segments_sent.saturating_sub(f.segments_received);
        retx.timeout += f.retx.timeout;
        retx.fast += f.retx.fast;
        retx.sack_hole += f.retx.sack_hole;
        pooled.generated += f.generated;
        pooled.delivered_units += f.delivered;
        pooled.pending_units += f.pending;
    }
    pooled.deliveries.sort_unstable();
    pooled.retx = retx;
    let sleepy: Vec<f64> = out.nodes.iter().filter(|n| n.sleepy).map(|n| n.duty_cycle).collect();
    pooled.duty_cycle = if sleepy.is_empty() {
        0.0
    } else {
        sleepy.iter().sum::<f64>() / sleepy.len() as f64
    };
    let metrics = aggregate_metrics(&pooled, start, end);

    let interval_us = (cfg.interval_s * 1e6) as u64;
    let mut samples = Vec::new();
    for f in &out.flows {
        samples.extend(crate::analytics::interval_goodputs(&f.deliveries, start, end, interval_us));
    }
    let latencies: Vec<f64> = out
        .flows
        .iter()
        .flat_map(|f| f.requests.iter())
        .filter_map(|r| r.latency_us())
        .map(|l| l as f64)
        .collect();
    let requests: usize = out.flows.iter().map(|f| f.requests.len()).sum();
    let summary = Summary {
        flows: out.flows.len(),
        goodput_bps: metrics.goodput_bps,
        segment_loss: metrics.segment_loss,
        rtt_mean_us: metrics.rtt_mean_us,
        reliability: metrics.reliability,
        leaf_duty_cycle: metrics.duty_cycle,
        generated: pooled.generated,
        delivered: pooled.delivered_units,
        overflow: out.flows.iter().map(|f| f.overflow).sum(),
        lost: out.flows.iter().map(|f| f.lost).sum(),
        pending: pooled.pending_units,
        requests,
        requests_done: latencies.len(),
        latency_median_us: Quartiles::of(&latencies).map_or(0.0, |q| q.median),
        coap_transmissions: out.flows.iter().map(|f| f.coap_transmissions).sum(),
        coap_give_ups: out.flows.iter().map(|f| f.coap_give_ups).sum(),
        interval_goodput: Quartiles::of(&samples).unwrap_or_default(),
        integrity_errors: out.flows.iter().map(|f| f.integrity_errors).sum(),
        events: out.events,
        metrics,
    };
    (flow_metrics, summary)
}

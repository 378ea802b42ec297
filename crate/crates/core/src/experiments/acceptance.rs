//! Scenario-level acceptance checks and the determinism check behind
//! `validate`. The buffer-oracle criterion lives with the test suite.

use std::fmt;

use rayon::prelude::*;

use super::config::{ScenarioConfig, SinkKind, TopoKind};
use super::csv::bundle;
use super::run::{run_scenario, RunResult};
use crate::analytics::{model_lln, model_lln_burst, single_hop_bound, ModelParams, Quartiles, RadioModel};
use crate::workloads::{Transport, WorkloadKind};

/// Outcome of one criterion.
#[derive(Clone, Debug)]
pub struct Check {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {:<20} {}  {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn check(id: u8, name: &'static str, pass: bool, detail: String) -> Check {
    Check { id, name, pass, detail }
}

fn run_all(cfgs: &[ScenarioConfig]) -> Vec<RunResult> {
    cfgs.par_iter()
        .map(|c| run_scenario(c).unwrap_or_else(|e| panic!("acceptance scenario failed: {e}")))
        .collect()
}

fn kbps(bps: f64) -> f64 {
    bps / 1e3
}

/// Single hop, no injected loss, perfect link.
pub fn single_hop(seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        duration_s: 120.0,
        ..ScenarioConfig::default()
    }
}

/// Chain of `hops` with link retries spaced by `retry_delay_us`.
pub fn chain(seed: u64, hops: u32, retry_delay_us: u64) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        hops,
        retry_delay_us,
        link_delivery: 0.95,
        duration_s: 300.0,
        ..ScenarioConfig::default()
    }
}

/// Duty-cycled tree with the leaves talking to the cloud host.
pub fn tree(seed: u64, workload: WorkloadKind, transport: Transport) -> ScenarioConfig {
    ScenarioConfig {
        seed,
        topology: TopoKind::Tree,
        sink: SinkKind::Cloud,
        workload,
        transport,
        duty_cycle: true,
        link_delivery: 0.95,
        retry_delay_us: 40_000,
        ..ScenarioConfig::default()
    }
}

pub fn web_latency(seed: u64, adaptive: bool) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 600.0,
        sleep_interval_ms: 1000,
        adaptive,
        ..tree(seed, WorkloadKind::Web, Transport::Tcp)
    }
}

pub fn bulk_response(seed: u64, transport: Transport) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 900.0,
        sleep_interval_ms: 100,
        response_bytes: 50 * 1024,
        request_interval_ms: 60_000,
        ..tree(seed, WorkloadKind::Web, transport)
    }
}

pub fn sense(seed: u64, transport: Transport, injected_loss: f64) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 1800.0,
        sleep_interval_ms: 240_000,
        adaptive: true,
        injected_loss,
        ..tree(seed, WorkloadKind::SenseAndSend, transport)
    }
}

pub fn event(seed: u64, red_ecn: bool) -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 1200.0,
        sleep_interval_ms: 240_000,
        adaptive: true,
        red: red_ecn,
        ecn: red_ecn,
        ..tree(seed, WorkloadKind::EventDetection, Transport::Tcp)
    }
}

pub fn c1_single_hop(seed: u64) -> Check {
    let cfg = single_hop(seed);
    let radio = RadioModel {
        unused_per_frame: cfg.unused_per_frame,
        ..RadioModel::default()
    };
    let bound = single_hop_bound(&cfg.budget().expect("default budget"), cfg.mss_frames, &radio);
    let g = run_all(&[cfg])[0].summary.goodput_bps;
    let ratio = g / bound;
    check(
        1,
        "single-hop bound",
        (bound - 95_000.0).abs() <= 3_000.0 && (0.60..=1.00).contains(&ratio),
        format!("bound {:.1} kb/s, goodput {:.1} kb/s ({ratio:.2}x)", kbps(bound), kbps(g)),
    )
}

pub fn c2_mss(seed: u64) -> Check {
    let cfgs: Vec<_> = [1, 5]
        .iter()
        .map(|&m| ScenarioConfig {
            mss_frames: m,
            ..single_hop(seed)
        })
        .collect();
    let r = run_all(&cfgs);
    let (g1, g5) = (r[0].summary.goodput_bps, r[1].summary.goodput_bps);
    check(
        2,
        "mss sweep",
        g5 >= 3.5 * g1,
        format!("mss1 {:.1} kb/s, mss5 {:.1} kb/s ({:.2}x)", kbps(g1), kbps(g5), g5 / g1),
    )
}

/// The sender's buffer is varied; the receiver keeps room for a full window.
pub fn c3_buffers(seed: u64) -> Check {
    let seg = single_hop(seed).mss_bytes();
    let cfgs: Vec<_> = [1, 4, 8]
        .iter()
        .map(|&k| ScenarioConfig {
            send_buffer: k * seg,
            recv_buffer: 4096,
            ..single_hop(seed)
        })
        .collect();
    let r = run_all(&cfgs);
    let g: Vec<f64> = r.iter().map(|x| x.summary.goodput_bps).collect();
    let near = (g[1] - g[2]).abs() <= 0.10 * g[2];
    check(
        3,
        "buffer plateau",
        near && g[0] <= 0.5 * g[2],
        format!("1/4/8 segments: {:.1}/{:.1}/{:.1} kb/s", kbps(g[0]), kbps(g[1]), kbps(g[2])),
    )
}

pub fn c4_multihop(seed: u64) -> Check {
    let cfgs: Vec<_> = (1..=4).map(|h| chain(seed, h, 40_000)).collect();
    let g: Vec<f64> = run_all(&cfgs).iter().map(|x| x.summary.goodput_bps).collect();
    let (r2, r3, r43) = (g[1] / g[0], g[2] / g[0], g[3] / g[2]);
    check(
        4,
        "multihop ratios",
        (0.40..=0.55).contains(&r2) && (0.27..=0.37).contains(&r3) && (r43 - 1.0).abs() <= 0.15,
        format!(
            "{:.1}/{:.1}/{:.1}/{:.1} kb/s, hop2/hop1 {r2:.3}, hop3/hop1 {r3:.3}, hop4/hop3 {r43:.3}",
            kbps(g[0]),
            kbps(g[1]),
            kbps(g[2]),
            kbps(g[3])
        ),
    )
}

/// Retry delays of the chain-3 sweep, in microseconds.
pub const RETRY_DELAYS_US: [u64; 4] = [0, 5_000, 40_000, 100_000];

/// Model prediction for a finished run from its own RTT and loss.
pub fn model_for(r: &RunResult) -> f64 {
    let c = &r.config;
    let mss = c.mss_bytes() as f64;
    let w = (c.recv_buffer.min(c.send_buffer) as f64 / mss).floor().max(1.0);
    let p = ModelParams::new(mss, r.summary.rtt_mean_us, w, r.summary.segment_loss);
    model_lln(&p).unwrap_or(0.0)
}

/// Largest gap between the two forms of the LLN model over a grid.
pub fn model_identity_error() -> f64 {
    let mut worst: f64 = 0.0;
    for mss in [100.0, 462.0, 1000.0] {
        for rtt in [50_000.0, 300_000.0, 2_000_000.0] {
            for w in [1.0, 4.0, 16.0] {
                for p in [0.0, 0.001, 0.03, 0.2] {
                    for ell in [1.0, 2.0, 3.5] {
                        let q = ModelParams { ell, ..ModelParams::new(mss, rtt, w, p) };
                        let a = model_lln(&q).expect("grid in domain");
                        let b = model_lln_burst(&q).expect("grid in domain");
                        let eq1 = mss * 8.0 / (rtt / 1e6) * (1.0 / (1.0 / w + ell * p));
                        worst = worst.max(((a - b) / a).abs()).max(((a - eq1) / a).abs());
                    }
                }
            }
        }
    }
    worst
}

pub fn c5_c6_retry_delay(seed: u64) -> (Check, Check) {
    let cfgs: Vec<_> = RETRY_DELAYS_US.iter().map(|&d| chain(seed, 3, d)).collect();
    let r = run_all(&cfgs);
    let loss: Vec<f64> = r.iter().map(|x| x.summary.segment_loss).collect();
    let g: Vec<f64> = r.iter().map(|x| x.summary.goodput_bps).collect();
    let spread = (g[1] - g[2]).abs() / g[1].max(g[2]);
    let c5 = check(
        5,
        "retry delay",
        loss[2] <= loss[0] / 3.0 && spread <= 0.15,
        format!(
            "loss d0 {:.4} d40 {:.4}, goodput d5 {:.1} d40 {:.1} kb/s",
            loss[0],
            loss[2],
            kbps(g[1]),
            kbps(g[2])
        ),
    );
    let mut ok = true;
    let mut parts = Vec::new();
    for (x, &d) in r.iter().zip(&RETRY_DELAYS_US) {
        let m = model_for(x);
        let err = (m - x.summary.goodput_bps).abs() / x.summary.goodput_bps;
        ok &= err <= 0.25;
        parts.push(format!("d{} {:+.0}%", d / 1000, 100.0 * (m / x.summary.goodput_bps - 1.0)));
    }
    let ident = model_identity_error();
    let c6 = check(
        6,
        "model agreement",
        ok && ident <= 1e-9,
        format!("model vs sim {}, identity error {ident:.1e}", parts.join(" ")),
    );
    (c5, c6)
}

pub fn c8_adaptive(seed: u64) -> Check {
    let r = run_all(&[web_latency(seed, false), web_latency(seed, true)]);
    let (fixed, adaptive) = (r[0].summary.latency_median_us, r[1].summary.latency_median_us);
    let ok = r.iter().all(|x| x.summary.requests_done > 0) && fixed >= 1.8 * adaptive;
    check(
        8,
        "adaptive duty cycle",
        ok,
        format!(
            "median latency fixed {:.0} ms, adaptive {:.0} ms ({:.2}x)",
            fixed / 1e3,
            adaptive / 1e3,
            fixed / adaptive
        ),
    )
}

/// Median goodput of completed responses, b/s.
pub fn response_goodput(r: &RunResult) -> f64 {
    let g: Vec<f64> = r
        .output
        .flows
        .iter()
        .flat_map(|f| f.requests.iter())
        .filter_map(|q| q.latency_us().map(|l| q.bytes as f64 * 8.0 / (l as f64 / 1e6)))
        .collect();
    Quartiles::of(&g).map_or(0.0, |q| q.median)
}

pub fn c9_tcp_vs_coap(seed: u64) -> Check {
    let r = run_all(&[bulk_response(seed, Transport::Tcp), bulk_response(seed, Transport::Coap)]);
    let (t, c) = (response_goodput(&r[0]), response_goodput(&r[1]));
    check(
        9,
        "tcp vs coap",
        c > 0.0 && t >= 1.25 * c,
        format!("tcp {:.2} kb/s, coap {:.2} kb/s ({:.2}x)", kbps(t), kbps(c), t / c),
    )
}

/// Injected loss rates of the reliability sweep.
pub const INJECTED_LOSS: [f64; 6] = [0.0, 0.03, 0.06, 0.09, 0.12, 0.15];

pub fn c10_injected_loss(seed: u64) -> Check {
    let mut cfgs = Vec::new();
    for &l in &INJECTED_LOSS {
        cfgs.push(sense(seed, Transport::Tcp, l));
        cfgs.push(sense(seed, Transport::Coap, l));
    }
    let high: Vec<f64> = INJECTED_LOSS.iter().copied().filter(|&l| l >= 0.12).collect();
    for &l in &high {
        cfgs.push(sense(seed, Transport::Cocoa, l));
    }
    let r = run_all(&cfgs);
    let rel = |i: usize| r[i].summary.reliability;
    let mut ok = true;
    let mut worst = (1.0f64, 1.0f64);
    for i in 0..INJECTED_LOSS.len() {
        let (t, c) = (rel(2 * i), rel(2 * i + 1));
        ok &= t >= 0.99 && c >= 0.99;
        worst = (worst.0.min(t), worst.1.min(c));
    }
    let mut cocoa = Vec::new();
    for (j, &l) in high.iter().enumerate() {
        let coap = rel(2 * INJECTED_LOSS.iter().position(|&x| x == l).expect("listed"));
        let k = rel(2 * INJECTED_LOSS.len() + j);
        ok &= k < coap;
        cocoa.push(format!("cocoa@{:.0}% {k:.3} vs coap {coap:.3}", l * 100.0));
    }
    check(
        10,
        "injected loss",
        ok,
        format!("min reliability tcp {:.3} coap {:.3}, {}", worst.0, worst.1, cocoa.join(", ")),
    )
}

pub fn c11_fairness(seed: u64) -> Check {
    let r = run_all(&[event(seed, false), event(seed, true)]);
    let (tail, red) = (r[0].summary.interval_goodput, r[1].summary.interval_goodput);
    check(
        11,
        "fairness",
        red.iqr() < tail.iqr(),
        format!(
            "interval goodput IQR tail-drop {:.0} b/s (median {:.0}), red+ecn {:.0} b/s (median {:.0})",
            tail.iqr(),
            tail.median,
            red.iqr(),
            red.median
        ),
    )
}

/// The fixed scenarios rerun by [`determinism`].
pub fn validation_scenarios(quick: bool) -> Vec<(&'static str, ScenarioConfig)> {
    let k = if quick { 0.25 } else { 1.0 };
    vec![
        (
            "single-hop",
            ScenarioConfig {
                duration_s: 40.0 * k,
                ..single_hop(7)
            },
        ),
        (
            "chain-3",
            ScenarioConfig {
                duration_s: 120.0 * k,
                ..chain(11, 3, 40_000)
            },
        ),
        (
            "sense-coap",
            ScenarioConfig {
                duration_s: 1200.0 * k,
                injected_loss: 0.05,
                ..sense(13, Transport::Coap, 0.0)
            },
        ),
    ]
}

/// Hashes of two independent runs of one scenario.
#[derive(Clone, Debug)]
pub struct Rerun {
    pub name: &'static str,
    pub first: String,
    pub second: String,
}

impl Rerun {
    pub fn identical(&self) -> bool {
        self.first == self.second
    }
}

/// Runs each validation scenario twice and hashes the CSV bundles.
pub fn determinism(quick: bool) -> Vec<Rerun> {
    validation_scenarios(quick)
        .into_par_iter()
        .map(|(name, cfg)| {
            let a = bundle(&run_scenario(&cfg).expect("validation scenario"));
            let b = bundle(&run_scenario(&cfg).expect("validation scenario"));
            Rerun {
                name,
                first: a.digest(),
                second: b.digest(),
            }
        })
        .collect()
}

pub fn c12_determinism(quick: bool) -> Check {
    let runs = determinism(quick);
    let ok = runs.iter().all(Rerun::identical);
    let detail = runs
        .iter()
        .map(|r| format!("{} {}", r.name, &r.first[..12]))
        .collect::<Vec<_>>()
        .join(", ");
    check(12, "determinism", ok, detail)
}

/// Every scenario-level criterion, in order.
pub fn scenario_checks(seed: u64, quick: bool) -> Vec<Check> {
    let (c5, c6) = c5_c6_retry_delay(seed);
    vec![
        c1_single_hop(seed),
        c2_mss(seed),
        c3_buffers(seed),
        c4_multihop(seed),
        c5,
        c6,
        c8_adaptive(seed),
        c9_tcp_vs_coap(seed),
        c10_injected_loss(seed),
        c11_fairness(seed),
        c12_determinism(quick),
    ]
}

use std::fmt;

use thiserror::Error;

use crate::coap::{CoapConfig, CoapMode};
use crate::mmc::DutyConfig;
use crate::phy::{CsmaParams, LinkTxPolicy, RedParams};
use crate::sim::{TopologySpec, MS, SEC};
use crate::sixlowpan::{mss_payload_bytes, HeaderBudget};
use crate::tcp::TcpConfig;
use crate::workloads::{Transport, WorkloadKind, WorkloadSpec};

/// A config problem, with the 1-based line it came from (0 when the
/// problem is not tied to one line).
#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

impl ConfigError {
    fn at(line: usize, msg: impl Into<String>) -> Self {
        ConfigError {
            line,
            msg: msg.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TopoKind {
    Chain,
    Tree,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SinkKind {
    Border,
    Cloud,
}

/// Node labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelList(pub Vec<u32>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeList(pub Vec<(u32, u32)>);

/// The reference tree: border router 1, leaves 12 to 15, five hops deep.
pub const REFERENCE_TREE: &[(u32, u32)] = &[
    (1, 2),
    (1, 3),
    (2, 4),
    (2, 5),
    (3, 6),
    (4, 7),
    (5, 8),
    (6, 9),
    (7, 10),
    (8, 11),
    (9, 12),
    (10, 13),
    (11, 14),
    (10, 15),
];

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! num_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse::<$t>().map_err(|_| format!("expected {}, got {:?}", stringify!($t), s))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

num_value!(u8, u16, u32, u64, usize, i16);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: f64 = s.parse().map_err(|_| format!("expected a number, got {s:?}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("expected a finite number, got {s:?}"))
        }
    }
    fn render(&self) -> String {
        format!("{self}")
    }
}

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            _ => Err(format!("expected true or false, got {s:?}")),
        }
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for TopoKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "chain" => Ok(TopoKind::Chain),
            "tree" => Ok(TopoKind::Tree),
            _ => Err(format!("unknown topology {s:?} (chain, tree)")),
        }
    }
    fn render(&self) -> String {
        match self {
            TopoKind::Chain => "chain",
            TopoKind::Tree => "tree",
        }
        .to_string()
    }
}

impl ConfigValue for SinkKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "border" => Ok(SinkKind::Border),
            "cloud" => Ok(SinkKind::Cloud),
            _ => Err(format!("unknown sink {s:?} (border, cloud)")),
        }
    }
    fn render(&self) -> String {
        match self {
            SinkKind::Border => "border",
            SinkKind::Cloud => "cloud",
        }
        .to_string()
    }
}

impl ConfigValue for WorkloadKind {
    fn parse_value(s: &str) -> Result<Self, String> {
        WorkloadKind::parse(s).ok_or_else(|| format!("unknown workload {s:?} (bulk, web, sense, event)"))
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl ConfigValue for Transport {
    fn parse_value(s: &str) -> Result<Self, String> {
        Transport::parse(s).ok_or_else(|| format!("unknown transport {s:?} (tcp, coap, cocoa, noncon)"))
    }
    fn render(&self) -> String {
        self.as_str().to_string()
    }
}

impl ConfigValue for LabelList {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() || s == "auto" {
            return Ok(LabelList(Vec::new()));
        }
        s.split(',')
            .map(|x| x.trim().parse::<u32>().map_err(|_| format!("bad node label {x:?}")))
            .collect::<Result<Vec<_>, _>>()
            .map(LabelList)
    }
    fn render(&self) -> String {
        if self.0.is_empty() {
            return "auto".to_string();
        }
        self.0.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for EdgeList {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "reference" {
            return Ok(EdgeList(REFERENCE_TREE.to_vec()));
        }
        s.split(',')
            .map(|e| {
                let (a, b) = e
                    .trim()
                    .split_once('-')
                    .ok_or_else(|| format!("edge {e:?} is not a-b"))?;
                let a = a.trim().parse::<u32>().map_err(|_| format!("bad label in edge {e:?}"))?;
                let b = b.trim().parse::<u32>().map_err(|_| format!("bad label in edge {e:?}"))?;
                Ok((a, b))
            })
            .collect::<Result<Vec<_>, String>>()
            .map(EdgeList)
    }
    fn render(&self) -> String {
        if self.0 == REFERENCE_TREE {
            return "reference".to_string();
        }
        self.0.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(",")
    }
}

macro_rules! scenario_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr ;)*) => {
        /// Everything that defines one run. Serializes to flat `key = value`
        /// lines in a fixed order.
        #[derive(Clone, Debug, PartialEq)]
        pub struct ScenarioConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for ScenarioConfig {
            fn default() -> Self {
                ScenarioConfig { $( $field: $default, )* }
            }
        }

        impl ScenarioConfig {
            /// Keys in canonical order.
            pub const KEYS: &'static [&'static str] = &[$( stringify!($field) ),*];

            /// Sets one field from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( stringify!($field) => { self.$field = <$ty as ConfigValue>::parse_value(value)?; } )*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// Text form of one field.
            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($field) => Some(self.$field.render()), )*
                    _ => None,
                }
            }
        }
    };
}

scenario_config! {
    seed: u64 = 1;
    topology: TopoKind = TopoKind::Chain;
    /// Chain length in hops.
    hops: u32 = 1;
    tree_edges: EdgeList = EdgeList(REFERENCE_TREE.to_vec());
    tree_leaves: LabelList = LabelList(vec![12, 13, 14, 15]);
    interference_hops: u32 = 1;
    link_delivery: f64 = 1.0;
    duration_s: f64 = 60.0;
    /// Measurement starts after the warmup.
    warmup_s: f64 = 5.0;
    /// Extra time after traffic generation stops.
    drain_s: f64 = 0.0;
    workload: WorkloadKind = WorkloadKind::Bulk;
    transport: Transport = Transport::Tcp;
    /// Labels of the traffic sources; `auto` picks the chain end or the tree leaves.
    sources: LabelList = LabelList::default();
    sink: SinkKind = SinkKind::Border;
    mss_frames: usize = 5;
    send_buffer: usize = 1848;
    recv_buffer: usize = 1848;
    header_first: u16 = 97;
    header_nth: u16 = 19;
    /// First-frame header change for UDP/CoAP relative to TCP.
    coap_header_delta: i16 = -20;
    unused_per_frame: f64 = 7.0;
    max_retries: u8 = 15;
    retry_delay_us: u64 = 0;
    min_be: u8 = 3;
    max_be: u8 = 5;
    max_backoffs: u8 = 4;
    unit_backoff_us: u64 = 320;
    deaf_listening: bool = false;
    queue_capacity: usize = 16;
    red: bool = false;
    ecn: bool = false;
    red_min_th: f64 = 2.0;
    red_max_th: f64 = 8.0;
    red_max_p: f64 = 0.1;
    red_weight: f64 = 0.002;
    duty_cycle: bool = false;
    sleep_interval_ms: u64 = 1000;
    adaptive: bool = false;
    adaptive_interval_ms: u64 = 100;
    data_request_timeout_ms: u64 = 15;
    pending_listen_cap_ms: u64 = 250;
    preemption: bool = true;
    indirect_capacity: usize = 8;
    indirect_retries: u8 = 0;
    injected_loss: f64 = 0.0;
    wired_delay_ms: u64 = 6;
    reassembly_timeout_ms: u64 = 2000;
    /// Relays forward fragments as they arrive instead of reassembling.
    fragment_forwarding: bool = true;
    sack: bool = true;
    delayed_ack: bool = true;
    limited_transmit: bool = true;
    rto_min_ms: u64 = 1000;
    rto_max_ms: u64 = 64000;
    rto_initial_ms: u64 = 1000;
    tcp_max_rto_fires: u32 = 12;
    coap_ack_timeout_ms: u64 = 3000;
    coap_max_retransmit: u32 = 4;
    coap_jitter: bool = false;
    cocoa_rto_min_ms: u64 = 300;
    reading_bytes: usize = 82;
    reading_period_ms: u64 = 1000;
    batch: usize = 64;
    app_queue: usize = 512;
    request_bytes: usize = 40;
    response_bytes: usize = 82;
    request_interval_ms: u64 = 5000;
    persistent: bool = false;
    flows: usize = 4;
    interval_s: f64 = 40.0;
    sample_ms: u64 = 1000;
    trace: bool = false;
}

impl ScenarioConfig {
    /// Parses `key = value` lines; `#` starts a comment. Later keys
    /// override earlier ones and unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line_no, format!("expected key = value, got {line:?}")))?;
            self.set(k.trim(), v.trim()).map_err(|m| ConfigError::at(line_no, m))?;
        }
        self.validate().map_err(|m| ConfigError::at(0, m))
    }

    /// Canonical text form; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&self.get(k).expect("known key"));
            s.push('\n');
        }
        s
    }

    pub fn validate(&self) -> Result<(), String> {
        self.budget().map_err(|e| e.to_string())?;
        if self.topology == TopoKind::Chain && self.hops == 0 {
            return Err("hops must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.link_delivery) {
            return Err("link_delivery must be in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.injected_loss) {
            return Err("injected_loss must be in [0, 1)".into());
        }
        if self.duration_s <= 0.0 || self.warmup_s < 0.0 || self.drain_s < 0.0 || self.warmup_s >= self.duration_s {
            return Err("need duration_s > warmup_s >= 0 and drain_s >= 0".into());
        }
        if self.mss_frames == 0 || self.mss_frames > 10 {
            return Err("mss_frames must be in 1..=10".into());
        }
        if self.send_buffer == 0 || self.recv_buffer == 0 {
            return Err("buffers must be positive".into());
        }
        if self.min_be > self.max_be || self.max_be > 8 {
            return Err("need min_be <= max_be <= 8".into());
        }
        if !(self.red_min_th < self.red_max_th && self.red_max_p > 0.0 && self.red_max_p <= 1.0) {
            return Err("need red_min_th < red_max_th and 0 < red_max_p <= 1".into());
        }
        if !(self.red_weight > 0.0 && self.red_weight <= 1.0) {
            return Err("red_weight must be in (0, 1]".into());
        }
        if self.queue_capacity < self.mss_frames {
            return Err("queue_capacity must hold at least one segment".into());
        }
        if self.rto_min_ms > self.rto_max_ms || self.sleep_interval_ms == 0 || self.sample_ms == 0 {
            return Err("need rto_min_ms <= rto_max_ms and positive intervals".into());
        }
        if self.interval_s <= 0.0 {
            return Err("interval_s must be positive".into());
        }
        self.workload_spec().validate()?;
        self.topology_spec();
        Ok(())
    }

    pub fn budget(&self) -> Result<HeaderBudget, crate::sixlowpan::BudgetError> {
        HeaderBudget::new(self.header_first, self.header_nth)
    }

    pub fn mss_bytes(&self) -> usize {
        mss_payload_bytes(self.mss_frames, &self.budget().expect("validated"))
    }

    pub fn topology_spec(&self) -> TopologySpec {
        match self.topology {
            TopoKind::Chain => TopologySpec::Chain { hops: self.hops as usize },
            TopoKind::Tree => TopologySpec::Tree {
                root: self.tree_edges.0.first().map(|e| e.0).unwrap_or(1),
                edges: self.tree_edges.0.clone(),
                leaves: self.tree_leaves.0.clone(),
            },
        }
    }

    pub fn link_policy(&self) -> LinkTxPolicy {
        LinkTxPolicy {
            max_retries: self.max_retries,
            retry_delay_us: self.retry_delay_us,
            csma: CsmaParams {
                min_be: self.min_be,
                max_be: self.max_be,
                max_backoffs: self.max_backoffs,
                unit_backoff_us: self.unit_backoff_us,
            },
            deaf_listening: self.deaf_listening,
        }
    }

    pub fn red_params(&self) -> Option<RedParams> {
        self.red.then(|| RedParams {
            min_th: self.red_min_th,
            max_th: self.red_max_th,
            max_p: self.red_max_p,
            weight: self.red_weight,
            ..RedParams::default()
        })
    }

    pub fn tcp_config(&self) -> TcpConfig {
        TcpConfig {
            mss: self.mss_bytes(),
            send_buffer: self.send_buffer,
            recv_buffer: self.recv_buffer,
            rto_min_us: self.rto_min_ms * MS,
            rto_max_us: self.rto_max_ms * MS,
            rto_initial_us: self.rto_initial_ms * MS,
            max_rto_fires: self.tcp_max_rto_fires,
            delayed_ack: self.delayed_ack,
            sack: self.sack,
            ecn: self.ecn,
            limited_transmit: self.limited_transmit,
            ..TcpConfig::default()
        }
    }

    pub fn coap_config(&self) -> CoapConfig {
        CoapConfig {
            mode: match self.transport {
                Transport::Cocoa => CoapMode::Cocoa,
                Transport::NonConfirmable => CoapMode::NonConfirmable,
                _ => CoapMode::Confirmable,
            },
            ack_timeout_us: self.coap_ack_timeout_ms * MS,
            max_retransmit: self.coap_max_retransmit,
            jitter: self.coap_jitter,
            cocoa_rto_min_us: self.cocoa_rto_min_ms * MS,
            ..CoapConfig::default()
        }
    }

    /// Payload bytes of one CoAP message sized like a TCP segment.
    pub fn coap_block_bytes(&self) -> usize {
        let b = self.budget().expect("validated").with_first_delta(self.coap_header_delta);
        mss_payload_bytes(self.mss_frames, &b)
    }

    pub fn duty_config(&self) -> DutyConfig {
        DutyConfig {
            base_sleep_us: self.sleep_interval_ms * MS,
            adaptive: self.adaptive,
            adaptive_interval_us: self.adaptive_interval_ms * MS,
            data_request_timeout_us: self.data_request_timeout_ms * MS,
            pending_listen_cap_us: self.pending_listen_cap_ms * MS,
            preemption: self.preemption,
            indirect_capacity: self.indirect_capacity,
            indirect_retries: self.indirect_retries,
        }
    }

    pub fn workload_spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            kind: self.workload,
            reading_bytes: self.reading_bytes,
            period_us: self.reading_period_ms * MS,
            batch: self.batch,
            request_bytes: self.request_bytes,
            response_bytes: self.response_bytes,
            request_interval_us: self.request_interval_ms * MS,
            flows: self.flows,
            interval_us: (self.interval_s * SEC as f64) as u64,
            persistent: self.persistent,
            app_queue: self.app_queue,
        }
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_s * SEC as f64).round() as u64
    }

    pub fn warmup_us(&self) -> u64 {
        (self.warmup_s * SEC as f64).round() as u64
    }

    pub fn drain_us(&self) -> u64 {
        (self.drain_s * SEC as f64).round() as u64
    }
}

impl fmt::Display for ScenarioConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_default() {
        let c = ScenarioConfig::default();
        assert_eq!(ScenarioConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_overrides() {
        let c = ScenarioConfig::parse("# header\nhops = 3   # chain\n\nretry_delay_us=40000\n").unwrap();
        assert_eq!(c.hops, 3);
        assert_eq!(c.retry_delay_us, 40_000);
    }

    #[test]
    fn line_precise_errors() {
        let e = ScenarioConfig::parse("hops = 3\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, 2);
        let e = ScenarioConfig::parse("hops = 3\n\nmss_frames = five\n").unwrap_err();
        assert_eq!(e.line, 3);
        let e = ScenarioConfig::parse("just words\n").unwrap_err();
        assert_eq!(e.line, 1);
    }

    #[test]
    fn rejects_invalid_combination() {
        assert!(ScenarioConfig::parse("header_first = 20\n").is_err());
        assert!(ScenarioConfig::parse("injected_loss = 1.5\n").is_err());
    }

    #[test]
    fn edges_roundtrip() {
        let mut c = ScenarioConfig::default();
        c.set("tree_edges", "1-2,2-3").unwrap();
        assert_eq!(c.tree_edges.0, vec![(1, 2), (2, 3)]);
        assert_eq!(c.get("tree_edges").unwrap(), "1-2,2-3");
        c.set("tree_edges", "reference").unwrap();
        assert_eq!(c.get("tree_edges").unwrap(), "reference");
    }

    #[test]
    fn derived_sizes() {
        let c = ScenarioConfig::default();
        assert_eq!(c.mss_bytes(), 462);
        assert_eq!(c.coap_block_bytes(), 482);
    }
}

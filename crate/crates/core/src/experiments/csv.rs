//! Result bundles: the CSV files of one run, built in memory so they can be
//! hashed before (or instead of) touching the disk.

use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::run::{RunResult, Summary};
use crate::analytics::FlowMetrics;

/// Named files of one run, in a fixed order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bundle {
    pub files: Vec<(String, String)>,
}

impl Bundle {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every file under `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of each file.
    pub fn hashes(&self) -> Vec<(String, String)> {
        self.files.iter().map(|(n, c)| (n.clone(), sha256_hex(c.as_bytes()))).collect()
    }

    /// One hash over all files and their names.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (n, c) in &self.files {
            h.update(n.as_bytes());
            h.update([0]);
            h.update(c.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders rows under `header` with LF line ends. Each row must have as
/// many cells as the header.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("rows match the header");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

pub const SUMMARY_COLUMNS: &[&str] = &[
    "seed",
    "flows",
    "goodput_bps",
    "segment_loss",
    "rtt_mean_us",
    "rtt_median_us",
    "rtt_q1_us",
    "rtt_q3_us",
    "retx_timeout",
    "retx_fast",
    "retx_sack",
    "reliability",
    "duty_cycle",
    "generated",
    "delivered",
    "overflow",
    "lost",
    "pending",
    "requests",
    "requests_done",
    "latency_median_us",
    "coap_transmissions",
    "coap_give_ups",
    "interval_q1_bps",
    "interval_median_bps",
    "interval_q3_bps",
    "integrity_errors",
    "events",
];

pub fn summary_cells(seed: u64, s: &Summary) -> Vec<String> {
    let m = &s.metrics;
    vec![
        seed.to_string(),
        s.flows.to_string(),
        f(s.goodput_bps),
        f(s.segment_loss),
        f(s.rtt_mean_us),
        f(m.rtt.median),
        f(m.rtt.q1),
        f(m.rtt.q3),
        m.retx.timeout.to_string(),
        m.retx.fast.to_string(),
        m.retx.sack_hole.to_string(),
        f(s.reliability),
        f(s.leaf_duty_cycle),
        s.generated.to_string(),
        s.delivered.to_string(),
        s.overflow.to_string(),
        s.lost.to_string(),
        s.pending.to_string(),
        s.requests.to_string(),
        s.requests_done.to_string(),
        f(s.latency_median_us),
        s.coap_transmissions.to_string(),
        s.coap_give_ups.to_string(),
        f(s.interval_goodput.q1),
        f(s.interval_goodput.median),
        f(s.interval_goodput.q3),
        s.integrity_errors.to_string(),
        s.events.to_string(),
    ]
}

const FLOW_COLUMNS: &[&str] = &[
    "flow",
    "app",
    "transport",
    "src",
    "dst",
    "valid",
    "goodput_bps",
    "segment_loss",
    "rtt_mean_us",
    "rtt_median_us",
    "rtt_q1_us",
    "rtt_q3_us",
    "retx_timeout",
    "retx_fast",
    "retx_sack",
    "reliability",
    "duty_cycle",
    "segments_sent",
    "segments_received",
    "rto_fires",
    "ecn_reductions",
    "connections",
    "aborts",
    "coap_transmissions",
    "coap_retransmissions",
    "coap_give_ups",
    "generated",
    "delivered",
    "overflow",
    "lost",
    "pending",
];

/// Builds the bundle of one run.
pub fn bundle(r: &RunResult) -> Bundle {
    let out = &r.output;
    let label = |n: u16| out.nodes.get(n as usize).map_or(0, |s| s.label);
    let mut files = Vec::new();
    files.push(("config.txt".to_string(), r.config.to_text()));
    files.push((
        "summary.csv".to_string(),
        table(SUMMARY_COLUMNS, [summary_cells(r.config.seed, &r.summary)]),
    ));

    let flows = out.flows.iter().zip(&r.flow_metrics).map(|(fl, m): (_, &FlowMetrics)| {
        vec![
            fl.id.to_string(),
            fl.app.to_string(),
            fl.transport.as_str().to_string(),
            label(fl.src).to_string(),
            label(fl.dst).to_string(),
            u8::from(m.valid).to_string(),
            f(m.goodput_bps),
            f(m.segment_loss),
            f(m.rtt_mean_us),
            f(m.rtt.median),
            f(m.rtt.q1),
            f(m.rtt.q3),
            m.retx.timeout.to_string(),
            m.retx.fast.to_string(),
            m.retx.sack_hole.to_string(),
            f(m.reliability),
            f(m.duty_cycle),
            fl.segments_sent.to_string(),
            fl.segments_received.to_string(),
            fl.rto_fires.to_string(),
            fl.ecn_reductions.to_string(),
            fl.connections.to_string(),
            fl.aborts.to_string(),
            fl.coap_transmissions.to_string(),
            fl.coap_retransmissions.to_string(),
            fl.coap_give_ups.to_string(),
            fl.generated.to_string(),
            fl.delivered.to_string(),
            fl.overflow.to_string(),
            fl.lost.to_string(),
            fl.pending.to_string(),
        ]
    });
    files.push(("flows.csv".to_string(), table(FLOW_COLUMNS, flows)));

    let interval_us = (r.config.interval_s * 1e6) as u64;
    let mut rows = Vec::new();
    for fl in &out.flows {
        let g = crate::analytics::interval_goodputs(&fl.deliveries, out.warmup_us, out.stop_us, interval_us);
        for (i, bps) in g.into_iter().enumerate() {
            let start = out.warmup_us + i as u64 * interval_us;
            rows.push(vec![fl.id.to_string(), i.to_string(), start.to_string(), f(bps)]);
        }
    }
    files.push((
        "intervals.csv".to_string(),
        table(&["flow", "interval", "start_us", "goodput_bps"], rows),
    ));

    let links = out.links.iter().map(|(&(a, b), l)| {
        vec![
            label(a).to_string(),
            label(b).to_string(),
            l.attempts.to_string(),
            l.retries.to_string(),
            l.delivered.to_string(),
            l.failed.to_string(),
            l.cca_failures.to_string(),
            l.rx_decoded.to_string(),
            l.rx_collision.to_string(),
            l.rx_asleep.to_string(),
            l.rx_busy.to_string(),
            l.rx_random.to_string(),
            l.acks_sent.to_string(),
            l.acks_lost.to_string(),
        ]
    });
    files.push((
        "links.csv".to_string(),
        table(
            &[
                "src",
                "dst",
                "attempts",
                "retries",
                "delivered",
                "failed",
                "cca_failures",
                "rx_decoded",
                "rx_collision",
                "rx_asleep",
                "rx_busy",
                "rx_random",
                "acks_sent",
                "acks_lost",
            ],
            links,
        ),
    ));

    let nodes = out.nodes.iter().map(|n| {
        vec![
            n.label.to_string(),
            n.role.map_or("cloud".to_string(), |r| format!("{r:?}").to_lowercase()),
            u8::from(n.sleepy).to_string(),
            f(n.duty_cycle),
            n.radio_on_us.to_string(),
            n.mac_busy_us.to_string(),
            n.originated.to_string(),
            n.forwarded.to_string(),
            n.queue_drops.to_string(),
            n.red_drops.to_string(),
            n.red_marks.to_string(),
            n.indirect_drops.to_string(),
            n.mac_drops.to_string(),
            n.reasm_expired.to_string(),
            n.reasm_evicted.to_string(),
            n.injected_drops.to_string(),
            n.polls.to_string(),
            n.dup_frames.to_string(),
        ]
    });
    files.push((
        "nodes.csv".to_string(),
        table(
            &[
                "node",
                "role",
                "sleepy",
                "duty_cycle",
                "radio_on_us",
                "mac_busy_us",
                "originated",
                "forwarded",
                "queue_drops",
                "red_drops",
                "red_marks",
                "indirect_drops",
                "mac_drops",
                "reasm_expired",
                "reasm_evicted",
                "injected_drops",
                "polls",
                "dup_frames",
            ],
            nodes,
        ),
    ));

    let series = out.series.iter().map(|p| {
        vec![
            p.t_us.to_string(),
            p.flow.to_string(),
            p.cwnd.to_string(),
            p.ssthresh.to_string(),
            p.flight.to_string(),
            p.snd_wnd.to_string(),
            p.srtt_us.to_string(),
            p.rto_us.to_string(),
        ]
    });
    files.push((
        "tcp_series.csv".to_string(),
        table(
            &["t_us", "flow", "cwnd", "ssthresh", "flight", "snd_wnd", "srtt_us", "rto_us"],
            series,
        ),
    ));

    let requests = out.flows.iter().flat_map(|fl| fl.requests.iter()).map(|q| {
        vec![
            q.flow.to_string(),
            q.id.to_string(),
            q.start_us.to_string(),
            q.end_us.map_or(String::new(), |e| e.to_string()),
            q.latency_us().map_or(String::new(), |l| l.to_string()),
            q.bytes.to_string(),
        ]
    });
    files.push((
        "requests.csv".to_string(),
        table(&["flow", "request", "start_us", "end_us", "latency_us", "bytes"], requests),
    ));

    if !out.trace.is_empty() {
        let mut t = out.trace.join("\n");
        t.push('\n');
        files.push(("trace.txt".to_string(), t));
    }
    Bundle { files }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(table(&["a", "b"], Vec::<Vec<String>>::new()), "a,b\n");
    }

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn summary_row_matches_header() {
        assert_eq!(summary_cells(1, &Summary::default()).len(), SUMMARY_COLUMNS.len());
    }
}

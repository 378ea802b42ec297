//! Whole-network invariants on short scenarios.

use llnsim::analytics::{multihop_bound, single_hop_bound, RadioModel};
use llnsim::experiments::acceptance::{chain, sense, single_hop};
use llnsim::experiments::{bundle, run_scenario, ScenarioConfig};
use llnsim::phy::{CsmaParams, LinkTxPolicy};
use llnsim::sim::SimRng;
use llnsim::workloads::Transport;

fn short(mut c: ScenarioConfig, secs: f64) -> ScenarioConfig {
    c.duration_s = secs;
    c
}

#[test]
fn readings_are_conserved() {
    for t in [Transport::Tcp, Transport::Coap, Transport::Cocoa, Transport::NonConfirmable] {
        for loss in [0.0, 0.1] {
            let r = run_scenario(&short(sense(3, t, loss), 600.0)).unwrap();
            for f in &r.output.flows {
                assert!(f.generated > 0);
                assert_eq!(
                    f.generated,
                    f.delivered + f.pending + f.overflow + f.lost,
                    "{t:?} loss {loss}: {f:?}"
                );
            }
            assert_eq!(r.summary.integrity_errors, 0);
        }
    }
}

#[test]
fn link_attempts_within_retry_bound() {
    for d in [0, 40_000] {
        let r = run_scenario(&short(chain(5, 3, d), 60.0)).unwrap();
        let max = 1 + r.config.max_retries as u64;
        for (&(a, b), l) in &r.output.links {
            // one frame per link may still be in progress at the end
            assert!(
                l.attempts <= max * (l.delivered + l.failed + 1),
                "{a}->{b}: {l:?}"
            );
        }
    }
}

#[test]
fn zero_loss_chains_respect_multihop_bound() {
    let c = single_hop(2);
    let radio = RadioModel {
        unused_per_frame: c.unused_per_frame,
        ..RadioModel::default()
    };
    let b = single_hop_bound(&c.budget().unwrap(), c.mss_frames, &radio);
    for hops in 1..=4 {
        let cfg = ScenarioConfig {
            hops,
            duration_s: 60.0,
            retry_delay_us: 40_000,
            ..single_hop(2)
        };
        let g = run_scenario(&cfg).unwrap().summary.goodput_bps;
        assert!(g > 0.0 && g <= multihop_bound(b, hops), "{hops} hops: {g}");
    }
}

#[test]
fn same_seed_same_bundle_other_seed_differs() {
    let cfg = short(chain(9, 2, 5_000), 20.0);
    let a = bundle(&run_scenario(&cfg).unwrap());
    let b = bundle(&run_scenario(&cfg).unwrap());
    assert_eq!(a.hashes(), b.hashes());
    let other = ScenarioConfig { seed: 10, ..cfg };
    let c = bundle(&run_scenario(&other).unwrap());
    assert_ne!(a.get("links.csv"), c.get("links.csv"));
}

#[test]
fn bundle_carries_resolved_config() {
    let cfg = short(chain(21, 2, 5_000), 10.0);
    let b = bundle(&run_scenario(&cfg).unwrap());
    let back = ScenarioConfig::parse(b.get("config.txt").unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(b.get("summary.csv").unwrap().lines().nth(1).unwrap().starts_with("21,"));
    for (name, body) in &b.files {
        assert!(body.ends_with('\n') && !body.contains('\r'), "{name}");
    }
}

/// Two hidden senders retrying after a collision: the chance that their
/// next full-size frames overlap again, by retry delay bound.
fn recollision(d_us: u64, trials: u32) -> f64 {
    let air = 127 * 32;
    let policy = LinkTxPolicy {
        retry_delay_us: d_us,
        csma: CsmaParams::default(),
        ..LinkTxPolicy::default()
    };
    let mut rng = SimRng::new(77, d_us);
    let mut hits = 0;
    for _ in 0..trials {
        let mut start = || policy.retry_delay(&mut rng) + policy.csma.backoff(policy.csma.min_be, &mut rng);
        let (a, b) = (start(), start());
        if a.abs_diff(b) < air {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}

#[test]
fn hidden_terminal_recollision_falls_with_retry_delay() {
    assert_eq!(recollision(0, 20_000), 1.0);
    let mut last = 1.0;
    for d in [5_000, 10_000, 40_000, 100_000] {
        let p = recollision(d, 20_000);
        assert!(p < last, "d={d}: {p} !< {last}");
        last = p;
    }
    assert!(last < 0.1);
}

//! Shared fixtures for the criterion benches.

use llnsim::experiments::ScenarioConfig;

/// Segment offsets of a `len`-byte stream cut into `seg`-byte pieces, in a
/// scrambled but fixed order (stride walk over the segment indices).
pub fn scrambled_segments(len: usize, seg: usize) -> Vec<(usize, usize)> {
    let n = len.div_ceil(seg);
    let stride = (1..n.max(2)).rev().find(|s| gcd(*s, n) == 1).unwrap_or(1);
    (0..n)
        .map(|i| {
            let k = i * stride % n;
            (k * seg, seg.min(len - k * seg))
        })
        .collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// A few simulated seconds of single-hop bulk transfer.
pub fn short_single_hop() -> ScenarioConfig {
    ScenarioConfig {
        hops: 1,
        duration_s: 10.0,
        warmup_s: 1.0,
        ..ScenarioConfig::default()
    }
}

/// Three hops with link retries spaced out.
pub fn short_chain() -> ScenarioConfig {
    ScenarioConfig {
        hops: 3,
        retry_delay_us: 40_000,
        ..short_single_hop()
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

mod common;

use llnsim::experiments::acceptance::{scenario_checks, Check};

const PERMUTATIONS: u64 = 10_000;

fn c7_recv_buffer_oracle() -> Check {
    let mut failures = Vec::new();
    for seed in 0..PERMUTATIONS {
        let a = common::arrivals(seed);
        match common::replay(&a) {
            Ok((got, want)) if got == want && got == a.message => {}
            Ok(_) => failures.push(format!("seed {seed}: stream mismatch")),
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    Check {
        id: 7,
        name: "recv buffer oracle",
        pass: failures.is_empty(),
        detail: match failures.first() {
            None => format!("{PERMUTATIONS} arrival permutations byte-exact, window identity held"),
            Some(f) => format!("{} of {PERMUTATIONS} failed, first {f}", failures.len()),
        },
    }
}

fn main() {
    let seed = 1;
    let mut checks = scenario_checks(seed, false);
    checks.push(c7_recv_buffer_oracle());
    checks.sort_by_key(|c| c.id);
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<u8> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "acceptance: {} passed, {} failed",
        checks.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

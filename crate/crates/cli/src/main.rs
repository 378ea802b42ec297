use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use llnsim::analytics::{model_classic, model_lln, ModelParams};
use llnsim::experiments::acceptance::{c12_determinism, scenario_checks};
use llnsim::experiments::{bundle, run_scenario, sweep, table, RunResult, ScenarioConfig};

#[derive(Parser)]
#[command(name = "llnsim", version, about = "TCP over low-power lossy network simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its CSV bundle.
    Run {
        /// key=value scenario file
        cfg: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: results/<cfg name>-seed<N>)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario once per value of one config field.
    Sweep {
        cfg: PathBuf,
        #[arg(long)]
        axis: String,
        /// Comma-separated numeric values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the goodput models over a parameter grid (comma lists allowed).
    Model {
        /// Segment payload, bytes
        #[arg(long, value_delimiter = ',', required = true)]
        mss: Vec<f64>,
        /// Round-trip time, milliseconds
        #[arg(long, value_delimiter = ',', required = true)]
        rtt: Vec<f64>,
        /// Window, segments
        #[arg(long, value_delimiter = ',', required = true)]
        w: Vec<f64>,
        /// Segment loss probability
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        ell: Vec<f64>,
    },
    /// Run the acceptance scenarios; `--quick` only checks determinism.
    Validate {
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ScenarioConfig::parse(&text).with_context(|| format!("{}", path.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(anyhow::Error::msg)?;
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned())
}

fn summary_line(r: &RunResult) -> String {
    let s = &r.summary;
    format!(
        "goodput {:.2} kb/s  loss {:.4}  rtt {:.1} ms  reliability {:.4}  duty {:.4}",
        s.goodput_bps / 1e3,
        s.segment_loss,
        s.rtt_mean_us / 1e3,
        s.reliability,
        s.leaf_duty_cycle
    )
}

fn run(cfg: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let c = load(&cfg, seed)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("results").join(format!("{}-seed{}", stem(&cfg), c.seed)));
    let r = run_scenario(&c)?;
    bundle(&r).write_to(&dir).with_context(|| format!("writing {}", dir.display()))?;
    println!("{}", summary_line(&r));
    println!("wrote {}", dir.display());
    Ok(())
}

fn run_sweep(cfg: PathBuf, axis: String, values: Vec<String>, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let c = load(&cfg, seed)?;
    let dir = out.unwrap_or_else(|| PathBuf::from("results").join(format!("{}-{axis}", stem(&cfg))));
    let res = sweep(&c, &axis, &values)?;
    for (v, r) in res.values.iter().zip(&res.runs) {
        bundle(r).write_to(&dir.join(format!("{axis}={v}")))?;
        println!("{axis}={v}  {}", summary_line(r));
    }
    std::fs::write(dir.join("sweep.csv"), res.combined_csv())?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn model(mss: &[f64], rtt: &[f64], w: &[f64], p: &[f64], ell: &[f64]) -> Result<String> {
    let mut rows = Vec::new();
    for &m in mss {
        for &r in rtt {
            for &wi in w {
                for &pi in p {
                    for &e in ell {
                        let q = ModelParams {
                            ell: e,
                            ..ModelParams::new(m, r * 1e3, wi, pi)
                        };
                        let lln = model_lln(&q).with_context(|| format!("mss={m} rtt={r} w={wi} p={pi} ell={e}"))?;
                        let classic = model_classic(m, r * 1e3, pi).map_or(String::new(), |x| format!("{x:.1}"));
                        rows.push(vec![
                            m.to_string(),
                            r.to_string(),
                            wi.to_string(),
                            pi.to_string(),
                            e.to_string(),
                            format!("{lln:.1}"),
                            classic,
                        ]);
                    }
                }
            }
        }
    }
    Ok(table(&["mss_bytes", "rtt_ms", "w", "p", "ell", "lln_bps", "classic_bps"], rows))
}

fn validate(quick: bool, seed: u64) -> bool {
    let checks = if quick {
        vec![c12_determinism(true)]
    } else {
        scenario_checks(seed, false)
    };
    for c in &checks {
        println!("{c}");
    }
    checks.iter().all(|c| c.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run { cfg, seed, out } => run(cfg, seed, out),
        Cmd::Sweep {
            cfg,
            axis,
            values,
            seed,
            out,
        } => run_sweep(cfg, axis, values, seed, out),
        Cmd::Model { mss, rtt, w, p, ell } => model(&mss, &rtt, &w, &p, &ell).map(|t| print!("{t}")),
        Cmd::Validate { quick, seed } => {
            if validate(quick, seed) {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_grid_rows() {
        let t = model(&[462.0], &[100.0], &[4.0], &[0.0, 0.06], &[2.0]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("462,100,4,0,2,147840.0,"));
        assert!(lines[2].contains(",99891.9,"), "{}", lines[2]);
    }

    #[test]
    fn model_rejects_certain_loss() {
        assert!(model(&[462.0], &[100.0], &[4.0], &[1.0], &[2.0]).is_err());
    }
}

use rayon::prelude::*;
use thiserror::Error;

use super::config::ScenarioConfig;
use super::csv::{summary_cells, table, SUMMARY_COLUMNS};
use super::run::{run_scenario, RunError, RunResult};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("unknown axis {0:?}")]
    Axis(String),
    #[error("axis value {0:?} is not numeric")]
    NonNumeric(String),
    #[error("axis value {value:?}: {msg}")]
    Value { value: String, msg: String },
    #[error("run with {axis}={value}: {source}")]
    Run {
        axis: String,
        value: String,
        source: RunError,
    },
}

/// One run per axis value.
#[derive(Debug)]
pub struct SweepResult {
    pub axis: String,
    pub values: Vec<String>,
    pub runs: Vec<RunResult>,
}

impl SweepResult {
    /// Combined CSV: the axis value followed by the summary columns.
    pub fn combined_csv(&self) -> String {
        let mut header = vec![self.axis.as_str()];
        header.extend_from_slice(SUMMARY_COLUMNS);
        let rows = self.values.iter().zip(&self.runs).map(|(v, r)| {
            let mut row = vec![v.clone()];
            row.extend(summary_cells(r.config.seed, &r.summary));
            row
        });
        table(&header, rows)
    }
}

/// Configs for each value of `axis`, checked before anything runs.
pub fn sweep_configs(base: &ScenarioConfig, axis: &str, values: &[String]) -> Result<Vec<ScenarioConfig>, SweepError> {
    if base.get(axis).is_none() {
        return Err(SweepError::Axis(axis.to_string()));
    }
    values
        .iter()
        .map(|v| {
            if v.trim().parse::<f64>().is_err() {
                return Err(SweepError::NonNumeric(v.clone()));
            }
            let mut c = base.clone();
            c.set(axis, v.trim()).map_err(|msg| SweepError::Value {
                value: v.clone(),
                msg,
            })?;
            c.validate().map_err(|msg| SweepError::Value {
                value: v.clone(),
                msg,
            })?;
            Ok(c)
        })
        .collect()
}

/// Runs `base` once per value of `axis`, in parallel.
pub fn sweep(base: &ScenarioConfig, axis: &str, values: &[String]) -> Result<SweepResult, SweepError> {
    let cfgs = sweep_configs(base, axis, values)?;
    let runs = cfgs
        .par_iter()
        .zip(values.par_iter())
        .map(|(c, v)| {
            run_scenario(c).map_err(|source| SweepError::Run {
                axis: axis.to_string(),
                value: v.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResult {
        axis: axis.to_string(),
        values: values.iter().map(|v| v.trim().to_string()).collect(),
        runs,
    })
}

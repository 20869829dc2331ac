//! Single-shot tasks: simulate, estimate from stored samples, closure diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::with_pool;
use crate::dynamics::{self, SampleSet};
use crate::error::{Error, Result};
use crate::estimator::{self, ClosureReport, MomentPair, OperatorEstimate};
use crate::io::{self, fmt_f64};
use crate::seed::stream_seed;

/// Generates `steps` pairs (default `max(t_grid)`). A configured `x0` gives a
/// single trajectory from that state; otherwise the configured protocol is used.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let system = cfg.build_system()?;
    let steps = cfg.simulate.steps.unwrap_or_else(|| cfg.max_t());
    let seed = stream_seed(cfg.base_seed, "simulate");
    match &cfg.simulate.x0 {
        Some(x0) => dynamics::simulate(&system, x0, steps, seed),
        None => dynamics::generate(&system, &cfg.domain(), steps, seed, cfg.protocol),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateReport {
    pub sample_count: usize,
    pub condition_sigma0: f64,
    pub fallback: bool,
    pub delta_hat: f64,
    pub per_basis_variance: Vec<f64>,
    pub max_abs_residual: f64,
}

pub fn run_estimate(cfg: &ExperimentConfig, samples: &SampleSet) -> Result<(OperatorEstimate, EstimateReport)> {
    let dict = cfg.build_dictionary()?;
    let moments = estimator::accumulate(MomentPair::new(&dict), &dict, samples)?;
    let mut k = estimator::estimate_koopman(&moments)?;
    k.seed = Some(samples.seed);
    let res = estimator::residuals(&dict, samples, &k)?;
    let report = EstimateReport {
        sample_count: k.sample_count,
        condition_sigma0: if k.condition_sigma0.is_finite() {
            k.condition_sigma0
        } else {
            f64::MAX
        },
        fallback: k.fallback,
        delta_hat: res.delta_hat,
        per_basis_variance: res.per_basis_variance,
        max_abs_residual: res.max_abs_residual,
    };
    Ok((k, report))
}

pub fn write_estimate(k: &OperatorEstimate, report: &EstimateReport, dir: &Path) -> Result<()> {
    io::write_operator(&dir.join("koopman.csv"), k)?;
    io::write_json(&dir.join("estimate_report.json"), report)
}

pub fn run_closure(cfg: &ExperimentConfig) -> Result<ClosureReport> {
    cfg.validate()?;
    let system = cfg.build_system()?;
    let dict = cfg.build_dictionary()?;
    with_pool(cfg.workers, || {
        estimator::closure_check(
            &dict,
            &system,
            &cfg.domain(),
            cfg.closure.n_states,
            cfg.closure.n_mc,
            stream_seed(cfg.base_seed, "closure"),
        )
    })
}

pub fn write_closure(cfg: &ExperimentConfig, report: &ClosureReport, dir: &Path) -> Result<()> {
    let path = dir.join("closure.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["label", "observable", "defect", "noise_floor"])?;
    for ((name, d), f) in report.names.iter().zip(&report.defect).zip(&report.noise_floor) {
        w.write_record([cfg.label.clone(), name.clone(), fmt_f64(*d), fmt_f64(*f)])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    io::write_json(&dir.join("closure.meta.json"), report)
}

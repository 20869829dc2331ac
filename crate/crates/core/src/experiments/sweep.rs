//! Error-versus-sample-count sweeps with realization averaging.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{is_invalid_point, with_pool};
use crate::dynamics::{RunningMoments, SampleSource};
use crate::error::{Error, Result};
use crate::estimator;
use crate::io::{self, fmt_f64};
use crate::seed::{derive_seed, stream_seed};

/// Mean errors at or below this are treated as exact recovery; no slope is fitted.
pub const DEGENERATE_ERROR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub t_values: Vec<usize>,
    /// `||K_hat - K||_F / ||K||_F` averaged over successful realizations.
    pub mean_rel_err: Vec<f64>,
    pub std_err: Vec<f64>,
    pub n_ok: Vec<usize>,
    pub n_failed: Vec<usize>,
    /// Points where more than 20% of realizations failed.
    pub invalid: Vec<bool>,
    pub fitted_slope: Option<f64>,
    pub slope_stderr: Option<f64>,
}

impl ErrorCurve {
    pub fn any_invalid(&self) -> bool {
        self.invalid.iter().any(|&b| b)
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.mean_rel_err.windows(2).all(|w| w[1] < w[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference {
    /// Exact matrix of a closed system.
    GroundTruth,
    /// Estimate from one long run.
    HighSampleEstimate { sample_count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    pub sample_count: usize,
    pub realization: usize,
    pub seed: u64,
    pub rel_err: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub label: String,
    pub curve: ErrorCurve,
    pub realizations: Vec<RealizationRecord>,
    pub reference: Reference,
    pub reference_matrix: DMatrix<f64>,
}

/// Least-squares slope of `log(err)` on `log(T)` and its standard error.
///
/// `None` with fewer than two points or any nonpositive or non-finite error.
pub fn fit_log_slope(t_values: &[usize], errors: &[f64]) -> Option<(f64, f64)> {
    if t_values.len() != errors.len() || t_values.len() < 2 {
        return None;
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = t_values.iter().map(|&t| (t as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let stderr = if xs.len() > 2 {
        let sse: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).powi(2))
            .sum();
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Some((slope, stderr))
}

fn reference_matrix(cfg: &ExperimentConfig) -> Result<(DMatrix<f64>, Reference)> {
    if let Some(k) = cfg.ground_truth() {
        return Ok((k, Reference::GroundTruth));
    }
    let system = cfg.build_system()?;
    let dict = cfg.build_dictionary()?;
    let sample_count = cfg.reference_factor * cfg.max_t();
    let seed = stream_seed(cfg.base_seed, "reference");
    let moments = estimator::accumulate_generated(&system, &dict, &cfg.domain(), sample_count, seed, cfg.protocol)?;
    let k = estimator::estimate_koopman(&moments)?;
    if k.fallback {
        return Err(Error::Singular("reference estimate needed the pseudo-solution".into()));
    }
    Ok((k.matrix, Reference::HighSampleEstimate { sample_count, seed }))
}

/// Relative error of one seeded realization against `reference`.
fn realization_error(
    cfg: &ExperimentConfig,
    system: &crate::dynamics::StochasticSystem,
    dict: &crate::basis::Dictionary,
    reference: &DMatrix<f64>,
    sample_count: usize,
    seed: u64,
    source: SampleSource,
) -> Result<f64> {
    let moments = estimator::accumulate_generated(system, dict, &cfg.domain(), sample_count, seed, source)?;
    let k = estimator::estimate_koopman(&moments)?;
    if k.fallback {
        return Err(Error::Singular("pseudo-solution fallback".into()));
    }
    Ok((&k.matrix - reference).norm() / reference.norm())
}

/// Runs every `(T, realization)` pair of the grid. Realization `r` at `T` uses
/// seed `derive_seed(base_seed, T, r)`; results do not depend on `workers`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    cfg.validate()?;
    let system = cfg.build_system()?;
    let dict = cfg.build_dictionary()?;
    with_pool(cfg.workers, || {
        let (reference_matrix, reference) = reference_matrix(cfg)?;
        if reference_matrix.norm() == 0.0 {
            return Err(Error::InvalidArgument("reference Koopman matrix is zero".into()));
        }
        let jobs: Vec<(usize, usize)> = cfg
            .t_grid
            .iter()
            .flat_map(|&t| (0..cfg.n_realizations).map(move |r| (t, r)))
            .collect();
        let realizations: Vec<RealizationRecord> = jobs
            .par_iter()
            .map(|&(t, r)| {
                let seed = derive_seed(cfg.base_seed, t as u64, r as u64);
                let outcome = realization_error(cfg, &system, &dict, &reference_matrix, t, seed, cfg.protocol);
                let (rel_err, status) = match outcome {
                    Ok(e) => (Some(e), "ok".to_string()),
                    Err(e) => (None, e.to_string()),
                };
                RealizationRecord {
                    sample_count: t,
                    realization: r,
                    seed,
                    rel_err,
                    status,
                }
            })
            .collect();
        let curve = aggregate(&cfg.t_grid, cfg.n_realizations, &realizations);
        Ok(SweepOutcome {
            label: cfg.label.clone(),
            curve,
            realizations,
            reference,
            reference_matrix,
        })
    })
}

fn aggregate(t_grid: &[usize], n_realizations: usize, records: &[RealizationRecord]) -> ErrorCurve {
    let mut curve = ErrorCurve {
        t_values: t_grid.to_vec(),
        mean_rel_err: Vec::new(),
        std_err: Vec::new(),
        n_ok: Vec::new(),
        n_failed: Vec::new(),
        invalid: Vec::new(),
        fitted_slope: None,
        slope_stderr: None,
    };
    for (i, &t) in t_grid.iter().enumerate() {
        let chunk = &records[i * n_realizations..(i + 1) * n_realizations];
        debug_assert!(chunk.iter().all(|r| r.sample_count == t));
        let mut m = RunningMoments::default();
        for e in chunk.iter().filter_map(|r| r.rel_err) {
            m.push(e);
        }
        let failed = n_realizations - m.count();
        let est = m.estimate();
        curve.mean_rel_err.push(if m.count() > 0 { est.mean } else { f64::NAN });
        curve.std_err.push(if m.count() > 1 { est.std_err } else { 0.0 });
        curve.n_ok.push(m.count());
        curve.n_failed.push(failed);
        curve.invalid.push(is_invalid_point(failed, n_realizations));
    }
    let degenerate = curve.mean_rel_err.iter().any(|e| !(*e > DEGENERATE_ERROR));
    if !degenerate {
        if let Some((slope, se)) = fit_log_slope(&curve.t_values, &curve.mean_rel_err) {
            curve.fitted_slope = Some(slope);
            curve.slope_stderr = Some(se);
        }
    }
    curve
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepMeta {
    pub label: String,
    pub base_seed: u64,
    pub n_realizations: usize,
    pub protocol: SampleSource,
    pub initial_condition: String,
    pub aggregate: String,
    pub reference: Reference,
    pub fitted_slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub invalid_t: Vec<usize>,
}

/// Writes `sweep.csv`, `sweep_realizations.csv`, `sweep.meta.json` and the reference matrix.
pub fn write_sweep(cfg: &ExperimentConfig, out: &SweepOutcome, dir: &Path) -> Result<()> {
    let c = &out.curve;
    let path = dir.join("sweep.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["label", "T", "n_ok", "n_failed", "mean_rel_err", "std_err"])?;
    for i in 0..c.t_values.len() {
        w.write_record([
            out.label.clone(),
            c.t_values[i].to_string(),
            c.n_ok[i].to_string(),
            c.n_failed[i].to_string(),
            fmt_f64(c.mean_rel_err[i]),
            fmt_f64(c.std_err[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("sweep_realizations.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record(["label", "T", "realization", "seed", "rel_err", "status"])?;
    for r in &out.realizations {
        w.write_record([
            out.label.clone(),
            r.sample_count.to_string(),
            r.realization.to_string(),
            r.seed.to_string(),
            r.rel_err.map(fmt_f64).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let dict = cfg.build_dictionary()?;
    io::write_matrix(&dir.join("reference_koopman.csv"), dict.names(), &out.reference_matrix)?;
    io::write_json(
        &dir.join("sweep.meta.json"),
        &SweepMeta {
            label: out.label.clone(),
            base_seed: cfg.base_seed,
            n_realizations: cfg.n_realizations,
            protocol: cfg.protocol,
            initial_condition: "uniform on domain".into(),
            aggregate: "mean".into(),
            reference: out.reference.clone(),
            fitted_slope: c.fitted_slope,
            slope_stderr: c.slope_stderr,
            invalid_t: c
                .t_values
                .iter()
                .zip(&c.invalid)
                .filter(|(_, &b)| b)
                .map(|(&t, _)| t)
                .collect(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_slope() {
        let ts = [100, 1_000, 10_000, 100_000];
        let errs: Vec<f64> = ts.iter().map(|&t| 3.0 / (t as f64).sqrt()).collect();
        let (slope, se) = fit_log_slope(&ts, &errs).unwrap();
        assert!((slope + 0.5).abs() <= 1e-10);
        assert!(se <= 1e-10);
    }

    #[test]
    fn slope_refuses_degenerate_input() {
        assert!(fit_log_slope(&[10], &[1.0]).is_none());
        assert!(fit_log_slope(&[10, 100], &[1.0, 0.0]).is_none());
        assert!(fit_log_slope(&[10, 100], &[1.0, f64::NAN]).is_none());
        let (s, se) = fit_log_slope(&[10, 100], &[1.0, 0.1]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
        assert_eq!(se, 0.0);
    }

    fn record(t: usize, e: Option<f64>) -> RealizationRecord {
        RealizationRecord {
            sample_count: t,
            realization: 0,
            seed: 0,
            rel_err: e,
            status: String::new(),
        }
    }

    #[test]
    fn aggregation_flags_failed_points() {
        let mut recs = Vec::new();
        for e in [Some(1.0), Some(3.0), None, Some(2.0), Some(2.0)] {
            recs.push(record(10, e));
        }
        for e in [Some(1.0), None, None, Some(1.0), Some(1.0)] {
            recs.push(record(20, e));
        }
        let c = aggregate(&[10, 20], 5, &recs);
        assert_eq!(c.n_ok, vec![4, 3]);
        assert_eq!(c.n_failed, vec![1, 2]);
        assert_eq!(c.invalid, vec![false, true]);
        assert_eq!(c.mean_rel_err, vec![2.0, 1.0]);
        assert!((c.std_err[0] - (2.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(c.std_err[1], 0.0);
        assert!(c.fitted_slope.is_some());
    }

    #[test]
    fn exact_recovery_skips_slope() {
        let recs = vec![record(10, Some(1e-15)), record(20, Some(1e-16))];
        let c = aggregate(&[10, 20], 1, &recs);
        assert!(c.fitted_slope.is_none());
        assert!(c.strictly_decreasing());
    }
}

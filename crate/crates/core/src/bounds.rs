//! High-probability error bounds for the least-squares Koopman estimate.
//!
//! With probability at least `1 - eps`,
//!
//! ```text
//! ||K_hat - K||_F <= sqrt(Delta) / (eps sqrt(T)) * sqrt(E{Tr Sigma0_hat} E{||Sigma0_hat^-1||_F^2})
//! ```
//!
//! and the P-F bound carries the extra factor `||Lambda||_2 ||Lambda^-1||_2`.
//! The expectations are estimated by Monte Carlo over independent
//! realizations; `Delta` is the residual-variance surrogate unless supplied.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Dictionary, Domain};
use crate::dynamics::{self, RunningMoments, SampleSource, StochasticSystem};
use crate::error::{Error, Result};
use crate::estimator::{self, sample_floor, MomentPair, SINGULAR_CONDITION};
use crate::seed::derive_seed;

/// Errors at or below this multiple of `||K||_F` are rounding noise and never
/// count as violations.
pub const ROUNDING_FLOOR: f64 = 1e-12;

/// Monte Carlo estimates of the two expectations entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub mean_trace_sigma0: f64,
    pub mean_frob_sq_inv_sigma0: f64,
    pub se_trace_sigma0: f64,
    pub se_frob_sq_inv_sigma0: f64,
    pub n_used: usize,
    pub n_singular: usize,
}

/// `(Tr Sigma0, ||Sigma0^-1||_F^2)`, or `None` when `Sigma0` is numerically singular.
pub fn sigma0_terms(sigma0: &DMatrix<f64>) -> Option<(f64, f64)> {
    let eig = SymmetricEigen::new(sigma0.clone()).eigenvalues;
    if eig.min() <= 0.0 || eig.max() / eig.min() > SINGULAR_CONDITION {
        return None;
    }
    let chol = sigma0.clone().cholesky()?;
    let inv = chol.inverse();
    Some((sigma0.trace(), inv.norm_squared()))
}

/// Averages `Tr Sigma0_hat` and `||Sigma0_hat^-1||_F^2` over `n_realizations`
/// independent data sets of size `sample_count`. Realization `r` uses seed
/// `derive_seed(seed, sample_count, r)`; singular draws are excluded and counted.
#[allow(clippy::too_many_arguments)]
pub fn estimate_bound_terms(
    system: &StochasticSystem,
    dict: &Dictionary,
    domain: &Domain,
    sample_count: usize,
    n_realizations: usize,
    seed: u64,
    source: SampleSource,
) -> Result<BoundTerms> {
    let floor = sample_floor(dict.len());
    if sample_count <= floor {
        return Err(Error::InsufficientSamples {
            count: sample_count,
            n_basis: dict.len(),
            floor,
        });
    }
    if n_realizations < 2 {
        return Err(Error::InvalidArgument("n_realizations must be at least 2".into()));
    }
    let draws: Vec<Option<(f64, f64)>> = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, sample_count as u64, r as u64);
            estimator::accumulate_generated(system, dict, domain, sample_count, s, source)
                .ok()
                .and_then(|m| sigma0_terms(&m.sigma0_hat()))
        })
        .collect();
    let mut trace = RunningMoments::default();
    let mut frob = RunningMoments::default();
    let mut n_singular = 0;
    for d in draws {
        match d {
            Some((t, f)) => {
                trace.push(t);
                frob.push(f);
            }
            None => n_singular += 1,
        }
    }
    if trace.count() == 0 {
        return Err(Error::Singular(format!(
            "Sigma0_hat was singular in all {n_realizations} realizations"
        )));
    }
    if n_singular > 0 {
        log::warn!("{n_singular} of {n_realizations} realizations excluded as singular");
    }
    let (t, f) = (trace.estimate(), frob.estimate());
    Ok(BoundTerms {
        mean_trace_sigma0: t.mean,
        mean_frob_sq_inv_sigma0: f.mean,
        se_trace_sigma0: t.std_err,
        se_frob_sq_inv_sigma0: f.std_err,
        n_used: trace.count(),
        n_singular,
    })
}

/// Right-hand side of the high-probability Koopman bound.
pub fn theorem1_bound(
    delta_hat: f64,
    epsilon: f64,
    sample_count: usize,
    n_basis: usize,
    terms: &BoundTerms,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let floor = sample_floor(n_basis);
    if sample_count <= floor {
        return Err(Error::InsufficientSamples {
            count: sample_count,
            n_basis,
            floor,
        });
    }
    if !(delta_hat >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta_hat must be nonnegative, got {delta_hat}")));
    }
    Ok(bound_formula(
        delta_hat,
        epsilon,
        sample_count,
        terms.mean_trace_sigma0,
        terms.mean_frob_sq_inv_sigma0,
    ))
}

fn bound_formula(delta: f64, epsilon: f64, t: usize, trace: f64, frob: f64) -> f64 {
    delta.sqrt() / (epsilon * (t as f64).sqrt()) * (trace * frob).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub sample_count: usize,
    pub n_basis: usize,
    pub delta_hat: f64,
    pub mean_trace_sigma0: f64,
    pub mean_frob_sq_inv_sigma0: f64,
    pub koopman_bound: f64,
    pub cond_lambda: f64,
    pub pf_bound: f64,
    pub n_bound_realizations: usize,
}

impl BoundReport {
    pub fn new(
        delta_hat: f64,
        epsilon: f64,
        sample_count: usize,
        n_basis: usize,
        terms: &BoundTerms,
        cond_lambda: f64,
    ) -> Result<Self> {
        if !(cond_lambda >= 1.0) {
            return Err(Error::InvalidArgument(format!("cond_lambda must be >= 1, got {cond_lambda}")));
        }
        let koopman_bound = theorem1_bound(delta_hat, epsilon, sample_count, n_basis, terms)?;
        Ok(BoundReport {
            epsilon,
            sample_count,
            n_basis,
            delta_hat,
            mean_trace_sigma0: terms.mean_trace_sigma0,
            mean_frob_sq_inv_sigma0: terms.mean_frob_sq_inv_sigma0,
            koopman_bound,
            cond_lambda,
            pf_bound: koopman_bound * cond_lambda,
            n_bound_realizations: terms.n_used,
        })
    }

    /// The Koopman bound recomputed from the stored fields.
    pub fn recompute(&self) -> f64 {
        bound_formula(
            self.delta_hat,
            self.epsilon,
            self.sample_count,
            self.mean_trace_sigma0,
            self.mean_frob_sq_inv_sigma0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub n_realizations: usize,
    pub n_violations: usize,
    pub violation_rate: f64,
    pub n_failed: usize,
}

/// Estimation errors of independent realizations against a known `K`.
#[derive(Debug, Clone)]
pub struct CalibrationSample {
    /// `||K_hat - K||_F` per realization; `None` where estimation failed.
    pub errors: Vec<Option<f64>>,
    /// Residual-variance surrogate per successful realization.
    pub delta_hats: Vec<f64>,
    pub true_norm: f64,
}

impl CalibrationSample {
    pub fn n_failed(&self) -> usize {
        self.errors.iter().filter(|e| e.is_none()).count()
    }

    /// Mean of the per-realization `delta_hat` values.
    pub fn mean_delta_hat(&self) -> f64 {
        if self.delta_hats.is_empty() {
            0.0
        } else {
            self.delta_hats.iter().sum::<f64>() / self.delta_hats.len() as f64
        }
    }

    pub fn violations(&self, bound: f64) -> ViolationStats {
        let floor = ROUNDING_FLOOR * self.true_norm.max(1.0);
        let ok: Vec<f64> = self.errors.iter().flatten().copied().collect();
        let n_violations = ok.iter().filter(|&&e| e > bound && e > floor).count();
        ViolationStats {
            n_realizations: ok.len(),
            n_violations,
            violation_rate: if ok.is_empty() {
                0.0
            } else {
                n_violations as f64 / ok.len() as f64
            },
            n_failed: self.n_failed(),
        }
    }
}

/// Runs `n_realizations` independent estimations at `sample_count` pairs and
/// records `||K_hat - K||_F` and the residual surrogate for each.
#[allow(clippy::too_many_arguments)]
pub fn calibration_sample(
    system: &StochasticSystem,
    dict: &Dictionary,
    domain: &Domain,
    true_k: &DMatrix<f64>,
    sample_count: usize,
    n_realizations: usize,
    seed: u64,
    source: SampleSource,
) -> Result<CalibrationSample> {
    let n = dict.len();
    if true_k.nrows() != n || true_k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: true_k.nrows(),
            context: "true Koopman matrix",
        });
    }
    let floor = sample_floor(n);
    if sample_count <= floor {
        return Err(Error::InsufficientSamples {
            count: sample_count,
            n_basis: n,
            floor,
        });
    }
    let outcomes: Vec<Option<(f64, f64)>> = (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, sample_count as u64, r as u64);
            let run = || -> Result<(f64, f64)> {
                let samples = dynamics::generate(system, domain, sample_count, s, source)?;
                let moments = estimator::accumulate(MomentPair::new(dict), dict, &samples)?;
                let k_hat = estimator::estimate_koopman(&moments)?;
                if k_hat.fallback {
                    return Err(Error::Singular("pseudo-solution fallback".into()));
                }
                let res = estimator::residuals(dict, &samples, &k_hat)?;
                Ok(((&k_hat.matrix - true_k).norm(), res.delta_hat))
            };
            run().ok()
        })
        .collect();
    Ok(CalibrationSample {
        errors: outcomes.iter().map(|o| o.map(|(e, _)| e)).collect(),
        delta_hats: outcomes.iter().flatten().map(|&(_, d)| d).collect(),
        true_norm: true_k.norm(),
    })
}

/// Fraction of realizations whose error exceeds the bound at `epsilon`.
///
/// `delta_override` replaces the residual surrogate for `Delta`.
#[allow(clippy::too_many_arguments)]
pub fn violation_rate(
    system: &StochasticSystem,
    dict: &Dictionary,
    domain: &Domain,
    true_k: &DMatrix<f64>,
    sample_count: usize,
    epsilon: f64,
    n_realizations: usize,
    seed: u64,
    terms: &BoundTerms,
    delta_override: Option<f64>,
    source: SampleSource,
) -> Result<ViolationStats> {
    let sample = calibration_sample(system, dict, domain, true_k, sample_count, n_realizations, seed, source)?;
    let delta = delta_override.unwrap_or_else(|| sample.mean_delta_hat());
    let bound = theorem1_bound(delta, epsilon, sample_count, dict.len(), terms)?;
    Ok(sample.violations(bound))
}

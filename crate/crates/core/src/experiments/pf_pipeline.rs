//! Koopman estimate, Gram matrix, P-F matrix, duality and transfer checks.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{is_invalid_point, with_pool};
use crate::basis::GramMatrix;
use crate::error::{Error, Result};
use crate::estimator::{self, OperatorEstimate};
use crate::io::{self, fmt_f64, OperatorMeta};
use crate::pf::{self, PFEstimate};
use crate::seed::{derive_seed, stream_seed};

/// Number of random unit pairs in the duality check.
pub const DUALITY_TRIALS: usize = 1000;
pub const DUALITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub realization: usize,
    pub seed: u64,
    pub koopman_err: Option<f64>,
    pub pf_err: Option<f64>,
    pub transfer_bound: Option<f64>,
    pub holds: Option<bool>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PfReport {
    pub label: String,
    pub sample_count: usize,
    pub cond_lambda: f64,
    pub conjugation_residual: f64,
    pub duality_defect: f64,
    pub duality_trials: usize,
    pub n_realizations: usize,
    pub n_failed: usize,
    /// Realizations satisfying `||P_hat - P||_F <= cond(Lambda) ||K_hat - K||_F`;
    /// `None` without a known Koopman matrix.
    pub n_transfer_holds: Option<usize>,
    pub invalid: bool,
}

#[derive(Debug, Clone)]
pub struct PfOutcome {
    /// Estimate from realization 0.
    pub estimate: PFEstimate,
    pub report: PfReport,
    pub transfers: Vec<TransferRecord>,
}

fn estimate_once(cfg: &ExperimentConfig, sample_count: usize, seed: u64) -> Result<OperatorEstimate> {
    let system = cfg.build_system()?;
    let dict = cfg.build_dictionary()?;
    let moments = estimator::accumulate_generated(&system, &dict, &cfg.domain(), sample_count, seed, cfg.protocol)?;
    let k = estimator::estimate_koopman(&moments)?.with_seed(seed);
    if k.fallback {
        return Err(Error::Singular("pseudo-solution fallback".into()));
    }
    Ok(k)
}

/// `(||K_hat - K||_F, ||P_hat - P||_F, bound, holds)` with a rounding allowance
/// proportional to the size of the exact P-F matrix.
fn transfer_check(
    k_hat: &OperatorEstimate,
    true_k: &DMatrix<f64>,
    true_p: &DMatrix<f64>,
    gram: &GramMatrix,
) -> Result<(f64, f64, f64, bool)> {
    let p_hat = pf::koopman_to_pf(k_hat, gram)?;
    let k_err = (&k_hat.matrix - true_k).norm();
    let p_err = (&p_hat.matrix - true_p).norm();
    let bound = p_hat.cond_lambda * k_err;
    let slack = 1e-12 * p_hat.cond_lambda * true_p.norm().max(1.0);
    Ok((k_err, p_err, bound, p_err <= bound + slack))
}

/// Runs the pipeline at `T = max(t_grid)` for `n_realizations` seeded runs.
pub fn run_pf_pipeline(cfg: &ExperimentConfig) -> Result<PfOutcome> {
    cfg.validate()?;
    let dict = cfg.build_dictionary()?;
    let gram = cfg.build_gram(&dict)?;
    let t = cfg.max_t();
    let truth = match cfg.ground_truth() {
        Some(k) => {
            let (p, _) = pf::conjugate_transpose(&k, &gram)?;
            Some((k, p))
        }
        None => None,
    };
    with_pool(cfg.workers, || {
        let transfers: Vec<TransferRecord> = (0..cfg.n_realizations)
            .into_par_iter()
            .map(|r| {
                let seed = derive_seed(cfg.base_seed, t as u64, r as u64);
                let mut rec = TransferRecord {
                    realization: r,
                    seed,
                    koopman_err: None,
                    pf_err: None,
                    transfer_bound: None,
                    holds: None,
                    status: "ok".into(),
                };
                let checked = estimate_once(cfg, t, seed).and_then(|k_hat| match &truth {
                    Some((k, p)) => transfer_check(&k_hat, k, p, &gram).map(Some),
                    None => pf::koopman_to_pf(&k_hat, &gram).map(|_| None),
                });
                match checked {
                    Ok(Some((ke, pe, b, holds))) => {
                        rec.koopman_err = Some(ke);
                        rec.pf_err = Some(pe);
                        rec.transfer_bound = Some(b);
                        rec.holds = Some(holds);
                    }
                    Ok(None) => {}
                    Err(e) => rec.status = e.to_string(),
                }
                rec
            })
            .collect();
        let first = transfers
            .iter()
            .find(|r| r.status == "ok")
            .ok_or_else(|| Error::Singular("every realization failed".into()))?;
        let k_hat = estimate_once(cfg, t, first.seed)?;
        let estimate = pf::koopman_to_pf(&k_hat, &gram)?;
        let duality_defect = pf::duality_check(
            &k_hat.matrix,
            &estimate.matrix,
            &gram,
            DUALITY_TRIALS,
            stream_seed(cfg.base_seed, "duality"),
        )?;
        let n_failed = transfers.iter().filter(|r| r.status != "ok").count();
        let n_transfer_holds = truth
            .as_ref()
            .map(|_| transfers.iter().filter(|r| r.holds == Some(true)).count());
        let invalid = is_invalid_point(n_failed, cfg.n_realizations)
            || duality_defect > DUALITY_TOLERANCE
            || transfers.iter().any(|r| r.holds == Some(false));
        let report = PfReport {
            label: cfg.label.clone(),
            sample_count: t,
            cond_lambda: estimate.cond_lambda,
            conjugation_residual: estimate.conjugation_residual,
            duality_defect,
            duality_trials: DUALITY_TRIALS,
            n_realizations: cfg.n_realizations,
            n_failed,
            n_transfer_holds,
            invalid,
        };
        Ok(PfOutcome {
            estimate,
            report,
            transfers,
        })
    })
}

/// Writes `koopman.csv`, `pf.csv`, `gram.csv` (each with a sidecar),
/// `pf_transfer.csv` and `pf_report.json`.
pub fn write_pf(cfg: &ExperimentConfig, out: &PfOutcome, dir: &Path) -> Result<()> {
    let est = &out.estimate;
    io::write_operator(&dir.join("koopman.csv"), &est.source_koopman)?;
    let pf_op = est.as_operator();
    let meta = OperatorMeta {
        cond_lambda: Some(est.cond_lambda),
        ..OperatorMeta::of(&pf_op)
    };
    io::write_operator_with_meta(&dir.join("pf.csv"), &pf_op, meta)?;
    io::write_gram(&dir.join("gram.csv"), &pf_op.dict_names, &est.gram)?;

    let path = dir.join("pf_transfer.csv");
    let mut w = io::csv_writer(&path)?;
    w.write_record([
        "label",
        "T",
        "realization",
        "seed",
        "koopman_err",
        "pf_err",
        "transfer_bound",
        "holds",
        "status",
    ])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &out.transfers {
        w.write_record([
            cfg.label.clone(),
            out.report.sample_count.to_string(),
            r.realization.to_string(),
            r.seed.to_string(),
            opt(r.koopman_err),
            opt(r.pf_err),
            opt(r.transfer_bound),
            r.holds.map(|b| b.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    io::write_json(&dir.join("pf_report.json"), &out.report)
}

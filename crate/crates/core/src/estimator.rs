//! Empirical moment matrices and the least-squares Koopman estimate.
//!
//! `Sigma0 = (1/T) sum Psi(x_t) Psi(x_t)^T`, `Sigma1 = (1/T) sum Psi(x_t) Psi(y_t)^T`
//! and `K = Sigma0^{-1} Sigma1`, obtained from a Cholesky solve of
//! `Sigma0 K = Sigma1`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{Dictionary, Domain};
use crate::dynamics::{self, koopman_apply_mc, RunningMoments, SampleSet, SampleSource, StochasticSystem};
use crate::error::{Error, Result};
use crate::seed;

/// Condition number of `Sigma0` above which the solve switches to a
/// minimum-norm pseudo-solution.
pub const SINGULAR_CONDITION: f64 = 1e12;

/// Relative singular-value cutoff of the pseudo-solution.
pub const PSEUDO_SOLVE_RCOND: f64 = 1e-12;

/// Smallest sample count for which the estimate is accepted: `T > 2N + 2`.
pub fn sample_floor(n_basis: usize) -> usize {
    2 * n_basis + 2
}

/// Neumaier-compensated running sum of an `N x N` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
struct CompensatedMatrix {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl CompensatedMatrix {
    fn zeros(len: usize) -> Self {
        CompensatedMatrix {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    #[inline]
    fn add(&mut self, idx: usize, v: f64) {
        let s = self.sum[idx];
        let t = s + v;
        self.comp[idx] += if s.abs() >= v.abs() {
            (s - t) + v
        } else {
            (v - t) + s
        };
        self.sum[idx] = t;
    }

    fn merge(&mut self, other: &CompensatedMatrix) {
        for i in 0..self.sum.len() {
            self.add(i, other.sum[i]);
            self.comp[i] += other.comp[i];
        }
    }

    #[inline]
    fn total(&self, idx: usize) -> f64 {
        self.sum[idx] + self.comp[idx]
    }
}

/// Streaming `(Sigma0_hat, Sigma1_hat)` with the number of absorbed pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPair {
    names: Vec<String>,
    count: usize,
    s0: CompensatedMatrix,
    s1: CompensatedMatrix,
}

impl MomentPair {
    pub fn new(dict: &Dictionary) -> Self {
        let n = dict.len();
        MomentPair {
            names: dict.names().to_vec(),
            count: 0,
            s0: CompensatedMatrix::zeros(n * n),
            s1: CompensatedMatrix::zeros(n * n),
        }
    }

    pub fn n_basis(&self) -> usize {
        self.names.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Adds one pair given the lifted states `Psi(x)` and `Psi(y)`.
    pub fn absorb_lifted(&mut self, psi_x: &[f64], psi_y: &[f64]) {
        let n = self.n_basis();
        for i in 0..n {
            let a = psi_x[i];
            let row = i * n;
            for (j, b) in psi_x.iter().enumerate().skip(i) {
                self.s0.add(row + j, a * b);
            }
            for (j, b) in psi_y.iter().enumerate() {
                self.s1.add(row + j, a * b);
            }
        }
        self.count += 1;
    }

    /// Adds every pair of `samples`.
    pub fn absorb(&mut self, dict: &Dictionary, samples: &SampleSet) -> Result<()> {
        self.check_dict(dict)?;
        if samples.state_dim() != dict.state_dim() {
            return Err(Error::DimensionMismatch {
                expected: dict.state_dim(),
                actual: samples.state_dim(),
                context: "sample state dimension",
            });
        }
        let n = dict.len();
        let mut px = vec![0.0; n];
        let mut py = vec![0.0; n];
        for (x, y) in samples.pairs() {
            dict.evaluate_into(x, &mut px);
            dict.evaluate_into(y, &mut py);
            self.absorb_lifted(&px, &py);
        }
        Ok(())
    }

    /// Folds `other` into `self`; equal to absorbing the union of both data sets.
    pub fn merge(&mut self, other: &MomentPair) -> Result<()> {
        if other.names != self.names {
            return Err(Error::InvalidArgument("cannot merge moments over different dictionaries".into()));
        }
        self.s0.merge(&other.s0);
        self.s1.merge(&other.s1);
        self.count += other.count;
        Ok(())
    }

    fn check_dict(&self, dict: &Dictionary) -> Result<()> {
        if dict.names() != self.names.as_slice() {
            return Err(Error::DimensionMismatch {
                expected: self.n_basis(),
                actual: dict.len(),
                context: "dictionary does not match accumulated moments",
            });
        }
        Ok(())
    }

    pub fn sigma0_hat(&self) -> DMatrix<f64> {
        let n = self.n_basis();
        let scale = 1.0 / self.count.max(1) as f64;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.s0.total(i * n + j) * scale;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn sigma1_hat(&self) -> DMatrix<f64> {
        let n = self.n_basis();
        let scale = 1.0 / self.count.max(1) as f64;
        DMatrix::from_fn(n, n, |i, j| self.s1.total(i * n + j) * scale)
    }
}

/// Returns `moments` after absorbing `samples`.
pub fn accumulate(mut moments: MomentPair, dict: &Dictionary, samples: &SampleSet) -> Result<MomentPair> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("sample set is empty".into()));
    }
    moments.absorb(dict, samples)?;
    Ok(moments)
}

/// Moments of `count` freshly generated pairs, absorbed without storing them.
///
/// Consumes the seeded stream exactly like [`dynamics::generate`], so the
/// result equals accumulating the stored sample set.
pub fn accumulate_generated(
    system: &StochasticSystem,
    dict: &Dictionary,
    domain: &Domain,
    count: usize,
    seed: u64,
    source: SampleSource,
) -> Result<MomentPair> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    if dict.state_dim() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            actual: dict.state_dim(),
            context: "dictionary state dimension",
        });
    }
    let mut rng = seed::rng(seed);
    let n = dict.len();
    let mut moments = MomentPair::new(dict);
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let absorb = |x: &[f64], y: &[f64]| {
        dict.evaluate_into(x, &mut px);
        dict.evaluate_into(y, &mut py);
        moments.absorb_lifted(&px, &py);
    };
    match source {
        SampleSource::SingleTrajectory => {
            let x0 = dynamics::uniform_state(domain, &mut rng);
            dynamics::for_each_transition(system, &x0, count, &mut rng, absorb)?;
        }
        SampleSource::IndependentPairs => {
            dynamics::for_each_pair(system, domain, count, &mut rng, absorb)?;
        }
    }
    Ok(moments)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Koopman,
    PerronFrobenius,
}

impl OperatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OperatorKind::Koopman => "koopman",
            OperatorKind::PerronFrobenius => "perron-frobenius",
        }
    }
}

/// Finite-dimensional operator matrix with provenance.
#[derive(Debug, Clone)]
pub struct OperatorEstimate {
    pub matrix: DMatrix<f64>,
    pub operator_kind: OperatorKind,
    pub dict_names: Vec<String>,
    pub sample_count: usize,
    pub seed: Option<u64>,
    /// 2-norm condition number of `Sigma0_hat`.
    pub condition_sigma0: f64,
    /// Set when the pseudo-solution replaced the Cholesky solve.
    pub fallback: bool,
}

impl OperatorEstimate {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

/// Eigenvalue ratio of a symmetric positive semidefinite matrix; infinite when singular.
pub fn spd_condition(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Least-squares Koopman estimate `K = Sigma0^{-1} Sigma1`.
pub fn estimate_koopman(moments: &MomentPair) -> Result<OperatorEstimate> {
    let n = moments.n_basis();
    let floor = sample_floor(n);
    if moments.count() <= floor {
        return Err(Error::InsufficientSamples {
            count: moments.count(),
            n_basis: n,
            floor,
        });
    }
    let s0 = moments.sigma0_hat();
    let s1 = moments.sigma1_hat();
    if s0.iter().chain(s1.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("moment matrices".into()));
    }
    let condition = spd_condition(&s0);
    let cholesky = if condition <= SINGULAR_CONDITION {
        s0.clone().cholesky()
    } else {
        None
    };
    let (matrix, fallback) = match cholesky {
        Some(chol) => (chol.solve(&s1), false),
        None => {
            log::warn!(
                "Sigma0 is numerically singular (condition {condition:e}); using minimum-norm least-squares solve"
            );
            (pseudo_solve(&s0, &s1)?, true)
        }
    };
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Koopman estimate".into()));
    }
    Ok(OperatorEstimate {
        matrix,
        operator_kind: OperatorKind::Koopman,
        dict_names: moments.names().to_vec(),
        sample_count: moments.count(),
        seed: None,
        condition_sigma0: condition,
        fallback,
    })
}

/// Minimum-norm solution of `a x = b`, discarding singular values below
/// `PSEUDO_SOLVE_RCOND * sigma_max`.
fn pseudo_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * PSEUDO_SOLVE_RCOND;
    svd.solve(b, cutoff)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Per-sample noise `delta_t = Psi(y_t) - K^T Psi(x_t)` and its statistics.
#[derive(Debug, Clone)]
pub struct ResidualStats {
    /// Largest per-observable residual variance, the plug-in for the noise bound.
    pub delta_hat: f64,
    /// `R = (1/T) sum Psi(x_t) delta_t^T`.
    pub residual_matrix: DMatrix<f64>,
    pub per_basis_variance: Vec<f64>,
    pub max_abs_residual: f64,
}

pub fn residuals(dict: &Dictionary, samples: &SampleSet, k_hat: &OperatorEstimate) -> Result<ResidualStats> {
    let n = dict.len();
    if k_hat.matrix.nrows() != n || k_hat.matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: k_hat.matrix.nrows(),
            context: "operator size",
        });
    }
    if samples.state_dim() != dict.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.state_dim(),
            actual: samples.state_dim(),
            context: "sample state dimension",
        });
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("sample set is empty".into()));
    }
    let kt = k_hat.matrix.transpose();
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut stats = vec![RunningMoments::default(); n];
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut delta = vec![0.0; n];
    let mut max_abs = 0.0f64;
    for (x, y) in samples.pairs() {
        dict.evaluate_into(x, &mut px);
        dict.evaluate_into(y, &mut py);
        for j in 0..n {
            let pred: f64 = (0..n).map(|i| kt[(j, i)] * px[i]).sum();
            delta[j] = py[j] - pred;
            stats[j].push(delta[j]);
            max_abs = max_abs.max(delta[j].abs());
        }
        for i in 0..n {
            for j in 0..n {
                r[(i, j)] += px[i] * delta[j];
            }
        }
    }
    r /= samples.len() as f64;
    let per_basis_variance: Vec<f64> = stats.iter().map(|s| s.sample_variance().max(0.0)).collect();
    let delta_hat = per_basis_variance.iter().cloned().fold(0.0, f64::max);
    Ok(ResidualStats {
        delta_hat,
        residual_matrix: r,
        per_basis_variance,
        max_abs_residual: max_abs,
    })
}

/// Out-of-span defect of the Koopman image of each observable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureReport {
    pub names: Vec<String>,
    /// `||v - Phi c|| / ||v||` for the Monte Carlo values `v` of `U psi_k`.
    pub defect: Vec<f64>,
    /// Relative size of the Monte Carlo error in `v`.
    pub noise_floor: Vec<f64>,
    pub n_states: usize,
    pub n_mc: usize,
}

/// Regresses Monte Carlo values of `U psi_k` at `n_states` uniform states in
/// `domain` onto `span(Psi)`. All states share one noise stream.
pub fn closure_check(
    dict: &Dictionary,
    system: &StochasticSystem,
    domain: &Domain,
    n_states: usize,
    n_mc: usize,
    seed: u64,
) -> Result<ClosureReport> {
    let n = dict.len();
    if n_states < n {
        return Err(Error::InvalidArgument(format!(
            "closure check needs at least N = {n} states, got {n_states}"
        )));
    }
    if domain.dim() != dict.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.state_dim(),
            actual: domain.dim(),
            context: "domain dimension",
        });
    }
    let mut rng = seed::rng(seed);
    let states: Vec<Vec<f64>> = (0..n_states)
        .map(|_| dynamics::uniform_state(domain, &mut rng))
        .collect();
    let mc_seed = seed::stream_seed(seed, "closure-mc");
    let mut design = DMatrix::zeros(n_states, n);
    for (s, x) in states.iter().enumerate() {
        let psi = dict.evaluate(x)?;
        for k in 0..n {
            design[(s, k)] = psi[k];
        }
    }
    let svd = design.clone().svd(true, true);
    let cutoff = svd.singular_values.max() * PSEUDO_SOLVE_RCOND;

    let mut defect = Vec::with_capacity(n);
    let mut noise_floor = Vec::with_capacity(n);
    let mut coeffs = vec![0.0; n];
    for k in 0..n {
        coeffs.fill(0.0);
        coeffs[k] = 1.0;
        let mut values = DMatrix::zeros(n_states, 1);
        let mut se2 = 0.0;
        for (s, x) in states.iter().enumerate() {
            let est = koopman_apply_mc(system, dict, &coeffs, x, n_mc, mc_seed)?;
            values[(s, 0)] = est.mean;
            se2 += est.std_err * est.std_err;
        }
        let fit = svd.solve(&values, cutoff).map_err(|e| Error::Singular(e.to_string()))?;
        let resid = &values - &design * fit;
        let scale = values.norm();
        if scale == 0.0 {
            defect.push(0.0);
            noise_floor.push(0.0);
        } else {
            defect.push(resid.norm() / scale);
            noise_floor.push(se2.sqrt() / scale);
        }
    }
    Ok(ClosureReport {
        names: dict.names().to_vec(),
        defect,
        noise_floor,
        n_states,
        n_mc,
    })
}

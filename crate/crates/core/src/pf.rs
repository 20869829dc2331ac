//! Perron-Frobenius matrices from Koopman matrices via Gram duality.
//!
//! For `g = Psi^T a`, `h = Psi^T b` the pairing `<U h, g> = <h, P g>` on
//! `span(Psi)` forces `P = Lambda^{-1} K^T Lambda`.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::basis::{Dictionary, GramMatrix};
use crate::dynamics::{self, NoiseKind, StochasticSystem};
use crate::error::{Error, Result};
use crate::estimator::{OperatorEstimate, OperatorKind};
use crate::seed;

/// Conjugation residual `||Lambda P - K^T Lambda||_F`, relative to `||K^T Lambda||_F`,
/// accepted at construction.
pub const CONJUGATION_TOLERANCE: f64 = 1e-10;

/// Width of the proposal used by [`pf_apply_integral_mc`], in noise standard deviations.
pub const PROPOSAL_WIDTH: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct PFEstimate {
    pub matrix: DMatrix<f64>,
    pub gram: GramMatrix,
    pub source_koopman: OperatorEstimate,
    /// `||Lambda||_2 ||Lambda^-1||_2`.
    pub cond_lambda: f64,
    pub conjugation_residual: f64,
}

impl PFEstimate {
    /// The P-F matrix wrapped with the provenance of its Koopman source.
    pub fn as_operator(&self) -> OperatorEstimate {
        OperatorEstimate {
            matrix: self.matrix.clone(),
            operator_kind: OperatorKind::PerronFrobenius,
            ..self.source_koopman.clone()
        }
    }
}

/// `Lambda^{-1} K^T Lambda` by a Cholesky solve; returns the matrix and the
/// relative conjugation residual.
pub fn conjugate_transpose(k: &DMatrix<f64>, gram: &GramMatrix) -> Result<(DMatrix<f64>, f64)> {
    let n = gram.dim();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: k.nrows(),
            context: "Koopman matrix vs gram size",
        });
    }
    let chol = gram
        .lambda
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            eigenvalue: gram.min_eigenvalue(),
        })?;
    let rhs = k.transpose() * &gram.lambda;
    let p = chol.solve(&rhs);
    let residual = (&gram.lambda * &p - &rhs).norm() / rhs.norm().max(1.0);
    Ok((p, residual))
}

pub fn koopman_to_pf(k: &OperatorEstimate, gram: &GramMatrix) -> Result<PFEstimate> {
    if k.operator_kind != OperatorKind::Koopman {
        return Err(Error::InvalidArgument("expected a Koopman estimate".into()));
    }
    let (matrix, residual) = conjugate_transpose(&k.matrix, gram)?;
    if residual > CONJUGATION_TOLERANCE {
        return Err(Error::Singular(format!(
            "conjugation residual {residual:e} exceeds {CONJUGATION_TOLERANCE:e}"
        )));
    }
    Ok(PFEstimate {
        matrix,
        gram: gram.clone(),
        source_koopman: k.clone(),
        cond_lambda: gram.condition(),
        conjugation_residual: residual,
    })
}

fn random_unit(n: usize, rng: &mut seed::Rng) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v / norm;
        }
    }
}

/// Largest `|(K a)^T Lambda b - a^T Lambda (P b)|` over random unit pairs `(a, b)`.
pub fn duality_check(
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gram: &GramMatrix,
    n_trials: usize,
    seed: u64,
) -> Result<f64> {
    let n = gram.dim();
    for (m, what) in [(k, "Koopman matrix"), (p, "P-F matrix")] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.nrows(),
                context: what,
            });
        }
    }
    let mut rng = seed::rng(seed);
    let lambda = &gram.lambda;
    let mut worst = 0.0f64;
    for _ in 0..n_trials {
        let a = random_unit(n, &mut rng);
        let b = random_unit(n, &mut rng);
        worst = worst.max(duality_defect(k, p, lambda, &a, &b));
    }
    Ok(worst)
}

/// `|(K a)^T Lambda b - a^T Lambda (P b)|` for one pair.
pub fn duality_defect(
    k: &DMatrix<f64>,
    p: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> f64 {
    let left = (k * a).dot(&(lambda * b));
    let right = a.dot(&(lambda * (p * b)));
    (left - right).abs()
}

/// Galerkin coordinates with their Monte Carlo standard errors.
#[derive(Debug, Clone)]
pub struct PfIntegralEstimate {
    pub coords: Vec<f64>,
    pub std_err: Vec<f64>,
    pub samples: usize,
}

fn gaussian_density(e: f64, std: f64) -> f64 {
    let z = e / std;
    (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

/// Monte Carlo estimate of the coordinates of `P_F g` in `span(Psi)`, where
/// `[P_F g](x) = int_X g(y) rho(x - T(y)) dy` and `g = Psi^T coeffs_g`.
///
/// `y` is drawn uniformly from the Gram domain `X`; `x` is drawn from a
/// Gaussian centred at `T(y)` with [`PROPOSAL_WIDTH`] times the noise spread,
/// and the integrand is importance-weighted by `rho(x - T(y)) / q(x | y)`.
/// The coordinates are `Lambda^{-1} E[g(y) w Psi(x)]`, i.e. the projection of
/// `P_F g` paired against `Psi` over all of `R^n`.
pub fn pf_apply_integral_mc(
    system: &StochasticSystem,
    dict: &Dictionary,
    gram: &GramMatrix,
    coeffs_g: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<PfIntegralEstimate> {
    let n = dict.len();
    let dim = system.state_dim();
    if coeffs_g.len() != n || gram.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: coeffs_g.len(),
            context: "coefficient vector / gram size",
        });
    }
    if dict.state_dim() != dim || gram.domain.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: dict.state_dim(),
            context: "state dimension",
        });
    }
    if system.noise().kind != NoiseKind::GaussianIid || (0..dim).any(|i| system.coordinate_std(i) <= 0.0) {
        return Err(Error::Unsupported(
            "the integral form needs a noise density: Gaussian noise with positive variance on every coordinate"
                .into(),
        ));
    }
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    let chol = gram.lambda.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        eigenvalue: gram.min_eigenvalue(),
    })?;
    let stds: Vec<f64> = (0..dim).map(|i| system.coordinate_std(i)).collect();

    let mut rng = seed::rng(seed);
    let mut ty = vec![0.0; dim];
    let mut x = vec![0.0; dim];
    let mut psi = vec![0.0; n];
    let mut mean = DVector::<f64>::zeros(n);
    let mut m2 = DMatrix::<f64>::zeros(n, n);
    let mut delta = DVector::<f64>::zeros(n);
    for s in 0..n_mc {
        let y = dynamics::uniform_state(&gram.domain, &mut rng);
        system.drift(&y, &mut ty);
        let mut weight = 1.0;
        for i in 0..dim {
            let wide = PROPOSAL_WIDTH * stds[i];
            let e = wide * rng.sample::<f64, _>(StandardNormal);
            x[i] = ty[i] + e;
            weight *= gaussian_density(e, stds[i]) / gaussian_density(e, wide);
        }
        let gy = dict.combine(&y, coeffs_g);
        dict.evaluate_into(&x, &mut psi);
        let scale = gy * weight;
        let count = (s + 1) as f64;
        for i in 0..n {
            delta[i] = scale * psi[i] - mean[i];
            mean[i] += delta[i] / count;
        }
        for i in 0..n {
            let after = scale * psi[i] - mean[i];
            for j in 0..n {
                m2[(i, j)] += after * delta[j];
            }
        }
    }
    let cov_mean = m2 / ((n_mc - 1) as f64 * n_mc as f64);
    let coords = chol.solve(&mean);
    // Cov(Lambda^{-1} m) = Lambda^{-1} C Lambda^{-1}
    let left = chol.solve(&cov_mean);
    let cov_coords = chol.solve(&left.transpose());
    Ok(PfIntegralEstimate {
        coords: coords.iter().copied().collect(),
        std_err: (0..n).map(|i| cov_coords[(i, i)].max(0.0).sqrt()).collect(),
        samples: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::basis::{gram, Domain, GramMethod};
    use crate::dynamics::{example1_true_koopman, make_example1, make_example1_with_noise, Example1Params, NoiseModel};

    const FAST: Example1Params = Example1Params {
        rho: 0.2,
        mu: 0.3,
        c: 1.0,
    };

    fn estimate(matrix: DMatrix<f64>) -> OperatorEstimate {
        let n = matrix.nrows();
        OperatorEstimate {
            matrix,
            operator_kind: OperatorKind::Koopman,
            dict_names: (0..n).map(|i| format!("f{i}")).collect(),
            sample_count: 100,
            seed: Some(1),
            condition_sigma0: 1.0,
            fallback: false,
        }
    }

    fn example1_gram() -> GramMatrix {
        gram(&Dictionary::example1(), &Domain::symmetric_unit(2), 8).unwrap()
    }

    #[test]
    fn identity_gram_transposes() {
        let k = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        let id = GramMatrix::from_matrix(DMatrix::identity(3, 3), Domain::symmetric_unit(1), GramMethod::Quadrature)
            .unwrap();
        let p = koopman_to_pf(&estimate(k.clone()), &id).unwrap();
        assert_eq!(p.matrix, k.transpose());
        assert_eq!(p.cond_lambda, 1.0);
    }

    #[test]
    fn identity_koopman_stays_identity() {
        let g = example1_gram();
        let p = koopman_to_pf(&estimate(DMatrix::identity(4, 4)), &g).unwrap();
        assert!((&p.matrix - DMatrix::<f64>::identity(4, 4)).norm() <= 1e-12);
        assert!(p.cond_lambda >= 1.0);
    }

    #[test]
    fn example1_pf_satisfies_duality() {
        let g = example1_gram();
        assert_eq!(g.method, GramMethod::AnalyticMonomial);
        let k = example1_true_koopman(FAST, 1.0);
        let p = koopman_to_pf(&estimate(k.clone()), &g).unwrap();
        assert!(duality_check(&k, &p.matrix, &g, 1000, 3).unwrap() <= 1e-10);
        let conj = &g.lambda * &p.matrix - k.transpose() * &g.lambda;
        assert!(conj.norm() <= 1e-10);
    }

    #[test]
    fn perturbed_pf_is_detected() {
        let g = example1_gram();
        let k = example1_true_koopman(FAST, 1.0);
        let (mut p, _) = conjugate_transpose(&k, &g).unwrap();
        p[(1, 2)] += 0.1;
        // direct evaluation: the defect is |a^T Lambda E b| with E = 0.1 e_1 e_2^T
        let mut rng = seed::rng(5);
        let a = random_unit(4, &mut rng);
        let b = random_unit(4, &mut rng);
        let direct = 0.1 * (g.lambda.row(1).transpose().dot(&a) * b[2]).abs();
        assert_abs_diff_eq!(duality_defect(&k, &p, &g.lambda, &a, &b), direct, epsilon = 1e-12);
        assert!(duality_check(&k, &p, &g, 1000, 5).unwrap() > 1e-3);
    }

    #[test]
    fn zero_vector_has_no_defect() {
        let g = example1_gram();
        let k = example1_true_koopman(FAST, 1.0);
        let p = DMatrix::from_element(4, 4, 7.0);
        let zero = DVector::zeros(4);
        let b = DVector::from_element(4, 0.5);
        assert_eq!(duality_defect(&k, &p, &g.lambda, &zero, &b), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let g = example1_gram();
        assert!(conjugate_transpose(&DMatrix::identity(3, 3), &g).is_err());
        assert!(koopman_to_pf(&estimate(DMatrix::identity(5, 5)), &g).is_err());
    }

    #[test]
    fn spectrum_is_preserved() {
        let g = example1_gram();
        let k = example1_true_koopman(FAST, 1.0);
        let (p, _) = conjugate_transpose(&k, &g).unwrap();
        let mut ev_p: Vec<f64> = p.complex_eigenvalues().iter().map(|c| c.re).collect();
        let mut ev_k: Vec<f64> = k.transpose().complex_eigenvalues().iter().map(|c| c.re).collect();
        ev_p.sort_by(f64::total_cmp);
        ev_k.sort_by(f64::total_cmp);
        for (a, b) in ev_p.iter().zip(&ev_k) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn integral_needs_a_density() {
        let sys = make_example1_with_noise(FAST, NoiseModel::none(2)).unwrap();
        let err = pf_apply_integral_mc(&sys, &Dictionary::example1(), &example1_gram(), &[1.0, 0.0, 0.0, 0.0], 10, 0);
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn integral_of_zero_is_zero() {
        let sys = make_example1(FAST).unwrap();
        let est = pf_apply_integral_mc(&sys, &Dictionary::example1(), &example1_gram(), &[0.0; 4], 100, 0).unwrap();
        assert_eq!(est.coords, vec![0.0; 4]);
    }

    #[test]
    fn integral_is_linear_under_shared_seed() {
        let sys = make_example1(FAST).unwrap();
        let g = example1_gram();
        let a = [0.3, -0.2, 0.5, 1.0];
        let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
        let one = pf_apply_integral_mc(&sys, &Dictionary::example1(), &g, &a, 20_000, 4).unwrap();
        let two = pf_apply_integral_mc(&sys, &Dictionary::example1(), &g, &a2, 20_000, 4).unwrap();
        for (x, y) in one.coords.iter().zip(&two.coords) {
            assert_abs_diff_eq!(2.0 * x, *y, epsilon = 1e-9 * y.abs().max(1.0));
        }
    }
}

//! Observable dictionaries and their Gram matrices.
//!
//! A [`Dictionary`] is an ordered list of scalar observables on `R^n`.
//! Monomial dictionaries are enumerated in graded-lexicographic order with the
//! constant first. Gram matrices are taken under the uniform probability
//! measure on a hyper-rectangle [`Domain`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_QUADRATURE_ORDER: usize = 8;

/// Compact hyper-rectangle `[lower_1, upper_1] x ... x [lower_n, upper_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Domain { lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// `[-1, 1]^n`.
    pub fn symmetric_unit(state_dim: usize) -> Self {
        Domain {
            lower: vec![-1.0; state_dim],
            upper: vec![1.0; state_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::InvalidArgument(format!(
                "domain bounds must be nonempty and of equal length (got {} and {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "domain axis {i} is empty or non-finite: [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Maps a point of the unit cube onto the domain.
    pub fn from_unit(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            out[i] = self.lower[i] + (self.upper[i] - self.lower[i]) * u[i];
        }
    }
}

/// Total-degree monomial basis description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialSpec {
    pub state_dim: usize,
    pub max_degree: u32,
    pub exponent_list: Vec<Vec<u32>>,
}

impl MonomialSpec {
    pub fn new(state_dim: usize, max_degree: u32) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        Ok(MonomialSpec {
            state_dim,
            max_degree,
            exponent_list: graded_lex_exponents(state_dim, max_degree),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = MonomialSpec::new(self.state_dim, self.max_degree)?;
        if expected.exponent_list != self.exponent_list {
            return Err(Error::InvalidArgument(
                "exponent_list is not the graded-lex enumeration for (state_dim, max_degree)".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.exponent_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponent_list.is_empty()
    }
}

/// All multi-indices of length `n` with total degree `<= d`, graded by degree and
/// lexicographically descending within a degree: `1, x1, x2, x1^2, x1 x2, x2^2, ...`.
pub fn graded_lex_exponents(n: usize, d: u32) -> Vec<Vec<u32>> {
    fn fill(prefix: &mut Vec<u32>, remaining: u32, n: usize, out: &mut Vec<Vec<u32>>) {
        if prefix.len() + 1 == n {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(prefix, remaining - e, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in 0..=d {
        fill(&mut Vec::with_capacity(n), degree, n, &mut out);
    }
    out
}

pub type ObservableFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Observable {
    Monomial(Vec<u32>),
    Custom(ObservableFn),
}

impl Observable {
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Observable::Monomial(exps) => exps
                .iter()
                .zip(x)
                .fold(1.0, |acc, (&e, &xi)| if e == 0 { acc } else { acc * xi.powi(e as i32) }),
            Observable::Custom(f) => f(x),
        }
    }
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Monomial(e) => f.debug_tuple("Monomial").field(e).finish(),
            Observable::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Ordered set of observables `Psi = [psi_1, ..., psi_N]`.
#[derive(Debug, Clone)]
pub struct Dictionary {
    observables: Vec<Observable>,
    names: Vec<String>,
    state_dim: usize,
}

pub fn monomial_name(exps: &[u32]) -> String {
    let factors: Vec<String> = exps
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("x{}", i + 1)
            } else {
                format!("x{}^{}", i + 1, e)
            }
        })
        .collect();
    if factors.is_empty() {
        "1".to_string()
    } else {
        factors.join("*")
    }
}

impl Dictionary {
    fn build(observables: Vec<Observable>, names: Vec<String>, state_dim: usize) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        if observables.is_empty() {
            return Err(Error::InvalidArgument("dictionary must contain at least one observable".into()));
        }
        if names.len() != observables.len() {
            return Err(Error::DimensionMismatch {
                expected: observables.len(),
                actual: names.len(),
                context: "dictionary names",
            });
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidArgument(format!("duplicate observable name {name:?}")));
            }
        }
        for obs in &observables {
            if let Observable::Monomial(e) = obs {
                if e.len() != state_dim {
                    return Err(Error::DimensionMismatch {
                        expected: state_dim,
                        actual: e.len(),
                        context: "monomial exponent length",
                    });
                }
            }
        }
        Ok(Dictionary {
            observables,
            names,
            state_dim,
        })
    }

    pub fn monomial(spec: &MonomialSpec) -> Result<Self> {
        spec.validate()?;
        Self::from_exponents(spec.state_dim, spec.exponent_list.clone())
    }

    /// Arbitrary list of monomials, in the order given.
    pub fn from_exponents(state_dim: usize, exponents: Vec<Vec<u32>>) -> Result<Self> {
        let names = exponents.iter().map(|e| monomial_name(e)).collect();
        let observables = exponents.into_iter().map(Observable::Monomial).collect();
        Self::build(observables, names, state_dim)
    }

    /// `[1, x1, x2, x1^2]`, the closed dictionary of the linear-quadratic example.
    pub fn example1() -> Self {
        Self::from_exponents(2, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0]])
            .expect("static dictionary")
    }

    /// Opaque observables with user-supplied names. Gram matrices always use quadrature.
    pub fn custom(state_dim: usize, entries: Vec<(String, ObservableFn)>) -> Result<Self> {
        let (names, fns): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        Self::build(fns.into_iter().map(Observable::Custom).collect(), names, state_dim)
    }

    pub fn len(&self) -> usize {
        self.observables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observables.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    /// Exponent lists if every observable is a monomial.
    pub fn monomial_exponents(&self) -> Option<Vec<&[u32]>> {
        self.observables
            .iter()
            .map(|o| match o {
                Observable::Monomial(e) => Some(e.as_slice()),
                Observable::Custom(_) => None,
            })
            .collect()
    }

    /// Writes `Psi(x)` into `out` without validation.
    #[inline]
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, obs) in out.iter_mut().zip(&self.observables) {
            *o = obs.eval(x);
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: x.len(),
                context: "state vector",
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state {x:?}")));
        }
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(x, &mut out);
        if let Some(k) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "observable {} at state {x:?}",
                self.names[k]
            )));
        }
        Ok(out)
    }

    /// Evaluates `Psi(x)^T coeffs`.
    pub fn combine(&self, x: &[f64], coeffs: &[f64]) -> f64 {
        self.observables
            .iter()
            .zip(coeffs)
            .map(|(o, c)| if *c == 0.0 { 0.0 } else { c * o.eval(x) })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GramMethod {
    AnalyticMonomial,
    Quadrature,
}

/// `Lambda_ij = <psi_i, psi_j>` under the uniform probability measure on `domain`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub lambda: DMatrix<f64>,
    pub domain: Domain,
    pub method: GramMethod,
    eigenvalues: DVector<f64>,
}

impl GramMatrix {
    /// Wraps an externally built matrix after checking symmetry and definiteness.
    pub fn from_matrix(lambda: DMatrix<f64>, domain: Domain, method: GramMethod) -> Result<Self> {
        if !lambda.is_square() {
            return Err(Error::InvalidArgument("gram matrix must be square".into()));
        }
        let n = lambda.nrows();
        for i in 0..n {
            for j in 0..i {
                if lambda[(i, j)] != lambda[(j, i)] {
                    return Err(Error::InvalidArgument(format!(
                        "gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let eigenvalues = SymmetricEigen::new(lambda.clone()).eigenvalues;
        let min = eigenvalues.min();
        // Eigenvalues below the rounding level of the largest one count as zero.
        let floor = eigenvalues.max().abs() * n as f64 * f64::EPSILON;
        if !(min > floor) {
            return Err(Error::NotPositiveDefinite { eigenvalue: min });
        }
        Ok(GramMatrix {
            lambda,
            domain,
            method,
            eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.max()
    }

    /// `||Lambda||_2 ||Lambda^-1||_2`, which for an SPD matrix is the eigenvalue ratio.
    pub fn condition(&self) -> f64 {
        (self.max_eigenvalue() / self.min_eigenvalue()).max(1.0)
    }
}

/// Gram matrix of `dict` on `domain`. Monomial dictionaries use closed-form
/// moments; anything else uses tensor Gauss-Legendre with `quadrature_order`
/// nodes per axis.
pub fn gram(dict: &Dictionary, domain: &Domain, quadrature_order: usize) -> Result<GramMatrix> {
    check_domain(dict, domain)?;
    match dict.monomial_exponents() {
        Some(exps) => {
            let lambda = symmetric_fill(dict.len(), |i, j| {
                let combined: Vec<u32> = exps[i].iter().zip(exps[j]).map(|(a, b)| a + b).collect();
                uniform_monomial_moment(&combined, domain)
            });
            GramMatrix::from_matrix(lambda, domain.clone(), GramMethod::AnalyticMonomial)
        }
        None => gram_quadrature(dict, domain, quadrature_order),
    }
}

/// Gram matrix by tensor-product Gauss-Legendre quadrature, regardless of dictionary type.
pub fn gram_quadrature(dict: &Dictionary, domain: &Domain, order: usize) -> Result<GramMatrix> {
    check_domain(dict, domain)?;
    if order == 0 {
        return Err(Error::InvalidArgument("quadrature order must be positive".into()));
    }
    let n = dict.len();
    let rule = TensorRule::new(domain, order);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    let mut psi = vec![0.0; n];
    rule.for_each(|x, w| {
        dict.evaluate_into(x, &mut psi);
        for i in 0..n {
            let wi = w * psi[i];
            for j in i..n {
                acc[(i, j)] += wi * psi[j];
            }
        }
    });
    let lambda = symmetric_fill(n, |i, j| acc[(i, j)]);
    GramMatrix::from_matrix(lambda, domain.clone(), GramMethod::Quadrature)
}

fn check_domain(dict: &Dictionary, domain: &Domain) -> Result<()> {
    domain.validate()?;
    if domain.dim() != dict.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: dict.state_dim(),
            actual: domain.dim(),
            context: "domain dimension",
        });
    }
    Ok(())
}

/// Upper triangle computed once, then mirrored, so the result is exactly symmetric.
fn symmetric_fill(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = f(i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `E[x^alpha]` for `x` uniform on `domain`.
pub fn uniform_monomial_moment(alpha: &[u32], domain: &Domain) -> f64 {
    alpha
        .iter()
        .zip(domain.lower.iter().zip(&domain.upper))
        .map(|(&p, (&a, &b))| {
            let q = p as i32 + 1;
            (b.powi(q) - a.powi(q)) / (f64::from(q) * (b - a))
        })
        .product()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (weights sum to 2).
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(order, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor-product Gauss-Legendre rule on a domain, weights normalized to total mass 1.
pub(crate) struct TensorRule {
    nodes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl TensorRule {
    pub(crate) fn new(domain: &Domain, order: usize) -> Self {
        let (x, w) = gauss_legendre(order);
        let mut nodes = Vec::with_capacity(domain.dim());
        let mut weights = Vec::with_capacity(domain.dim());
        for (&a, &b) in domain.lower.iter().zip(&domain.upper) {
            nodes.push(x.iter().map(|t| 0.5 * (a + b) + 0.5 * (b - a) * t).collect());
            weights.push(w.iter().map(|wi| 0.5 * wi).collect());
        }
        TensorRule { nodes, weights }
    }

    pub(crate) fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let dim = self.nodes.len();
        let order = self.nodes[0].len();
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        loop {
            let mut w = 1.0;
            for d in 0..dim {
                x[d] = self.nodes[d][idx[d]];
                w *= self.weights[d][idx[d]];
            }
            f(&x, w);
            let mut d = 0;
            loop {
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
                d += 1;
                if d == dim {
                    return;
                }
            }
        }
    }
}

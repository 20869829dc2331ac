//! Random dynamical systems `x_{t+1} = T(x_t) + xi_t` and sample generation.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{Dictionary, Domain};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;
pub const DEFAULT_VDP_NOISE_STD: f64 = 0.01;
pub const DEFAULT_VDP_DT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianIid,
    None,
}

/// Additive noise `xi`, one independent component per entry of `std_dev`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub std_dev: Vec<f64>,
}

impl NoiseModel {
    pub fn gaussian(std_dev: Vec<f64>) -> Result<Self> {
        if std_dev.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviations must be finite and nonnegative: {std_dev:?}"
            )));
        }
        Ok(NoiseModel {
            kind: NoiseKind::GaussianIid,
            std_dev,
        })
    }

    pub fn none(dim: usize) -> Self {
        NoiseModel {
            kind: NoiseKind::None,
            std_dev: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.std_dev.len()
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None
    }

    fn sample_into(&self, rng: &mut Rng, out: &mut [f64]) {
        match self.kind {
            NoiseKind::None => out.fill(0.0),
            NoiseKind::GaussianIid => {
                for (o, s) in out.iter_mut().zip(&self.std_dev) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = s * z;
                }
            }
        }
    }
}

pub type TransitionFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// `x+ = T(x) + xi[noise_index[i]]` coordinatewise.
#[derive(Clone)]
pub struct StochasticSystem {
    state_dim: usize,
    transition: TransitionFn,
    noise: NoiseModel,
    noise_index: Vec<usize>,
    label: String,
    divergence_threshold: f64,
}

impl std::fmt::Debug for StochasticSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StochasticSystem")
            .field("label", &self.label)
            .field("state_dim", &self.state_dim)
            .field("noise", &self.noise)
            .field("noise_index", &self.noise_index)
            .finish_non_exhaustive()
    }
}

impl StochasticSystem {
    pub fn new(
        label: impl Into<String>,
        state_dim: usize,
        transition: TransitionFn,
        noise: NoiseModel,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        if noise.dim() != state_dim {
            return Err(Error::DimensionMismatch {
                expected: state_dim,
                actual: noise.dim(),
                context: "noise dimension",
            });
        }
        Ok(StochasticSystem {
            state_dim,
            transition,
            noise,
            noise_index: (0..state_dim).collect(),
            label: label.into(),
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        })
    }

    /// Routes noise component `noise_index[i]` into state coordinate `i`.
    pub fn with_noise_index(mut self, noise_index: Vec<usize>) -> Result<Self> {
        let mut sorted = noise_index.clone();
        sorted.sort_unstable();
        if sorted != (0..self.state_dim).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(format!(
                "noise_index must be a permutation of 0..{}",
                self.state_dim
            )));
        }
        self.noise_index = noise_index;
        Ok(self)
    }

    pub fn with_divergence_threshold(mut self, threshold: f64) -> Self {
        self.divergence_threshold = threshold;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn divergence_threshold(&self) -> f64 {
        self.divergence_threshold
    }

    /// Standard deviation of the additive noise on state coordinate `i`.
    pub fn coordinate_std(&self, i: usize) -> f64 {
        self.noise.std_dev[self.noise_index[i]]
    }

    /// Deterministic part `T(x)`.
    pub fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.transition)(x, out)
    }

    /// One transition `F(x, xi)` with `xi` drawn from `rng`.
    pub fn step(&self, x: &[f64], rng: &mut Rng, out: &mut [f64]) {
        let mut xi = [0.0; 8];
        let mut heap;
        let xi: &mut [f64] = if self.state_dim <= xi.len() {
            &mut xi[..self.state_dim]
        } else {
            heap = vec![0.0; self.state_dim];
            &mut heap
        };
        self.noise.sample_into(rng, xi);
        self.step_with_noise(x, xi, out);
    }

    /// One transition with a given noise draw (indexed like the noise model).
    pub fn step_with_noise(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        (self.transition)(x, out);
        for (i, o) in out.iter_mut().enumerate() {
            *o += xi[self.noise_index[i]];
        }
    }

    fn check_state(&self, x: &[f64], step: usize) -> Result<()> {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > self.divergence_threshold {
            return Err(Error::Divergence { step, norm });
        }
        Ok(())
    }
}

/// Parameters of the linear-quadratic example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Example1Params {
    pub rho: f64,
    pub mu: f64,
    pub c: f64,
}

impl Example1Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.mu.is_finite() && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite parameters {self:?}")));
        }
        if self.c <= 0.0 {
            return Err(Error::InvalidArgument(format!("c must be positive, got {}", self.c)));
        }
        if self.rho.abs() >= 1.0 || self.mu.abs() >= 1.0 {
            log::warn!("example1 with |rho| or |mu| >= 1 may diverge: {self:?}");
        }
        Ok(())
    }

    /// Coefficient of `x1^2` in the `x2` update.
    pub fn quadratic_gain(&self) -> f64 {
        (self.rho * self.rho - self.mu) * self.c
    }
}

/// `x1+ = rho x1 + xi1`, `x2+ = mu x2 + (rho^2 - mu) c x1^2 + xi2`, unit-variance noise.
pub fn make_example1(params: Example1Params) -> Result<StochasticSystem> {
    make_example1_with_noise(params, NoiseModel::gaussian(vec![1.0, 1.0])?)
}

pub fn make_example1_with_noise(params: Example1Params, noise: NoiseModel) -> Result<StochasticSystem> {
    params.validate()?;
    let Example1Params { rho, mu, .. } = params;
    let gain = params.quadratic_gain();
    let transition: TransitionFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
        out[0] = rho * x[0];
        out[1] = mu * x[1] + gain * x[0] * x[0];
    });
    StochasticSystem::new(
        format!("example1(rho={rho},mu={mu},c={})", params.c),
        2,
        transition,
        noise,
    )
}

/// Koopman matrix of the linear-quadratic example on `[1, x1, x2, x1^2]`.
///
/// Column `k` holds the coordinates of `U psi_k`; `noise_variance` is the
/// variance of the noise on `x1`.
pub fn example1_true_koopman(params: Example1Params, noise_variance: f64) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(4, 4);
    k[(0, 0)] = 1.0;
    k[(0, 3)] = noise_variance;
    k[(1, 1)] = params.rho;
    k[(2, 2)] = params.mu;
    k[(3, 2)] = params.quadratic_gain();
    k[(3, 3)] = params.rho * params.rho;
    k
}

/// Discretized Van der Pol oscillator.
///
/// The default drift is `x1+ = x1 + dt x2 + xi2`, `x2+ = x2 + dt((1 - x1^2) x1 - x1) + xi1`,
/// with the noise components crossed as written. `standard_vdp` switches the
/// `x2` drift to the usual `(1 - x1^2) x2 - x1`. `noise.std_dev` is indexed
/// `[xi1, xi2]`.
pub fn make_vanderpol(dt: f64, noise: NoiseModel, standard_vdp: bool) -> Result<StochasticSystem> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let transition: TransitionFn = if standard_vdp {
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] + dt * x[1];
            out[1] = x[1] + dt * ((1.0 - x[0] * x[0]) * x[1] - x[0]);
        })
    } else {
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = x[0] + dt * x[1];
            out[1] = x[1] + dt * ((1.0 - x[0] * x[0]) * x[0] - x[0]);
        })
    };
    let label = if standard_vdp {
        format!("vanderpol-standard(dt={dt})")
    } else {
        format!("vanderpol(dt={dt})")
    };
    StochasticSystem::new(label, 2, transition, noise)?.with_noise_index(vec![1, 0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleSource {
    SingleTrajectory,
    IndependentPairs,
}

/// Data pairs `(x_t, y_t)` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    state_dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    pub source: SampleSource,
    pub seed: u64,
}

impl SampleSet {
    pub fn from_rows(
        state_dim: usize,
        xs: Vec<f64>,
        ys: Vec<f64>,
        source: SampleSource,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 || !xs.len().is_multiple_of(state_dim) {
            return Err(Error::InvalidArgument(format!(
                "row data of length {} is not a multiple of state_dim {state_dim}",
                xs.len()
            )));
        }
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                expected: xs.len(),
                actual: ys.len(),
                context: "xs and ys sizes",
            });
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample entries".into()));
        }
        Ok(SampleSet {
            state_dim,
            xs,
            ys,
            source,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn x(&self, t: usize) -> &[f64] {
        &self.xs[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn y(&self, t: usize) -> &[f64] {
        &self.ys[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.xs
            .chunks_exact(self.state_dim)
            .zip(self.ys.chunks_exact(self.state_dim))
    }

    /// Contiguous sub-range of pairs `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> SampleSet {
        let n = self.state_dim;
        SampleSet {
            state_dim: n,
            xs: self.xs[start * n..end * n].to_vec(),
            ys: self.ys[start * n..end * n].to_vec(),
            source: self.source,
            seed: self.seed,
        }
    }

    pub fn xs_flat(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys_flat(&self) -> &[f64] {
        &self.ys
    }
}

/// Draws a point uniformly from `domain`.
pub fn uniform_state(domain: &Domain, rng: &mut Rng) -> Vec<f64> {
    domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(&lo, &hi)| lo + (hi - lo) * rng.random::<f64>())
        .collect()
}

/// Streams `steps` consecutive transitions from `x0` through `f` without storing them.
pub fn for_each_transition(
    system: &StochasticSystem,
    x0: &[f64],
    steps: usize,
    rng: &mut Rng,
    mut f: impl FnMut(&[f64], &[f64]),
) -> Result<()> {
    if x0.len() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            actual: x0.len(),
            context: "initial state",
        });
    }
    system.check_state(x0, 0)?;
    let mut x = x0.to_vec();
    let mut y = vec![0.0; x0.len()];
    for t in 0..steps {
        system.step(&x, rng, &mut y);
        system.check_state(&y, t + 1)?;
        f(&x, &y);
        std::mem::swap(&mut x, &mut y);
    }
    Ok(())
}

/// Single trajectory of `steps` consecutive pairs starting at `x0`.
pub fn simulate(system: &StochasticSystem, x0: &[f64], steps: usize, seed: u64) -> Result<SampleSet> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    collect_trajectory(system, x0, steps, seed, &mut rng)
}

/// Single trajectory whose initial state is drawn uniformly from `domain`
/// using the same seeded stream as the noise.
pub fn simulate_from_domain(
    system: &StochasticSystem,
    domain: &Domain,
    steps: usize,
    seed: u64,
) -> Result<SampleSet> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be positive".into()));
    }
    let mut rng = seed::rng(seed);
    let x0 = uniform_state(domain, &mut rng);
    collect_trajectory(system, &x0, steps, seed, &mut rng)
}

fn collect_trajectory(
    system: &StochasticSystem,
    x0: &[f64],
    steps: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<SampleSet> {
    let n = system.state_dim();
    let mut xs = Vec::with_capacity(steps * n);
    let mut ys = Vec::with_capacity(steps * n);
    for_each_transition(system, x0, steps, rng, |x, y| {
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
    })?;
    Ok(SampleSet {
        state_dim: n,
        xs,
        ys,
        source: SampleSource::SingleTrajectory,
        seed,
    })
}

/// Streams `count` independent pairs with `x` uniform on `domain` and `y = F(x, xi)`.
pub fn for_each_pair(
    system: &StochasticSystem,
    domain: &Domain,
    count: usize,
    rng: &mut Rng,
    mut f: impl FnMut(&[f64], &[f64]),
) -> Result<()> {
    if domain.dim() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            actual: domain.dim(),
            context: "domain dimension",
        });
    }
    let mut y = vec![0.0; system.state_dim()];
    for t in 0..count {
        let x = uniform_state(domain, rng);
        system.step(&x, rng, &mut y);
        system.check_state(&y, t + 1)?;
        f(&x, &y);
    }
    Ok(())
}

/// Independent pairs with `x` uniform on `domain` and `y = F(x, xi)`.
pub fn sample_pairs(
    system: &StochasticSystem,
    domain: &Domain,
    count: usize,
    seed: u64,
) -> Result<SampleSet> {
    let n = system.state_dim();
    let mut rng = seed::rng(seed);
    let mut xs = Vec::with_capacity(count * n);
    let mut ys = Vec::with_capacity(count * n);
    for_each_pair(system, domain, count, &mut rng, |x, y| {
        xs.extend_from_slice(x);
        ys.extend_from_slice(y);
    })?;
    Ok(SampleSet {
        state_dim: n,
        xs,
        ys,
        source: SampleSource::IndependentPairs,
        seed,
    })
}

/// `count` pairs under the given protocol, seeded by `seed`.
pub fn generate(
    system: &StochasticSystem,
    domain: &Domain,
    count: usize,
    seed: u64,
    source: SampleSource,
) -> Result<SampleSet> {
    match source {
        SampleSource::SingleTrajectory => simulate_from_domain(system, domain, count, seed),
        SampleSource::IndependentPairs => sample_pairs(system, domain, count, seed),
    }
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RunningMoments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningMoments {
    pub(crate) fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub(crate) fn count(&self) -> usize {
        self.n
    }

    pub(crate) fn sample_variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub(crate) fn estimate(&self) -> McEstimate {
        McEstimate {
            mean: self.mean,
            std_err: (self.sample_variance() / self.n.max(1) as f64).sqrt(),
            samples: self.n,
        }
    }
}

/// Monte Carlo estimate of `[U phi](x) = E_xi[phi(F(x, xi))]` for `phi = Psi^T coeffs`.
///
/// Equal seeds give equal noise draws at every state, so repeated calls over a
/// set of states use common random numbers.
pub fn koopman_apply_mc(
    system: &StochasticSystem,
    dict: &Dictionary,
    coeffs: &[f64],
    x: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be positive".into()));
    }
    if coeffs.len() != dict.len() {
        return Err(Error::DimensionMismatch {
            expected: dict.len(),
            actual: coeffs.len(),
            context: "coefficient vector",
        });
    }
    if x.len() != system.state_dim() || dict.state_dim() != system.state_dim() {
        return Err(Error::DimensionMismatch {
            expected: system.state_dim(),
            actual: x.len(),
            context: "state vector",
        });
    }
    let mut y = vec![0.0; x.len()];
    if system.noise().is_none() {
        system.drift(x, &mut y);
        return Ok(McEstimate {
            mean: dict.combine(&y, coeffs),
            std_err: 0.0,
            samples: n_mc,
        });
    }
    let mut rng = seed::rng(seed);
    let mut acc = RunningMoments::default();
    for _ in 0..n_mc {
        system.step(x, &mut rng, &mut y);
        acc.push(dict.combine(&y, coeffs));
    }
    Ok(acc.estimate())
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;

    const FAST: Example1Params = Example1Params {
        rho: 0.2,
        mu: 0.3,
        c: 1.0,
    };

    fn noiseless_example1() -> StochasticSystem {
        make_example1_with_noise(FAST, NoiseModel::none(2)).unwrap()
    }

    #[test]
    fn example1_noiseless_step() {
        let sys = noiseless_example1();
        let mut out = [0.0; 2];
        sys.step(&[1.0, 0.0], &mut seed::rng(0), &mut out);
        assert_abs_diff_eq!(out[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.04 - 0.3, epsilon = 1e-15);
        sys.step(&[0.0, 0.0], &mut seed::rng(0), &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn fig2_parameters_accepted() {
        make_example1(Example1Params {
            rho: 0.8,
            mu: 0.8,
            c: 0.9,
        })
        .unwrap();
        assert!(make_example1(Example1Params { rho: 0.2, mu: 0.3, c: 0.0 }).is_err());
    }

    #[test]
    fn true_koopman_entries() {
        let k = example1_true_koopman(FAST, 1.0);
        assert_abs_diff_eq!(k[(3, 2)], -0.26, epsilon = 1e-15);
        assert_abs_diff_eq!(k[(3, 3)], 0.04, epsilon = 1e-15);
        assert_eq!(k[(0, 3)], 1.0);
        let zero = example1_true_koopman(Example1Params { rho: 0.0, mu: 0.0, c: 3.0 }, 1.0);
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 0)] = 1.0;
        expected[(0, 3)] = 1.0;
        assert_eq!(zero, expected);
        assert_eq!(example1_true_koopman(FAST, 0.0)[(0, 3)], 0.0);
    }

    #[test]
    fn vanderpol_noiseless_steps() {
        let sys = make_vanderpol(DEFAULT_VDP_DT, NoiseModel::none(2), false).unwrap();
        let mut out = [0.0; 2];
        sys.drift(&[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
        sys.drift(&[1.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[0], 1.0001, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 1.0 - 0.0001, epsilon = 1e-15);
        // (1 - 4) 2 - 2 = -8 as printed, (1 - 4) 1 - 2 = -5 for the textbook field
        sys.drift(&[2.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[1], 1.0 - 8e-4, epsilon = 1e-15);
        let std = make_vanderpol(DEFAULT_VDP_DT, NoiseModel::none(2), true).unwrap();
        std.drift(&[2.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[1], 1.0 - 5e-4, epsilon = 1e-15);
    }

    #[test]
    fn vanderpol_noise_components_are_crossed() {
        let sys = make_vanderpol(1.0, NoiseModel::gaussian(vec![0.5, 0.0]).unwrap(), false).unwrap();
        assert_eq!(sys.coordinate_std(0), 0.0);
        assert_eq!(sys.coordinate_std(1), 0.5);
        let mut out = [0.0; 2];
        sys.step(&[0.0, 0.0], &mut seed::rng(3), &mut out);
        assert_eq!(out[0], 0.0);
        assert_ne!(out[1], 0.0);
    }

    #[test]
    fn hand_iterated_trajectory() {
        let s = simulate(&noiseless_example1(), &[1.0, 0.0], 3, 9).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.x(0), &[1.0, 0.0]);
        assert_abs_diff_eq!(s.x(1)[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(s.x(1)[1], -0.26, epsilon = 1e-15);
        let x2 = [0.2 * 0.2, 0.3 * -0.26 + (0.04 - 0.3) * 0.04];
        assert_abs_diff_eq!(s.x(2)[0], x2[0], epsilon = 1e-15);
        assert_abs_diff_eq!(s.x(2)[1], x2[1], epsilon = 1e-15);
        for t in 0..2 {
            assert_eq!(s.y(t), s.x(t + 1));
        }
    }

    #[test]
    fn single_step_shape() {
        let s = simulate(&make_example1(FAST).unwrap(), &[0.0, 0.0], 1, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.source, SampleSource::SingleTrajectory);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let sys = make_example1(FAST).unwrap();
        let a = simulate(&sys, &[0.5, -0.5], 500, 77).unwrap();
        let b = simulate(&sys, &[0.5, -0.5], 500, 77).unwrap();
        let c = simulate(&sys, &[0.5, -0.5], 500, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let sys = make_example1_with_noise(
            Example1Params { rho: 10.0, mu: 0.0, c: 1.0 },
            NoiseModel::none(2),
        )
        .unwrap();
        match simulate(&sys, &[1.0, 0.0], 100, 0) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected divergence, got {other:?}"),
        }
        let tight = noiseless_example1().with_divergence_threshold(0.5);
        assert!(matches!(simulate(&tight, &[1.0, 0.0], 3, 0), Err(Error::Divergence { step: 0, .. })));
    }

    #[test]
    fn independent_pairs_stay_in_domain() {
        let domain = Domain::symmetric_unit(2);
        let s = sample_pairs(&noiseless_example1(), &domain, 50, 4).unwrap();
        assert_eq!(s.source, SampleSource::IndependentPairs);
        for (x, y) in s.pairs() {
            assert!(x.iter().all(|v| v.abs() <= 1.0));
            let mut t = [0.0; 2];
            noiseless_example1().drift(x, &mut t);
            assert_eq!(y, &t);
        }
    }

    #[test]
    fn mc_without_noise_is_exact() {
        let sys = noiseless_example1();
        let dict = Dictionary::example1();
        let coeffs = [0.5, -1.0, 2.0, 3.0];
        let est = koopman_apply_mc(&sys, &dict, &coeffs, &[0.7, -0.2], 10, 0).unwrap();
        let mut t = [0.0; 2];
        sys.drift(&[0.7, -0.2], &mut t);
        assert_eq!(est.mean, dict.combine(&t, &coeffs));
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn mc_fixes_constants() {
        let sys = make_example1(FAST).unwrap();
        for seed in 0..3 {
            let est = koopman_apply_mc(&sys, &Dictionary::example1(), &[1.0, 0.0, 0.0, 0.0], &[0.3, 0.9], 100, seed)
                .unwrap();
            assert_eq!(est.mean, 1.0);
        }
    }

    #[test]
    fn mc_second_moment_of_ar1() {
        // E[(rho x1 + xi)^2] = rho^2 x1^2 + 1 = 1.04 at x1 = 1
        let sys = make_example1(FAST).unwrap();
        let est = koopman_apply_mc(&sys, &Dictionary::example1(), &[0.0, 0.0, 0.0, 1.0], &[1.0, 0.0], 1_000_000, 11)
            .unwrap();
        assert!(
            (est.mean - 1.04).abs() <= 3.0 * est.std_err,
            "{} +- {}",
            est.mean,
            est.std_err
        );
    }
}

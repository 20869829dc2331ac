//! TOML experiment configuration.
//!
//! ```toml
//! label = "example1-fast"
//! base_seed = 20190417
//! t_grid = [1000, 10000, 100000]
//! n_realizations = 50            # default 50
//! epsilon_list = [0.1, 0.25, 0.5]
//! output_dir = "out/example1-fast"
//! protocol = "single-trajectory" # or "independent-pairs"
//! workers = 0                    # 0 = all cores; never changes results
//! reference_factor = 100         # T_ref = factor * max(t_grid) when no true K exists
//! bound_term_realizations = 200
//! quadrature_order = 8
//! delta_override = 1.0           # optional noise level for the bound
//!
//! [system]
//! kind = "example1"              # or "vanderpol"
//! rho = 0.2
//! mu = 0.3
//! c = 1.0
//! noise_std = [1.0, 1.0]         # optional; all zeros means noiseless
//!
//! [dictionary]
//! kind = "example1"              # or { kind = "monomial", max_degree = 2 }
//!
//! [domain]                       # optional, default [-1, 1]^n
//! lower = [-1.0, -1.0]
//! upper = [1.0, 1.0]
//!
//! [closure]                      # optional
//! n_states = 50
//! n_mc = 10000
//!
//! [simulate]                     # optional
//! steps = 1000
//! x0 = [0.5, 0.0]
//! ```

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{self, Dictionary, Domain, GramMatrix, MonomialSpec, DEFAULT_QUADRATURE_ORDER};
use crate::dynamics::{
    self, Example1Params, NoiseModel, SampleSource, StochasticSystem, DEFAULT_VDP_NOISE_STD,
};
use crate::error::{Error, Result};
use crate::estimator::sample_floor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemConfig {
    Example1 {
        rho: f64,
        mu: f64,
        c: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_std: Option<Vec<f64>>,
    },
    Vanderpol {
        dt: f64,
        /// Indexed `[xi1, xi2]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise_std: Option<Vec<f64>>,
        #[serde(default)]
        standard_vdp: bool,
    },
}

impl SystemConfig {
    fn noise(std: &Option<Vec<f64>>, default: f64) -> Result<NoiseModel> {
        let std = std.clone().unwrap_or_else(|| vec![default; 2]);
        if std.len() != 2 {
            return Err(Error::Config(format!("noise_std needs 2 entries, got {}", std.len())));
        }
        if std.iter().all(|s| *s == 0.0) {
            Ok(NoiseModel::none(2))
        } else {
            NoiseModel::gaussian(std)
        }
    }

    pub fn build(&self) -> Result<StochasticSystem> {
        match self {
            SystemConfig::Example1 { rho, mu, c, noise_std } => dynamics::make_example1_with_noise(
                Example1Params {
                    rho: *rho,
                    mu: *mu,
                    c: *c,
                },
                Self::noise(noise_std, 1.0)?,
            ),
            SystemConfig::Vanderpol {
                dt,
                noise_std,
                standard_vdp,
            } => dynamics::make_vanderpol(*dt, Self::noise(noise_std, DEFAULT_VDP_NOISE_STD)?, *standard_vdp),
        }
    }

    pub fn state_dim(&self) -> usize {
        2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DictionaryConfig {
    /// `[1, x1, x2, x1^2]`.
    Example1,
    Monomial {
        max_degree: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        state_dim: Option<usize>,
    },
}

impl DictionaryConfig {
    pub fn build(&self, state_dim: usize) -> Result<Dictionary> {
        match self {
            DictionaryConfig::Example1 => {
                if state_dim != 2 {
                    return Err(Error::Config("the example1 dictionary needs a 2-dimensional state".into()));
                }
                Ok(Dictionary::example1())
            }
            DictionaryConfig::Monomial {
                max_degree,
                state_dim: n,
            } => {
                let n = n.unwrap_or(state_dim);
                if n != state_dim {
                    return Err(Error::Config(format!(
                        "dictionary state_dim {n} does not match system state_dim {state_dim}"
                    )));
                }
                Dictionary::monomial(&MonomialSpec::new(n, *max_degree)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureConfig {
    #[serde(default = "default_closure_states")]
    pub n_states: usize,
    #[serde(default = "default_closure_mc")]
    pub n_mc: usize,
}

impl Default for ClosureConfig {
    fn default() -> Self {
        ClosureConfig {
            n_states: default_closure_states(),
            n_mc: default_closure_mc(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

fn default_realizations() -> usize {
    50
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_reference_factor() -> usize {
    100
}
fn default_bound_term_realizations() -> usize {
    200
}
fn default_quadrature_order() -> usize {
    DEFAULT_QUADRATURE_ORDER
}
fn default_closure_states() -> usize {
    50
}
fn default_closure_mc() -> usize {
    10_000
}
fn default_protocol() -> SampleSource {
    SampleSource::SingleTrajectory
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub label: String,
    pub base_seed: u64,
    pub t_grid: Vec<usize>,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default)]
    pub epsilon_list: Vec<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_protocol")]
    pub protocol: SampleSource,
    #[serde(default)]
    pub workers: usize,
    #[serde(default = "default_reference_factor")]
    pub reference_factor: usize,
    #[serde(default = "default_bound_term_realizations")]
    pub bound_term_realizations: usize,
    #[serde(default = "default_quadrature_order")]
    pub quadrature_order: usize,
    /// Replaces the residual surrogate for the noise level in the bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_override: Option<f64>,
    pub system: SystemConfig,
    pub dictionary: DictionaryConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default)]
    pub closure: ClosureConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let system = self.system.build()?;
        let dict = self.dictionary.build(system.state_dim())?;
        let domain = self.domain();
        domain.validate()?;
        if domain.dim() != system.state_dim() {
            return Err(Error::Config("domain dimension does not match the system".into()));
        }
        if self.t_grid.is_empty() {
            return Err(Error::Config("t_grid must not be empty".into()));
        }
        if self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("t_grid must be strictly ascending: {:?}", self.t_grid)));
        }
        let floor = sample_floor(dict.len());
        if let Some(t) = self.t_grid.iter().find(|&&t| t <= floor) {
            return Err(Error::Config(format!(
                "t_grid entry {t} does not exceed 2N+2 = {floor}"
            )));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be at least 1".into()));
        }
        if let Some(e) = self.epsilon_list.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Config(format!("epsilon {e} outside (0, 1)")));
        }
        if self.reference_factor == 0 {
            return Err(Error::Config("reference_factor must be positive".into()));
        }
        if let Some(d) = self.delta_override {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::Config(format!("delta_override must be finite and nonnegative, got {d}")));
            }
        }
        if self.quadrature_order == 0 {
            return Err(Error::Config("quadrature_order must be positive".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        self.domain
            .clone()
            .unwrap_or_else(|| Domain::symmetric_unit(self.system.state_dim()))
    }

    pub fn build_system(&self) -> Result<StochasticSystem> {
        self.system.build()
    }

    pub fn build_dictionary(&self) -> Result<Dictionary> {
        self.dictionary.build(self.system.state_dim())
    }

    pub fn build_gram(&self, dict: &Dictionary) -> Result<GramMatrix> {
        basis::gram(dict, &self.domain(), self.quadrature_order)
    }

    /// Exact Koopman matrix when the system is closed on the dictionary.
    pub fn ground_truth(&self) -> Option<DMatrix<f64>> {
        match (&self.system, &self.dictionary) {
            (SystemConfig::Example1 { rho, mu, c, noise_std }, DictionaryConfig::Example1) => {
                let var = noise_std.as_ref().map(|s| s[0] * s[0]).unwrap_or(1.0);
                Some(dynamics::example1_true_koopman(
                    Example1Params {
                        rho: *rho,
                        mu: *mu,
                        c: *c,
                    },
                    var,
                ))
            }
            _ => None,
        }
    }

    pub fn max_t(&self) -> usize {
        *self.t_grid.last().expect("validated t_grid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAST: &str = r#"
label = "fast"
base_seed = 7
t_grid = [100, 1000]
epsilon_list = [0.1, 0.5]
[system]
kind = "example1"
rho = 0.2
mu = 0.3
c = 1.0
[dictionary]
kind = "example1"
"#;

    #[test]
    fn defaults_are_filled_in() {
        let cfg = ExperimentConfig::from_toml_str(FAST).unwrap();
        assert_eq!(cfg.n_realizations, 50);
        assert_eq!(cfg.protocol, SampleSource::SingleTrajectory);
        assert_eq!(cfg.domain(), Domain::symmetric_unit(2));
        let k = cfg.ground_truth().unwrap();
        assert_eq!(k[(0, 3)], 1.0);
    }

    #[test]
    fn config_roundtrips() {
        let cfg = ExperimentConfig::from_toml_str(FAST).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_grids() {
        let descending = FAST.replace("[100, 1000]", "[1000, 100]");
        assert!(ExperimentConfig::from_toml_str(&descending).is_err());
        let too_small = FAST.replace("[100, 1000]", "[10, 1000]");
        assert!(ExperimentConfig::from_toml_str(&too_small).is_err());
        let bad_eps = FAST.replace("[0.1, 0.5]", "[0.1, 1.5]");
        assert!(ExperimentConfig::from_toml_str(&bad_eps).is_err());
        let zero = format!("n_realizations = 0\n{FAST}");
        assert!(ExperimentConfig::from_toml_str(&zero).is_err());
    }

    #[test]
    fn vanderpol_has_no_ground_truth() {
        let text = r#"
label = "vdp"
base_seed = 1
t_grid = [1000]
[system]
kind = "vanderpol"
dt = 0.0001
[dictionary]
kind = "monomial"
max_degree = 2
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert!(cfg.ground_truth().is_none());
        assert_eq!(cfg.build_dictionary().unwrap().len(), 6);
        assert_eq!(cfg.build_system().unwrap().coordinate_std(0), 0.01);
    }

    #[test]
    fn zero_noise_is_noiseless() {
        let text = FAST.replace("c = 1.0", "c = 1.0\nnoise_std = [0.0, 0.0]");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(cfg.build_system().unwrap().noise().is_none());
        assert_eq!(cfg.ground_truth().unwrap()[(0, 3)], 0.0);
    }
}

//! Config-driven experiment runners and their CSV/JSON outputs.

pub mod calibration;
pub mod config;
pub mod pf_pipeline;
pub mod sweep;
pub mod tasks;

pub use calibration::{run_bound_calibration, write_bounds, CalibrationRow};
pub use config::{DictionaryConfig, ExperimentConfig, SystemConfig};
pub use pf_pipeline::{run_pf_pipeline, write_pf, PfOutcome, PfReport};
pub use sweep::{fit_log_slope, run_sweep, write_sweep, ErrorCurve, SweepOutcome};
pub use tasks::{run_closure, run_estimate, run_simulate, write_closure, write_estimate};

pub use crate::seed::derive_seed;

use crate::error::{Error, Result};

/// A grid point is invalid when more than 20% of its realizations failed.
pub fn is_invalid_point(n_failed: usize, n_realizations: usize) -> bool {
    n_failed * 5 > n_realizations
}

/// Runs `f` on a pool of `workers` threads (0 = one per core).
pub(crate) fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(f)
}

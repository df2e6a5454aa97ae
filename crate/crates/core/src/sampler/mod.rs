//! Hamiltonian Monte Carlo with warmup adaptation, multi-chain execution
//! and convergence diagnostics.

pub mod adapt;
pub mod diagnostics;
pub mod draws;
pub mod hmc;

pub use adapt::DualAveragingConfig;
pub use diagnostics::{ess_bulk, ess_tail, split_rhat, ParameterDiagnostics};
pub use draws::{ChainStats, DiagnosticsReport, PosteriorDraws};
pub use hmc::{leapfrog, run_chain, run_chains, run_hmc, Adaptation, ChainResult, HmcConfig, DIVERGENCE_THRESHOLD};

use crate::error::Result;

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`, writing its gradient into `grad`.
    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    fn labels(&self) -> Vec<String> {
        (1..=self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Map an unconstrained point to the reported draw vector.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

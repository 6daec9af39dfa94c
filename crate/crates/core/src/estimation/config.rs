use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{DEFAULT_EVAL_DRAWS, DEFAULT_FIT_DRAWS};

/// How starting values for the components are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Principal directions of per-replicate shrunken Poisson fits.
    #[default]
    Pca,
    /// Random J-orthonormal directions.
    Random,
}

/// Settings for one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of latent components.
    pub p: usize,
    pub nu1: f64,
    pub nu2: f64,
    /// Monte Carlo draws per optimization stage (even).
    pub draws: usize,
    /// Draws for reported log-likelihoods, held-out evaluation and scores (even).
    pub eval_draws: usize,
    pub seed: u64,
    /// Number of sample-average stages, each with fresh draws.
    pub max_outer_iters: usize,
    /// Quasi-Newton iterations per stage.
    pub max_iters: usize,
    /// Sup-norm gradient tolerance.
    pub grad_tol: f64,
    /// Number of starting points; the best final objective wins.
    pub multistart: usize,
    pub init: InitMode,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            p: 1,
            nu1: 1e-4,
            nu2: 1e-4,
            draws: DEFAULT_FIT_DRAWS,
            eval_draws: DEFAULT_EVAL_DRAWS,
            seed: 0,
            max_outer_iters: 2,
            max_iters: 500,
            grad_tol: 1e-6,
            multistart: 1,
            init: InitMode::Pca,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        if !(self.nu1 >= 0.0 && self.nu1.is_finite() && self.nu2 >= 0.0 && self.nu2.is_finite()) {
            return bad(format!("nu1 and nu2 must be finite and non-negative, got ({}, {})", self.nu1, self.nu2));
        }
        for (name, s) in [("draws", self.draws), ("eval_draws", self.eval_draws)] {
            if s < 2 || s % 2 != 0 {
                return bad(format!("{name} must be even and at least 2, got {s}"));
            }
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if self.max_outer_iters == 0 || self.max_iters == 0 || self.multistart == 0 {
            return bad("max_outer_iters, max_iters and multistart must be at least 1".into());
        }
        Ok(())
    }

    pub fn with_smoothing(&self, nu1: f64, nu2: f64, p: usize) -> Self {
        FitConfig {
            nu1,
            nu2,
            p,
            ..self.clone()
        }
    }
}

//! Log-linear latent component models for many independent point patterns
//! observed on one region.
//!
//! Each replicate is a Poisson process with random log-intensity
//! `μ(t) + Σₖ Uₖ φₖ(t)`, `Uₖ ~ N(0, σₖ²)`, on a shared interval or planar
//! region. The crate simulates such data, fits `μ`, `φₖ` and `σₖ` by penalized
//! Monte Carlo maximum likelihood, picks smoothing parameters by
//! cross-validation, and predicts per-replicate scores.
//!
//! ```
//! use replicated_cox::basis::make_bspline_basis;
//! use replicated_cox::domain::ObservationDomain;
//! use replicated_cox::estimation::{fit, FitConfig};
//! use replicated_cox::model::{ModelParams, ModelSpace};
//! use replicated_cox::nalgebra::DVector;
//! use replicated_cox::process::simulate_replicates;
//!
//! let domain = ObservationDomain::interval(0.0, 1.0)?;
//! let space = ModelSpace::with_default_resolution(make_bspline_basis(&domain, 3, 3)?)?;
//! let truth = ModelParams::baseline(DVector::from_element(space.q(), 20f64.ln()));
//! let (data, _) = simulate_replicates(&truth, &space, 50, 0)?;
//! let result = fit(&data, &space, &FitConfig { p: 0, ..Default::default() })?;
//! let rate = space.integrated_intensity(&result.theta_hat.c0)?;
//! assert!((rate - 20.0).abs() < 2.0);
//! # Ok::<(), replicated_cox::Error>(())
//! ```
//!
//! A longer guide lives in `book/`.

pub mod basis;
pub mod domain;
pub mod error;
pub mod estimation;
pub mod io;
pub mod likelihood;
mod linalg;
pub mod model;
pub mod process;
pub mod rng;
pub mod scores;

pub use error::{Error, Result};
pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/domains-and-bases.md")]
    mod domains_and_bases {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/likelihood.md")]
    mod likelihood {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/cross-validation.md")]
    mod cross_validation {}
    #[doc = include_str!("../../../book/src/scores-and-curves.md")]
    mod scores_and_curves {}
    #[doc = include_str!("../../../book/src/files-and-cli.md")]
    mod files_and_cli {}
}

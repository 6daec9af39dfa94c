//! Fitting, identifiability and cross-validation.

pub mod canonical;
pub mod config;
pub mod cv;
pub mod fit;
pub mod optimize;

pub use canonical::{canonicalize, canonicalize_with_rotation};
pub use config::{FitConfig, InitMode};
pub use cv::{cross_validate, product_grid, CvEntry, CvTable, GridPoint};
pub use fit::{evaluation_draws, fit, initialize, stage_draws, FitResult};
pub use optimize::Termination;

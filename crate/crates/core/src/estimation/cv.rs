//! K-fold cross-validation over a grid of `(ν₁, ν₂, p)`.
//!
//! Replicate `i` belongs to fold `i mod K`. For each grid point and fold the
//! model is fitted on the remaining replicates and the held-out replicates
//! are scored by their marginal log-likelihood under the evaluation draws.
//! The CV value of a grid point is the sum over all held-out replicates;
//! with `K = n` it is the leave-one-out criterion.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::FitConfig;
use super::fit::{evaluation_draws, fit_stats};
use crate::error::{Error, Result};
use crate::likelihood::{marginal_logliks, PatternStats};
use crate::model::ModelSpace;
use crate::process::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub nu1: f64,
    pub nu2: f64,
    pub p: usize,
}

impl GridPoint {
    /// Grid point from base-10 logarithms of the smoothing parameters.
    pub fn from_log10(log10_nu1: f64, log10_nu2: f64, p: usize) -> Self {
        GridPoint {
            nu1: 10f64.powf(log10_nu1),
            nu2: 10f64.powf(log10_nu2),
            p,
        }
    }
}

/// Cartesian product of smoothing values and component counts.
pub fn product_grid(nu1: &[f64], nu2: &[f64], p: &[usize]) -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(nu1.len() * nu2.len() * p.len());
    for &p in p {
        for &nu1 in nu1 {
            for &nu2 in nu2 {
                out.push(GridPoint { nu1, nu2, p });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvEntry {
    pub point: GridPoint,
    /// Sum of held-out marginal log-likelihoods; `None` when a fold fit failed.
    pub cv: Option<f64>,
    /// Every fold fit met the gradient tolerance.
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTable {
    pub entries: Vec<CvEntry>,
    pub folds: usize,
    /// Index of the entry with the largest CV value.
    pub argmax: usize,
}

impl CvTable {
    pub fn best(&self) -> &CvEntry {
        &self.entries[self.argmax]
    }

    /// CSV with columns `nu1,nu2,log10_nu1,log10_nu2,p,cv,valid,converged,argmax`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        w.write_record(["nu1", "nu2", "log10_nu1", "log10_nu2", "p", "cv", "valid", "converged", "argmax"])
            .map_err(io)?;
        for (i, e) in self.entries.iter().enumerate() {
            w.write_record([
                format!("{:.16e}", e.point.nu1),
                format!("{:.16e}", e.point.nu2),
                format!("{:.16e}", e.point.nu1.log10()),
                format!("{:.16e}", e.point.nu2.log10()),
                e.point.p.to_string(),
                e.cv.map(|v| format!("{v:.16e}")).unwrap_or_default(),
                e.cv.is_some().to_string(),
                e.converged.to_string(),
                (i == self.argmax).to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fold of each replicate.
pub fn fold_assignment(n: usize, folds: usize) -> Vec<usize> {
    (0..n).map(|i| i % folds).collect()
}

/// Cross-validates every grid point. Fold fits use `config` with the grid
/// point's smoothing parameters and component count; a failing fold marks
/// the grid point invalid.
pub fn cross_validate(
    data: &Dataset,
    space: &ModelSpace,
    grid: &[GridPoint],
    folds: usize,
    config: &FitConfig,
) -> Result<CvTable> {
    let n = data.len();
    if grid.is_empty() {
        return Err(Error::Usage("cross-validation grid is empty".into()));
    }
    if folds < 2 || folds > n {
        return Err(Error::Usage(format!("folds must lie in [2, {n}], got {folds}")));
    }
    for g in grid {
        config.with_smoothing(g.nu1, g.nu2, g.p).validate()?;
    }
    let stats = PatternStats::for_dataset(space, data)?;
    let assign = fold_assignment(n, folds);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let results: Vec<Result<(f64, bool)>> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let point = grid[g];
            let cfg = config.with_smoothing(point.nu1, point.nu2, point.p);
            let train: Vec<PatternStats> = (0..n).filter(|i| assign[*i] != f).map(|i| stats[i].clone()).collect();
            let test: Vec<PatternStats> = (0..n).filter(|i| assign[*i] == f).map(|i| stats[i].clone()).collect();
            let fitted = fit_stats(&train, space, &cfg)?;
            let eval = evaluation_draws(&cfg)?;
            let held = marginal_logliks(&test, &fitted.theta_hat, space, &eval)?;
            let total: f64 = held.iter().map(|v| v.0).sum();
            if !total.is_finite() {
                return Err(Error::Numeric(format!("held-out log-likelihood is {total}")));
            }
            Ok((total, fitted.converged))
        })
        .collect();

    let mut entries = Vec::with_capacity(grid.len());
    for (g, point) in grid.iter().enumerate() {
        let mut cv = Some(0.0);
        let mut converged = true;
        let mut error = None;
        for r in &results[g * folds..(g + 1) * folds] {
            match r {
                Ok((v, c)) => {
                    cv = cv.map(|s| s + v);
                    converged &= c;
                }
                Err(e) => {
                    log::warn!("grid point {point:?}: fold fit failed: {e}");
                    cv = None;
                    converged = false;
                    error.get_or_insert_with(|| e.to_string());
                }
            }
        }
        entries.push(CvEntry {
            point: *point,
            cv,
            converged,
            error,
        });
    }
    let argmax = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.cv.map(|v| (i, v)))
        .fold(None, |best: Option<(usize, f64)>, (i, v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::Estimation(format!(
                "every grid point failed; first error: {}",
                entries[0].error.as_deref().unwrap_or("unknown")
            ))
        })?;
    Ok(CvTable { entries, folds, argmax })
}

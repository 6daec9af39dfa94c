//! Posterior component scores and interpretive curves.
//!
//! Scores are posterior means `E[U | X = x]` by self-normalized importance
//! sampling with the prior as proposal, reusing the antithetic draws of the
//! likelihood. Curves are `λ₀ = exp μ`, `φ_k`, `ξ_k = exp φ_k` and
//! `λ±ᵏ = exp(μ ± a σ_k φ_k)` with `a = 2` by default.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSystem;
use crate::domain::Point;
use crate::error::{Error, Result};
use crate::estimation::{evaluation_draws, FitResult};
use crate::likelihood::{posterior_moments_many, MCDraws, PatternStats};
use crate::model::{ModelParams, ModelSpace};
use crate::process::{Dataset, PointPattern, ScoreVector};

/// Below this effective sample size a score is flagged as unreliable.
pub const MIN_EFFECTIVE_SAMPLE_SIZE: f64 = 10.0;

/// Default multiplier `a` in `λ±ᵏ = exp(μ ± a σ_k φ_k)`.
pub const DEFAULT_CURVE_MULTIPLIER: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorScores {
    pub mean: ScoreVector,
    /// Monte Carlo standard error of each coordinate of `mean`.
    pub std_error: DVector<f64>,
    /// `1 / Σ w_s²`.
    pub effective_sample_size: f64,
    pub low_ess: bool,
}

/// Posterior mean scores of one pattern.
pub fn posterior_scores(
    pattern: &PointPattern,
    theta: &ModelParams,
    space: &ModelSpace,
    draws: &MCDraws,
) -> Result<PosteriorScores> {
    let stats = PatternStats::new(space, pattern)?;
    Ok(score_all(&[stats], theta, space, draws)?.remove(0))
}

/// Posterior mean scores of every replicate, sharing per-draw work.
pub fn posterior_scores_all(
    data: &Dataset,
    theta: &ModelParams,
    space: &ModelSpace,
    draws: &MCDraws,
) -> Result<Vec<PosteriorScores>> {
    let stats = PatternStats::for_dataset(space, data)?;
    score_all(&stats, theta, space, draws)
}

fn score_all(stats: &[PatternStats], theta: &ModelParams, space: &ModelSpace, draws: &MCDraws) -> Result<Vec<PosteriorScores>> {
    let out = posterior_moments_many(stats, theta, space, draws)?
        .into_iter()
        .map(|m| PosteriorScores {
            low_ess: theta.p() > 0 && m.ess < MIN_EFFECTIVE_SAMPLE_SIZE,
            mean: m.mean,
            std_error: m.std_error,
            effective_sample_size: m.ess,
        })
        .collect::<Vec<_>>();
    let low = out.iter().filter(|s| s.low_ess).count();
    if low > 0 {
        log::warn!("{low} replicate(s) have effective sample size below {MIN_EFFECTIVE_SAMPLE_SIZE}");
    }
    Ok(out)
}

/// Fills `fit.scores` (n × p) using the fit's evaluation draws.
pub fn attach_scores(fit: &mut FitResult, data: &Dataset, space: &ModelSpace) -> Result<Vec<PosteriorScores>> {
    let draws = evaluation_draws(&fit.config)?;
    let scores = posterior_scores_all(data, &fit.theta_hat, space, &draws)?;
    let p = fit.theta_hat.p();
    fit.scores = Some(DMatrix::from_fn(scores.len(), p, |i, k| scores[i].mean[k]));
    Ok(scores)
}

/// Curves of one component on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentValues {
    pub phi: Vec<f64>,
    pub xi: Vec<f64>,
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentCurves {
    pub points: Vec<Point>,
    pub baseline: Vec<f64>,
    pub components: Vec<ComponentValues>,
    pub multiplier: f64,
}

/// Evaluates `λ₀`, `φ_k`, `ξ_k` and `λ±ᵏ` on `resolution` equispaced points
/// (1D) or the masked `resolution × resolution` cell-centre grid (2D).
pub fn component_curves(
    theta: &ModelParams,
    basis: &BasisSystem,
    resolution: usize,
    multiplier: f64,
) -> Result<ComponentCurves> {
    if theta.q() != basis.len() {
        return Err(Error::Usage(format!(
            "parameters have q = {} but the basis has q = {}",
            theta.q(),
            basis.len()
        )));
    }
    if !multiplier.is_finite() {
        return Err(Error::Usage("curve multiplier must be finite".into()));
    }
    let points = basis.domain().grid(resolution)?;
    let b = basis.eval_basis(&points)?;
    let mu = &b * &theta.c0;
    let baseline = mu.iter().map(|m| m.exp()).collect();
    let components = (0..theta.p())
        .map(|k| {
            let phi = &b * theta.c.column(k);
            let shift = multiplier * theta.sigma[k];
            ComponentValues {
                xi: phi.iter().map(|f| f.exp()).collect(),
                plus: mu.iter().zip(phi.iter()).map(|(m, f)| (m + shift * f).exp()).collect(),
                minus: mu.iter().zip(phi.iter()).map(|(m, f)| (m - shift * f).exp()).collect(),
                phi: phi.iter().cloned().collect(),
            }
        })
        .collect();
    Ok(ComponentCurves {
        points,
        baseline,
        components,
        multiplier,
    })
}

impl ComponentCurves {
    /// CSV with coordinate columns (`t` or `x,y`), `lambda0`, then
    /// `phi_k,xi_k,lambda_plus_k,lambda_minus_k` for each component.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        let planar = matches!(self.points.first(), Some(Point::Plane(_)));
        let mut header: Vec<String> = if planar {
            vec!["x".into(), "y".into()]
        } else {
            vec!["t".into()]
        };
        header.push("lambda0".into());
        for k in 1..=self.components.len() {
            header.extend([
                format!("phi_{k}"),
                format!("xi_{k}"),
                format!("lambda_plus_{k}"),
                format!("lambda_minus_{k}"),
            ]);
        }
        w.write_record(&header).map_err(io)?;
        let f = |v: f64| format!("{v:.16e}");
        for (i, p) in self.points.iter().enumerate() {
            let mut row: Vec<String> = match p {
                Point::Line(t) => vec![f(*t)],
                Point::Plane([x, y]) => vec![f(*x), f(*y)],
            };
            row.push(f(self.baseline[i]));
            for c in &self.components {
                row.extend([f(c.phi[i]), f(c.xi[i]), f(c.plus[i]), f(c.minus[i])]);
            }
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub replicate_id: String,
    pub m: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub rows: Vec<ScoreRow>,
    /// Pearson correlation of the first score with the event count.
    pub count_correlation: Option<f64>,
}

/// Pearson correlation; `None` when either input is constant or too short.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Per-replicate id, count and scores, with `corr(û₁, m)`.
pub fn score_summary(fit: &FitResult, data: &Dataset) -> Result<ScoreSummary> {
    let p = fit.theta_hat.p();
    match (&fit.scores, p) {
        (Some(s), _) => summarize_scores(data, s),
        (None, 0) => summarize_scores(data, &DMatrix::zeros(data.len(), 0)),
        (None, _) => Err(Error::Usage("scores have not been computed for this fit".into())),
    }
}

/// Same as [`score_summary`] from an `n × p` score matrix.
pub fn summarize_scores(data: &Dataset, scores: &DMatrix<f64>) -> Result<ScoreSummary> {
    let p = scores.ncols();
    if scores.nrows() != data.len() {
        return Err(Error::Usage(format!(
            "fit has scores for {} replicates but the dataset has {}",
            scores.nrows(),
            data.len()
        )));
    }
    let rows: Vec<ScoreRow> = data
        .patterns()
        .iter()
        .enumerate()
        .map(|(i, pat)| ScoreRow {
            replicate_id: pat.replicate_id.clone(),
            m: pat.m(),
            scores: scores.row(i).iter().cloned().collect(),
        })
        .collect();
    let count_correlation = if p > 0 {
        let u: Vec<f64> = rows.iter().map(|r| r.scores[0]).collect();
        let m: Vec<f64> = rows.iter().map(|r| r.m as f64).collect();
        pearson(&u, &m)
    } else {
        None
    };
    Ok(ScoreSummary {
        rows,
        count_correlation,
    })
}

impl ScoreSummary {
    /// CSV with columns `replicate_id,m,u_1..u_p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.into());
        let p = self.rows.first().map_or(0, |r| r.scores.len());
        let mut header = vec!["replicate_id".to_string(), "m".to_string()];
        header.extend((1..=p).map(|k| format!("u_{k}")));
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut row = vec![r.replicate_id.clone(), r.m.to_string()];
            row.extend(r.scores.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

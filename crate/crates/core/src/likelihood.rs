//! Conditional, prior and Monte Carlo marginal log-densities, the penalized
//! objective `ρₙ`, and its gradient.
//!
//! The marginal density `f(x; θ) = ∫ f(x | u) f(u) du` is estimated by
//! sampling the prior through `u = σ ⊙ z` with a fixed set of standard
//! normal draws `z` used in antithetic pairs (`z` and `-z`). With the draws
//! held fixed the objective is a smooth deterministic function of `θ`
//! (sample average approximation), and its gradient follows by
//! differentiating through the reparameterization:
//!
//! ```text
//! ℓ_is        = log f(x_i | σ⊙z_s) = -Λ_s + (c₀ + C u_s)ᵀ b_i - log m_i!
//! Λ_s         = ∫_B exp{(c₀ + C u_s)ᵀ β}
//! g_s         = ∫_B β exp{(c₀ + C u_s)ᵀ β}
//! w_is        = exp(ℓ_is) / Σ_r exp(ℓ_ir)
//! ∂/∂c₀       = (1/n) Σ_i Σ_s w_is (b_i - g_s)            - 2ν₁ Ω c₀
//! ∂/∂C        = (1/n) Σ_i Σ_s w_is (b_i - g_s) u_sᵀ       - 2ν₂ Ω C
//! ∂/∂log σ_k  = c_kᵀ [(1/n) Σ_i Σ_s w_is (b_i - g_s) u_sk]
//! ```
//!
//! where `b_i = Σ_j β(t_ij)`. The `Λ_s` and `g_s` terms depend only on the
//! draw, so they are computed once per draw and shared across replicates.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSpace};
use crate::process::{Dataset, PointPattern, ScoreVector};
use crate::rng::{stream, Purpose};

/// Largest admissible exponent of the intensity before reporting overflow.
pub const MAX_EXPONENT: f64 = 700.0;

/// Draws used while fitting.
pub const DEFAULT_FIT_DRAWS: usize = 1000;
/// Draws used for reported log-likelihoods, cross-validation and scores.
pub const DEFAULT_EVAL_DRAWS: usize = 10_000;

const DRAW_BLOCK: usize = 64;

/// Standard normal draws held fixed for the lifetime of one optimization.
///
/// Rows `0..S/2` are independent draws and rows `S/2..S` their negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct MCDraws {
    z: DMatrix<f64>,
    seed: u64,
}

impl MCDraws {
    /// `s` antithetic draws of dimension `p`; `s` must be even and positive.
    pub fn new(p: usize, s: usize, seed: u64) -> Result<Self> {
        if s == 0 || s % 2 != 0 {
            return Err(Error::Usage(format!("number of draws must be even and positive, got {s}")));
        }
        let half = s / 2;
        let mut rng = stream(seed, Purpose::MonteCarloDraws, p as u64);
        let mut z = DMatrix::zeros(s, p);
        for r in 0..half {
            for k in 0..p {
                let v: f64 = StandardNormal.sample(&mut rng);
                z[(r, k)] = v;
                z[(r + half, k)] = -v;
            }
        }
        Ok(MCDraws { z, seed })
    }

    /// The same draws mapped through `z ↦ Rᵀ z` (rows multiplied by `R`).
    /// Orthogonal `R` preserves both the distribution and the antithetic pairing.
    pub fn rotated(&self, r: &DMatrix<f64>) -> Result<Self> {
        if r.nrows() != self.p() || r.ncols() != self.p() {
            return Err(Error::Usage("rotation must be p × p".into()));
        }
        Ok(MCDraws {
            z: &self.z * r,
            seed: self.seed,
        })
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }
}

/// Sufficient statistics of one pattern: `m`, `log m!` and `b = Σ_j β(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternStats {
    pub m: usize,
    pub log_factorial: f64,
    pub basis_sum: DVector<f64>,
}

impl PatternStats {
    pub fn new(space: &ModelSpace, pattern: &PointPattern) -> Result<Self> {
        Ok(PatternStats {
            m: pattern.m(),
            log_factorial: ln_gamma(pattern.m() as f64 + 1.0),
            basis_sum: space.basis().sum_over(&pattern.points)?,
        })
    }

    pub fn for_dataset(space: &ModelSpace, data: &Dataset) -> Result<Vec<Self>> {
        data.patterns().iter().map(|p| Self::new(space, p)).collect()
    }
}

fn check_draws(theta: &ModelParams, draws: &MCDraws) -> Result<()> {
    if draws.p() != theta.p() {
        return Err(Error::Usage(format!(
            "draws have dimension {} but the model has p = {}",
            draws.p(),
            theta.p()
        )));
    }
    Ok(())
}

/// `log f(x | u) = -∫_B exp{(c₀ + Cu)ᵀβ} + (c₀ + Cu)ᵀ Σ_j β(t_j) - log m!`.
pub fn cond_loglik(pattern: &PointPattern, u: &ScoreVector, theta: &ModelParams, space: &ModelSpace) -> Result<f64> {
    space.check_params(theta)?;
    if u.len() != theta.p() {
        return Err(Error::Usage(format!(
            "score vector has length {} but the model has p = {}",
            u.len(),
            theta.p()
        )));
    }
    let stats = PatternStats::new(space, pattern)?;
    cond_loglik_stats(&stats, u, theta, space)
}

pub(crate) fn cond_loglik_stats(
    stats: &PatternStats,
    u: &ScoreVector,
    theta: &ModelParams,
    space: &ModelSpace,
) -> Result<f64> {
    let coef = theta.coefficients_at(u);
    let total = space.integrated_intensity(&coef)?;
    Ok(-total + coef.dot(&stats.basis_sum) - stats.log_factorial)
}

/// `log f(u) = Σ_k (-½ log 2πσ_k² - u_k² / 2σ_k²)`.
pub fn prior_loglik(u: &ScoreVector, sigma: &DVector<f64>) -> Result<f64> {
    if u.len() != sigma.len() {
        return Err(Error::Usage(format!(
            "score vector has length {} but sigma has length {}",
            u.len(),
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Usage(format!("sigma must be positive, got {s}")));
    }
    Ok(u.iter()
        .zip(sigma.iter())
        .map(|(u, s)| -0.5 * (2.0 * std::f64::consts::PI * s * s).ln() - u * u / (2.0 * s * s))
        .sum())
}

/// Per-draw quantities shared by every replicate.
struct DrawTerms {
    /// Latent scores `u_s = σ ⊙ z_s`, one row per draw.
    u: DMatrix<f64>,
    /// `Λ_s`.
    total: Vec<f64>,
    /// `g_s` as rows (only when a gradient is requested).
    weighted_basis: Option<DMatrix<f64>>,
}

fn draw_terms(space: &ModelSpace, theta: &ModelParams, draws: &MCDraws, with_grad: bool) -> Result<DrawTerms> {
    let s = draws.len();
    let p = theta.p();
    let q = theta.q();
    let nb = space.node_basis();
    let weights = space.quadrature().weights();
    let mut u = draws.z().clone();
    for k in 0..p {
        u.column_mut(k).scale_mut(theta.sigma[k]);
    }
    let eta0 = nb * &theta.c0;
    let node_comp = nb * &theta.c; // N × p

    let blocks: Vec<(usize, usize)> = (0..s).step_by(DRAW_BLOCK).map(|a| (a, (a + DRAW_BLOCK).min(s))).collect();
    let results = blocks
        .par_iter()
        .map(|&(a, b)| {
            let ub = u.rows(a, b - a);
            let mut e = &ub * node_comp.transpose(); // rows: draws, cols: nodes
            let mut top = f64::NEG_INFINITY;
            for (j, mut col) in e.column_iter_mut().enumerate() {
                for v in col.iter_mut() {
                    *v += eta0[j];
                    top = top.max(*v);
                }
            }
            if !(top <= MAX_EXPONENT) {
                return Err(Error::Overflow { max_exponent: top });
            }
            for (j, mut col) in e.column_iter_mut().enumerate() {
                let w = weights[j];
                col.apply(|v| *v = w * v.exp());
            }
            let totals: Vec<f64> = e.row_iter().map(|r| r.iter().sum()).collect();
            let g = with_grad.then(|| &e * nb);
            Ok((totals, g))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut total = Vec::with_capacity(s);
    let mut weighted_basis = with_grad.then(|| DMatrix::zeros(s, q));
    for (&(a, b), (t, g)) in blocks.iter().zip(results) {
        total.extend(t);
        if let (Some(dst), Some(g)) = (weighted_basis.as_mut(), g) {
            dst.rows_mut(a, b - a).copy_from(&g);
        }
    }
    Ok(DrawTerms { u, total, weighted_basis })
}

/// Self-normalized importance weights and the log-mean-exp for one replicate.
struct ReplicateTerms {
    loglik: f64,
    /// Standard error of `loglik` from antithetic pair means (delta method).
    std_error: f64,
    weights: Vec<f64>,
}

fn replicate_terms(stats: &PatternStats, theta: &ModelParams, terms: &DrawTerms, keep_weights: bool) -> Result<ReplicateTerms> {
    let s = terms.total.len();
    let a = theta.c0.dot(&stats.basis_sum) - stats.log_factorial;
    let h = theta.c.tr_mul(&stats.basis_sum);
    let ell: Vec<f64> = (0..s)
        .map(|r| {
            let mut v = -terms.total[r] + a;
            for k in 0..h.len() {
                v += terms.u[(r, k)] * h[k];
            }
            v
        })
        .collect();
    let top = ell.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::Numeric(format!(
            "every Monte Carlo summand underflowed (max log-density {top})"
        )));
    }
    let y: Vec<f64> = ell.iter().map(|v| (v - top).exp()).collect();
    let sum: f64 = y.iter().sum();
    let loglik = top + (sum / s as f64).ln();

    let half = s / 2;
    let std_error = if half >= 2 && s % 2 == 0 {
        let pairs: Vec<f64> = (0..half).map(|j| 0.5 * (y[j] + y[j + half])).collect();
        let mean = pairs.iter().sum::<f64>() / half as f64;
        let var = pairs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (half as f64 - 1.0);
        (var / half as f64).sqrt() / mean
    } else {
        0.0
    };
    let weights = if keep_weights {
        y.iter().map(|v| v / sum).collect()
    } else {
        Vec::new()
    };
    Ok(ReplicateTerms {
        loglik,
        std_error,
        weights,
    })
}

/// Monte Carlo estimate of `log f(x; θ)`.
pub fn marginal_loglik(pattern: &PointPattern, theta: &ModelParams, space: &ModelSpace, draws: &MCDraws) -> Result<f64> {
    marginal_loglik_with_se(pattern, theta, space, draws).map(|(v, _)| v)
}

/// [`marginal_loglik`] together with its Monte Carlo standard error.
pub fn marginal_loglik_with_se(
    pattern: &PointPattern,
    theta: &ModelParams,
    space: &ModelSpace,
    draws: &MCDraws,
) -> Result<(f64, f64)> {
    space.check_params(theta)?;
    check_draws(theta, draws)?;
    let stats = PatternStats::new(space, pattern)?;
    let out = marginal_logliks(std::slice::from_ref(&stats), theta, space, draws)?;
    Ok(out[0])
}

/// `(log f(x_i; θ), s.e.)` for each replicate, sharing per-draw work.
pub fn marginal_logliks(
    stats: &[PatternStats],
    theta: &ModelParams,
    space: &ModelSpace,
    draws: &MCDraws,
) -> Result<Vec<(f64, f64)>> {
    space.check_params(theta)?;
    check_draws(theta, draws)?;
    if theta.p() == 0 {
        let none = DVector::zeros(0);
        return stats
            .iter()
            .map(|s| cond_loglik_stats(s, &none, theta, space).map(|v| (v, 0.0)))
            .collect();
    }
    let terms = draw_terms(space, theta, draws, false)?;
    stats
        .par_iter()
        .map(|s| replicate_terms(s, theta, &terms, false).map(|r| (r.loglik, r.std_error)))
        .collect()
}

/// Gradient of `ρₙ` with respect to `(c₀, C, log σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub c0: DVector<f64>,
    pub c: DMatrix<f64>,
    pub log_sigma: DVector<f64>,
}

/// Objective value, per-replicate log-likelihoods and (optionally) the gradient.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub logliks: Vec<f64>,
    pub gradient: Option<ParamGradient>,
}

fn check_smoothing(nu1: f64, nu2: f64) -> Result<()> {
    if !(nu1 >= 0.0 && nu2 >= 0.0 && nu1.is_finite() && nu2.is_finite()) {
        return Err(Error::Usage(format!(
            "smoothing parameters must be finite and non-negative, got ({nu1}, {nu2})"
        )));
    }
    Ok(())
}

/// Roughness part of the objective: `ν₁ c₀ᵀΩc₀ + ν₂ Σ_k c_kᵀΩc_k`.
pub fn roughness_penalty(theta: &ModelParams, space: &ModelSpace, nu1: f64, nu2: f64) -> f64 {
    let omega = space.penalty();
    let comp: f64 = theta.c.column_iter().map(|c| omega.roughness(&c.into_owned())).sum();
    nu1 * omega.roughness(&theta.c0) + nu2 * comp
}

/// Evaluates `ρₙ` (and its gradient) from precomputed pattern statistics.
pub fn evaluate(
    stats: &[PatternStats],
    theta: &ModelParams,
    space: &ModelSpace,
    nu1: f64,
    nu2: f64,
    draws: &MCDraws,
    with_grad: bool,
) -> Result<Evaluation> {
    space.check_params(theta)?;
    check_draws(theta, draws)?;
    check_smoothing(nu1, nu2)?;
    if stats.is_empty() {
        return Err(Error::Usage("objective needs at least one replicate".into()));
    }
    let n = stats.len() as f64;
    let q = theta.q();
    let p = theta.p();
    let penalty = roughness_penalty(theta, space, nu1, nu2);
    let omega = space.penalty().matrix();

    if p == 0 {
        let none = DVector::zeros(0);
        let logliks = stats
            .iter()
            .map(|s| cond_loglik_stats(s, &none, theta, space))
            .collect::<Result<Vec<_>>>()?;
        let objective = logliks.iter().sum::<f64>() / n - penalty;
        let gradient = if with_grad {
            let eta = space.node_basis() * &theta.c0;
            let w: DVector<f64> = DVector::from_iterator(
                eta.len(),
                eta.iter().zip(space.quadrature().weights()).map(|(e, w)| w * e.exp()),
            );
            let expected = space.node_basis().tr_mul(&w);
            let mean_b = stats.iter().fold(DVector::zeros(q), |acc, s| acc + &s.basis_sum) / n;
            Some(ParamGradient {
                c0: mean_b - expected - 2.0 * nu1 * (omega * &theta.c0),
                c: DMatrix::zeros(q, 0),
                log_sigma: DVector::zeros(0),
            })
        } else {
            None
        };
        return Ok(Evaluation {
            objective,
            logliks,
            gradient,
        });
    }

    let terms = draw_terms(space, theta, draws, with_grad)?;
    let reps = stats
        .par_iter()
        .map(|s| replicate_terms(s, theta, &terms, with_grad))
        .collect::<Result<Vec<_>>>()?;
    let logliks: Vec<f64> = reps.iter().map(|r| r.loglik).collect();
    let objective = logliks.iter().sum::<f64>() / n - penalty;

    let gradient = if with_grad {
        let s_count = terms.total.len();
        let g = terms.weighted_basis.as_ref().expect("requested");
        // ω_s = (1/n) Σ_i w_is and Σ_i b_i v_iᵀ with v_i = Σ_s w_is u_s.
        let mut omega_s = DVector::zeros(s_count);
        let mut b_v = DMatrix::zeros(q, p);
        let mut mean_b = DVector::zeros(q);
        for (st, r) in stats.iter().zip(&reps) {
            let w = DVector::from_column_slice(&r.weights);
            omega_s += &w;
            let v = terms.u.tr_mul(&w);
            b_v += &st.basis_sum * v.transpose();
            mean_b += &st.basis_sum;
        }
        omega_s /= n;
        b_v /= n;
        mean_b /= n;
        let expected_g = g.tr_mul(&omega_s);
        let mut weighted_u = terms.u.clone();
        for (r, mut row) in weighted_u.row_iter_mut().enumerate() {
            row.scale_mut(omega_s[r]);
        }
        let lik_c = b_v - g.tr_mul(&weighted_u);
        let log_sigma = DVector::from_iterator(p, (0..p).map(|k| theta.c.column(k).dot(&lik_c.column(k))));
        Some(ParamGradient {
            c0: mean_b - expected_g - 2.0 * nu1 * (omega * &theta.c0),
            c: lik_c - 2.0 * nu2 * (omega * &theta.c),
            log_sigma,
        })
    } else {
        None
    };
    Ok(Evaluation {
        objective,
        logliks,
        gradient,
    })
}

/// `ρₙ(θ) = (1/n) Σ_i log f(x_i; θ) - ν₁ c₀ᵀΩc₀ - ν₂ Σ_k c_kᵀΩc_k`.
pub fn penalized_objective(
    data: &Dataset,
    theta: &ModelParams,
    space: &ModelSpace,
    nu1: f64,
    nu2: f64,
    draws: &MCDraws,
) -> Result<f64> {
    let stats = PatternStats::for_dataset(space, data)?;
    evaluate(&stats, theta, space, nu1, nu2, draws, false).map(|e| e.objective)
}

/// Analytic gradient of [`penalized_objective`] with the same draws.
pub fn objective_gradient(
    data: &Dataset,
    theta: &ModelParams,
    space: &ModelSpace,
    nu1: f64,
    nu2: f64,
    draws: &MCDraws,
) -> Result<ParamGradient> {
    let stats = PatternStats::for_dataset(space, data)?;
    evaluate(&stats, theta, space, nu1, nu2, draws, true).map(|e| e.gradient.expect("requested"))
}

/// Self-normalized importance-sampling moments of `U | X = x` with the
/// prior as proposal.
pub(crate) struct PosteriorMoments {
    pub mean: DVector<f64>,
    pub std_error: DVector<f64>,
    pub ess: f64,
}

/// Shared per-draw work for scoring many replicates at once.
pub(crate) fn posterior_moments_many(
    stats: &[PatternStats],
    theta: &ModelParams,
    space: &ModelSpace,
    draws: &MCDraws,
) -> Result<Vec<PosteriorMoments>> {
    space.check_params(theta)?;
    check_draws(theta, draws)?;
    if theta.p() == 0 {
        let none = || DVector::zeros(0);
        return Ok(stats
            .iter()
            .map(|_| PosteriorMoments {
                mean: none(),
                std_error: none(),
                ess: draws.len() as f64,
            })
            .collect());
    }
    let p = theta.p();
    let terms = draw_terms(space, theta, draws, false)?;
    stats
        .par_iter()
        .map(|st| {
            let r = replicate_terms(st, theta, &terms, true)?;
            let w = DVector::from_column_slice(&r.weights);
            let mean = terms.u.tr_mul(&w);
            let mut var = DVector::zeros(p);
            for (s, ws) in r.weights.iter().enumerate() {
                for k in 0..p {
                    var[k] += ws * ws * (terms.u[(s, k)] - mean[k]).powi(2);
                }
            }
            let ess = 1.0 / r.weights.iter().map(|w| w * w).sum::<f64>();
            Ok(PosteriorMoments {
                mean,
                std_error: var.map(f64::sqrt),
                ess,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_bspline_basis;
    use crate::domain::{ObservationDomain, Point};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(knots: usize) -> ModelSpace {
        let d = ObservationDomain::interval(0.0, 1.0).unwrap();
        ModelSpace::with_default_resolution(make_bspline_basis(&d, knots, 3).unwrap()).unwrap()
    }

    fn pattern(ts: &[f64]) -> PointPattern {
        PointPattern::new("x", ts.iter().map(|t| Point::Line(*t)).collect())
    }

    fn random_instance(q_knots: usize, p: usize, n: usize, seed: u64) -> (ModelSpace, ModelParams, Dataset) {
        let sp = space(q_knots);
        let q = sp.q();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c0 = DVector::from_fn(q, |_, _| 1.5 + 0.5 * rng.random::<f64>());
        let c = DMatrix::from_fn(q, p, |_, _| rng.random::<f64>() - 0.5);
        let sigma = DVector::from_fn(p, |_, _| 0.3 + 0.5 * rng.random::<f64>());
        let theta = ModelParams::new(c0, c, sigma).unwrap();
        let patterns = (0..n)
            .map(|i| {
                let m = 2 + rng.random_range(0..8);
                let ts: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                let mut p = pattern(&ts);
                p.replicate_id = format!("r{i}");
                p
            })
            .collect();
        let data = Dataset::new(sp.basis().domain().clone(), patterns).unwrap();
        (sp, theta, data)
    }

    #[test]
    fn conditional_examples() {
        let sp = space(2);
        let q = sp.q();
        let unit = ModelParams::baseline(DVector::zeros(q));
        let none = DVector::zeros(0);
        assert!((cond_loglik(&pattern(&[]), &none, &unit, &sp).unwrap() + 1.0).abs() < 1e-12);
        let two = ModelParams::baseline(DVector::from_element(q, 2f64.ln()));
        let v = cond_loglik(&pattern(&[0.5]), &none, &two, &sp).unwrap();
        assert!((v - (-2.0 + 2f64.ln())).abs() < 1e-12);
        let (_, theta, _) = random_instance(2, 2, 1, 1);
        let pat = pattern(&[0.2, 0.8]);
        let with = cond_loglik(&pat, &DVector::zeros(2), &theta, &sp).unwrap();
        let without = cond_loglik(&pat, &none, &ModelParams::baseline(theta.c0.clone()), &sp).unwrap();
        assert_eq!(with, without);
        assert!(matches!(
            cond_loglik(&pat, &DVector::zeros(1), &theta, &sp),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn overflow_reports_exponent() {
        let sp = space(0);
        let theta = ModelParams::baseline(DVector::from_element(4, 800.0));
        match cond_loglik(&pattern(&[]), &DVector::zeros(0), &theta, &sp) {
            Err(Error::Overflow { max_exponent }) => assert!((max_exponent - 800.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prior_examples() {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let one = DVector::from_element(1, 1.0);
        assert!((prior_loglik(&DVector::zeros(1), &one).unwrap() + half_log_2pi).abs() < 1e-15);
        let u = DVector::from_vec(vec![0.3, -1.1]);
        let s = DVector::from_vec(vec![0.7, 2.0]);
        let parts = prior_loglik(&u.rows(0, 1).into_owned(), &s.rows(0, 1).into_owned()).unwrap()
            + prior_loglik(&u.rows(1, 1).into_owned(), &s.rows(1, 1).into_owned()).unwrap();
        assert!((prior_loglik(&u, &s).unwrap() - parts).abs() < 1e-14);
        let (sig, z) = (0.4, 1.3);
        let v = prior_loglik(&DVector::from_element(1, sig * z), &DVector::from_element(1, sig)).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI * sig * sig).ln() - z * z / 2.0)).abs() < 1e-14);
        assert!(matches!(
            prior_loglik(&DVector::zeros(1), &DVector::zeros(1)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn marginal_limits() {
        let (sp, theta, data) = random_instance(2, 2, 1, 2);
        let pat = &data.patterns()[0];
        let base = ModelParams::baseline(theta.c0.clone());
        let draws0 = MCDraws::new(0, 10, 1).unwrap();
        let exact = cond_loglik(pat, &DVector::zeros(0), &base, &sp).unwrap();
        assert_eq!(marginal_loglik(pat, &base, &sp, &draws0).unwrap(), exact);
        let tiny = ModelParams::new(theta.c0.clone(), theta.c.clone(), DVector::from_element(2, 1e-8)).unwrap();
        let draws = MCDraws::new(2, 1000, 3).unwrap();
        assert!((marginal_loglik(pat, &tiny, &sp, &draws).unwrap() - exact).abs() < 1e-4);
        assert!(matches!(
            marginal_loglik(pat, &tiny, &sp, &MCDraws::new(1, 10, 1).unwrap()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn draws_are_antithetic_and_regenerable() {
        let d = MCDraws::new(3, 8, 5).unwrap();
        for r in 0..4 {
            for k in 0..3 {
                assert_eq!(d.z()[(r, k)], -d.z()[(r + 4, k)]);
            }
        }
        assert_eq!(d, MCDraws::new(3, 8, 5).unwrap());
        assert!(MCDraws::new(3, 7, 5).is_err());
    }

    #[test]
    fn sign_flip_invariance() {
        let (sp, theta, data) = random_instance(3, 2, 3, 4);
        let draws = MCDraws::new(2, 500, 9).unwrap();
        let mut flipped = theta.clone();
        flipped.c.neg_mut();
        for pat in data.patterns() {
            let a = marginal_loglik(pat, &theta, &sp, &draws).unwrap();
            let b = marginal_loglik(pat, &flipped, &sp, &draws).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
        }
    }

    #[test]
    fn penalty_terms() {
        let (sp, theta, data) = random_instance(3, 2, 3, 5);
        let draws = MCDraws::new(2, 200, 1).unwrap();
        let plain = penalized_objective(&data, &theta, &sp, 0.0, 0.0, &draws).unwrap();
        let stats = PatternStats::for_dataset(&sp, &data).unwrap();
        let lls = marginal_logliks(&stats, &theta, &sp, &draws).unwrap();
        let mean = lls.iter().map(|v| v.0).sum::<f64>() / 3.0;
        assert!((plain - mean).abs() < 1e-12);
        let nu1 = 0.3;
        let one = penalized_objective(&data, &theta, &sp, nu1, 0.0, &draws).unwrap();
        let two = penalized_objective(&data, &theta, &sp, 2.0 * nu1, 0.0, &draws).unwrap();
        let expect = -nu1 * sp.penalty().roughness(&theta.c0);
        assert!((two - one - expect).abs() <= 1e-12 * expect.abs().max(1.0));

        // Affine mean and components (coefficients at Greville abscissae) are not penalized.
        let crate::basis::BasisKind::BSpline(bs) = sp.basis().kind() else { unreachable!() };
        let g = bs.greville();
        let c0 = DVector::from_iterator(g.len(), g.iter().map(|t| 1.0 + 0.5 * t));
        let c = DMatrix::from_fn(g.len(), 2, |i, k| if k == 0 { 0.3 } else { 0.2 * g[i] - 0.1 });
        let affine = ModelParams::new(c0, c, theta.sigma.clone()).unwrap();
        let a = penalized_objective(&data, &affine, &sp, 5.0, 7.0, &draws).unwrap();
        let b = penalized_objective(&data, &affine, &sp, 0.0, 0.0, &draws).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    fn flat(g: &ParamGradient) -> Vec<f64> {
        g.c0.iter().chain(g.c.iter()).chain(g.log_sigma.iter()).cloned().collect()
    }

    fn perturb(theta: &ModelParams, idx: usize, h: f64) -> ModelParams {
        let mut t = theta.clone();
        let (q, p) = (t.q(), t.p());
        if idx < q {
            t.c0[idx] += h;
        } else if idx < q + q * p {
            t.c.as_mut_slice()[idx - q] += h;
        } else {
            let k = idx - q - q * p;
            t.sigma[k] *= h.exp();
        }
        t
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (sp, theta, data) = random_instance(3, 2, 4, 6);
        let draws = MCDraws::new(2, 400, 2).unwrap();
        let (nu1, nu2) = (0.01, 0.02);
        let g = flat(&objective_gradient(&data, &theta, &sp, nu1, nu2, &draws).unwrap());
        let h = 1e-5;
        for (i, gi) in g.iter().enumerate() {
            let f = |t: &ModelParams| penalized_objective(&data, t, &sp, nu1, nu2, &draws).unwrap();
            let fd = (f(&perturb(&theta, i, h)) - f(&perturb(&theta, i, -h))) / (2.0 * h);
            assert!((fd - gi).abs() <= 1e-5 * gi.abs().max(1.0), "{i}: fd {fd} analytic {gi}");
        }
    }

    #[test]
    fn baseline_gradient_is_poisson_score() {
        let sp = space(1);
        let q = sp.q();
        let theta = ModelParams::baseline(DVector::from_fn(q, |i, _| 1.0 + 0.2 * i as f64));
        let data = Dataset::new(
            sp.basis().domain().clone(),
            vec![pattern(&[0.1, 0.4]), pattern(&[0.5, 0.6, 0.9])],
        )
        .unwrap();
        let nu1 = 0.05;
        let draws = MCDraws::new(0, 2, 0).unwrap();
        let g = objective_gradient(&data, &theta, &sp, nu1, 0.0, &draws).unwrap();
        // Independent midpoint rule for ∫β exp(c₀ᵀβ).
        let fine = 200_000;
        let mut integral = DVector::zeros(q);
        for i in 0..fine {
            let b = sp.basis().eval_point(&Point::Line((i as f64 + 0.5) / fine as f64)).unwrap();
            integral += &b * (b.dot(&theta.c0).exp() / fine as f64);
        }
        let sums: DVector<f64> = data
            .patterns()
            .iter()
            .map(|p| sp.basis().sum_over(&p.points).unwrap())
            .fold(DVector::zeros(q), |a, b| a + b)
            / 2.0;
        let want = sums - integral - 2.0 * nu1 * (sp.penalty().matrix() * &theta.c0);
        assert!((&g.c0 - &want).amax() < 1e-6 * want.amax(), "{} vs {}", g.c0, want);
    }

    #[test]
    fn evaluation_is_bit_identical_across_thread_counts() {
        let (sp, theta, data) = random_instance(4, 2, 6, 7);
        let draws = MCDraws::new(2, 300, 3).unwrap();
        let stats = PatternStats::for_dataset(&sp, &data).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evaluate(&stats, &theta, &sp, 0.1, 0.1, &draws, true).unwrap())
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.gradient, b.gradient);
        assert_eq!(a.logliks, b.logliks);
    }

    #[test]
    fn monte_carlo_variance_shrinks_like_one_over_s() {
        let (sp, theta, data) = random_instance(2, 1, 1, 8);
        let pat = &data.patterns()[0];
        let mut points = Vec::new();
        for s in [100, 1000, 10_000] {
            let vals: Vec<f64> = (0..60)
                .map(|seed| marginal_loglik(pat, &theta, &sp, &MCDraws::new(1, s, seed).unwrap()).unwrap())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
            points.push(((s as f64).ln(), v.ln()));
        }
        let mx = points.iter().map(|p| p.0).sum::<f64>() / 3.0;
        let my = points.iter().map(|p| p.1).sum::<f64>() / 3.0;
        let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope + 1.0).abs() <= 0.2, "slope {slope}");
    }

    #[test]
    fn standard_error_tracks_spread() {
        let (sp, theta, data) = random_instance(2, 1, 1, 10);
        let pat = &data.patterns()[0];
        let vals: Vec<(f64, f64)> = (0..40)
            .map(|seed| marginal_loglik_with_se(pat, &theta, &sp, &MCDraws::new(1, 2000, seed).unwrap()).unwrap())
            .collect();
        let m = vals.iter().map(|v| v.0).sum::<f64>() / 40.0;
        let sd = (vals.iter().map(|v| (v.0 - m).powi(2)).sum::<f64>() / 39.0).sqrt();
        let se = vals.iter().map(|v| v.1).sum::<f64>() / 40.0;
        assert!(se > 0.5 * sd && se < 2.0 * sd, "se {se} sd {sd}");
    }
}

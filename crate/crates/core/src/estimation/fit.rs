//! Penalized maximum likelihood by sample average approximation.
//!
//! Each stage fixes a set of antithetic draws, maximizes the resulting
//! deterministic objective over `(c₀, A, log σ)` with BFGS, where the
//! components are `C = A (AᵀJA)^{-1/2}` and so stay J-orthonormal, and then
//! canonicalizes. Later stages start from the previous optimum with fresh
//! draws.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::canonical::{canonicalize, Polar};
use super::config::{FitConfig, InitMode};
use super::optimize::{maximize, Termination};
use crate::error::{Error, Result};
use crate::likelihood::{evaluate, marginal_logliks, MCDraws, PatternStats};
use crate::linalg::jacobi_svd;
use crate::model::{ModelParams, ModelSpace};
use crate::process::Dataset;
use crate::rng::{derive_seed, stream, Purpose};

/// Shrinkage of per-replicate fits towards the pooled fit, in the J metric.
const PCA_SHRINKAGE: f64 = 1.0;
const MIN_INIT_SIGMA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Canonical estimate.
    pub theta_hat: ModelParams,
    /// `ρₙ(θ̂)` on the final stage's draws.
    pub objective: f64,
    /// Objective after every accepted step of the winning start, all stages.
    pub trace: Vec<f64>,
    /// Index into `trace` where each stage begins.
    pub stage_starts: Vec<usize>,
    /// `log f(x_i; θ̂)` with the evaluation draws.
    pub logliks: Vec<f64>,
    pub loglik_std_errors: Vec<f64>,
    pub converged: bool,
    pub termination: Termination,
    /// Which starting point won.
    pub start: usize,
    /// Posterior mean scores, one row per replicate (filled in separately).
    pub scores: Option<DMatrix<f64>>,
    pub config: FitConfig,
}

/// Draws used in optimization stage `stage`.
pub fn stage_draws(config: &FitConfig, stage: usize) -> Result<MCDraws> {
    MCDraws::new(config.p, config.draws, derive_seed(config.seed, Purpose::MonteCarloDraws, stage as u64))
}

/// Draws used for reported log-likelihoods, held-out evaluation and scores.
pub fn evaluation_draws(config: &FitConfig) -> Result<MCDraws> {
    MCDraws::new(config.p, config.eval_draws, derive_seed(config.seed, Purpose::Evaluation, 0))
}

/// Maximizes `bᵀc - ∫exp(cᵀβ) - cᵀAc - (c - m)ᵀB(c - m)` by damped Newton.
fn penalized_poisson(
    space: &ModelSpace,
    b: &DVector<f64>,
    a: &DMatrix<f64>,
    shrink: Option<(&DMatrix<f64>, &DVector<f64>)>,
    start: DVector<f64>,
) -> Result<DVector<f64>> {
    let nb = space.node_basis();
    let w = space.quadrature().weights();
    let value = |c: &DVector<f64>| -> Result<f64> {
        let mut v = b.dot(c) - space.integrated_intensity(c)? - c.dot(&(a * c));
        if let Some((bm, m)) = shrink {
            let d = c - m;
            v -= d.dot(&(bm * &d));
        }
        Ok(v)
    };
    let mut c = start;
    let mut fc = value(&c)?;
    for _ in 0..200 {
        let eta = nb * &c;
        let lam = DVector::from_iterator(eta.len(), eta.iter().zip(w).map(|(e, w)| w * e.exp()));
        let expected = nb.tr_mul(&lam);
        let pen = 2.0 * (a * &c);
        let mut scale = 1.0 + b.amax() + expected.amax() + pen.amax();
        let mut grad = b - expected - pen;
        let mut weighted = nb.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row.scale_mut(lam[i]);
        }
        let mut hess = nb.tr_mul(&weighted) + 2.0 * a;
        if let Some((bm, m)) = shrink {
            let pull = 2.0 * (bm * (&c - m));
            scale += pull.amax();
            grad -= pull;
            hess += 2.0 * bm;
        }
        if grad.amax() <= 1e-11 * scale {
            return Ok(c);
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::Estimation("Poisson fit has a singular Hessian".into()))?
            .solve(&grad);
        let decrement = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let trial = &c + t * &step;
            if let Ok(ft) = value(&trial) {
                if ft >= fc + 1e-4 * t * decrement {
                    if !(ft > fc) {
                        // Improvement is below rounding of the objective.
                        return Ok(trial);
                    }
                    c = trial;
                    fc = ft;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-12 {
                return Ok(c);
            }
        }
        if c.iter().any(|v| !v.is_finite() || v.abs() > 1e3) {
            break;
        }
    }
    Err(Error::Estimation("penalized Poisson fit for the mean did not converge".into()))
}

/// `c₀` of the penalized Poisson fit without latent components.
fn baseline_fit(stats: &[PatternStats], space: &ModelSpace, nu1: f64) -> Result<DVector<f64>> {
    let n = stats.len() as f64;
    let total: usize = stats.iter().map(|s| s.m).sum();
    if total == 0 {
        return Err(Error::Estimation(
            "the data contain no events; the mean log-intensity diverges".into(),
        ));
    }
    let mean_b = stats.iter().fold(DVector::zeros(space.q()), |acc, s| acc + &s.basis_sum) / n;
    let level = (total as f64 / n / space.quadrature().total_weight()).ln();
    let a = space.penalty().matrix() * nu1;
    penalized_poisson(space, &mean_b, &a, None, DVector::from_element(space.q(), level))
}

fn random_start(space: &ModelSpace, p: usize, seed: u64, start: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rng = stream(seed, Purpose::Initialization, start as u64);
    let a = DMatrix::from_fn(space.q(), p, |_, _| StandardNormal.sample(&mut rng));
    let c = Polar::new(&a, space.gram().matrix())?.c;
    Ok((c, DVector::from_iterator(p, (1..=p).map(|k| 0.5 / k as f64))))
}

/// Leading J-principal directions of shrunken per-replicate fits.
fn pca_start(
    stats: &[PatternStats],
    space: &ModelSpace,
    c0: &DVector<f64>,
    config: &FitConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = config.p;
    let q = space.q();
    let gram = space.gram().matrix();
    let shrink = gram * PCA_SHRINKAGE;
    let a = space.penalty().matrix() * config.nu1;
    let fits = stats
        .par_iter()
        .map(|s| penalized_poisson(space, &s.basis_sum, &a, Some((&shrink, c0)), c0.clone()).map(|c| c - c0))
        .collect::<Result<Vec<_>>>()?;
    let n = fits.len();
    if p > q.min(n) {
        return Err(Error::Estimation(format!(
            "p = {p} exceeds min(q, n) = {}; use a smaller p",
            q.min(n)
        )));
    }
    let l = gram
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("Gram matrix is not positive definite".into()))?
        .l();
    let d = DMatrix::from_columns(&fits);
    // Left singular vectors of LᵀD are the rotation of the transpose.
    let svd = jacobi_svd(&(l.transpose() * d).transpose());
    let u = &svd.w;
    let s = &svd.s;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|x, y| s[*y].total_cmp(&s[*x]));
    let lt = l.transpose();
    let mut c = DMatrix::zeros(q, p);
    let mut sigma = DVector::zeros(p);
    for k in 0..p {
        let col = lt
            .solve_upper_triangular(&u.column(order[k]).into_owned())
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        c.set_column(k, &col);
        sigma[k] = (s[order[k]] / (n as f64).sqrt()).max(MIN_INIT_SIGMA / (k + 1) as f64);
    }
    Ok((c, sigma))
}

/// Starting values: `c₀` from the pooled penalized Poisson fit, components
/// per `config.init`. Deterministic in `config.seed`.
pub fn initialize(data: &Dataset, space: &ModelSpace, config: &FitConfig) -> Result<ModelParams> {
    config.validate()?;
    let stats = PatternStats::for_dataset(space, data)?;
    initialize_start(&stats, space, config, 0)
}

fn initialize_start(stats: &[PatternStats], space: &ModelSpace, config: &FitConfig, start: usize) -> Result<ModelParams> {
    let c0 = baseline_fit(stats, space, config.nu1)?;
    if config.p == 0 {
        return Ok(ModelParams::baseline(c0));
    }
    if config.p > space.q() {
        return Err(Error::Estimation(format!(
            "p = {} exceeds the basis dimension q = {}; use a smaller p",
            config.p,
            space.q()
        )));
    }
    let (c, sigma) = match (config.init, start) {
        (InitMode::Pca, 0) => pca_start(stats, space, &c0, config)?,
        _ => random_start(space, config.p, config.seed, start)?,
    };
    canonicalize(&ModelParams::new(c0, c, sigma)?, space.gram())
}

struct Packing {
    q: usize,
    p: usize,
}

impl Packing {
    fn pack(&self, theta: &ModelParams) -> DVector<f64> {
        let mut x = DVector::zeros(self.q + self.q * self.p + self.p);
        x.rows_mut(0, self.q).copy_from(&theta.c0);
        x.rows_mut(self.q, self.q * self.p).copy_from_slice(theta.c.as_slice());
        for k in 0..self.p {
            x[self.q + self.q * self.p + k] = theta.sigma[k].ln();
        }
        x
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let (q, p) = (self.q, self.p);
        let c0 = x.rows(0, q).into_owned();
        let a = DMatrix::from_column_slice(q, p, x.rows(q, q * p).as_slice());
        let sigma = x.rows(q + q * p, p).map(f64::exp);
        (c0, a, sigma)
    }
}

fn stage(
    stats: &[PatternStats],
    space: &ModelSpace,
    config: &FitConfig,
    theta: &ModelParams,
    draws: &MCDraws,
) -> Result<(ModelParams, super::optimize::Outcome)> {
    let pk = Packing {
        q: theta.q(),
        p: theta.p(),
    };
    let gram = space.gram().matrix();
    let to_theta = |x: &DVector<f64>| -> Result<(ModelParams, DMatrix<f64>, Option<Polar>)> {
        let (c0, a, sigma) = pk.split(x);
        if pk.p == 0 {
            return Ok((ModelParams::baseline(c0), a, None));
        }
        let polar = Polar::new(&a, gram)?;
        Ok((ModelParams::new(c0, polar.c.clone(), sigma)?, a, Some(polar)))
    };
    let objective = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (theta, a, polar) = to_theta(x)?;
        let ev = evaluate(stats, &theta, space, config.nu1, config.nu2, draws, true)?;
        if !ev.objective.is_finite() {
            return Err(Error::Numeric(format!("objective is {}", ev.objective)));
        }
        let g = ev.gradient.expect("requested");
        let mut out = DVector::zeros(x.len());
        out.rows_mut(0, pk.q).copy_from(&g.c0);
        if let Some(polar) = polar {
            let ga = polar.pullback(&a, gram, &g.c);
            out.rows_mut(pk.q, pk.q * pk.p).copy_from_slice(ga.as_slice());
            out.rows_mut(pk.q + pk.q * pk.p, pk.p).copy_from(&g.log_sigma);
        }
        Ok((ev.objective, out))
    };
    let outcome = maximize(pk.pack(theta), objective, config.max_iters, config.grad_tol).map_err(|e| match e {
        Error::Estimation(_) => e,
        other => Error::Estimation(format!("objective is not finite at the starting value: {other}")),
    })?;
    let (theta, _, _) = to_theta(&outcome.x)?;
    Ok((canonicalize(&theta, space.gram())?, outcome))
}

/// Fits the model by penalized Monte Carlo maximum likelihood.
///
/// Non-convergence is reported through [`FitResult::converged`], not raised.
pub fn fit(data: &Dataset, space: &ModelSpace, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let stats = PatternStats::for_dataset(space, data)?;
    fit_stats(&stats, space, config)
}

pub(crate) fn fit_stats(stats: &[PatternStats], space: &ModelSpace, config: &FitConfig) -> Result<FitResult> {
    let stages = if config.p == 0 { 1 } else { config.max_outer_iters };
    let final_draws = stage_draws(config, stages - 1)?;
    let mut best: Option<FitResult> = None;
    for start in 0..config.multistart {
        let mut theta = initialize_start(stats, space, config, start)?;
        let mut trace = Vec::new();
        let mut stage_starts = Vec::new();
        let mut last = None;
        for s in 0..stages {
            let draws = stage_draws(config, s)?;
            let (next, outcome) = stage(stats, space, config, &theta, &draws)?;
            theta = next;
            stage_starts.push(trace.len());
            trace.extend_from_slice(&outcome.trace);
            last = Some(outcome);
        }
        let outcome = last.expect("at least one stage");
        let objective = evaluate(stats, &theta, space, config.nu1, config.nu2, &final_draws, false)?.objective;
        let improved = trace.last().zip(trace.first()).is_some_and(|(l, f)| l >= f);
        log::info!(
            "start {start}: objective {objective:.6} after {} iterations ({:?})",
            trace.len() - 1,
            outcome.termination
        );
        let candidate = FitResult {
            theta_hat: theta,
            objective,
            trace,
            stage_starts,
            logliks: Vec::new(),
            loglik_std_errors: Vec::new(),
            converged: improved && outcome.termination == Termination::Gradient,
            termination: outcome.termination,
            start,
            scores: None,
            config: config.clone(),
        };
        if best.as_ref().is_none_or(|b| candidate.objective > b.objective) {
            best = Some(candidate);
        }
    }
    let mut result = best.expect("multistart ≥ 1");
    let eval = evaluation_draws(config)?;
    let ll = marginal_logliks(stats, &result.theta_hat, space, &eval)?;
    result.logliks = ll.iter().map(|v| v.0).collect();
    result.loglik_std_errors = ll.iter().map(|v| v.1).collect();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_bspline_basis;
    use crate::domain::ObservationDomain;
    use crate::process::simulate_replicates;

    fn space(knots: usize) -> ModelSpace {
        let d = ObservationDomain::interval(0.0, 1.0).unwrap();
        ModelSpace::with_default_resolution(make_bspline_basis(&d, knots, 3).unwrap()).unwrap()
    }

    fn homogeneous(space: &ModelSpace, n: usize) -> Dataset {
        let theta = ModelParams::baseline(DVector::from_element(space.q(), 10f64.ln()));
        simulate_replicates(&theta, space, n, 11).unwrap().0
    }

    fn sup_error(sp: &ModelSpace, c0: &DVector<f64>, level: f64) -> f64 {
        let grid = sp.basis().domain().grid(101).unwrap();
        (sp.basis().eval_basis(&grid).unwrap() * c0).iter().map(|v| (v - level).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn initial_mean_matches_mean_count() {
        // Constants are in the span and unpenalized, so the score equation
        // forces ∫exp(μ̂) to equal the mean count whatever ν₁ is.
        let sp = space(4);
        let data = homogeneous(&sp, 100);
        let mean = data.total_events() as f64 / 100.0;
        for nu1 in [0.0, 1e-4, 1.0] {
            let cfg = FitConfig {
                p: 0,
                nu1,
                ..Default::default()
            };
            let theta = initialize(&data, &sp, &cfg).unwrap();
            assert_eq!(theta.p(), 0);
            let total = sp.integrated_intensity(&theta.c0).unwrap();
            assert!((total - mean).abs() <= 1e-9 * mean, "{total} vs {mean}");
        }
    }

    #[test]
    fn initial_mean_is_log_rate() {
        let sp = space(4);
        let data = homogeneous(&sp, 2000);
        let cfg = FitConfig {
            p: 0,
            ..Default::default()
        };
        let theta = initialize(&data, &sp, &cfg).unwrap();
        assert!(sup_error(&sp, &theta.c0, 10f64.ln()) <= 0.1);
    }

    #[test]
    fn initialization_is_deterministic_and_canonical() {
        let sp = space(4);
        let data = homogeneous(&sp, 30);
        for init in [InitMode::Pca, InitMode::Random] {
            let cfg = FitConfig {
                p: 2,
                init,
                ..Default::default()
            };
            let a = initialize(&data, &sp, &cfg).unwrap();
            assert_eq!(a, initialize(&data, &sp, &cfg).unwrap());
            a.check_canonical(sp.gram(), 1e-8).unwrap();
        }
    }

    #[test]
    fn empty_data_is_an_estimation_error() {
        let sp = space(2);
        let data = Dataset::new(
            sp.basis().domain().clone(),
            vec![crate::process::PointPattern::new("a", vec![])],
        )
        .unwrap();
        let cfg = FitConfig {
            p: 0,
            ..Default::default()
        };
        assert!(matches!(initialize(&data, &sp, &cfg), Err(Error::Estimation(_))));
    }

    #[test]
    fn homogeneous_fit_recovers_constant() {
        let sp = space(4);
        let data = homogeneous(&sp, 2000);
        let cfg = FitConfig {
            p: 0,
            nu1: 1e-4,
            ..Default::default()
        };
        let fit = fit(&data, &sp, &cfg).unwrap();
        assert!(fit.converged);
        assert!(sup_error(&sp, &fit.theta_hat.c0, 10f64.ln()) <= 0.1);
        assert_eq!(fit.logliks.len(), 2000);
    }

    #[test]
    fn heavy_penalty_flattens_mean() {
        let sp = space(6);
        let c0 = DVector::from_iterator(sp.q(), (0..sp.q()).map(|i| 2.0 + (i as f64).sin()));
        let data = simulate_replicates(&ModelParams::baseline(c0), &sp, 40, 3).unwrap().0;
        let rough = |nu1: f64| {
            let cfg = FitConfig {
                p: 0,
                nu1,
                ..Default::default()
            };
            let th = fit(&data, &sp, &cfg).unwrap().theta_hat;
            sp.penalty().roughness(&th.c0)
        };
        assert!(rough(1e6) <= 1e-6 * rough(1e-6));
    }

    #[test]
    fn stage_traces_are_monotone() {
        let sp = space(4);
        let truth = ModelParams::new(
            DVector::from_element(sp.q(), 20f64.ln()),
            DMatrix::from_element(sp.q(), 1, 1.0),
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let truth = canonicalize(&truth, sp.gram()).unwrap();
        let data = simulate_replicates(&truth, &sp, 40, 8).unwrap().0;
        let cfg = FitConfig {
            p: 1,
            draws: 200,
            eval_draws: 200,
            ..Default::default()
        };
        let f = fit(&data, &sp, &cfg).unwrap();
        let mut bounds = f.stage_starts.clone();
        bounds.push(f.trace.len());
        for w in bounds.windows(2) {
            assert!(f.trace[w[0]..w[1]].windows(2).all(|v| v[1] >= v[0]));
        }
        f.theta_hat.check_canonical(sp.gram(), 1e-8).unwrap();
        let again = fit(&data, &sp, &cfg).unwrap();
        assert_eq!(f.theta_hat, again.theta_hat);
        assert_eq!(f.logliks, again.logliks);
    }
}

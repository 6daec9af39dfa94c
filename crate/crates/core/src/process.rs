//! Point patterns, Poisson and doubly stochastic simulation, and Monte Carlo
//! expectations of pattern functionals.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::basis::BasisSystem;
use crate::domain::{ObservationDomain, Point};
use crate::error::{Error, Result};
use crate::likelihood::MAX_EXPONENT;
use crate::model::{ModelParams, ModelSpace};
use crate::rng::{stream, Purpose};

/// Envelope multiplier applied to the largest intensity seen on the quadrature nodes.
pub const ENVELOPE_SAFETY: f64 = 1.2;

/// One replicate: the events observed on `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    pub replicate_id: String,
    pub points: Vec<Point>,
}

impl PointPattern {
    pub fn new(replicate_id: impl Into<String>, points: Vec<Point>) -> Self {
        PointPattern {
            replicate_id: replicate_id.into(),
            points,
        }
    }

    /// Number of events `m`.
    pub fn m(&self) -> usize {
        self.points.len()
    }
}

/// `n ≥ 1` replicates observed on a common domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    domain: ObservationDomain,
    patterns: Vec<PointPattern>,
}

impl Dataset {
    pub fn new(domain: ObservationDomain, patterns: Vec<PointPattern>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Usage("a dataset needs at least one replicate".into()));
        }
        for pat in &patterns {
            for p in &pat.points {
                if !domain.contains(p)? {
                    return Err(Error::Usage(format!(
                        "replicate {} has point {p} outside the domain",
                        pat.replicate_id
                    )));
                }
            }
        }
        Ok(Dataset { domain, patterns })
    }

    pub fn domain(&self) -> &ObservationDomain {
        &self.domain
    }

    pub fn patterns(&self) -> &[PointPattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn total_events(&self) -> usize {
        self.patterns.iter().map(PointPattern::m).sum()
    }

    /// Sub-dataset with the given replicate indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let patterns = indices
            .iter()
            .map(|&i| {
                self.patterns
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Usage(format!("replicate index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.domain.clone(), patterns)
    }
}

/// Latent component scores of one replicate.
pub type ScoreVector = DVector<f64>;

fn check_scores(theta: &ModelParams, u: &ScoreVector) -> Result<()> {
    if u.len() != theta.p() {
        return Err(Error::Usage(format!(
            "score vector has length {} but the model has p = {}",
            u.len(),
            theta.p()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Usage("scores must be finite".into()));
    }
    Ok(())
}

/// `λ(t) = exp{(c₀ + C u)ᵀ β(t)}` at each point.
pub fn intensity_at(theta: &ModelParams, u: &ScoreVector, basis: &BasisSystem, points: &[Point]) -> Result<Vec<f64>> {
    check_scores(theta, u)?;
    if theta.q() != basis.len() {
        return Err(Error::Usage(format!(
            "parameters have q = {} but the basis has q = {}",
            theta.q(),
            basis.len()
        )));
    }
    let coef = theta.coefficients_at(u);
    let b = basis.eval_basis(points)?;
    let eta = b * coef;
    if let Some(top) = eta.iter().cloned().reduce(f64::max) {
        if top > MAX_EXPONENT || !top.is_finite() {
            return Err(Error::Overflow { max_exponent: top });
        }
    }
    Ok(eta.iter().map(|e| e.exp()).collect())
}

/// Draws one Poisson pattern with intensity `exp{(c₀ + C u)ᵀβ}` using a
/// caller-supplied generator.
///
/// The count is Poisson with mean `∫_B λ` (by quadrature); locations are
/// then drawn i.i.d. from `λ / ∫λ` by rejection from the uniform on `B`.
/// The envelope starts at `1.2 × max λ(node)`; if a proposal exceeds it the
/// envelope is raised and all locations are redrawn.
pub fn simulate_poisson_with(
    rng: &mut ChaCha8Rng,
    replicate_id: impl Into<String>,
    theta: &ModelParams,
    u: &ScoreVector,
    space: &ModelSpace,
) -> Result<PointPattern> {
    check_scores(theta, u)?;
    space.check_params(theta)?;
    let coef = theta.coefficients_at(u);
    let eta_nodes = space.node_basis() * &coef;
    let top = eta_nodes.max();
    if !top.is_finite() || top > MAX_EXPONENT {
        return Err(Error::Overflow { max_exponent: top });
    }
    let total: f64 = eta_nodes
        .iter()
        .zip(space.quadrature().weights())
        .map(|(e, w)| w * e.exp())
        .sum();
    if !total.is_finite() {
        return Err(Error::Numeric(format!("integrated intensity is {total}")));
    }
    let m = if total > 0.0 {
        Poisson::new(total)
            .map_err(|e| Error::Numeric(format!("Poisson rate {total}: {e}")))?
            .sample(rng) as usize
    } else {
        0
    };

    let basis = space.basis();
    let domain = basis.domain();
    let mut envelope = ENVELOPE_SAFETY * top.exp();
    let mut row = vec![0.0; basis.len()];
    let mut points = Vec::with_capacity(m);
    'restart: loop {
        points.clear();
        while points.len() < m {
            let candidate = propose_uniform(rng, domain);
            if !domain.contains(&candidate)? {
                continue;
            }
            basis.eval_unchecked(&candidate, &mut row);
            let eta: f64 = row.iter().zip(coef.iter()).map(|(b, c)| b * c).sum();
            if !eta.is_finite() || eta > MAX_EXPONENT {
                return Err(Error::Overflow { max_exponent: eta });
            }
            let lambda = eta.exp();
            if lambda > envelope {
                log::debug!("rejection envelope {envelope} exceeded by {lambda}; inflating and restarting");
                envelope = ENVELOPE_SAFETY * lambda;
                continue 'restart;
            }
            if rng.random::<f64>() * envelope <= lambda {
                points.push(candidate);
            }
        }
        break;
    }
    Ok(PointPattern::new(replicate_id, points))
}

fn propose_uniform(rng: &mut ChaCha8Rng, domain: &ObservationDomain) -> Point {
    match domain {
        ObservationDomain::Interval { a, b } => Point::Line(a + (b - a) * rng.random::<f64>()),
        ObservationDomain::Planar { rect, .. } => Point::Plane([
            rect.x0 + (rect.x1 - rect.x0) * rng.random::<f64>(),
            rect.y0 + (rect.y1 - rect.y0) * rng.random::<f64>(),
        ]),
    }
}

/// One Poisson pattern given fixed scores `u`.
pub fn simulate_poisson(theta: &ModelParams, u: &ScoreVector, space: &ModelSpace, seed: u64) -> Result<PointPattern> {
    let mut rng = stream(seed, Purpose::Simulation, 0);
    simulate_poisson_with(&mut rng, "r0000", theta, u, space)
}

/// Simulates `n` replicates of the doubly stochastic process: each draws
/// `u_k ~ N(0, σ_k²)` and then a Poisson pattern. Returns the patterns and
/// the generating scores. Replicate `i` uses its own random stream.
pub fn simulate_replicates(
    theta: &ModelParams,
    space: &ModelSpace,
    n: usize,
    seed: u64,
) -> Result<(Dataset, Vec<ScoreVector>)> {
    if n == 0 {
        return Err(Error::Usage("need at least one replicate".into()));
    }
    space.check_params(theta)?;
    let out = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::Simulation, i as u64);
            let u = ScoreVector::from_iterator(
                theta.p(),
                theta.sigma.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)),
            );
            let pattern = simulate_poisson_with(&mut rng, format!("r{i:04}"), theta, &u, space)?;
            Ok((pattern, u))
        })
        .collect::<Result<Vec<_>>>()?;
    let (patterns, scores): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok((Dataset::new(space.basis().domain().clone(), patterns)?, scores))
}

/// Monte Carlo estimate of `E{h(X_B)}` with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub mean: f64,
    pub std_error: f64,
}

/// Estimates `E{h(X_B)}` by averaging `h` over `n_sims` simulated replicates.
/// `h` must be defined for every count and invariant to point order.
pub fn expect_functional<H>(
    h: H,
    theta: &ModelParams,
    space: &ModelSpace,
    n_sims: usize,
    seed: u64,
) -> Result<Expectation>
where
    H: Fn(&PointPattern) -> f64 + Sync,
{
    if n_sims == 0 {
        return Err(Error::Usage("need at least one simulation".into()));
    }
    let (data, _) = simulate_replicates(theta, space, n_sims, seed)?;
    let values: Vec<f64> = data.patterns().par_iter().map(&h).collect();
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("functional returned {v} on simulated replicate {i}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Ok(Expectation {
        mean,
        std_error: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_bspline_basis;
    use nalgebra::DMatrix;

    fn constant_space() -> ModelSpace {
        let d = ObservationDomain::interval(0.0, 1.0).unwrap();
        ModelSpace::with_default_resolution(make_bspline_basis(&d, 0, 3).unwrap()).unwrap()
    }

    fn constant_rate(rate: f64) -> ModelParams {
        ModelParams::baseline(DVector::from_element(4, rate.ln()))
    }

    fn counts(data: &Dataset) -> Vec<f64> {
        data.patterns().iter().map(|p| p.m() as f64).collect()
    }

    #[test]
    fn intensity_examples() {
        let space = constant_space();
        let pts = [Point::Line(0.0), Point::Line(0.3), Point::Line(1.0)];
        let two = intensity_at(&constant_rate(2.0), &DVector::zeros(0), space.basis(), &pts).unwrap();
        assert!(two.iter().all(|v| (v - 2.0).abs() < 1e-12));

        let c0 = DVector::from_vec(vec![0.1, -0.2, 0.4, 0.3]);
        let c = DMatrix::from_column_slice(4, 1, &[0.5, 1.0, -0.3, 0.2]);
        let theta = ModelParams::new(c0.clone(), c.clone(), DVector::from_element(1, 0.7)).unwrap();
        let base = intensity_at(&ModelParams::baseline(c0), &DVector::zeros(0), space.basis(), &pts).unwrap();
        let at_zero = intensity_at(&theta, &DVector::zeros(1), space.basis(), &pts).unwrap();
        assert_eq!(base, at_zero);
        let at_one = intensity_at(&theta, &DVector::from_element(1, 1.0), space.basis(), &pts).unwrap();
        for (i, p) in pts.iter().enumerate() {
            let phi = space.basis().eval_point(p).unwrap().dot(&c.column(0));
            assert!((at_one[i] - base[i] * phi.exp()).abs() < 1e-12 * at_one[i]);
        }
        assert!(matches!(
            intensity_at(&theta, &DVector::zeros(2), space.basis(), &pts),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn constant_rate_counts() {
        let space = constant_space();
        let theta = constant_rate(5.0);
        let (data, _) = simulate_replicates(&theta, &space, 100_000, 42).unwrap();
        let c = counts(&data);
        let n = c.len() as f64;
        let mean = c.iter().sum::<f64>() / n;
        let var = c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 5.0).abs() <= 3.0 * (5.0 / n).sqrt(), "mean {mean}");
        assert!((var - 5.0).abs() <= 0.25, "variance {var}");
        assert!(data
            .patterns()
            .iter()
            .flat_map(|p| &p.points)
            .all(|p| space.basis().domain().contains(p).unwrap()));
    }

    #[test]
    fn thinning_matches_nonconstant_density() {
        // λ(t) = exp(c₀ᵀβ) with a clearly sloped log-intensity.
        let space = constant_space();
        let c0 = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let theta = ModelParams::baseline(c0.clone());
        let (data, _) = simulate_replicates(&theta, &space, 4000, 9).unwrap();
        let pooled: Vec<f64> = data
            .patterns()
            .iter()
            .flat_map(|p| p.points.iter().map(|q| if let Point::Line(t) = q { *t } else { unreachable!() }))
            .collect();
        let bins = 10;
        let n = pooled.len() as f64;
        // Bin probabilities by fine midpoint integration of λ.
        let lam = |t: f64| space.basis().eval_point(&Point::Line(t)).unwrap().dot(&c0).exp();
        let fine = 20_000;
        let mut mass = vec![0.0; bins];
        for i in 0..fine {
            let t = (i as f64 + 0.5) / fine as f64;
            mass[((t * bins as f64) as usize).min(bins - 1)] += lam(t) / fine as f64;
        }
        let total: f64 = mass.iter().sum();
        let mut hist = vec![0.0; bins];
        for t in &pooled {
            hist[((t * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        for b in 0..bins {
            let p = mass[b] / total;
            let se = (n * p * (1.0 - p)).sqrt();
            assert!((hist[b] - n * p).abs() <= 3.0 * se, "bin {b}: {} vs {}", hist[b], n * p);
        }
    }

    #[test]
    fn larger_scores_give_larger_counts() {
        let space = constant_space();
        let c = DMatrix::from_element(4, 1, 1.0);
        let theta = ModelParams::new(DVector::from_element(4, 10f64.ln()), c, DVector::from_element(1, 0.5)).unwrap();
        let (data, u) = simulate_replicates(&theta, &space, 500, 5).unwrap();
        let m = counts(&data);
        let scores: Vec<f64> = u.iter().map(|v| v[0]).collect();
        assert!(spearman(&scores, &m) > 0.5);
    }

    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        let (ra, rb) = (ranks(a), ranks(b));
        let n = a.len() as f64;
        let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
        let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn degenerate_latent_is_poisson() {
        let space = constant_space();
        let (data, u) = simulate_replicates(&constant_rate(8.0), &space, 5000, 1).unwrap();
        assert!(u.iter().all(|v| v.is_empty()));
        let mean = counts(&data).iter().sum::<f64>() / 5000.0;
        assert!((mean - 8.0).abs() < 3.0 * (8.0f64 / 5000.0).sqrt());
    }

    #[test]
    fn simulation_is_deterministic() {
        let space = constant_space();
        let theta =
            ModelParams::new(DVector::from_element(4, 2.0), DMatrix::from_element(4, 1, 1.0), DVector::from_element(1, 0.3))
                .unwrap();
        let a = simulate_replicates(&theta, &space, 50, 77).unwrap();
        let b = simulate_replicates(&theta, &space, 50, 77).unwrap();
        assert_eq!(a, b);
        let c = simulate_replicates(&theta, &space, 50, 78).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn functional_expectations() {
        let space = constant_space();
        let theta = constant_rate(5.0);
        let one = expect_functional(|_| 1.0, &theta, &space, 100, 3).unwrap();
        assert_eq!(one.mean, 1.0);
        let count = expect_functional(|p| p.m() as f64, &theta, &space, 20_000, 3).unwrap();
        assert!((count.mean - 5.0).abs() <= 3.0 * count.std_error);
        let sq = expect_functional(|p| (p.m() as f64).powi(2), &theta, &space, 20_000, 4).unwrap();
        assert!((sq.mean - 30.0).abs() <= 3.0 * sq.std_error, "{sq:?}");
        let bad = expect_functional(|_| f64::NAN, &theta, &space, 10, 3);
        assert!(matches!(bad, Err(Error::Numeric(_))));
    }

    #[test]
    fn planar_simulation_stays_in_mask() {
        use crate::basis::make_kernel_basis;
        use crate::domain::{Polygon, Rect};
        let tri = Polygon::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let d = ObservationDomain::planar(Rect::new(0.0, 1.0, 0.0, 1.0), Some(tri)).unwrap();
        let space = ModelSpace::new(make_kernel_basis(&d, 16).unwrap(), 40).unwrap();
        let theta = ModelParams::baseline(DVector::from_element(space.q(), 50f64.ln()));
        let (data, _) = simulate_replicates(&theta, &space, 20, 2).unwrap();
        assert!(data.total_events() > 0);
        assert!(data.patterns().iter().flat_map(|p| &p.points).all(|p| d.contains(p).unwrap()));
    }
}

//! Basis functions `β = (β_1, …, β_q)` for the mean and the components,
//! with the Gram matrix `J = ∫_B ββᵀ` and the roughness penalty matrix `Ω`.
//!
//! `Ω` is defined directly as the quadrature of Hessian inner products,
//! `Ω_jk = ∫_B ⟨Hβ_j, Hβ_k⟩_F`, so that `cᵀΩc = ∫_B ‖H(cᵀβ)‖²_F` by
//! bilinearity. In 1D this is `∫ β_j'' β_k''`; for cubic splines the
//! integrand is piecewise quadratic and the knot-aligned Gauss rule is exact.
//! In 2D it is `∫ β_j,11 β_k,11 + 2 β_j,12 β_k,12 + β_j,22 β_k,22`.

mod bspline;
mod kernel;

pub use bspline::BSplineBasis;
pub use kernel::{KernelBasis, KernelJet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{build_quadrature, ObservationDomain, Point, QuadratureRule};
use crate::error::{Error, Result};

/// Gauss nodes per knot span used when no resolution is given.
pub const DEFAULT_NODES_PER_SPAN: usize = 5;
/// Cells per bounding-rectangle axis used when no resolution is given.
pub const DEFAULT_GRID_CELLS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub enum BasisKind {
    BSpline(BSplineBasis),
    GaussianKernel(KernelBasis),
}

/// A basis attached to its observation domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSystem {
    kind: BasisKind,
    domain: ObservationDomain,
}

/// `J_jk = ∫_B β_j β_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub DMatrix<f64>);

/// `Ω` with `cᵀΩc = P(cᵀβ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(pub DMatrix<f64>);

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl PenaltyMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `cᵀΩc`.
    pub fn roughness(&self, c: &DVector<f64>) -> f64 {
        c.dot(&(&self.0 * c))
    }
}

/// Cubic-by-default B-spline basis with equally spaced knots on a 1D domain.
pub fn make_bspline_basis(domain: &ObservationDomain, num_interior_knots: usize, degree: usize) -> Result<BasisSystem> {
    let ObservationDomain::Interval { a, b } = *domain else {
        return Err(Error::Usage("B-spline bases need a 1D interval domain".into()));
    };
    let spline = BSplineBasis::clamped_uniform(a, b, num_interior_knots, degree)?;
    Ok(BasisSystem {
        kind: BasisKind::BSpline(spline),
        domain: domain.clone(),
    })
}

/// Renormalized Gaussian kernels centred on a `√grid_count × √grid_count`
/// grid spanning the bounding rectangle (corners included). Centres outside
/// `B` are dropped before bandwidths are set to half the nearest-neighbour
/// distance.
pub fn make_kernel_basis(domain: &ObservationDomain, grid_count: usize) -> Result<BasisSystem> {
    let Some(rect) = domain.bounding_rect() else {
        return Err(Error::Usage("kernel bases need a 2D planar domain".into()));
    };
    let side = (grid_count as f64).sqrt().round() as usize;
    if grid_count < 4 || side * side != grid_count {
        return Err(Error::Usage(format!(
            "grid_count must be a perfect square of at least 4, got {grid_count}"
        )));
    }
    let lin = |lo: f64, hi: f64, i: usize| {
        if i == side - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (side - 1) as f64
        }
    };
    let mut centers = Vec::with_capacity(grid_count);
    for j in 0..side {
        for i in 0..side {
            let c = [lin(rect.x0, rect.x1, i), lin(rect.y0, rect.y1, j)];
            if domain.contains(&Point::Plane(c))? {
                centers.push(c);
            }
        }
    }
    if centers.is_empty() {
        return Err(Error::Construction("every kernel centre fell outside the domain".into()));
    }
    let kernels = KernelBasis::with_nearest_neighbour_bandwidths(centers)?;
    BasisSystem::new(BasisKind::GaussianKernel(kernels), domain.clone())
}

impl BasisSystem {
    /// Attaches an explicit basis to a domain, checking compatibility.
    pub fn new(kind: BasisKind, domain: ObservationDomain) -> Result<Self> {
        match (&kind, &domain) {
            (BasisKind::BSpline(s), ObservationDomain::Interval { a, b }) => {
                if s.start() != *a || s.end() != *b {
                    return Err(Error::Construction(format!(
                        "spline knots span [{}, {}] but the domain is [{a}, {b}]",
                        s.start(),
                        s.end()
                    )));
                }
            }
            (BasisKind::GaussianKernel(k), ObservationDomain::Planar { .. }) => {
                for c in k.centers() {
                    if !domain.contains(&Point::Plane(*c))? {
                        return Err(Error::Construction(format!(
                            "kernel centre ({}, {}) lies outside the domain",
                            c[0], c[1]
                        )));
                    }
                }
            }
            _ => return Err(Error::Construction("basis kind does not match domain dimension".into())),
        }
        Ok(BasisSystem { kind, domain })
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn domain(&self) -> &ObservationDomain {
        &self.domain
    }

    /// Number of basis functions `q`.
    pub fn len(&self) -> usize {
        match &self.kind {
            BasisKind::BSpline(s) => s.len(),
            BasisKind::GaussianKernel(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Default quadrature: `resolution` Gauss nodes per knot span (splines),
    /// or a `resolution × resolution` masked grid (kernels).
    pub fn quadrature(&self, resolution: usize) -> Result<QuadratureRule> {
        match &self.kind {
            BasisKind::BSpline(s) => QuadratureRule::gauss_legendre_panels(&s.breakpoints(), resolution),
            BasisKind::GaussianKernel(_) => build_quadrature(&self.domain, resolution),
        }
    }

    pub fn default_resolution(&self) -> usize {
        match &self.kind {
            BasisKind::BSpline(_) => DEFAULT_NODES_PER_SPAN,
            BasisKind::GaussianKernel(_) => DEFAULT_GRID_CELLS,
        }
    }

    /// `β(t)` for a point known to be inside the domain (not checked).
    pub(crate) fn eval_unchecked(&self, point: &Point, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match (&self.kind, point) {
            (BasisKind::BSpline(s), Point::Line(t)) => {
                let (first, d) = s.local_derivatives(*t, 0);
                out[first..first + d[0].len()].copy_from_slice(&d[0]);
            }
            (BasisKind::GaussianKernel(k), Point::Plane(xy)) => {
                out.copy_from_slice(&k.values(*xy));
            }
            _ => unreachable!("dimension checked by caller"),
        }
    }

    fn check_point(&self, point: &Point) -> Result<()> {
        if !self.domain.contains(point)? {
            return Err(Error::Usage(format!("point {point} lies outside the observation domain")));
        }
        Ok(())
    }

    /// `β(t)` as a q-vector.
    pub fn eval_point(&self, point: &Point) -> Result<DVector<f64>> {
        self.check_point(point)?;
        let mut row = vec![0.0; self.len()];
        self.eval_unchecked(point, &mut row);
        Ok(DVector::from_vec(row))
    }

    /// Evaluation matrix with row `i` equal to `β(t_i)ᵀ`.
    pub fn eval_basis(&self, points: &[Point]) -> Result<DMatrix<f64>> {
        let q = self.len();
        let mut m = DMatrix::zeros(points.len(), q);
        let mut row = vec![0.0; q];
        for (i, p) in points.iter().enumerate() {
            self.check_point(p)?;
            self.eval_unchecked(p, &mut row);
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    /// `Σ_j β(t_j)` over a set of points.
    pub fn sum_over(&self, points: &[Point]) -> Result<DVector<f64>> {
        let mut acc = vec![0.0; self.len()];
        let mut row = vec![0.0; self.len()];
        for p in points {
            self.check_point(p)?;
            self.eval_unchecked(p, &mut row);
            acc.iter_mut().zip(&row).for_each(|(a, r)| *a += r);
        }
        Ok(DVector::from_vec(acc))
    }

    /// Second-derivative rows at one point, one entry per Hessian term with
    /// its Frobenius multiplicity folded in (`√2` on the mixed term).
    fn hessian_rows(&self, point: &Point) -> Result<Vec<Vec<f64>>> {
        let q = self.len();
        match (&self.kind, point) {
            (BasisKind::BSpline(s), Point::Line(t)) => {
                let (first, d) = s.local_derivatives(*t, 2);
                let mut row = vec![0.0; q];
                row[first..first + d[2].len()].copy_from_slice(&d[2]);
                Ok(vec![row])
            }
            (BasisKind::GaussianKernel(k), Point::Plane(xy)) => {
                let jet = k.jet(*xy);
                let sqrt2 = std::f64::consts::SQRT_2;
                Ok(vec![
                    jet.hess.iter().map(|h| h[0]).collect(),
                    jet.hess.iter().map(|h| sqrt2 * h[1]).collect(),
                    jet.hess.iter().map(|h| h[2]).collect(),
                ])
            }
            _ => Err(Error::Usage(format!("point {point} does not match the basis dimension"))),
        }
    }

    /// `J = Σ_nodes w β βᵀ`.
    pub fn gram_matrix(&self, quad: &QuadratureRule) -> Result<GramMatrix> {
        let b = self.eval_basis(quad.nodes())?;
        Ok(GramMatrix(weighted_cross(&b, quad.weights())))
    }

    /// `Ω = Σ_nodes w ⟨Hβ, Hβ⟩_F`.
    pub fn penalty_matrix(&self, quad: &QuadratureRule) -> Result<PenaltyMatrix> {
        if let BasisKind::BSpline(s) = &self.kind {
            if s.degree() < 2 {
                return Err(Error::Usage(format!(
                    "roughness penalty needs spline degree >= 2, got {}",
                    s.degree()
                )));
            }
        }
        let q = self.len();
        let terms = match self.kind {
            BasisKind::BSpline(_) => 1,
            BasisKind::GaussianKernel(_) => 3,
        };
        let n = quad.len();
        let mut rows = vec![DMatrix::zeros(n, q); terms];
        for (i, p) in quad.nodes().iter().enumerate() {
            self.check_point(p)?;
            for (t, row) in self.hessian_rows(p)?.into_iter().enumerate() {
                for (j, v) in row.into_iter().enumerate() {
                    rows[t][(i, j)] = v;
                }
            }
        }
        let mut omega = DMatrix::zeros(q, q);
        for m in &rows {
            omega += weighted_cross(m, quad.weights());
        }
        Ok(PenaltyMatrix(omega))
    }
}

/// `Mᵀ diag(w) M`, symmetrized.
fn weighted_cross(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = m.clone();
    for (i, wi) in w.iter().enumerate() {
        scaled.row_mut(i).scale_mut(wi.sqrt());
    }
    let out = scaled.transpose() * &scaled;
    0.5 * (&out + out.transpose())
}

/// Serializable description of a basis, sufficient to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    Bspline { degree: usize, knots: Vec<f64> },
    GaussianKernel { centers: Vec<[f64; 2]>, bandwidths: Vec<f64> },
}

impl BasisSystem {
    pub fn spec(&self) -> BasisSpec {
        match &self.kind {
            BasisKind::BSpline(s) => BasisSpec::Bspline {
                degree: s.degree(),
                knots: s.knots().to_vec(),
            },
            BasisKind::GaussianKernel(k) => BasisSpec::GaussianKernel {
                centers: k.centers().to_vec(),
                bandwidths: k.bandwidths().to_vec(),
            },
        }
    }

    pub fn from_spec(spec: &BasisSpec, domain: ObservationDomain) -> Result<Self> {
        let kind = match spec {
            BasisSpec::Bspline { degree, knots } => BasisKind::BSpline(BSplineBasis::from_knots(*degree, knots.clone())?),
            BasisSpec::GaussianKernel { centers, bandwidths } => {
                BasisKind::GaussianKernel(KernelBasis::new(centers.clone(), bandwidths.clone())?)
            }
        };
        Self::new(kind, domain)
    }
}

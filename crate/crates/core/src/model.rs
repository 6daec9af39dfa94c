//! Parameter vector `θ = (c₀, C, σ)` and the precomputed numerical context
//! (quadrature, basis values at the nodes, `J`, `Ω`) it is evaluated in.

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisSystem, GramMatrix, PenaltyMatrix};
use crate::domain::QuadratureRule;
use crate::error::{Error, Result};

/// Model parameters: `log Λ(t) = (c₀ + C U)ᵀ β(t)` with `U_k ~ N(0, σ_k²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Mean coefficients (`μ = c₀ᵀβ`).
    pub c0: DVector<f64>,
    /// Component coefficients, one column per component (`φ_k = c_kᵀβ`).
    pub c: DMatrix<f64>,
    /// Score standard deviations.
    pub sigma: DVector<f64>,
}

impl ModelParams {
    pub fn new(c0: DVector<f64>, c: DMatrix<f64>, sigma: DVector<f64>) -> Result<Self> {
        if c.nrows() != c0.len() {
            return Err(Error::Usage(format!(
                "C has {} rows but c0 has length {}",
                c.nrows(),
                c0.len()
            )));
        }
        if c.ncols() != sigma.len() {
            return Err(Error::Usage(format!(
                "C has {} columns but sigma has length {}",
                c.ncols(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Usage(format!("score standard deviations must be positive, got {s}")));
        }
        if c0.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Usage("coefficients must be finite".into()));
        }
        Ok(ModelParams { c0, c, sigma })
    }

    /// Model without latent components (a plain Poisson process).
    pub fn baseline(c0: DVector<f64>) -> Self {
        let q = c0.len();
        ModelParams {
            c0,
            c: DMatrix::zeros(q, 0),
            sigma: DVector::zeros(0),
        }
    }

    pub fn q(&self) -> usize {
        self.c0.len()
    }

    pub fn p(&self) -> usize {
        self.sigma.len()
    }

    /// `c₀ + C u`.
    pub fn coefficients_at(&self, u: &DVector<f64>) -> DVector<f64> {
        if self.p() == 0 {
            self.c0.clone()
        } else {
            &self.c0 + &self.c * u
        }
    }

    /// `‖CᵀJC − I‖_max`.
    pub fn orthonormality_error(&self, gram: &GramMatrix) -> f64 {
        let p = self.p();
        if p == 0 {
            return 0.0;
        }
        let m = self.c.transpose() * gram.matrix() * &self.c - DMatrix::identity(p, p);
        m.abs().max()
    }

    /// Checks the canonical-form invariants: J-orthonormal columns, σ
    /// descending, and the largest-magnitude entry of every column positive.
    pub fn check_canonical(&self, gram: &GramMatrix, tol: f64) -> Result<()> {
        let err = self.orthonormality_error(gram);
        if !(err <= tol) {
            return Err(Error::Estimation(format!(
                "components are not J-orthonormal: max deviation {err:e}"
            )));
        }
        if self.sigma.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Estimation("sigma is not sorted descending".into()));
        }
        for (k, col) in self.c.column_iter().enumerate() {
            if col[dominant_index(col.as_slice())] <= 0.0 {
                return Err(Error::Estimation(format!("component {} violates the sign rule", k + 1)));
            }
        }
        Ok(())
    }
}

/// Relative gap below which two magnitudes count as tied in the sign rule.
pub const SIGN_TIE_TOLERANCE: f64 = 1e-8;

/// Index of the entry with maximum absolute value. Entries within
/// [`SIGN_TIE_TOLERANCE`] of the maximum are tied and go to the lowest index,
/// so rounding noise cannot flip the choice between symmetric entries.
pub(crate) fn dominant_index(v: &[f64]) -> usize {
    let top = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    v.iter().position(|x| x.abs() >= top * (1.0 - SIGN_TIE_TOLERANCE)).unwrap_or(0)
}

/// Basis plus everything derived from it that likelihood evaluation needs.
#[derive(Debug, Clone)]
pub struct ModelSpace {
    basis: BasisSystem,
    resolution: usize,
    quad: QuadratureRule,
    /// `β` at the quadrature nodes, one row per node.
    node_basis: DMatrix<f64>,
    gram: GramMatrix,
    penalty: PenaltyMatrix,
}

impl ModelSpace {
    pub fn new(basis: BasisSystem, resolution: usize) -> Result<Self> {
        let quad = basis.quadrature(resolution)?;
        let node_basis = basis.eval_basis(quad.nodes())?;
        let gram = basis.gram_matrix(&quad)?;
        let penalty = basis.penalty_matrix(&quad)?;
        Ok(ModelSpace {
            basis,
            resolution,
            quad,
            node_basis,
            gram,
            penalty,
        })
    }

    pub fn with_default_resolution(basis: BasisSystem) -> Result<Self> {
        let r = basis.default_resolution();
        Self::new(basis, r)
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn quadrature(&self) -> &QuadratureRule {
        &self.quad
    }

    pub fn node_basis(&self) -> &DMatrix<f64> {
        &self.node_basis
    }

    pub fn gram(&self) -> &GramMatrix {
        &self.gram
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    pub fn q(&self) -> usize {
        self.basis.len()
    }

    /// `∫_B exp(cᵀβ)` by quadrature.
    pub fn integrated_intensity(&self, coef: &DVector<f64>) -> Result<f64> {
        let eta = &self.node_basis * coef;
        let top = eta.max();
        if top > crate::likelihood::MAX_EXPONENT {
            return Err(Error::Overflow { max_exponent: top });
        }
        Ok(eta.iter().zip(self.quad.weights()).map(|(e, w)| w * e.exp()).sum())
    }

    pub(crate) fn check_params(&self, theta: &ModelParams) -> Result<()> {
        if theta.q() != self.q() {
            return Err(Error::Usage(format!(
                "parameters have q = {} but the basis has q = {}",
                theta.q(),
                self.q()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sigma_and_shapes() {
        let c0 = DVector::zeros(3);
        assert!(ModelParams::new(c0.clone(), DMatrix::zeros(3, 1), DVector::from_vec(vec![0.0])).is_err());
        assert!(ModelParams::new(c0.clone(), DMatrix::zeros(2, 1), DVector::from_vec(vec![1.0])).is_err());
        assert!(ModelParams::new(c0.clone(), DMatrix::zeros(3, 2), DVector::from_vec(vec![1.0])).is_err());
        assert!(ModelParams::new(c0, DMatrix::zeros(3, 1), DVector::from_vec(vec![-1.0])).is_err());
    }

    #[test]
    fn dominant_index_ties_go_low() {
        assert_eq!(dominant_index(&[0.5, -2.0, 2.0]), 1);
        assert_eq!(dominant_index(&[0.0, 0.0]), 0);
        assert_eq!(dominant_index(&[0.3, 1.0, -1.0 - 1e-12]), 1);
        assert_eq!(dominant_index(&[0.3, 1.0, -1.0 - 1e-6]), 2);
    }
}

//! Identifiability: J-orthonormal components, descending σ, fixed signs.
//!
//! With `J = L Lᵀ` and `M = Lᵀ C diag(σ) = V Σ Wᵀ` (thin SVD), the canonical
//! parameters are `C' = L⁻ᵀ V` and `σ' = diag Σ`. Since
//! `C' diag(σ') = C diag(σ) W`, the scores `z' = Wᵀ z` reproduce `C diag(σ) z`
//! exactly, so the law of `C U` is unchanged.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::basis::GramMatrix;
use crate::error::{Error, Result};
use crate::linalg::jacobi_svd;
use crate::model::{dominant_index, ModelParams};

fn cholesky(gram: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(gram.clone()).ok_or_else(|| Error::Numeric("Gram matrix is not positive definite".into()))
}

/// Canonical form of `theta` (see module docs).
pub fn canonicalize(theta: &ModelParams, gram: &GramMatrix) -> Result<ModelParams> {
    canonicalize_with_rotation(theta, gram).map(|(t, _)| t)
}

/// Canonical form together with the orthogonal `W` mapping standardized
/// scores, `z' = Wᵀ z`. Draws matched this way give identical intensities.
pub fn canonicalize_with_rotation(theta: &ModelParams, gram: &GramMatrix) -> Result<(ModelParams, DMatrix<f64>)> {
    let (q, p) = (theta.q(), theta.p());
    if p == 0 {
        return Ok((theta.clone(), DMatrix::zeros(0, 0)));
    }
    if gram.matrix().nrows() != q {
        return Err(Error::Usage(format!("Gram matrix is {0}×{0} but q = {q}", gram.matrix().nrows())));
    }
    if p > q {
        return Err(Error::Estimation(format!(
            "p = {p} components exceed the basis dimension q = {q}; use a smaller p"
        )));
    }
    let chol = cholesky(gram.matrix())?;
    let l = chol.l();
    let mut m = l.tr_mul(&theta.c);
    for k in 0..p {
        m.column_mut(k).scale_mut(theta.sigma[k]);
    }
    let svd = jacobi_svd(&m);
    let (u, s) = (svd.u, svd.s);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|a, b| s[*b].total_cmp(&s[*a]));
    let top = s[order[0]];
    let bottom = s[order[p - 1]];
    if !(top > 0.0) || bottom <= f64::EPSILON * q.max(p) as f64 * top {
        return Err(Error::Estimation(format!(
            "component matrix is rank deficient (singular values {top:e} .. {bottom:e}); use a smaller p"
        )));
    }
    let lt = l.transpose();
    let mut c = DMatrix::zeros(q, p);
    let mut w = DMatrix::zeros(p, p);
    let mut sigma = nalgebra::DVector::zeros(p);
    for (k, &idx) in order.iter().enumerate() {
        let mut col = lt
            .solve_upper_triangular(&u.column(idx).into_owned())
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        let mut wk = svd.w.column(idx).into_owned();
        if col[dominant_index(col.as_slice())] < 0.0 {
            col.neg_mut();
            wk.neg_mut();
        }
        c.set_column(k, &col);
        w.set_column(k, &wk);
        sigma[k] = s[idx];
    }
    Ok((ModelParams::new(theta.c0.clone(), c, sigma)?, w))
}

/// Symmetric J-orthonormalization `C = A (AᵀJA)^{-1/2}` and its pullback,
/// used to keep components exactly orthonormal during optimization.
pub(crate) struct Polar {
    pub c: DMatrix<f64>,
    t: DMatrix<f64>,
    evecs: DMatrix<f64>,
    evals: Vec<f64>,
}

impl Polar {
    pub fn new(a: &DMatrix<f64>, gram: &DMatrix<f64>) -> Result<Self> {
        let p = a.ncols();
        let s = a.tr_mul(&(gram * a));
        let s = 0.5 * (&s + s.transpose());
        let eig = s.symmetric_eigen();
        let evals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
        let top = evals.iter().cloned().fold(0.0, f64::max);
        if evals.iter().any(|l| !(*l > 1e-14 * top)) {
            return Err(Error::Estimation("component directions became linearly dependent".into()));
        }
        let evecs = eig.eigenvectors;
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, evals.iter().map(|l| l.powf(-0.5))));
        let t = &evecs * d * evecs.transpose();
        Ok(Polar {
            c: a * &t,
            t,
            evecs,
            evals,
        })
    }

    /// Gradient with respect to `A` given the gradient `g` with respect to `C`.
    pub fn pullback(&self, a: &DMatrix<f64>, gram: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
        let p = a.ncols();
        let h = a.tr_mul(g);
        let h = 0.5 * (&h + h.transpose());
        let mut inner = self.evecs.tr_mul(&h) * &self.evecs;
        for i in 0..p {
            for j in 0..p {
                let (li, lj) = (self.evals[i], self.evals[j]);
                let f = if (li - lj).abs() <= 1e-12 * li.max(lj) {
                    -0.5 * li.powf(-1.5)
                } else {
                    (li.powf(-0.5) - lj.powf(-0.5)) / (li - lj)
                };
                inner[(i, j)] *= f;
            }
        }
        let pmat = &self.evecs * inner * self.evecs.transpose();
        g * &self.t + 2.0 * (gram * a) * pmat
    }
}

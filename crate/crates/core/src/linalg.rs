//! One-sided Jacobi SVD. nalgebra's bidiagonal SVD returns inaccurate
//! factors for some small matrices with orthogonal columns, which breaks
//! canonicalization; Jacobi is exact on such inputs and accurate otherwise.

use nalgebra::{DMatrix, DVector};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `A W = U diag(s)` of an `m × k` matrix, unsorted. Zero columns
/// of `A W` give zero singular values and zero columns of `U`.
pub(crate) struct Jacobi {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub w: DMatrix<f64>,
}

pub(crate) fn jacobi_svd(a: &DMatrix<f64>) -> Jacobi {
    let (m, k) = a.shape();
    let mut a = a.clone();
    let mut w = DMatrix::identity(k, k);
    let tol = f64::EPSILON * m.max(1) as f64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..k {
            for j in i + 1..k {
                let alpha = a.column(i).norm_squared();
                let beta = a.column(j).norm_squared();
                let gamma = a.column(i).dot(&a.column(j));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut w] {
                    for r in 0..mat.nrows() {
                        let (x, y) = (mat[(r, i)], mat[(r, j)]);
                        mat[(r, i)] = c * x - s * y;
                        mat[(r, j)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s = DVector::from_iterator(k, a.column_iter().map(|c| c.norm()));
    for (j, mut col) in a.column_iter_mut().enumerate() {
        if s[j] > 0.0 {
            col /= s[j];
        }
    }
    Jacobi { u: a, s, w }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn orthogonal_columns_are_left_alone() {
        let q = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64).sin()).qr().q();
        let mut m = q.clone();
        for (k, s) in [0.3, 0.15, 0.02].into_iter().enumerate() {
            m.column_mut(k).scale_mut(s);
        }
        let j = jacobi_svd(&m);
        assert!((&j.w - DMatrix::identity(3, 3)).amax() < 1e-15);
        assert!((&j.u - &q).amax() < 1e-14);
    }

    proptest! {
        #[test]
        fn reconstructs(v in prop::collection::vec(-1.0..1.0f64, 24), tall in any::<bool>()) {
            let a = if tall { DMatrix::from_vec(8, 3, v) } else { DMatrix::from_vec(3, 8, v) };
            let j = jacobi_svd(&a);
            let k = a.ncols();
            prop_assert!((j.w.tr_mul(&j.w) - DMatrix::identity(k, k)).amax() < 1e-13);
            let rec = &j.u * DMatrix::from_diagonal(&j.s) * j.w.transpose();
            prop_assert!((rec - &a).amax() < 1e-13);
            for x in 0..k {
                for y in x + 1..k {
                    if j.s[x] > 1e-12 && j.s[y] > 1e-12 {
                        prop_assert!(j.u.column(x).dot(&j.u.column(y)).abs() < 1e-13);
                    }
                }
            }
        }
    }
}

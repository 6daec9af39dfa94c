//! Renormalized Gaussian radial kernels on a planar domain.
//!
//! `β_k(t) = g_k(t) / Σ_j g_j(t)` with `g_k(t) = exp(-‖t - τ_k‖² / 2δ_k²)`.
//! Values, gradients and Hessians are computed in closed form; every
//! kernel is rescaled by the largest one before normalizing, which leaves
//! the ratios (and hence all derivatives of `β`) unchanged while keeping
//! far-away points from underflowing to `0/0`.

use crate::error::{Error, Result};

/// Value, gradient and Hessian `(h11, h12, h22)` of every basis function at one point.
#[derive(Debug, Clone)]
pub struct KernelJet {
    pub value: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub hess: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    centers: Vec<[f64; 2]>,
    bandwidths: Vec<f64>,
}

impl KernelBasis {
    pub fn new(centers: Vec<[f64; 2]>, bandwidths: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Construction("kernel basis has no centres".into()));
        }
        if centers.len() != bandwidths.len() {
            return Err(Error::Construction(format!(
                "{} centres but {} bandwidths",
                centers.len(),
                bandwidths.len()
            )));
        }
        if bandwidths.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::Construction("kernel bandwidths must be positive and finite".into()));
        }
        if centers.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::Construction("kernel centres must be finite".into()));
        }
        Ok(KernelBasis { centers, bandwidths })
    }

    /// Bandwidth of each centre is half the distance to its nearest neighbour.
    pub fn with_nearest_neighbour_bandwidths(centers: Vec<[f64; 2]>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::Construction(format!(
                "nearest-neighbour bandwidths need at least 2 centres, got {}",
                centers.len()
            )));
        }
        let bandwidths = centers
            .iter()
            .enumerate()
            .map(|(k, a)| {
                centers
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != k)
                    .map(|(_, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
                    * 0.5
            })
            .collect::<Vec<_>>();
        if let Some(k) = bandwidths.iter().position(|d| *d <= 0.0) {
            return Err(Error::Construction(format!("centre {k} is duplicated")));
        }
        Self::new(centers, bandwidths)
    }

    pub fn centers(&self) -> &[[f64; 2]] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Unnormalized log-kernels `-‖t - τ_k‖² / 2δ_k²`.
    fn log_kernels(&self, t: [f64; 2]) -> Vec<f64> {
        self.centers
            .iter()
            .zip(&self.bandwidths)
            .map(|(c, d)| -((t[0] - c[0]).powi(2) + (t[1] - c[1]).powi(2)) / (2.0 * d * d))
            .collect()
    }

    pub fn values(&self, t: [f64; 2]) -> Vec<f64> {
        let logs = self.log_kernels(t);
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let g: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }

    /// Values, gradients and Hessians by the quotient rule.
    pub fn jet(&self, t: [f64; 2]) -> KernelJet {
        let q = self.len();
        let logs = self.log_kernels(t);
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut g = vec![0.0; q];
        let mut dg = vec![[0.0; 2]; q];
        let mut hg = vec![[0.0; 3]; q];
        let (mut s, mut ds, mut hs) = (0.0, [0.0; 2], [0.0; 3]);
        for k in 0..q {
            let gk = (logs[k] - top).exp();
            let inv = 1.0 / (self.bandwidths[k] * self.bandwidths[k]);
            let r = [t[0] - self.centers[k][0], t[1] - self.centers[k][1]];
            let grad = [-gk * r[0] * inv, -gk * r[1] * inv];
            let hess = [
                gk * (r[0] * r[0] * inv * inv - inv),
                gk * r[0] * r[1] * inv * inv,
                gk * (r[1] * r[1] * inv * inv - inv),
            ];
            g[k] = gk;
            dg[k] = grad;
            hg[k] = hess;
            s += gk;
            for a in 0..2 {
                ds[a] += grad[a];
            }
            for a in 0..3 {
                hs[a] += hess[a];
            }
        }
        let s2 = s * s;
        let s3 = s2 * s;
        let mut value = vec![0.0; q];
        let mut grad = vec![[0.0; 2]; q];
        let mut hess = vec![[0.0; 3]; q];
        for k in 0..q {
            value[k] = g[k] / s;
            grad[k] = [
                dg[k][0] / s - g[k] * ds[0] / s2,
                dg[k][1] / s - g[k] * ds[1] / s2,
            ];
            // (a, b) index pairs for h11, h12, h22.
            for (h, (a, b)) in [(0, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                hess[k][h] = hg[k][h] / s
                    - (dg[k][a] * ds[b] + ds[a] * dg[k][b]) / s2
                    - g[k] * hs[h] / s2
                    + 2.0 * g[k] * ds[a] * ds[b] / s3;
            }
        }
        KernelJet { value, grad, hess }
    }
}

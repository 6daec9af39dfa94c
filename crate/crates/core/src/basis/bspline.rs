//! Clamped B-spline bases on an interval.

use crate::error::{Error, Result};

/// B-spline basis of a given degree over a clamped knot vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Equally spaced interior knots on `[a, b]`, boundary knots repeated `degree + 1` times.
    pub fn clamped_uniform(a: f64, b: f64, num_interior_knots: usize, degree: usize) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Usage("spline degree must be at least 1".into()));
        }
        let spans = num_interior_knots + 1;
        let mut knots = Vec::with_capacity(spans + 1 + 2 * degree);
        knots.extend(std::iter::repeat_n(a, degree));
        for i in 0..=spans {
            knots.push(if i == spans { b } else { a + (b - a) * i as f64 / spans as f64 });
        }
        knots.extend(std::iter::repeat_n(b, degree));
        Self::from_knots(degree, knots)
    }

    /// Basis from an explicit knot vector (non-decreasing, clamped at both ends).
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Usage("spline degree must be at least 1".into()));
        }
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Construction(format!(
                "degree {degree} needs at least {} knots, got {}",
                2 * (degree + 1),
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Construction("knot vector must be finite and non-decreasing".into()));
        }
        let n = knots.len();
        let clamped_left = knots[..=degree].iter().all(|&k| k == knots[0]);
        let clamped_right = knots[n - degree - 1..].iter().all(|&k| k == knots[n - 1]);
        if !clamped_left || !clamped_right || knots[0] >= knots[n - 1] {
            return Err(Error::Construction("knot vector must be clamped on a non-empty interval".into()));
        }
        if knots.windows(degree + 2).any(|w| w[0] == w[degree + 1]) {
            return Err(Error::Construction(format!("interior knot multiplicity exceeds degree {degree}")));
        }
        Ok(BSplineBasis { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> f64 {
        self.knots[0]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - 1]
    }

    /// Distinct knot values, i.e. the breakpoints of the piecewise polynomial.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for &k in &self.knots {
            if out.last() != Some(&k) {
                out.push(k);
            }
        }
        out
    }

    /// Index `i` with `knots[i] <= t < knots[i + 1]`; the right end maps to the last span.
    fn span(&self, t: f64) -> usize {
        let p = self.degree;
        let last = self.len() - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        if t <= self.knots[p] {
            return p;
        }
        // knots[p..=last+1] is sorted; find the last index with knots[i] <= t.
        let slice = &self.knots[p..=last + 1];
        let pos = slice.partition_point(|&k| k <= t);
        (p + pos - 1).min(last)
    }

    /// Non-zero basis functions at `t` and their derivatives up to order `nder`.
    ///
    /// Returns `(first, ders)` where `ders[k][j]` is the `k`-th derivative of
    /// basis function `first + j`, for `j` in `0..=degree`.
    pub fn local_derivatives(&self, t: f64, nder: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let u = &self.knots;
        let i = self.span(t);
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[i + 1 - j];
            right[j] = u[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let mut ders = vec![vec![0.0; p + 1]; nder + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let top = nder.min(p);
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0, 1);
            a[0][0] = 1.0;
            for k in 1..=top {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if rk >= 0 {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut factor = p as f64;
        for (k, row) in ders.iter_mut().enumerate().take(top + 1).skip(1) {
            for v in row.iter_mut() {
                *v *= factor;
            }
            factor *= (p - k) as f64;
        }
        (i - p, ders)
    }

    /// Greville abscissae: knot averages, one per basis function.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.len())
            .map(|j| self.knots[j + 1..=j + p].iter().sum::<f64>() / p as f64)
            .collect()
    }
}

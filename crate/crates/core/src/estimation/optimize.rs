//! BFGS ascent with Armijo backtracking for a smooth deterministic objective.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Largest sup-norm step tried at once; keeps trial points away from overflow.
const MAX_STEP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// `‖∇f‖∞` fell below the tolerance.
    Gradient,
    /// No step along the search direction (or steepest ascent) improved `f`.
    Stalled,
    /// Iteration budget exhausted.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

/// Maximizes `f`, which returns the value and gradient. Evaluation errors
/// at trial points are treated as failed steps; an error at `x0` is returned.
pub fn maximize<F>(x0: DVector<f64>, mut f: F, max_iters: usize, grad_tol: f64) -> Result<Outcome>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0)?;
    let mut x = x0;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![fx];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let sup = |v: &DVector<f64>| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    while iterations < max_iters {
        if sup(&g) <= grad_tol {
            termination = Termination::Gradient;
            break;
        }
        let mut d = &h * &g;
        let mut slope = g.dot(&d);
        if !(slope > 0.0) {
            h.fill_with_identity();
            fresh = true;
            d = g.clone();
            slope = g.dot(&d);
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut alpha = (MAX_STEP / sup(&d)).min(1.0);
            for _ in 0..MAX_HALVINGS {
                let trial = &x + alpha * &d;
                if let Ok((ft, gt)) = f(&trial) {
                    if ft.is_finite() && ft >= fx + ARMIJO * alpha * slope {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || fresh {
                break;
            }
            // Retry once along the gradient with a reset metric.
            h.fill_with_identity();
            fresh = true;
            d = g.clone();
            slope = g.dot(&d);
        }
        let Some((xn, fnew, gnew)) = accepted else {
            termination = Termination::Stalled;
            break;
        };
        let s = &xn - &x;
        // Ascent on f is descent on -f: y = ∇(-f)(x_new) - ∇(-f)(x).
        let y = &g - &gnew;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (rho * rho * yhy + rho) * (&s * s.transpose()) - rho * (&hy * s.transpose() + &s * hy.transpose());
            fresh = false;
        }
        x = xn;
        fx = fnew;
        g = gnew;
        trace.push(fx);
        iterations += 1;
    }
    if termination == Termination::MaxIterations && sup(&g) <= grad_tol {
        termination = Termination::Gradient;
    }
    Ok(Outcome {
        grad_norm: sup(&g),
        x,
        value: fx,
        iterations,
        trace,
        termination,
    })
}

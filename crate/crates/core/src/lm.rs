//! Small dense Levenberg-Marquardt solver.
//!
//! Problems here have at most a few dozen parameters, so the normal equations
//! are formed explicitly and solved by Cholesky factorization.

use nalgebra::{DMatrix, DVector};

pub(crate) trait Problem {
    fn n_params(&self) -> usize;
    /// Residual vector at `x`, or `None` if `x` is outside the model's domain.
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>>;
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>>;
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iters: usize,
}

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-15;
const LAMBDA_MAX: f64 = 1e16;
const OBJECTIVE_FLOOR: f64 = 1e-30;

fn sum_sq(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub(crate) fn minimize<P: Problem>(
    problem: &P,
    x0: DVector<f64>,
    max_iters: usize,
    rel_tol: f64,
) -> Outcome {
    debug_assert_eq!(x0.len(), problem.n_params());
    let mut x = x0;
    let Some(mut r) = problem.residuals(&x) else {
        return Outcome { objective: f64::INFINITY, x, converged: false, iters: 0 };
    };
    let mut f = sum_sq(&r);
    if !f.is_finite() {
        return Outcome { objective: f64::INFINITY, x, converged: false, iters: 0 };
    }
    let floor = OBJECTIVE_FLOOR * r.len() as f64;
    let mut lambda = LAMBDA_INIT;
    let mut iters = 0;
    let mut converged = false;

    'outer: while iters < max_iters {
        if f <= floor {
            converged = true;
            break;
        }
        let Some(jac) = problem.jacobian(&x) else { break };
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }
        // Inner loop: raise damping until a step reduces the objective.
        loop {
            iters += 1;
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&(-&grad)));
            if let Some(step) = step {
                let candidate = &x + &step;
                if let Some(r_new) = problem.residuals(&candidate) {
                    let f_new = sum_sq(&r_new);
                    if f_new.is_finite() && f_new < f {
                        let rel = (f - f_new) / f;
                        x = candidate;
                        r = r_new;
                        f = f_new;
                        lambda = (lambda / 3.0).max(LAMBDA_MIN);
                        if rel < rel_tol {
                            converged = true;
                            break 'outer;
                        }
                        continue 'outer;
                    }
                }
            }
            lambda *= 4.0;
            if lambda > LAMBDA_MAX {
                // No descent direction left at working precision.
                converged = true;
                break 'outer;
            }
            if iters >= max_iters {
                break 'outer;
            }
        }
    }

    Outcome { x, objective: f, converged, iters }
}

//! Damped Gauss-Newton (Levenberg-Marquardt) for small dense least-squares
//! problems, with a central-difference Jacobian.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once the step norm falls below `step_tolerance * (1 + |x|)`.
    pub step_tolerance: f64,
    /// Jacobian differencing step, relative to `max(1, |x_j|)`.
    pub jacobian_step: f64,
    pub initial_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            jacobian_step: 1e-6,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Half the sum of squared residuals at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn half_sq(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn jacobian<F>(f: &F, x: &[f64], r0: usize, rel: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(r0, x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let h = rel * x[j].abs().max(1.0);
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        for i in 0..r0 {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `0.5 * |f(x)|^2` from `x0`. `f` must return a fixed number of
/// residuals.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], cfg: LmConfig) -> LmOutcome
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = DVector::from_vec(f(&x));
    let m = r.len();
    let mut cost = half_sq(&r);
    let mut lambda = cfg.initial_damping;
    let mut jac = jacobian(&f, &x, m, cfg.jacobian_step);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let jt = jac.transpose();
        let a = &jt * &jac;
        let g = &jt * &r;
        let mut damped = a.clone();
        for j in 0..n {
            let d = a[(j, j)];
            damped[(j, j)] += lambda * if d > 0.0 { d } else { 1.0 };
        }
        let step = match damped.clone().cholesky() {
            Some(ch) => ch.solve(&(-&g)),
            None => match damped.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            },
        };
        let xnorm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step.norm() <= cfg.step_tolerance * (1.0 + xnorm) {
            converged = true;
            break;
        }
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let rt = DVector::from_vec(f(&trial));
        let ct = half_sq(&rt);
        if ct.is_finite() && ct < cost {
            x = trial;
            r = rt;
            cost = ct;
            lambda = (lambda / 10.0).max(1e-15);
            jac = jacobian(&f, &x, m, cfg.jacobian_step);
        } else {
            lambda *= 10.0;
            if lambda > 1e20 {
                // no descent direction left at this precision
                converged = true;
                break;
            }
        }
    }
    LmOutcome {
        params: x,
        cost,
        iterations,
        converged,
    }
}

//! Damped least-squares minimizer: forward-difference Jacobian, multiplicative
//! damping schedule, box bounds by clamping, parameters scaled internally by
//! their initial magnitudes.

use nalgebra::{DMatrix, DVector};

use crate::model::ConvergenceStatus;

use super::ParamSetting;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iter: usize,
    pub lambda0: f64,
    pub lambda_factor: f64,
    pub rel_step: f64,
    pub residual_tol: f64,
    pub gradient_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 200,
            lambda0: 1e-3,
            lambda_factor: 10.0,
            rel_step: 1e-6,
            residual_tol: 1e-10,
            gradient_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LmOutcome {
    /// Full parameter vector at the returned point, fixed entries untouched.
    pub values: Vec<f64>,
    /// Standard error per parameter; populated only on convergence and only
    /// for free parameters with an invertible normal matrix.
    pub stderr: Vec<Option<f64>>,
    /// L2 norm of the residual vector at the returned point.
    pub residual_norm: f64,
    pub status: ConvergenceStatus,
    pub at_bound: Vec<bool>,
}

struct Scaled {
    free: Vec<usize>,
    scale: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Scaled {
    fn new(params: &[ParamSetting]) -> Scaled {
        let free: Vec<usize> = params
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.fixed)
            .map(|(i, _)| i)
            .collect();
        let scale: Vec<f64> = free
            .iter()
            .map(|&i| {
                let p = &params[i];
                let width = p.upper - p.lower;
                // A zero initial value must not collapse the column scale.
                let from_width = if width.is_finite() { 1e-3 * width } else { 0.0 };
                p.initial.abs().max(from_width).max(1e-30)
            })
            .collect();
        let lo: Vec<f64> = free
            .iter()
            .zip(&scale)
            .map(|(&i, s)| params[i].lower / s)
            .collect();
        let hi: Vec<f64> = free
            .iter()
            .zip(&scale)
            .map(|(&i, s)| params[i].upper / s)
            .collect();
        Scaled {
            free,
            scale,
            lo,
            hi,
        }
    }

    fn assemble(&self, params: &[ParamSetting], x: &[f64]) -> Vec<f64> {
        let mut full: Vec<f64> = params.iter().map(|p| p.initial).collect();
        for (j, &i) in self.free.iter().enumerate() {
            full[i] = x[j] * self.scale[j];
        }
        full
    }

    fn clamp(&self, x: &mut [f64]) {
        for j in 0..x.len() {
            x[j] = x[j].clamp(self.lo[j], self.hi[j]);
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn all_finite(r: &[f64]) -> bool {
    r.iter().all(|v| v.is_finite())
}

/// Forward-difference Jacobian in the scaled variables; steps flip backward
/// when the forward probe would leave the box.
fn jacobian(
    residuals: &dyn Fn(&[f64]) -> Vec<f64>,
    params: &[ParamSetting],
    scaled: &Scaled,
    x: &[f64],
    r0: &[f64],
    rel_step: f64,
) -> Option<DMatrix<f64>> {
    let m = r0.len();
    let k = x.len();
    let mut j = DMatrix::<f64>::zeros(m, k);
    for col in 0..k {
        let mut h = rel_step * x[col].abs().max(1.0);
        if x[col] + h > scaled.hi[col] {
            h = -h;
        }
        let mut xs = x.to_vec();
        xs[col] += h;
        let r = residuals(&scaled.assemble(params, &xs));
        if r.len() != m || !all_finite(&r) {
            return None;
        }
        for row in 0..m {
            j[(row, col)] = (r[row] - r0[row]) / h;
        }
    }
    Some(j)
}

pub(crate) fn minimize(
    residuals: &dyn Fn(&[f64]) -> Vec<f64>,
    params: &[ParamSetting],
    opts: &LmOptions,
) -> LmOutcome {
    let scaled = Scaled::new(params);
    let k = scaled.free.len();
    let n_all = params.len();

    let finish = |x: &[f64], r: &[f64], status: ConvergenceStatus| -> LmOutcome {
        let values = scaled.assemble(params, x);
        let mut stderr = vec![None; n_all];
        let mut at_bound = vec![false; n_all];
        for (j, &i) in scaled.free.iter().enumerate() {
            let width = scaled.hi[j] - scaled.lo[j];
            let tol = 1e-8 * width.max(1e-30);
            at_bound[i] = (x[j] - scaled.lo[j]).abs() <= tol || (scaled.hi[j] - x[j]).abs() <= tol;
        }
        if status == ConvergenceStatus::Converged && r.len() > k && k > 0 {
            if let Some(jac) = jacobian(residuals, params, &scaled, x, r, opts.rel_step) {
                let jtj = jac.transpose() * &jac;
                if let Some(inv) = jtj.clone().try_inverse() {
                    let sigma2 = cost_of(r) / (r.len() - k) as f64;
                    for (j, &i) in scaled.free.iter().enumerate() {
                        let var = inv[(j, j)] * sigma2;
                        if var.is_finite() && var >= 0.0 {
                            stderr[i] = Some(scaled.scale[j] * var.sqrt());
                        }
                    }
                }
            }
        }
        LmOutcome {
            values,
            stderr,
            residual_norm: cost_of(r).sqrt(),
            status,
            at_bound,
        }
    };

    let mut x: Vec<f64> = scaled
        .free
        .iter()
        .zip(&scaled.scale)
        .map(|(&i, s)| params[i].initial / s)
        .collect();
    scaled.clamp(&mut x);

    let mut r = residuals(&scaled.assemble(params, &x));
    if !all_finite(&r) {
        return finish(&x, &[f64::INFINITY], ConvergenceStatus::Singular);
    }
    let mut cost = cost_of(&r);
    if k == 0 {
        return finish(&x, &r, ConvergenceStatus::Converged);
    }

    let mut lambda = opts.lambda0;
    for _ in 0..opts.max_iter {
        if cost == 0.0 {
            return finish(&x, &r, ConvergenceStatus::Converged);
        }
        let jac = match jacobian(residuals, params, &scaled, &x, &r, opts.rel_step) {
            Some(j) => j,
            None => return finish(&x, &r, ConvergenceStatus::Singular),
        };
        let rvec = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rvec;
        if grad.amax() < opts.gradient_tol {
            return finish(&x, &r, ConvergenceStatus::Converged);
        }
        let jtj = jac.transpose() * &jac;

        let mut stepped = false;
        let mut solved_any = false;
        while lambda <= 1e12 {
            let mut damped = jtj.clone();
            for d in 0..k {
                // Floor keeps a dead column from zeroing the damping.
                let dj = jtj[(d, d)].max(1e-30);
                damped[(d, d)] += lambda * dj;
            }
            let delta = match damped.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= opts.lambda_factor;
                    continue;
                }
            };
            solved_any = true;
            let mut x_trial: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            scaled.clamp(&mut x_trial);
            let r_trial = residuals(&scaled.assemble(params, &x_trial));
            if r_trial.len() == r.len() && all_finite(&r_trial) {
                let cost_trial = cost_of(&r_trial);
                if cost_trial < cost {
                    let rel_drop = (cost - cost_trial) / cost;
                    x = x_trial;
                    r = r_trial;
                    cost = cost_trial;
                    lambda = (lambda / opts.lambda_factor).max(1e-12);
                    stepped = true;
                    if rel_drop < opts.residual_tol {
                        return finish(&x, &r, ConvergenceStatus::Converged);
                    }
                    break;
                }
            }
            lambda *= opts.lambda_factor;
        }
        if !stepped {
            let status = if solved_any {
                // Damping exhausted without an accepted step: a (possibly
                // local) minimum to working precision.
                ConvergenceStatus::Converged
            } else {
                ConvergenceStatus::Singular
            };
            return finish(&x, &r, status);
        }
    }
    finish(&x, &r, ConvergenceStatus::MaxIter)
}

//! Adaptive Dormand-Prince 5(4) integration for complex state vectors, with
//! fifth-order dense output so states can be sampled at arbitrary times
//! between accepted steps.

use num_complex::Complex64;
use thiserror::Error;

const CZERO: Complex64 = Complex64::new(0.0, 0.0);

// Butcher tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense-output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    /// Relative tolerance on the per-component weighted error norm.
    pub rtol: f64,
    /// Absolute tolerance floor.
    pub atol: f64,
    /// Abort after this many attempted steps.
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 500_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("integration span must satisfy t0 < t1")]
    BadSpan,
    #[error("state vector must be non-empty")]
    EmptyState,
    #[error("sample times must be sorted ascending")]
    UnsortedSamples,
    #[error("sample time {sample:.6e} lies outside [{t0:.6e}, {t1:.6e}]")]
    SampleOutOfSpan { sample: f64, t0: f64, t1: f64 },
    #[error(
        "exceeded {max_steps} steps at t = {t:.6e}; largest rejected local error {max_local_error:.3e}"
    )]
    TooManySteps {
        max_steps: usize,
        t: f64,
        max_local_error: f64,
    },
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e}, local error {local_error:.3e})")]
    StepUnderflow { t: f64, h: f64, local_error: f64 },
}

/// Integrates `dy/dt = rhs(t, y)` over `span`, returning the state at each of
/// the (ascending) `samples` via dense output.
pub fn integrate<F>(
    mut rhs: F,
    span: (f64, f64),
    y0: &[Complex64],
    samples: &[f64],
    opts: &OdeOptions,
) -> Result<Vec<Vec<Complex64>>, OdeError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let (t0, t1) = span;
    if !(t1 > t0) {
        return Err(OdeError::BadSpan);
    }
    let n = y0.len();
    if n == 0 {
        return Err(OdeError::EmptyState);
    }
    if samples.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::UnsortedSamples);
    }
    let span_slack = 1e-9 * (t1 - t0);
    for &s in samples {
        if s < t0 - span_slack || s > t1 + span_slack {
            return Err(OdeError::SampleOutOfSpan { sample: s, t0, t1 });
        }
    }

    let mut y = y0.to_vec();
    let mut k: [Vec<Complex64>; 7] = std::array::from_fn(|_| vec![CZERO; n]);
    let mut y_stage = vec![CZERO; n];
    let mut y_next = vec![CZERO; n];
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(samples.len());
    let mut si = 0;
    while si < samples.len() && samples[si] <= t0 {
        out.push(y.clone());
        si += 1;
    }

    let mut t = t0;
    rhs(t, &y, &mut k[0]);
    let mut h = initial_step(&mut rhs, t0, t1, &y, opts, &mut k, &mut y_stage);
    let mut steps = 0usize;
    let mut max_rejected = 0.0f64;
    let mut just_rejected = false;

    while t1 - t > 4.0 * f64::EPSILON * t1.abs().max(1.0) {
        if steps >= opts.max_steps {
            return Err(OdeError::TooManySteps {
                max_steps: opts.max_steps,
                t,
                max_local_error: max_rejected,
            });
        }
        steps += 1;
        h = h.min(t1 - t);

        for i in 0..n {
            y_stage[i] = y[i] + k[0][i] * (A21 * h);
        }
        rhs(t + C2 * h, &y_stage, &mut k[1]);
        for i in 0..n {
            y_stage[i] = y[i] + (k[0][i] * A31 + k[1][i] * A32) * h;
        }
        rhs(t + C3 * h, &y_stage, &mut k[2]);
        for i in 0..n {
            y_stage[i] = y[i] + (k[0][i] * A41 + k[1][i] * A42 + k[2][i] * A43) * h;
        }
        rhs(t + C4 * h, &y_stage, &mut k[3]);
        for i in 0..n {
            y_stage[i] =
                y[i] + (k[0][i] * A51 + k[1][i] * A52 + k[2][i] * A53 + k[3][i] * A54) * h;
        }
        rhs(t + C5 * h, &y_stage, &mut k[4]);
        for i in 0..n {
            y_stage[i] = y[i]
                + (k[0][i] * A61 + k[1][i] * A62 + k[2][i] * A63 + k[3][i] * A64 + k[4][i] * A65)
                    * h;
        }
        rhs(t + h, &y_stage, &mut k[5]);
        for i in 0..n {
            y_next[i] = y[i]
                + (k[0][i] * B1 + k[2][i] * B3 + k[3][i] * B4 + k[4][i] * B5 + k[5][i] * B6) * h;
        }
        rhs(t + h, &y_next, &mut k[6]);

        let mut err = 0.0;
        for i in 0..n {
            let e = (k[0][i] * E1
                + k[2][i] * E3
                + k[3][i] * E4
                + k[4][i] * E5
                + k[5][i] * E6
                + k[6][i] * E7)
                * h;
            let sc = opts.atol + opts.rtol * y[i].norm().max(y_next[i].norm());
            err += (e.norm() / sc).powi(2);
        }
        err = (err / n as f64).sqrt();

        if err <= 1.0 {
            let t_new = t + h;
            let sample_slack = 4.0 * f64::EPSILON * t_new.abs().max(h);
            if si < samples.len() && samples[si] <= t_new + sample_slack {
                // Build the quartic interpolant only when a sample lands in
                // this step.
                let mut rcont = vec![[CZERO; 5]; n];
                for i in 0..n {
                    let ydiff = y_next[i] - y[i];
                    let bspl = k[0][i] * h - ydiff;
                    rcont[i] = [
                        y[i],
                        ydiff,
                        bspl,
                        ydiff - k[6][i] * h - bspl,
                        (k[0][i] * D1
                            + k[2][i] * D3
                            + k[3][i] * D4
                            + k[4][i] * D5
                            + k[5][i] * D6
                            + k[6][i] * D7)
                            * h,
                    ];
                }
                while si < samples.len() && samples[si] <= t_new + sample_slack {
                    let theta = ((samples[si] - t) / h).clamp(0.0, 1.0);
                    let omt = 1.0 - theta;
                    let mut state = vec![CZERO; n];
                    for i in 0..n {
                        let [c1, c2, c3, c4, c5] = rcont[i];
                        state[i] = c1 + (c2 + (c3 + (c4 + c5 * omt) * theta) * omt) * theta;
                    }
                    out.push(state);
                    si += 1;
                }
            }
            k.swap(0, 6);
            std::mem::swap(&mut y, &mut y_next);
            t = t_new;
            let facmax = if just_rejected { 1.0 } else { 10.0 };
            h *= (0.9 * err.max(1e-30).powf(-0.2)).clamp(0.2, facmax);
            just_rejected = false;
        } else {
            max_rejected = max_rejected.max(err);
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            just_rejected = true;
            if h < 16.0 * f64::EPSILON * t.abs().max(1.0) {
                return Err(OdeError::StepUnderflow {
                    t,
                    h,
                    local_error: err,
                });
            }
        }
    }

    // Samples pinned to t1 that rounding kept past the last step.
    while si < samples.len() {
        out.push(y.clone());
        si += 1;
    }
    Ok(out)
}

/// Hairer's starting-step heuristic: balance the size of the state against
/// its first and estimated second derivatives.
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    t1: f64,
    y0: &[Complex64],
    opts: &OdeOptions,
    k: &mut [Vec<Complex64>; 7],
    scratch: &mut [Complex64],
) -> f64
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = y0.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..y0.len() {
        let sc = opts.atol + opts.rtol * y0[i].norm();
        d0 += (y0[i].norm() / sc).powi(2);
        d1 += (k[0][i].norm() / sc).powi(2);
    }
    d0 = (d0 / n).sqrt();
    d1 = (d1 / n).sqrt();
    let mut h0 = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6 * (t1 - t0)
    } else {
        0.01 * d0 / d1
    };
    h0 = h0.min(t1 - t0);

    for i in 0..y0.len() {
        scratch[i] = y0[i] + k[0][i] * h0;
    }
    rhs(t0 + h0, scratch, &mut k[1]);
    let mut d2 = 0.0;
    for i in 0..y0.len() {
        let sc = opts.atol + opts.rtol * y0[i].norm();
        d2 += ((k[1][i] - k[0][i]).norm() / sc).powi(2);
    }
    d2 = (d2 / n).sqrt() / h0;

    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 {
        (h0 * 1e-3).max(1e-6 * (t1 - t0))
    } else {
        (0.01 / dm).powf(0.2)
    };
    (100.0 * h0).min(h1).min(t1 - t0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    #[test]
    fn scalar_exponential_decay() {
        let lambda = 2.0;
        let samples: Vec<f64> = (0..=30).map(|i| 3.0 * i as f64 / 30.0).collect();
        let states = integrate(
            |_t, y, dy| dy[0] = -y[0] * lambda,
            (0.0, 3.0),
            &[Complex64::new(1.0, 0.0)],
            &samples,
            &OdeOptions::default(),
        )
        .unwrap();
        for (t, s) in samples.iter().zip(&states) {
            let exact = (-lambda * t).exp();
            assert!(
                (s[0].re - exact).abs() < 1e-8,
                "t={t}: got {} want {exact}",
                s[0].re
            );
            assert!(s[0].im.abs() < 1e-10);
        }
    }

    #[test]
    fn complex_rotation_preserves_norm() {
        let omega = TAU * 3.0e6;
        let t_end = 2.0e-6;
        let samples: Vec<f64> = (0..=40).map(|i| t_end * i as f64 / 40.0).collect();
        let states = integrate(
            |_t, y, dy| dy[0] = Complex64::new(0.0, omega) * y[0],
            (0.0, t_end),
            &[Complex64::new(1.0, 0.0)],
            &samples,
            &OdeOptions::default(),
        )
        .unwrap();
        for (t, s) in samples.iter().zip(&states) {
            assert!((s[0].norm() - 1.0).abs() < 1e-8, "norm drift at t={t}");
            let expected = Complex64::from_polar(1.0, omega * t);
            assert!((s[0] - expected).norm() < 1e-6, "phase error at t={t}");
        }
    }

    #[test]
    fn two_component_exchange_oscillates() {
        // c1' = -i g c2, c2' = -i g c1 has |c1(t)|^2 = cos^2(g t).
        let g = TAU * 0.5e6;
        let t_end = 3.0e-6;
        let samples: Vec<f64> = (0..=25).map(|i| t_end * i as f64 / 25.0).collect();
        let ig = Complex64::new(0.0, -g);
        let states = integrate(
            |_t, y, dy| {
                dy[0] = ig * y[1];
                dy[1] = ig * y[0];
            },
            (0.0, t_end),
            &[Complex64::new(1.0, 0.0), CZERO],
            &samples,
            &OdeOptions::default(),
        )
        .unwrap();
        for (t, s) in samples.iter().zip(&states) {
            let expected = (g * t).cos().powi(2);
            assert!(
                (s[0].norm_sqr() - expected).abs() < 1e-7,
                "t={t}: got {} want {expected}",
                s[0].norm_sqr()
            );
        }
    }

    #[test]
    fn dense_output_is_fifth_order_accurate() {
        // Irregular sample grid, nothing aligned with internal steps.
        let samples: Vec<f64> = (0..997).map(|i| 5.0 * (i as f64 / 996.0).powf(1.3)).collect();
        let states = integrate(
            |_t, y, dy| dy[0] = -y[0],
            (0.0, 5.0),
            &[Complex64::new(1.0, 0.0)],
            &samples,
            &OdeOptions::default(),
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (t, s) in samples.iter().zip(&states) {
            worst = worst.max((s[0].re - (-t).exp()).abs());
        }
        assert!(worst < 1e-7, "worst dense-output error {worst}");
    }

    #[test]
    fn step_budget_overrun_is_reported() {
        let opts = OdeOptions {
            max_steps: 5,
            ..OdeOptions::default()
        };
        let err = integrate(
            |t, y, dy| dy[0] = y[0] * Complex64::new(0.0, 1e9 * (1.0 + t)),
            (0.0, 1.0),
            &[Complex64::new(1.0, 0.0)],
            &[1.0],
            &opts,
        )
        .unwrap_err();
        match err {
            OdeError::TooManySteps { max_steps, .. } => assert_eq!(max_steps, 5),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let y0 = [Complex64::new(1.0, 0.0)];
        let f = |_t: f64, _y: &[Complex64], dy: &mut [Complex64]| dy[0] = CZERO;
        assert!(matches!(
            integrate(f, (1.0, 0.0), &y0, &[], &OdeOptions::default()),
            Err(OdeError::BadSpan)
        ));
        assert!(matches!(
            integrate(f, (0.0, 1.0), &[], &[], &OdeOptions::default()),
            Err(OdeError::EmptyState)
        ));
        assert!(matches!(
            integrate(f, (0.0, 1.0), &y0, &[0.5, 0.2], &OdeOptions::default()),
            Err(OdeError::UnsortedSamples)
        ));
        assert!(matches!(
            integrate(f, (0.0, 1.0), &y0, &[2.0], &OdeOptions::default()),
            Err(OdeError::SampleOutOfSpan { .. })
        ));
    }

    #[test]
    fn constant_state_passes_through() {
        let samples = [0.0, 0.25, 0.5, 1.0];
        let states = integrate(
            |_t, _y, dy| dy[0] = CZERO,
            (0.0, 1.0),
            &[Complex64::new(0.3, -0.4)],
            &samples,
            &OdeOptions::default(),
        )
        .unwrap();
        for s in &states {
            assert_eq!(s[0], Complex64::new(0.3, -0.4));
        }
    }

    #[test]
    fn endpoint_sample_is_exact_state() {
        let states = integrate(
            |_t, y, dy| dy[0] = -y[0],
            (0.0, 2.0),
            &[Complex64::new(1.0, 0.0)],
            &[0.0, 2.0],
            &OdeOptions::default(),
        )
        .unwrap();
        assert_eq!(states.len(), 2);
        assert!((states[1][0].re - (-2.0f64).exp()).abs() < 1e-9);
    }
}

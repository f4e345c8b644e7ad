//! Parameter estimation: exponential decay fits, multimode ring and
//! Fabry-Perot scan fits, and the TLS quality-factor saturation fit, all on
//! a damped least-squares core with deterministic multi-starts.

mod lm;

use thiserror::Error;

use crate::model::{
    ConvergenceStatus, DecayCurve, FitParameter, FitResult, FpCavitySpec, ScanData, Validate,
    Violation,
};
use crate::spectrum::SpectrumError;
use crate::wave;

use lm::{LmOptions, LmOutcome};

/// Modes summed on each side of the nearest comb line when evaluating the
/// multimode decay model.
pub const MODE_WINDOW: i64 = 10;

/// One model parameter: initial value, box bounds, and whether it is held.
#[derive(Debug, Clone)]
pub struct ParamSetting {
    pub name: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
    pub fixed: bool,
}

impl ParamSetting {
    pub fn new(name: &str, initial: f64, lower: f64, upper: f64) -> ParamSetting {
        ParamSetting {
            name: name.to_string(),
            initial,
            lower,
            upper,
            fixed: false,
        }
    }
}

/// Residual loss applied pointwise before squaring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    LeastSquares,
    /// Quadratic within `delta`, linear growth beyond; tames outliers.
    Huber { delta: f64 },
}

/// A configured minimization: parameters, loss, and iteration budget.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub parameters: Vec<ParamSetting>,
    pub loss: Loss,
    pub max_iter: usize,
    /// Deterministic multi-start count; start 0 is the unjittered guess.
    pub starts: usize,
}

impl FitProblem {
    /// Standard five-parameter ring problem around the given initial values.
    pub fn ring(init: &RingModelParams) -> FitProblem {
        FitProblem {
            parameters: vec![
                ParamSetting::new("gamma_0", init.gamma_0, init.gamma_0 / 1e3, init.gamma_0 * 1e3),
                ParamSetting::new("q", init.q, init.q / 10.0, init.q * 10.0),
                ParamSetting::new("g", init.g, init.g / 20.0, init.g * 20.0),
                ParamSetting::new("fsr", init.fsr, init.fsr / 2.0, init.fsr * 2.0),
                ParamSetting::new(
                    "f_offset",
                    init.f_offset,
                    init.f_offset - 0.75 * init.fsr,
                    init.f_offset + 0.75 * init.fsr,
                ),
            ],
            loss: Loss::LeastSquares,
            max_iter: 200,
            starts: 8,
        }
    }

    /// Standard five-parameter Fabry-Perot problem.
    pub fn fp(init: &FpModelParams) -> FitProblem {
        FitProblem {
            parameters: vec![
                ParamSetting::new("gamma_0", init.gamma_0, init.gamma_0 / 1e3, init.gamma_0 * 1e3),
                ParamSetting::new("g_scale", init.g_scale, init.g_scale / 100.0, init.g_scale * 100.0),
                ParamSetting::new(
                    "intrinsic_q",
                    init.intrinsic_q,
                    init.intrinsic_q / 10.0,
                    init.intrinsic_q * 10.0,
                ),
                ParamSetting::new("fsr", init.fsr, init.fsr / 2.0, init.fsr * 2.0),
                ParamSetting::new(
                    "f_anchor",
                    init.f_anchor,
                    init.f_anchor - 0.75 * init.fsr,
                    init.f_anchor + 0.75 * init.fsr,
                ),
            ],
            loss: Loss::LeastSquares,
            max_iter: 200,
            starts: 8,
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for p in &self.parameters {
            if !p.initial.is_finite() {
                v.push(Violation {
                    field: p.name.clone(),
                    message: "initial value must be finite".to_string(),
                });
            }
            if p.fixed {
                continue;
            }
            if !p.lower.is_finite() || !p.upper.is_finite() || !(p.lower < p.upper) {
                v.push(Violation {
                    field: p.name.clone(),
                    message: format!("bounds [{}, {}] must be finite and ordered", p.lower, p.upper),
                });
            } else if p.initial < p.lower || p.initial > p.upper {
                v.push(Violation {
                    field: p.name.clone(),
                    message: format!(
                        "initial {} outside bounds [{}, {}]",
                        p.initial, p.lower, p.upper
                    ),
                });
            }
        }
        if self.starts == 0 {
            v.push(Violation {
                field: "starts".to_string(),
                message: "at least one start required".to_string(),
            });
        }
        v
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// Marks a parameter fixed or free; returns false if the name is absent.
    pub fn set_fixed(&mut self, name: &str, fixed: bool) -> bool {
        match self.parameters.iter_mut().find(|p| p.name == name) {
            Some(p) => {
                p.fixed = fixed;
                true
            }
            None => false,
        }
    }

    /// Overrides a parameter's initial value, widening bounds to contain it.
    pub fn set_initial(&mut self, name: &str, value: f64) -> bool {
        match self.parameters.iter_mut().find(|p| p.name == name) {
            Some(p) => {
                p.initial = value;
                p.lower = p.lower.min(value);
                p.upper = p.upper.max(value);
                true
            }
            None => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid fit problem: {0}")]
    BadProblem(String),
    #[error("invalid data: {0}")]
    BadData(String),
    #[error("power span ratio {ratio:.3} covers less than two decades")]
    InsufficientSpan { ratio: f64 },
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Ring-resonator decay model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingModelParams {
    pub gamma_0: f64,
    pub q: f64,
    pub g: f64,
    pub fsr: f64,
    pub f_offset: f64,
}

impl RingModelParams {
    pub fn from_result(result: &FitResult) -> Option<RingModelParams> {
        Some(RingModelParams {
            gamma_0: result.parameter("gamma_0")?.value,
            q: result.parameter("q")?.value,
            g: result.parameter("g")?.value,
            fsr: result.parameter("fsr")?.value,
            f_offset: result.parameter("f_offset")?.value,
        })
    }
}

/// Fabry-Perot decay model parameters; shapes of g(f) and R(f) come from the
/// device description, these scale and place them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpModelParams {
    pub gamma_0: f64,
    pub g_scale: f64,
    pub intrinsic_q: f64,
    pub fsr: f64,
    pub f_anchor: f64,
}

impl FpModelParams {
    pub fn from_result(result: &FitResult) -> Option<FpModelParams> {
        Some(FpModelParams {
            gamma_0: result.parameter("gamma_0")?.value,
            g_scale: result.parameter("g_scale")?.value,
            intrinsic_q: result.parameter("intrinsic_q")?.value,
            fsr: result.parameter("fsr")?.value,
            f_anchor: result.parameter("f_anchor")?.value,
        })
    }
}

/// Qubit decay rate at `f` against a uniform ring comb, summing the
/// `MODE_WINDOW` nearest modes on each side.
pub fn ring_model_rate(f: f64, p: &RingModelParams) -> f64 {
    let m0 = ((f - p.f_offset) / p.fsr).round() as i64;
    let mut rate = p.gamma_0;
    for m in (m0 - MODE_WINDOW)..=(m0 + MODE_WINDOW) {
        let fm = p.f_offset + m as f64 * p.fsr;
        if fm <= 0.0 {
            continue;
        }
        let k = fm / p.q;
        let d = f - fm;
        rate += 4.0 * p.g * p.g * k / (4.0 * d * d + k * k);
    }
    rate
}

/// Fabry-Perot decay model with the device's mirror and IDT responses
/// sampled onto a precomputed grid, so repeated evaluation during fitting
/// stays cheap.
pub struct FpRateModel {
    spec: FpCavitySpec,
    grid_lo: f64,
    grid_step: f64,
    retention: Vec<f64>,
}

impl FpRateModel {
    /// Prepares the model for scan frequencies inside `band`, with mirror
    /// retention sampled out to `pad` beyond each edge.
    pub fn new(spec: &FpCavitySpec, band: (f64, f64), pad: f64) -> Result<FpRateModel, FitError> {
        let (lo, hi) = band;
        if !(lo > 0.0 && hi > lo) {
            return Err(FitError::BadData(format!("bad model band [{lo}, {hi}]")));
        }
        let grid_lo = (lo - pad).max(1.0);
        let grid_hi = hi + pad;
        let n = 2048;
        let grid_step = (grid_hi - grid_lo) / (n - 1) as f64;
        let mut retention = Vec::with_capacity(n);
        for i in 0..n {
            let f = grid_lo + grid_step * i as f64;
            retention.push(wave::round_trip_retention(
                f,
                &spec.left_mirror,
                &spec.right_mirror,
                &spec.material,
            ).map_err(SpectrumError::from)?);
        }
        Ok(FpRateModel {
            spec: spec.clone(),
            grid_lo,
            grid_step,
            retention,
        })
    }

    fn retention_at(&self, f: f64) -> f64 {
        let x = (f - self.grid_lo) / self.grid_step;
        if x <= 0.0 {
            return self.retention[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.retention.len() {
            return *self.retention.last().unwrap();
        }
        let t = x - i as f64;
        self.retention[i] * (1.0 - t) + self.retention[i + 1] * t
    }

    /// Decay rate at qubit frequency `f` for the given model parameters.
    pub fn rate(&self, f: f64, p: &FpModelParams) -> f64 {
        let m0 = ((f - p.f_anchor) / p.fsr).round() as i64;
        let mut rate = p.gamma_0;
        for m in (m0 - MODE_WINDOW)..=(m0 + MODE_WINDOW) {
            let fm = p.f_anchor + m as f64 * p.fsr;
            if fm <= 0.0 {
                continue;
            }
            let r = self.retention_at(fm).max(1e-300);
            let k = p.fsr * (-r.ln()) / std::f64::consts::TAU + fm / p.intrinsic_q;
            let g = p.g_scale * wave::coupling_profile(fm, &self.spec.idt, &self.spec.material);
            let d = f - fm;
            rate += 4.0 * g * g * k / (4.0 * d * d + k * k);
        }
        rate
    }
}

fn huber(v: f64, delta: f64) -> f64 {
    if v.abs() <= delta {
        v
    } else {
        v.signum() * (delta * (2.0 * v.abs() - delta)).sqrt()
    }
}

fn apply_loss(r: &mut [f64], loss: &Loss) {
    if let Loss::Huber { delta } = loss {
        for v in r.iter_mut() {
            *v = huber(*v, *delta);
        }
    }
}

/// Relative jitter is applied to starts 1.. as a fraction of each free
/// parameter's box width, from a fixed table.
const JITTER_AMPLITUDE: [f64; 8] = [0.0, 0.04, 0.04, 0.10, 0.10, 0.18, 0.18, 0.07];
const JITTER_PATTERN: [f64; 4] = [1.0, -1.0, 0.5, -0.75];

fn jittered(params: &[ParamSetting], start: usize) -> Vec<ParamSetting> {
    if start == 0 {
        return params.to_vec();
    }
    params
        .iter()
        .enumerate()
        .map(|(j, p)| {
            if p.fixed {
                return p.clone();
            }
            let amp = JITTER_AMPLITUDE[start % 8] * JITTER_PATTERN[(start + j) % 4] * 0.25;
            // Boxes spanning decades get multiplicative jitter; a linear
            // offset would pin every start against the upper bound.
            let wide = p.lower > 0.0 && p.upper / p.lower >= 100.0;
            let proposal = if wide {
                p.initial * 10f64.powf(amp * (p.upper / p.lower).log10())
            } else {
                p.initial + amp * (p.upper - p.lower)
            };
            ParamSetting {
                initial: proposal.clamp(p.lower, p.upper),
                ..p.clone()
            }
        })
        .collect()
}

fn multistart(
    residuals: &dyn Fn(&[f64]) -> Vec<f64>,
    problem: &FitProblem,
) -> LmOutcome {
    let opts = LmOptions {
        max_iter: problem.max_iter,
        ..LmOptions::default()
    };
    let mut best: Option<LmOutcome> = None;
    for s in 0..problem.starts {
        let params = jittered(&problem.parameters, s);
        let out = lm::minimize(residuals, &params, &opts);
        let better = match &best {
            None => true,
            Some(b) => out.residual_norm.is_finite() && out.residual_norm < b.residual_norm,
        };
        if better {
            best = Some(out);
        }
    }
    best.expect("starts >= 1 validated")
}

fn initial_vector(problem: &FitProblem) -> Vec<f64> {
    problem.parameters.iter().map(|p| p.initial).collect()
}

fn cost_at(residuals: &dyn Fn(&[f64]) -> Vec<f64>, values: &[f64]) -> f64 {
    residuals(values).iter().map(|r| r * r).sum()
}

/// Spacing and position of the scan's rate comb, read off the data: local
/// maxima above a prominence threshold, spacing from the median inter-peak
/// gap, position from the tallest peak. None when fewer than two peaks
/// stand out of the floor.
fn comb_seed(scan: &ScanData) -> Option<(f64, f64)> {
    let r = &scan.rates;
    if r.len() < 8 {
        return None;
    }
    let mut sorted = r.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[sorted.len() / 2];
    let top = sorted[sorted.len() - 1];
    if !(top > floor) {
        return None;
    }
    let threshold = floor + 0.25 * (top - floor);
    // One peak per contiguous above-threshold run; pointwise maxima would
    // count every noise wiggle along a peak flank.
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    let mut i = 0;
    while i < r.len() {
        if r[i] > threshold {
            let mut best = i;
            while i < r.len() && r[i] > threshold {
                if r[i] > r[best] {
                    best = i;
                }
                i += 1;
            }
            peaks.push((scan.frequencies[best], r[best]));
        } else {
            i += 1;
        }
    }
    if peaks.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = peaks.windows(2).map(|w| w[1].0 - w[0].0).collect();
    gaps.sort_by(f64::total_cmp);
    let spacing = gaps[gaps.len() / 2];
    let anchor = peaks
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(f, _)| f)?;
    Some((spacing, anchor))
}

/// Replaces the comb-spacing and comb-position initials with values read off
/// the data when that starting point has lower cost than the caller's.
/// Rescues fits whose initial comb is misaligned with the observed peaks,
/// which LM alone cannot recover from.
fn seed_comb_problem(
    problem: &FitProblem,
    scan: &ScanData,
    spacing_name: &str,
    anchor_name: &str,
    residuals: &dyn Fn(&[f64]) -> Vec<f64>,
) -> FitProblem {
    let Some((spacing, anchor)) = comb_seed(scan) else {
        return problem.clone();
    };
    let (Some(si), Some(ai)) = (problem.index_of(spacing_name), problem.index_of(anchor_name))
    else {
        return problem.clone();
    };
    if problem.parameters[si].fixed || problem.parameters[ai].fixed {
        return problem.clone();
    }
    let mut candidate = problem.clone();
    let (s_lo, s_hi) = (candidate.parameters[si].lower, candidate.parameters[si].upper);
    let spacing = spacing.clamp(s_lo, s_hi);
    candidate.parameters[si].initial = spacing;
    // Any comb line is an equivalent anchor, so translate the tallest peak
    // by whole spacings into the anchor's box before clamping.
    let (a_lo, a_hi) = (candidate.parameters[ai].lower, candidate.parameters[ai].upper);
    let mut a = anchor;
    if spacing > 0.0 {
        while a > a_hi {
            a -= spacing;
        }
        while a < a_lo {
            a += spacing;
        }
    }
    candidate.parameters[ai].initial = a.clamp(a_lo, a_hi);
    if cost_at(residuals, &initial_vector(&candidate))
        < cost_at(residuals, &initial_vector(problem))
    {
        candidate
    } else {
        problem.clone()
    }
}

fn to_fit_result(problem: &FitProblem, out: LmOutcome) -> FitResult {
    let parameters = problem
        .parameters
        .iter()
        .enumerate()
        .map(|(i, p)| FitParameter {
            name: p.name.clone(),
            value: out.values[i],
            stderr: out.stderr[i],
            fixed: p.fixed,
            at_bound: out.at_bound[i],
        })
        .collect();
    FitResult {
        parameters,
        residual_norm: out.residual_norm,
        status: out.status,
    }
}

fn scan_weights(scan: &ScanData) -> Result<Vec<f64>, FitError> {
    if scan.frequencies.is_empty() || scan.frequencies.len() != scan.rates.len() {
        return Err(FitError::BadData(
            "scan must have matching, nonempty frequency and rate columns".to_string(),
        ));
    }
    match &scan.uncertainties {
        None => Ok(vec![1.0; scan.rates.len()]),
        Some(u) => {
            if u.len() != scan.rates.len() {
                return Err(FitError::BadData(
                    "uncertainty column length differs from data".to_string(),
                ));
            }
            if u.iter().any(|&s| !(s > 0.0)) {
                return Err(FitError::BadData(
                    "uncertainties must be positive".to_string(),
                ));
            }
            Ok(u.iter().map(|s| 1.0 / s).collect())
        }
    }
}

fn require_params(problem: &FitProblem, names: &[&str]) -> Result<Vec<usize>, FitError> {
    let violations = problem.validate();
    if !violations.is_empty() {
        return Err(FitError::BadProblem(
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    names
        .iter()
        .map(|n| {
            problem
                .index_of(n)
                .ok_or_else(|| FitError::BadProblem(format!("missing parameter '{n}'")))
        })
        .collect()
}

/// Fits the uniform-comb ring model to a decay-rate scan. Free parameters:
/// gamma_0, q, g, fsr, f_offset.
pub fn fit_ring_model(scan: &ScanData, problem: &FitProblem) -> Result<FitResult, FitError> {
    let idx = require_params(problem, &["gamma_0", "q", "g", "fsr", "f_offset"])?;
    let w = scan_weights(scan)?;
    let freqs = scan.frequencies.clone();
    let rates = scan.rates.clone();
    let loss = problem.loss;
    let residuals = move |full: &[f64]| -> Vec<f64> {
        let p = RingModelParams {
            gamma_0: full[idx[0]],
            q: full[idx[1]],
            g: full[idx[2]],
            fsr: full[idx[3]],
            f_offset: full[idx[4]],
        };
        let mut r: Vec<f64> = freqs
            .iter()
            .zip(&rates)
            .zip(&w)
            .map(|((&f, &y), &wi)| (ring_model_rate(f, &p) - y) * wi)
            .collect();
        apply_loss(&mut r, &loss);
        r
    };
    let seeded = seed_comb_problem(problem, scan, "fsr", "f_offset", &residuals);
    Ok(to_fit_result(&seeded, multistart(&residuals, &seeded)))
}

/// Fits the Fabry-Perot model to a decay-rate scan, taking the mirror and
/// IDT shapes from the device description. Free parameters: gamma_0,
/// g_scale, intrinsic_q, fsr, f_anchor.
pub fn fit_fp_model(
    scan: &ScanData,
    spec: &FpCavitySpec,
    problem: &FitProblem,
) -> Result<FitResult, FitError> {
    let idx = require_params(
        problem,
        &["gamma_0", "g_scale", "intrinsic_q", "fsr", "f_anchor"],
    )?;
    let w = scan_weights(scan)?;
    let fsr_cap = problem.parameters[idx[3]].upper;
    let band = (
        *scan.frequencies.first().unwrap(),
        *scan.frequencies.last().unwrap(),
    );
    let model = FpRateModel::new(spec, band, (MODE_WINDOW + 1) as f64 * fsr_cap)?;
    let freqs = scan.frequencies.clone();
    let rates = scan.rates.clone();
    let loss = problem.loss;
    let residuals = move |full: &[f64]| -> Vec<f64> {
        let p = FpModelParams {
            gamma_0: full[idx[0]],
            g_scale: full[idx[1]],
            intrinsic_q: full[idx[2]],
            fsr: full[idx[3]],
            f_anchor: full[idx[4]],
        };
        let mut r: Vec<f64> = freqs
            .iter()
            .zip(&rates)
            .zip(&w)
            .map(|((&f, &y), &wi)| (model.rate(f, &p) - y) * wi)
            .collect();
        apply_loss(&mut r, &loss);
        r
    };
    let seeded = seed_comb_problem(problem, scan, "fsr", "f_anchor", &residuals);
    Ok(to_fit_result(&seeded, multistart(&residuals, &seeded)))
}

/// Fits A·e^(−t/T1) + B to an excited-population decay. Parameters are
/// named amplitude, t1, offset; the initial guess is log-linear.
pub fn fit_exponential(curve: &DecayCurve) -> Result<FitResult, FitError> {
    let violations = curve.validate();
    if !violations.is_empty() {
        return Err(FitError::BadData(
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let span = curve.times.last().unwrap() - curve.times[0];
    let pmin = curve.populations.iter().cloned().fold(f64::INFINITY, f64::min);
    let pmax = curve
        .populations
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = pmax - pmin;

    let make_params = |amplitude: f64, t1: f64, offset: f64| -> Vec<ParamSetting> {
        vec![
            ParamSetting::new("amplitude", amplitude.clamp(-10.0, 10.0), -10.0, 10.0),
            ParamSetting::new(
                "t1",
                t1.clamp(span * 1e-3, span * 1e3),
                span * 1e-3,
                span * 1e3,
            ),
            ParamSetting::new("offset", offset.clamp(-2.0, 2.0), -2.0, 2.0),
        ]
    };

    let problem_of = |params: Vec<ParamSetting>| FitProblem {
        parameters: params,
        loss: Loss::LeastSquares,
        max_iter: 200,
        starts: 1,
    };

    if range < 1e-12 {
        // No decay to fit: T1 is unidentifiable.
        let problem = problem_of(make_params(0.0, span, pmin));
        let values: Vec<f64> = problem.parameters.iter().map(|p| p.initial).collect();
        let parameters = problem
            .parameters
            .iter()
            .zip(&values)
            .map(|(p, &v)| FitParameter {
                name: p.name.clone(),
                value: v,
                stderr: None,
                fixed: false,
                at_bound: false,
            })
            .collect();
        return Ok(FitResult {
            parameters,
            residual_norm: 0.0,
            status: ConvergenceStatus::Singular,
        });
    }

    // Log-linear initial guess on P - B with B slightly under the floor.
    let b0 = pmin - 0.05 * range;
    let pts: Vec<(f64, f64)> = curve
        .times
        .iter()
        .zip(&curve.populations)
        .filter(|(_, &p)| p - b0 > 1e-12)
        .map(|(&t, &p)| (t, (p - b0).ln()))
        .collect();
    let (mut a0, mut t1_0) = (range, span / 2.0);
    if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        if denom > 0.0 {
            let slope = (n * sxy - sx * sy) / denom;
            let intercept = (sy - slope * sx) / n;
            if slope < 0.0 {
                t1_0 = -1.0 / slope;
                a0 = intercept.exp();
            }
        }
    }

    let problem = problem_of(make_params(a0, t1_0, b0));
    let times = curve.times.clone();
    let pops = curve.populations.clone();
    let residuals = move |p: &[f64]| -> Vec<f64> {
        times
            .iter()
            .zip(&pops)
            .map(|(&t, &y)| p[0] * (-t / p[1]).exp() + p[2] - y)
            .collect()
    };
    Ok(to_fit_result(&problem, multistart(&residuals, &problem)))
}

/// TLS saturation model for the quality factor at phonon occupation `n`.
pub fn tls_model_q(n: f64, q_tls: f64, n_c: f64, beta: f64, q_other: f64) -> f64 {
    1.0 / ((1.0 / q_tls) * (1.0 + n / n_c).powf(-beta) + 1.0 / q_other)
}

/// Fits the TLS saturation law 1/Q(n) = (1/Q_TLS)(1 + n/n_c)^(−β) + 1/Q_other
/// to measured quality factors over a power sweep. Parameters: q_tls, n_c,
/// beta, q_other.
pub fn tls_q_fit(powers: &[f64], qs: &[f64]) -> Result<FitResult, FitError> {
    if powers.len() != qs.len() {
        return Err(FitError::BadData(
            "power and Q columns differ in length".to_string(),
        ));
    }
    if powers.len() < 4 {
        return Err(FitError::BadData(format!(
            "need at least 4 points, got {}",
            powers.len()
        )));
    }
    if powers.iter().any(|&n| !(n > 0.0)) || qs.iter().any(|&q| !(q > 0.0)) {
        return Err(FitError::BadData(
            "powers and quality factors must be positive".to_string(),
        ));
    }
    let n_min = powers.iter().cloned().fold(f64::INFINITY, f64::min);
    let n_max = powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio = n_max / n_min;
    if ratio < 100.0 {
        return Err(FitError::InsufficientSpan { ratio });
    }
    let q_min = qs.iter().cloned().fold(f64::INFINITY, f64::min);
    let q_max = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let q_other0 = q_max * 1.05;
    let inv_tls0 = (1.0 / q_min - 1.0 / q_other0).max(1.0 / (q_max * 100.0));
    let q_tls0 = 1.0 / inv_tls0;

    // Initial n_c from where the TLS part of 1/Q falls to half its
    // low-power value; at beta = 0.5 that happens near 3 n_c.
    let mut pairs: Vec<(f64, f64)> = powers.iter().cloned().zip(qs.iter().cloned()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let excess = |q: f64| 1.0 / q - 1.0 / q_other0;
    let mut n_half = (n_min * n_max).sqrt();
    for w in pairs.windows(2) {
        if excess(w[0].1) >= 0.5 * inv_tls0 && excess(w[1].1) < 0.5 * inv_tls0 {
            n_half = (w[0].0 * w[1].0).sqrt();
            break;
        }
    }
    let n_c0 = (n_half / 3.0).clamp(n_min / 1e3, n_max * 1e3);

    let problem = FitProblem {
        parameters: vec![
            ParamSetting::new("q_tls", q_tls0, q_tls0 / 50.0, q_tls0 * 50.0),
            ParamSetting::new("n_c", n_c0, n_min / 1e3, n_max * 1e3),
            ParamSetting::new("beta", 0.5, 0.05, 2.0),
            ParamSetting::new("q_other", q_other0, q_min / 10.0, q_max * 100.0),
        ],
        loss: Loss::LeastSquares,
        max_iter: 200,
        starts: 8,
    };
    let ns = powers.to_vec();
    let data = qs.to_vec();
    let residuals = move |p: &[f64]| -> Vec<f64> {
        ns.iter()
            .zip(&data)
            .map(|(&n, &q)| tls_model_q(n, p[0], p[1], p[2], p[3]) - q)
            .collect()
    };
    Ok(to_fit_result(&problem, multistart(&residuals, &problem)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::synth;
    use approx::assert_relative_eq;

    fn reference_ring() -> RingModelParams {
        RingModelParams {
            gamma_0: 1.47e4,
            q: 1.7e3,
            g: 3.6e5,
            fsr: 7.1e6,
            f_offset: 3.867e9,
        }
    }

    fn ring_scan_grid(p: &RingModelParams, half_fsr_spans: f64, n: usize) -> Vec<f64> {
        let lo = p.f_offset - half_fsr_spans * p.fsr;
        let hi = p.f_offset + half_fsr_spans * p.fsr;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    fn clean_ring_scan(p: &RingModelParams, half_spans: f64, n: usize) -> ScanData {
        let freqs = ring_scan_grid(p, half_spans, n);
        let rates = freqs.iter().map(|&f| ring_model_rate(f, p)).collect();
        ScanData {
            frequencies: freqs,
            rates,
            uncertainties: None,
        }
    }

    #[test]
    fn exponential_recovers_clean_t1() {
        let t1 = 4.70e-6;
        let times: Vec<f64> = (0..200).map(|i| 5.0 * t1 * i as f64 / 199.0).collect();
        let populations = times.iter().map(|&t| (-t / t1).exp()).collect();
        let curve = DecayCurve {
            times,
            populations,
        };
        let result = fit_exponential(&curve).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("t1"), t1, max_relative = 1e-3);
        assert_relative_eq!(result.value("amplitude"), 1.0, max_relative = 1e-3);
        assert!(result.value("offset").abs() < 1e-3);
        assert!(result.parameter("t1").unwrap().stderr.is_some());
    }

    #[test]
    fn exponential_constant_curve_is_singular() {
        let times: Vec<f64> = (0..20).map(|i| i as f64 * 1e-7).collect();
        let curve = DecayCurve {
            populations: vec![0.5; times.len()],
            times,
        };
        let result = fit_exponential(&curve).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Singular);
    }

    #[test]
    fn exponential_noisy_recovery_within_tolerance() {
        let t1 = 0.35e-6;
        let times: Vec<f64> = (0..200).map(|i| 5.0 * t1 * i as f64 / 199.0).collect();
        let clean: Vec<f64> = times.iter().map(|&t| (-t / t1).exp()).collect();
        let curve = DecayCurve {
            populations: synth::add_population_noise(&clean, 0.01, 11),
            times,
        };
        let result = fit_exponential(&curve).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("t1"), t1, max_relative = 0.03);
    }

    #[test]
    fn exponential_rejects_short_curves() {
        let curve = DecayCurve {
            times: vec![0.0, 1e-6, 2e-6],
            populations: vec![1.0, 0.5, 0.25],
        };
        assert!(matches!(fit_exponential(&curve), Err(FitError::BadData(_))));
    }

    #[test]
    fn ring_noise_free_scan_is_self_consistent() {
        let truth = reference_ring();
        let scan = clean_ring_scan(&truth, 1.5, 400);
        let problem = FitProblem::ring(&truth);
        let result = fit_ring_model(&scan, &problem).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        let data_norm: f64 = scan.rates.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(
            result.residual_norm < 1e-10 * data_norm,
            "residual {} vs data norm {data_norm}",
            result.residual_norm
        );
        for name in ["gamma_0", "q", "g", "fsr"] {
            let got = result.value(name);
            let want = match name {
                "gamma_0" => truth.gamma_0,
                "q" => truth.q,
                "g" => truth.g,
                _ => truth.fsr,
            };
            assert_relative_eq!(got, want, max_relative = 1e-3);
        }
    }

    #[test]
    fn ring_noisy_round_trip_recovers_parameters() {
        let truth = reference_ring();
        let mut scan = clean_ring_scan(&truth, 1.5, 400);
        scan.rates = synth::apply_multiplicative_noise(&scan.rates, 0.01, 42);
        let problem = FitProblem::ring(&truth);
        let result = fit_ring_model(&scan, &problem).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("gamma_0"), truth.gamma_0, max_relative = 0.05);
        assert_relative_eq!(result.value("q"), truth.q, max_relative = 0.05);
        assert_relative_eq!(result.value("g"), truth.g, max_relative = 0.05);
        assert_relative_eq!(result.value("fsr"), truth.fsr, max_relative = 0.05);
    }

    #[test]
    fn ring_fit_recovers_from_misaligned_comb_initials() {
        let truth = reference_ring();
        let mut scan = clean_ring_scan(&truth, 2.0, 500);
        scan.rates = synth::apply_multiplicative_noise(&scan.rates, 0.01, 17);
        // A 40% spacing error plus an offset shift puts the starting comb in
        // a basin gradient descent cannot leave on its own.
        let start = RingModelParams {
            fsr: truth.fsr * 1.4,
            f_offset: truth.f_offset + 0.4 * truth.fsr,
            ..truth
        };
        let result = fit_ring_model(&scan, &FitProblem::ring(&start)).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("fsr"), truth.fsr, max_relative = 0.05);
        assert_relative_eq!(result.value("g"), truth.g, max_relative = 0.05);
        assert_relative_eq!(result.value("q"), truth.q, max_relative = 0.05);
    }

    #[test]
    fn ring_fit_is_deterministic() {
        let truth = reference_ring();
        let mut scan = clean_ring_scan(&truth, 1.5, 240);
        scan.rates = synth::apply_multiplicative_noise(&scan.rates, 0.01, 3);
        let problem = FitProblem::ring(&truth);
        let a = fit_ring_model(&scan, &problem).unwrap();
        let b = fit_ring_model(&scan, &problem).unwrap();
        for (pa, pb) in a.parameters.iter().zip(&b.parameters) {
            assert_eq!(pa.value, pb.value);
            assert_eq!(pa.stderr, pb.stderr);
        }
        assert_eq!(a.residual_norm, b.residual_norm);
    }

    #[test]
    fn ring_fit_respects_bounds_and_never_worsens_residual() {
        let truth = reference_ring();
        let mut scan = clean_ring_scan(&truth, 1.5, 300);
        scan.rates = synth::apply_multiplicative_noise(&scan.rates, 0.02, 9);
        let mut problem = FitProblem::ring(&truth);
        // Start deliberately off.
        problem.set_initial("q", truth.q * 1.4);
        problem.set_initial("g", truth.g * 0.7);
        let result = fit_ring_model(&scan, &problem).unwrap();
        for p in &result.parameters {
            let setting = &problem.parameters[problem.index_of(&p.name).unwrap()];
            assert!(p.value >= setting.lower && p.value <= setting.upper);
        }
        let init = RingModelParams {
            q: truth.q * 1.4,
            g: truth.g * 0.7,
            ..truth
        };
        let init_norm: f64 = scan
            .frequencies
            .iter()
            .zip(&scan.rates)
            .map(|(&f, &y)| (ring_model_rate(f, &init) - y).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(result.residual_norm <= init_norm);
    }

    #[test]
    fn ring_fit_flags_unidentifiable_fsr() {
        let truth = reference_ring();
        // Scan covers half an FSR: a single resonance, no comb spacing info.
        let mut scan = clean_ring_scan(&truth, 0.25, 150);
        scan.rates = synth::apply_multiplicative_noise(&scan.rates, 0.005, 5);
        let problem = FitProblem::ring(&truth);
        let result = fit_ring_model(&scan, &problem).unwrap();
        let fsr = result.parameter("fsr").unwrap();
        let flagged = result.status != ConvergenceStatus::Converged
            || fsr.at_bound
            || fsr.stderr.map_or(true, |s| s > 0.5 * fsr.value.abs());
        assert!(
            flagged,
            "short scan should leave fsr unidentifiable: {fsr:?}, status {}",
            result.status
        );
    }

    #[test]
    fn huber_loss_resists_outliers() {
        let truth = reference_ring();
        let mut scan = clean_ring_scan(&truth, 1.5, 300);
        // One corrupted point away from any resonance.
        scan.rates[20] += 8.0 * truth.gamma_0;
        let mut problem = FitProblem::ring(&truth);
        problem.set_initial("gamma_0", truth.gamma_0 * 2.0);
        let ls = fit_ring_model(&scan, &problem).unwrap();
        problem.loss = Loss::Huber { delta: 1e3 };
        let hb = fit_ring_model(&scan, &problem).unwrap();
        let err = |r: &FitResult| (r.value("gamma_0") - truth.gamma_0).abs();
        assert!(
            err(&hb) < err(&ls),
            "huber {} vs least-squares {}",
            err(&hb),
            err(&ls)
        );
        assert_relative_eq!(hb.value("gamma_0"), truth.gamma_0, max_relative = 0.02);
    }

    #[test]
    fn fit_problem_validation_catches_bad_bounds() {
        let mut problem = FitProblem::ring(&reference_ring());
        problem.parameters[0].lower = f64::NAN;
        assert!(!problem.validate().is_empty());
        let mut p2 = FitProblem::ring(&reference_ring());
        p2.parameters[1].initial = p2.parameters[1].upper * 2.0;
        assert!(!p2.validate().is_empty());
        let scan = clean_ring_scan(&reference_ring(), 1.5, 50);
        assert!(matches!(
            fit_ring_model(&scan, &p2),
            Err(FitError::BadProblem(_))
        ));
    }

    fn fp_truth_and_model() -> (FpModelParams, FpRateModel, Vec<f64>) {
        let device = crate::spectrum::tests::fp_device();
        let truth = FpModelParams {
            gamma_0: 3.3e4,
            g_scale: 1.0,
            intrinsic_q: 2.2e3,
            fsr: 6.4e6,
            f_anchor: 5.25e9,
        };
        let lo = 5.21e9;
        let hi = 5.29e9;
        let n = 400;
        let freqs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let model = FpRateModel::new(
            &device,
            (lo, hi),
            (MODE_WINDOW + 1) as f64 * truth.fsr * 2.0,
        )
        .unwrap();
        (truth, model, freqs)
    }

    #[test]
    fn fp_noise_free_scan_is_self_consistent() {
        let (truth, model, freqs) = fp_truth_and_model();
        let device = crate::spectrum::tests::fp_device();
        let rates: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &truth)).collect();
        let scan = ScanData {
            frequencies: freqs,
            rates,
            uncertainties: None,
        };
        let problem = FitProblem::fp(&truth);
        let result = fit_fp_model(&scan, &device, &problem).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        let data_norm: f64 = scan.rates.iter().map(|r| r * r).sum::<f64>().sqrt();
        assert!(result.residual_norm < 1e-10 * data_norm);
        assert_relative_eq!(result.value("fsr"), truth.fsr, max_relative = 1e-3);
    }

    #[test]
    fn fp_noisy_round_trip_recovers_parameters() {
        let (truth, model, freqs) = fp_truth_and_model();
        let device = crate::spectrum::tests::fp_device();
        let clean: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &truth)).collect();
        let scan = ScanData {
            frequencies: freqs,
            rates: synth::apply_multiplicative_noise(&clean, 0.01, 17),
            uncertainties: None,
        };
        let problem = FitProblem::fp(&truth);
        let result = fit_fp_model(&scan, &device, &problem).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("fsr"), truth.fsr, max_relative = 0.02);
        assert_relative_eq!(
            result.value("intrinsic_q"),
            truth.intrinsic_q,
            max_relative = 0.05
        );
        assert_relative_eq!(result.value("g_scale"), truth.g_scale, max_relative = 0.05);
        // The inter-mode floor is dominated by mode tails, so the additive
        // offset is only loosely pinned under noise.
        assert_relative_eq!(result.value("gamma_0"), truth.gamma_0, max_relative = 0.5);
    }

    #[test]
    fn fp_null_model_with_zero_coupling_is_flat() {
        let (truth, model, freqs) = fp_truth_and_model();
        let device = crate::spectrum::tests::fp_device();
        let rates: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &truth)).collect();
        let mean: f64 = rates.iter().sum::<f64>() / rates.len() as f64;
        let scan = ScanData {
            frequencies: freqs.clone(),
            rates,
            uncertainties: None,
        };
        let mut problem = FitProblem::fp(&truth);
        let gs = problem.index_of("g_scale").unwrap();
        problem.parameters[gs].initial = 0.0;
        problem.parameters[gs].fixed = true;
        let result = fit_fp_model(&scan, &device, &problem).unwrap();
        let fitted = FpModelParams::from_result(&result).unwrap();
        assert_eq!(fitted.g_scale, 0.0);
        let out: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &fitted)).collect();
        let spread = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - out.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(spread, 0.0);
        // The flat level lands on the scan average.
        assert_relative_eq!(fitted.gamma_0, mean, max_relative = 0.05);
    }

    #[test]
    fn fp_fitted_model_peaks_follow_the_comb() {
        let (truth, model, freqs) = fp_truth_and_model();
        let device = crate::spectrum::tests::fp_device();
        let clean: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &truth)).collect();
        let scan = ScanData {
            frequencies: freqs.clone(),
            rates: synth::apply_multiplicative_noise(&clean, 0.01, 23),
            uncertainties: None,
        };
        let problem = FitProblem::fp(&truth);
        let result = fit_fp_model(&scan, &device, &problem).unwrap();
        let fitted = FpModelParams::from_result(&result).unwrap();
        let out: Vec<f64> = freqs.iter().map(|&f| model.rate(f, &fitted)).collect();
        let step = freqs[1] - freqs[0];
        for i in 1..out.len() - 1 {
            if out[i] > out[i - 1] && out[i] > out[i + 1] {
                // Every interior peak sits on a comb line of the generator.
                let m = ((freqs[i] - truth.f_anchor) / truth.fsr).round();
                let comb = truth.f_anchor + m * truth.fsr;
                assert!(
                    (freqs[i] - comb).abs() <= step,
                    "peak at {} vs comb line {comb}",
                    freqs[i]
                );
            }
        }
    }

    #[test]
    fn tls_round_trip_and_endpoints() {
        let q_tls = 2.8e4;
        let n_c = 10.0;
        let beta = 0.5;
        let q_other = 2.1e4;
        let powers: Vec<f64> = (0..24).map(|i| 10f64.powf(-1.0 + 8.0 * i as f64 / 23.0)).collect();
        let clean: Vec<f64> = powers
            .iter()
            .map(|&n| tls_model_q(n, q_tls, n_c, beta, q_other))
            .collect();
        let qs = synth::apply_multiplicative_noise(&clean, 0.02, 31);
        let result = tls_q_fit(&powers, &qs).unwrap();
        assert_eq!(result.status, ConvergenceStatus::Converged);
        assert_relative_eq!(result.value("q_tls"), q_tls, max_relative = 0.10);
        assert_relative_eq!(result.value("n_c"), n_c, max_relative = 0.10);
        assert_relative_eq!(result.value("beta"), beta, max_relative = 0.10);
        assert_relative_eq!(result.value("q_other"), q_other, max_relative = 0.10);

        // Model endpoints against the quoted low- and high-power values.
        let fitted_low = tls_model_q(
            1e-3,
            result.value("q_tls"),
            result.value("n_c"),
            result.value("beta"),
            result.value("q_other"),
        );
        let q0 = 1.0 / (1.0 / q_tls + 1.0 / q_other);
        assert_relative_eq!(fitted_low, q0, max_relative = 0.15);
        assert_relative_eq!(q0, 1.2e4, max_relative = 0.15);
        let fitted_high = tls_model_q(
            1e9,
            result.value("q_tls"),
            result.value("n_c"),
            result.value("beta"),
            result.value("q_other"),
        );
        assert_relative_eq!(fitted_high, q_other, max_relative = 0.15);
    }

    #[test]
    fn tls_fit_rejects_bad_input() {
        let powers = [1.0, 10.0, 100.0];
        let qs = [1.2e4, 1.5e4, 2.0e4];
        assert!(matches!(
            tls_q_fit(&powers, &qs),
            Err(FitError::BadData(_))
        ));
        let narrow_powers = [1.0, 2.0, 4.0, 8.0];
        let qs4 = [1.2e4, 1.3e4, 1.5e4, 1.6e4];
        assert!(matches!(
            tls_q_fit(&narrow_powers, &qs4),
            Err(FitError::InsufficientSpan { .. })
        ));
        let mismatched = [1.0, 10.0, 100.0, 1000.0];
        assert!(matches!(
            tls_q_fit(&mismatched, &qs),
            Err(FitError::BadData(_))
        ));
    }
}

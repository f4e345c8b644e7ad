//! Qubit-phonon dynamics in the single-excitation sector: analytic decay
//! rates, Purcell figures, non-Hermitian time evolution, dressed-mode
//! eigenvalues, and the decay-rate scan over qubit frequency.

use nalgebra::DMatrix;
use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::model::{DecayCurve, FpCavitySpec, Mode, ModeSet, ScanData};
use crate::ode::{self, OdeError, OdeOptions};
use crate::spectrum::{self, SpectrumError};
use crate::wave;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("mode linewidth must be > 0, got {0}")]
    NonPositiveLinewidth(f64),
    #[error("intrinsic rate must be > 0, got {0}")]
    NonPositiveBaseRate(f64),
    #[error("total rate {gamma_e} is below the intrinsic rate {gamma_0}")]
    RateBelowBase { gamma_e: f64, gamma_0: f64 },
    #[error("emission rate must be > 0, got {0}")]
    NonPositiveRate(f64),
    #[error("time grid must be nonempty, start at t >= 0, and increase")]
    BadTimeGrid,
    #[error("qubit frequencies must be sorted ascending")]
    UnsortedFrequencies,
    #[error("eigenvalue iteration did not converge")]
    EigenNonConvergence,
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

/// Rate of phonon emission into a single cavity mode, `4g²/κ`.
pub fn purcell_rate(g: f64, kappa: f64) -> Result<f64, DynamicsError> {
    if !(kappa > 0.0) {
        return Err(DynamicsError::NonPositiveLinewidth(kappa));
    }
    Ok(4.0 * g * g / kappa)
}

/// Total qubit decay rate against a structured bath of cavity modes,
/// `γₑ = γ₀ + Σₙ 4gₙ²κₙ / (4(ω_q − ωₙ)² + κₙ²)`.
///
/// All quantities are ordinary frequencies in Hz; the sum is homogeneous of
/// degree one, so no angular conversion is needed.
pub fn multimode_decay_rate(qubit_frequency: f64, modes: &ModeSet, gamma_0: f64) -> f64 {
    let mut rate = gamma_0;
    for mode in &modes.modes {
        let detuning = qubit_frequency - mode.frequency;
        let k = mode.linewidth;
        rate += 4.0 * mode.coupling * mode.coupling * k / (4.0 * detuning * detuning + k * k);
    }
    rate
}

/// Cavity-induced enhancement of spontaneous emission, `F_P = γₑ/γ₀`.
pub fn purcell_factor(gamma_e: f64, gamma_0: f64) -> Result<f64, DynamicsError> {
    if !(gamma_0 > 0.0) {
        return Err(DynamicsError::NonPositiveBaseRate(gamma_0));
    }
    Ok(gamma_e / gamma_0)
}

/// Probability that the decaying qubit emits into the cavity rather than its
/// intrinsic loss channels, `p = (γₑ − γ₀)/γₑ = 1 − 1/F_P`.
pub fn phonon_emission_probability(gamma_e: f64, gamma_0: f64) -> Result<f64, DynamicsError> {
    if !(gamma_0 > 0.0) {
        return Err(DynamicsError::NonPositiveBaseRate(gamma_0));
    }
    if gamma_e < gamma_0 {
        return Err(DynamicsError::RateBelowBase {
            gamma_e,
            gamma_0,
        });
    }
    Ok((gamma_e - gamma_0) / gamma_e)
}

/// How an emission rate is converted to an inverse pulse duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateConvention {
    /// The rate is already an inverse time in s⁻¹: duration = 1/Γ.
    Direct,
    /// The rate is an ordinary frequency in Hz: duration = 1/(2πγ).
    FromHertz,
}

/// Duration and spatial length of the emitted single-phonon pulse.
pub fn emitted_pulse_metrics(
    rate: f64,
    group_velocity: f64,
    convention: RateConvention,
) -> Result<(f64, f64), DynamicsError> {
    if !(rate > 0.0) {
        return Err(DynamicsError::NonPositiveRate(rate));
    }
    let inverse_time = match convention {
        RateConvention::Direct => rate,
        RateConvention::FromHertz => TAU * rate,
    };
    let duration = 1.0 / inverse_time;
    Ok((duration, group_velocity * duration))
}

/// Amplitudes of the single-excitation sector: the excited qubit with the
/// phonon vacuum, plus one amplitude per mode holding the single phonon.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleExcitationState {
    pub c_e: Complex64,
    pub c_n: Vec<Complex64>,
}

impl SingleExcitationState {
    /// Initial state: excitation entirely on the qubit.
    pub fn excited(mode_count: usize) -> SingleExcitationState {
        SingleExcitationState {
            c_e: Complex64::new(1.0, 0.0),
            c_n: vec![Complex64::new(0.0, 0.0); mode_count],
        }
    }

    /// Total excitation norm Σ|c|².
    pub fn norm_sqr(&self) -> f64 {
        self.c_e.norm_sqr() + self.c_n.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Excited-state population |c_e|².
    pub fn qubit_population(&self) -> f64 {
        self.c_e.norm_sqr()
    }
}

fn validate_time_grid(t_grid: &[f64]) -> Result<(), DynamicsError> {
    if t_grid.is_empty() || t_grid[0] < 0.0 {
        return Err(DynamicsError::BadTimeGrid);
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::BadTimeGrid);
    }
    Ok(())
}

/// Integrates the single-excitation amplitudes in a frame rotating at the
/// qubit frequency and returns the full state at each grid time.
///
/// The effective Hamiltonian (angular units) has diagonal −iπγ₀ for the
/// qubit and 2π(ωₙ − ω_q) − iπκₙ for mode n, with off-diagonal 2πgₙ.
pub fn evolve_states(
    qubit_frequency: f64,
    modes: &ModeSet,
    gamma_0: f64,
    t_grid: &[f64],
) -> Result<Vec<SingleExcitationState>, DynamicsError> {
    validate_time_grid(t_grid)?;
    let n = modes.modes.len();
    let t_end = *t_grid.last().unwrap();

    // Precompute the RHS coefficients: c_e' = -πγ₀ c_e - i Σ 2πgₙ cₙ,
    // cₙ' = (-i 2πΔₙ - πκₙ) cₙ - i 2πgₙ c_e.
    let qubit_diag = Complex64::new(-PI * gamma_0, 0.0);
    let mode_diag: Vec<Complex64> = modes
        .modes
        .iter()
        .map(|m| Complex64::new(-PI * m.linewidth, -TAU * (m.frequency - qubit_frequency)))
        .collect();
    let mode_coupling: Vec<Complex64> = modes
        .modes
        .iter()
        .map(|m| Complex64::new(0.0, -TAU * m.coupling))
        .collect();

    let mut y0 = vec![Complex64::new(0.0, 0.0); n + 1];
    y0[0] = Complex64::new(1.0, 0.0);

    let states = if t_end > 0.0 {
        ode::integrate(
            |_t, y, dy| {
                let mut acc = qubit_diag * y[0];
                for i in 0..n {
                    acc += mode_coupling[i] * y[i + 1];
                    dy[i + 1] = mode_diag[i] * y[i + 1] + mode_coupling[i] * y[0];
                }
                dy[0] = acc;
            },
            (0.0, t_end),
            &y0,
            t_grid,
            &OdeOptions::default(),
        )?
    } else {
        vec![y0.clone(); t_grid.len()]
    };

    Ok(states
        .into_iter()
        .map(|y| SingleExcitationState {
            c_e: y[0],
            c_n: y[1..].to_vec(),
        })
        .collect())
}

/// Excited-state population P_e(t) on the given time grid.
pub fn evolve_single_excitation(
    qubit_frequency: f64,
    modes: &ModeSet,
    gamma_0: f64,
    t_grid: &[f64],
) -> Result<DecayCurve, DynamicsError> {
    let states = evolve_states(qubit_frequency, modes, gamma_0, t_grid)?;
    Ok(DecayCurve {
        times: t_grid.to_vec(),
        populations: states.iter().map(|s| s.qubit_population()).collect(),
    })
}

/// Eigenvalues of the (N+1)×(N+1) single-excitation matrix with diagonals
/// ωₙ − iκₙ/2 and ω_q − iγ₀/2 and qubit-mode off-diagonals gₙ, in complex
/// Hz, sorted by real part.
pub fn dressed_eigenvalues(
    qubit_frequency: f64,
    modes: &ModeSet,
    gamma_0: f64,
) -> Result<Vec<Complex64>, DynamicsError> {
    let n = modes.modes.len() + 1;
    // Work in the frame rotating at the qubit frequency so the matrix norm
    // is set by detunings and rates, not by absolute frequencies.
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    h[(0, 0)] = Complex64::new(0.0, -gamma_0 / 2.0);
    for (i, mode) in modes.modes.iter().enumerate() {
        h[(i + 1, i + 1)] = Complex64::new(
            mode.frequency - qubit_frequency,
            -mode.linewidth / 2.0,
        );
        h[(0, i + 1)] = Complex64::new(mode.coupling, 0.0);
        h[(i + 1, 0)] = Complex64::new(mode.coupling, 0.0);
    }
    let mut eigs = lower_half_eigenvalues(&h)?;
    for e in &mut eigs {
        *e += Complex64::new(qubit_frequency, 0.0);
    }
    eigs.sort_by(|a, b| a.re.total_cmp(&b.re));
    Ok(eigs)
}

/// Eigenvalues of a complex matrix whose spectrum lies in the closed lower
/// half plane, via the real 2n×2n embedding [[Re, −Im], [Im, Re]] whose
/// spectrum is the wanted one plus its conjugate.
fn lower_half_eigenvalues(a: &DMatrix<Complex64>) -> Result<Vec<Complex64>, DynamicsError> {
    let n = a.nrows();
    let mut embed = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            embed[(i, j)] = z.re;
            embed[(i, j + n)] = -z.im;
            embed[(i + n, j)] = z.im;
            embed[(i + n, j + n)] = z.re;
        }
    }
    let schur = nalgebra::linalg::Schur::try_new(embed, f64::EPSILON, 400 * n)
        .ok_or(DynamicsError::EigenNonConvergence)?;
    let all: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();

    // Pair each eigenvalue with its closest conjugate partner and keep the
    // lower-half member of the pair.
    let mut pool = all;
    let mut out = Vec::with_capacity(n);
    while let Some(z) = pool.pop() {
        let target = z.conj();
        let (j, _) = pool
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - target).norm().total_cmp(&(*b - target).norm())
            })
            .expect("pool holds an even count, partner exists");
        let w = pool.swap_remove(j);
        out.push(if z.im <= 0.0 { z } else { w });
    }
    Ok(out)
}

/// Pointwise decay rate over a sweep of qubit frequencies against a fixed
/// mode set.
pub fn decay_scan(
    qubit_frequencies: &[f64],
    modes: &ModeSet,
    gamma_0: f64,
) -> Result<ScanData, DynamicsError> {
    if qubit_frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::UnsortedFrequencies);
    }
    Ok(ScanData {
        frequencies: qubit_frequencies.to_vec(),
        rates: qubit_frequencies
            .iter()
            .map(|&f| multimode_decay_rate(f, modes, gamma_0))
            .collect(),
        uncertainties: None,
    })
}

/// Decay-rate sweep for a Fabry-Perot device: the mode comb, linewidths, and
/// couplings are rebuilt from the device description, and each qubit
/// frequency sees the modes within `window` of it.
pub fn fp_decay_scan(
    qubit_frequencies: &[f64],
    spec: &FpCavitySpec,
    gamma_0: f64,
    window: f64,
) -> Result<ScanData, DynamicsError> {
    if qubit_frequencies.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DynamicsError::UnsortedFrequencies);
    }
    let lo = qubit_frequencies.first().copied().unwrap_or(0.0);
    let hi = qubit_frequencies.last().copied().unwrap_or(0.0);
    let all_modes = spectrum::fp_mode_set(spec, (lo - window, hi + window))?;
    let mut rates = Vec::with_capacity(qubit_frequencies.len());
    for &f in qubit_frequencies {
        let local: Vec<Mode> = all_modes
            .modes
            .iter()
            .filter(|m| (m.frequency - f).abs() <= window)
            .cloned()
            .collect();
        let set = ModeSet {
            modes: local,
            band: (f - window, f + window),
        };
        rates.push(multimode_decay_rate(f, &set, gamma_0));
    }
    Ok(ScanData {
        frequencies: qubit_frequencies.to_vec(),
        rates,
        uncertainties: None,
    })
}

/// Operating regime of the device at a given qubit frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    LossyCavity,
    Anomalous,
    Cqad,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::LossyCavity => "lossy_cavity",
            Regime::Anomalous => "anomalous",
            Regime::Cqad => "cqad",
        })
    }
}

/// Classification thresholds. Anomaly bands are user annotations; nothing in
/// the model predicts them.
#[derive(Debug, Clone)]
pub struct RegimeThresholds {
    /// Round-trip retention below which the cavity is lossy.
    pub retention_min: f64,
    /// Coupling below this fraction of peak counts as negligible.
    pub coupling_min_fraction: f64,
    /// Frequency intervals annotated as anomalous.
    pub anomaly_bands: Vec<(f64, f64)>,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        RegimeThresholds {
            retention_min: 0.1,
            coupling_min_fraction: 0.05,
            anomaly_bands: Vec::new(),
        }
    }
}

/// True when the IDT coupling at `f` is below the negligible-coupling
/// threshold. Frequencies where enhancement is observed despite this are
/// the candidates for anomaly annotation.
pub fn coupling_is_negligible(f: f64, spec: &FpCavitySpec, thresholds: &RegimeThresholds) -> bool {
    wave::coupling_profile(f, &spec.idt, &spec.material)
        < thresholds.coupling_min_fraction * spec.idt.peak_coupling
}

/// Classifies the operating regime at frequency `f`: annotated anomaly bands
/// win, then the mirror round-trip retention separates lossy-cavity from
/// regular cavity operation.
pub fn classify_regime(
    f: f64,
    spec: &FpCavitySpec,
    thresholds: &RegimeThresholds,
) -> Result<Regime, DynamicsError> {
    if thresholds
        .anomaly_bands
        .iter()
        .any(|&(lo, hi)| f >= lo && f <= hi)
    {
        return Ok(Regime::Anomalous);
    }
    let retention =
        wave::round_trip_retention(f, &spec.left_mirror, &spec.right_mirror, &spec.material)
            .map_err(SpectrumError::from)?;
    if retention < thresholds.retention_min {
        Ok(Regime::LossyCavity)
    } else {
        Ok(Regime::Cqad)
    }
}

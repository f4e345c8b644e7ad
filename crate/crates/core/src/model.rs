//! Shared domain types and validation.
//!
//! Unit conventions used everywhere in this crate:
//!
//! * Every rate, linewidth, and coupling is an ordinary frequency in Hz,
//!   i.e. the "/2π" value. A quoted `g/2π = 0.36 MHz` is stored as `3.6e5`.
//! * `κ` is a full linewidth (FWHM), `κ = f / Q`.
//! * A stored rate `r` relates to a relaxation time by `T1 = 1 / (2π r)`.
//! * Lengths are meters, times are seconds, velocities are m/s.

use std::f64::consts::TAU;

/// A broken type invariant, naming the offending field and the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Violation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Invariant checking for device specs and data containers.
///
/// Returns the list of violations instead of failing, so callers can report
/// every problem at once. An empty list means all invariants hold.
pub trait Validate {
    fn validate(&self) -> Vec<Violation>;
}

/// Acoustic velocities of the guided mode and its surroundings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    /// Phase velocity of the guided acoustic mode (m/s).
    pub phase_velocity: f64,
    /// Group velocity of the guided mode (m/s); sets the free spectral range.
    pub group_velocity: f64,
    /// Substrate bulk velocity (m/s), informational only.
    pub substrate_velocity: f64,
}

impl Validate for MaterialParams {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (name, val) in [
            ("phase_velocity", self.phase_velocity),
            ("group_velocity", self.group_velocity),
            ("substrate_velocity", self.substrate_velocity),
        ] {
            if !(val > 0.0) {
                v.push(Violation::new(name, format!("must be > 0, got {val}")));
            }
        }
        if self.group_velocity > 0.0 && !(1000.0..=10000.0).contains(&self.group_velocity) {
            v.push(Violation::new(
                "group_velocity",
                format!(
                    "outside the [1000, 10000] m/s sanity band, got {}",
                    self.group_velocity
                ),
            ));
        }
        v
    }
}

/// A distributed Bragg reflector: periodic metal strips on the waveguide.
///
/// The strips locally reduce the acoustic velocity by `velocity_contrast`
/// (fractional, Δv/v), creating a stop band around the Bragg frequency.
/// `velocity_contrast` and `per_cell_amplitude_loss` are calibration
/// parameters; defaults are 0.02 and 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbrSpec {
    /// Strip period Λ (m).
    pub period: f64,
    /// Metalized fraction of each period, in (0, 1).
    pub duty_cycle: f64,
    /// Number of strips (unit cells).
    pub strip_count: u32,
    /// Fractional velocity reduction under the metal, |Δv/v| < 0.5.
    pub velocity_contrast: f64,
    /// Scalar amplitude attenuation per unit cell, ≥ 0.
    pub per_cell_amplitude_loss: f64,
}

pub const DEFAULT_VELOCITY_CONTRAST: f64 = 0.02;

impl Validate for DbrSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.period > 0.0) {
            v.push(Violation::new(
                "period",
                format!("must be > 0, got {}", self.period),
            ));
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle < 1.0) {
            v.push(Violation::new(
                "duty_cycle",
                format!("must lie in (0, 1), got {}", self.duty_cycle),
            ));
        }
        if self.strip_count < 1 {
            v.push(Violation::new("strip_count", "must be ≥ 1, got 0"));
        }
        if !(self.velocity_contrast.abs() < 0.5) {
            v.push(Violation::new(
                "velocity_contrast",
                format!("|Δv/v| must be < 0.5, got {}", self.velocity_contrast),
            ));
        }
        if !(self.per_cell_amplitude_loss >= 0.0) {
            v.push(Violation::new(
                "per_cell_amplitude_loss",
                format!("must be ≥ 0, got {}", self.per_cell_amplitude_loss),
            ));
        }
        v
    }
}

/// An interdigital transducer: `finger_pairs` electrode pairs with the given
/// period, peaking at `center_frequency` (or `phase_velocity / period` when
/// not given).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdtSpec {
    /// Number of finger pairs N.
    pub finger_pairs: u32,
    /// Finger-pair period (m).
    pub period: f64,
    /// Synchronism frequency f₀ (Hz); derived from the material when absent.
    pub center_frequency: Option<f64>,
    /// Coupling at the response peak, g_max (Hz).
    pub peak_coupling: f64,
}

impl IdtSpec {
    /// The IDT center frequency, falling back to `phase_velocity / period`.
    pub fn resolved_center_frequency(&self, material: &MaterialParams) -> f64 {
        self.center_frequency
            .unwrap_or(material.phase_velocity / self.period)
    }
}

impl Validate for IdtSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.finger_pairs < 1 {
            v.push(Violation::new("finger_pairs", "must be ≥ 1, got 0"));
        }
        if !(self.period > 0.0) {
            v.push(Violation::new(
                "period",
                format!("must be > 0, got {}", self.period),
            ));
        }
        if let Some(f0) = self.center_frequency {
            if !(f0 > 0.0) {
                v.push(Violation::new(
                    "center_frequency",
                    format!("must be > 0, got {f0}"),
                ));
            }
        }
        if !(self.peak_coupling >= 0.0) {
            v.push(Violation::new(
                "peak_coupling",
                format!("must be ≥ 0, got {}", self.peak_coupling),
            ));
        }
        v
    }
}

/// A straight-waveguide Fabry-Perot phononic cavity: two DBR mirrors with an
/// IDT coupler between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FpCavitySpec {
    /// Mirror separation L (m).
    pub mirror_separation: f64,
    pub left_mirror: DbrSpec,
    pub right_mirror: DbrSpec,
    pub idt: IdtSpec,
    pub material: MaterialParams,
    /// Propagation and IDT-leakage loss folded into a single quality factor.
    pub intrinsic_q: Option<f64>,
    /// Anchor frequency of the mode comb; defaults to the left mirror's
    /// Bragg frequency when absent.
    pub mode_anchor: Option<f64>,
}

impl Validate for FpCavitySpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.mirror_separation > 0.0) {
            v.push(Violation::new(
                "mirror_separation",
                format!("must be > 0, got {}", self.mirror_separation),
            ));
        }
        if let Some(q) = self.intrinsic_q {
            if !(q > 0.0) {
                v.push(Violation::new(
                    "intrinsic_q",
                    format!("must be > 0 when present, got {q}"),
                ));
            }
        }
        if let Some(f) = self.mode_anchor {
            if !(f > 0.0) {
                v.push(Violation::new(
                    "mode_anchor",
                    format!("must be > 0 when present, got {f}"),
                ));
            }
        }
        v.extend(prefixed(self.left_mirror.validate(), "left_mirror"));
        v.extend(prefixed(self.right_mirror.validate(), "right_mirror"));
        v.extend(prefixed(self.idt.validate(), "idt"));
        v.extend(prefixed(self.material.validate(), "material"));
        v
    }
}

/// A microring (racetrack) phononic cavity with uniform per-mode properties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingCavitySpec {
    /// Ring circumference C (m); the round-trip length.
    pub circumference: f64,
    /// Quality factor shared by every mode.
    pub uniform_q: f64,
    /// Qubit-mode coupling shared by every mode (Hz).
    pub uniform_coupling: f64,
    /// Frequency of one anchor mode (Hz).
    pub reference_frequency: f64,
    pub material: MaterialParams,
}

impl Validate for RingCavitySpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.circumference > 0.0) {
            v.push(Violation::new(
                "circumference",
                format!("must be > 0, got {}", self.circumference),
            ));
        }
        if !(self.uniform_q > 0.0) {
            v.push(Violation::new(
                "uniform_q",
                format!("must be > 0, got {}", self.uniform_q),
            ));
        }
        if !(self.uniform_coupling >= 0.0) {
            v.push(Violation::new(
                "uniform_coupling",
                format!("must be ≥ 0, got {}", self.uniform_coupling),
            ));
        }
        if !(self.reference_frequency > 0.0) {
            v.push(Violation::new(
                "reference_frequency",
                format!("must be > 0, got {}", self.reference_frequency),
            ));
        }
        v.extend(prefixed(self.material.validate(), "material"));
        v
    }
}

/// The transmon qubit: a tunable transition frequency and an intrinsic decay
/// rate γ₀ (Hz, so `T1 = 1/(2π γ₀)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QubitSpec {
    /// Transition frequency ω_q (Hz).
    pub frequency: f64,
    /// Intrinsic decay rate γ₀ (Hz).
    pub intrinsic_rate: f64,
}

impl Validate for QubitSpec {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.frequency > 0.0) {
            v.push(Violation::new(
                "frequency",
                format!("must be > 0, got {}", self.frequency),
            ));
        }
        if !(self.intrinsic_rate >= 0.0) {
            v.push(Violation::new(
                "intrinsic_rate",
                format!("must be ≥ 0, got {}", self.intrinsic_rate),
            ));
        }
        v
    }
}

/// One phonon mode of a cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    /// Mode frequency ωₙ (Hz).
    pub frequency: f64,
    /// Full linewidth κₙ (Hz).
    pub linewidth: f64,
    /// Qubit-mode coupling gₙ (Hz).
    pub coupling: f64,
    /// Set when the round-trip power retention fell below the lossy-cavity
    /// threshold at this mode's frequency.
    pub lossy: bool,
}

impl Validate for Mode {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.linewidth > 0.0) {
            v.push(Violation::new(
                "linewidth",
                format!("must be > 0, got {}", self.linewidth),
            ));
        }
        if !(self.coupling >= 0.0) {
            v.push(Violation::new(
                "coupling",
                format!("must be ≥ 0, got {}", self.coupling),
            ));
        }
        v
    }
}

/// The ordered mode list every dynamics calculation consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    /// Modes in strictly increasing frequency order.
    pub modes: Vec<Mode>,
    /// The frequency band (f_lo, f_hi) the set covers (Hz).
    pub band: (f64, f64),
}

impl ModeSet {
    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }
}

impl Validate for ModeSet {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            v.extend(prefixed(m.validate(), &format!("modes[{i}]")));
            if m.frequency < self.band.0 || m.frequency > self.band.1 {
                v.push(Violation::new(
                    &format!("modes[{i}].frequency"),
                    format!(
                        "outside band [{}, {}], got {}",
                        self.band.0, self.band.1, m.frequency
                    ),
                ));
            }
        }
        for w in self.modes.windows(2) {
            if !(w[1].frequency > w[0].frequency) {
                v.push(Violation::new(
                    "modes",
                    format!(
                        "frequencies must be strictly increasing, got {} then {}",
                        w[0].frequency, w[1].frequency
                    ),
                ));
            }
        }
        v
    }
}

/// Allowed headroom above 1 for measured excited-state populations.
pub const POPULATION_HEADROOM: f64 = 0.05;

/// A time series of qubit excited-state population P_e(t).
#[derive(Debug, Clone, PartialEq)]
pub struct DecayCurve {
    /// Sample times (s), strictly increasing.
    pub times: Vec<f64>,
    /// Excited-state populations, each in [0, 1 + headroom].
    pub populations: Vec<f64>,
}

impl Validate for DecayCurve {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.times.len() != self.populations.len() {
            v.push(Violation::new(
                "populations",
                format!(
                    "length {} does not match times length {}",
                    self.populations.len(),
                    self.times.len()
                ),
            ));
        }
        if self.times.len() < 8 {
            v.push(Violation::new(
                "times",
                format!("at least 8 samples required, got {}", self.times.len()),
            ));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                v.push(Violation::new(
                    "times",
                    format!("must be strictly increasing, got {} then {}", w[0], w[1]),
                ));
                break;
            }
        }
        for (i, &p) in self.populations.iter().enumerate() {
            if !(0.0..=1.0 + POPULATION_HEADROOM).contains(&p) {
                v.push(Violation::new(
                    &format!("populations[{i}]"),
                    format!("must lie in [0, {}], got {p}", 1.0 + POPULATION_HEADROOM),
                ));
            }
        }
        v
    }
}

/// Frequency-resolved qubit dissipation-rate samples γₑ(ω).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanData {
    /// Qubit frequencies (Hz), strictly increasing.
    pub frequencies: Vec<f64>,
    /// Measured or synthetic decay rates γₑ (Hz).
    pub rates: Vec<f64>,
    /// Optional per-point 1σ uncertainty (Hz).
    pub uncertainties: Option<Vec<f64>>,
}

impl Validate for ScanData {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.frequencies.len() != self.rates.len() {
            v.push(Violation::new(
                "rates",
                format!(
                    "length {} does not match frequencies length {}",
                    self.rates.len(),
                    self.frequencies.len()
                ),
            ));
        }
        if let Some(u) = &self.uncertainties {
            if u.len() != self.frequencies.len() {
                v.push(Violation::new(
                    "uncertainties",
                    format!(
                        "length {} does not match frequencies length {}",
                        u.len(),
                        self.frequencies.len()
                    ),
                ));
            }
        }
        for w in self.frequencies.windows(2) {
            if !(w[1] > w[0]) {
                v.push(Violation::new(
                    "frequencies",
                    format!("must be strictly increasing, got {} then {}", w[0], w[1]),
                ));
                break;
            }
        }
        for (i, &r) in self.rates.iter().enumerate() {
            if !(r >= 0.0) {
                v.push(Violation::new(
                    &format!("rates[{i}]"),
                    format!("must be ≥ 0, got {r}"),
                ));
            }
        }
        v
    }
}

/// Outcome of a nonlinear least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceStatus {
    Converged,
    MaxIter,
    Singular,
}

impl std::fmt::Display for ConvergenceStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConvergenceStatus::Converged => write!(f, "converged"),
            ConvergenceStatus::MaxIter => write!(f, "max_iter"),
            ConvergenceStatus::Singular => write!(f, "singular"),
        }
    }
}

/// One recovered model parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    /// Standard error from the Jacobian at the optimum; absent unless the
    /// fit converged.
    pub stderr: Option<f64>,
    /// Held fixed during the fit.
    pub fixed: bool,
    /// Landed on a box bound.
    pub at_bound: bool,
}

/// Recovered parameters with residuals and uncertainty estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    /// Euclidean norm of the fit residuals at the optimum. Dimensionless
    /// when per-point uncertainties weighted the fit, Hz otherwise.
    pub residual_norm: f64,
    pub status: ConvergenceStatus,
}

impl FitResult {
    pub fn parameter(&self, name: &str) -> Option<&FitParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Value of a named parameter; panics if absent.
    pub fn value(&self, name: &str) -> f64 {
        self.parameter(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
            .value
    }
}

impl Validate for FitResult {
    fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.residual_norm >= 0.0) {
            v.push(Violation::new(
                "residual_norm",
                format!("must be ≥ 0, got {}", self.residual_norm),
            ));
        }
        if self.status != ConvergenceStatus::Converged {
            for p in &self.parameters {
                if p.stderr.is_some() {
                    v.push(Violation::new(
                        &format!("parameters[{}].stderr", p.name),
                        "must be absent when the fit did not converge",
                    ));
                }
            }
        }
        v
    }
}

/// Relaxation time for a stored rate: `T1 = 1 / (2π r)`.
pub fn t1_from_rate(rate_hz: f64) -> f64 {
    1.0 / (TAU * rate_hz)
}

/// Stored rate for a relaxation time: `r = 1 / (2π T1)`.
pub fn rate_from_t1(t1_s: f64) -> f64 {
    1.0 / (TAU * t1_s)
}

fn prefixed(violations: Vec<Violation>, prefix: &str) -> Vec<Violation> {
    violations
        .into_iter()
        .map(|mut v| {
            v.field = format!("{prefix}.{}", v.field);
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_dbr() -> DbrSpec {
        DbrSpec {
            period: 430e-9,
            duty_cycle: 0.5,
            strip_count: 100,
            velocity_contrast: 0.02,
            per_cell_amplitude_loss: 0.0,
        }
    }

    #[test]
    fn reference_dbr_spec_is_valid() {
        assert!(reference_dbr().validate().is_empty());
    }

    #[test]
    fn duty_cycle_out_of_range_is_flagged() {
        let spec = DbrSpec {
            duty_cycle: 1.2,
            ..reference_dbr()
        };
        let violations = spec.validate();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "duty_cycle");
    }

    #[test]
    fn negative_qubit_rate_is_flagged() {
        let spec = QubitSpec {
            frequency: 5.0e9,
            intrinsic_rate: -1.0,
        };
        let violations = spec.validate();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "intrinsic_rate");
    }

    #[test]
    fn nested_violations_carry_field_paths() {
        let spec = FpCavitySpec {
            mirror_separation: 300e-6,
            left_mirror: DbrSpec {
                period: -1.0,
                ..reference_dbr()
            },
            right_mirror: reference_dbr(),
            idt: IdtSpec {
                finger_pairs: 20,
                period: 782e-9,
                center_frequency: None,
                peak_coupling: 2.1e6,
            },
            material: MaterialParams {
                phase_velocity: 4184.0,
                group_velocity: 3600.0,
                substrate_velocity: 5800.0,
            },
            intrinsic_q: Some(2.2e3),
            mode_anchor: None,
        };
        let violations = spec.validate();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "left_mirror.period");
    }

    #[test]
    fn t1_rate_round_trip() {
        // γ₀/2π = 0.0147 MHz corresponds to T1 = 10.8 μs.
        let t1 = t1_from_rate(1.47e4);
        assert!((t1 - 10.83e-6).abs() / 10.83e-6 < 1e-3);
        assert!((rate_from_t1(t1) - 1.47e4).abs() < 1e-9);
    }

    #[test]
    fn decay_curve_needs_eight_samples() {
        let curve = DecayCurve {
            times: vec![0.0, 1e-6, 2e-6],
            populations: vec![1.0, 0.5, 0.25],
        };
        assert!(curve
            .validate()
            .iter()
            .any(|v| v.field == "times" && v.message.contains("8")));
    }

    #[test]
    fn scan_data_rejects_negative_rates() {
        let scan = ScanData {
            frequencies: vec![1.0e9, 2.0e9],
            rates: vec![1.0e4, -2.0],
            uncertainties: None,
        };
        assert!(scan.validate().iter().any(|v| v.field == "rates[1]"));
    }

    #[test]
    fn idt_center_frequency_falls_back_to_synchronism() {
        let material = MaterialParams {
            phase_velocity: 4184.0,
            group_velocity: 3600.0,
            substrate_velocity: 5800.0,
        };
        let idt = IdtSpec {
            finger_pairs: 20,
            period: 782e-9,
            center_frequency: None,
            peak_coupling: 2.1e6,
        };
        let f0 = idt.resolved_center_frequency(&material);
        assert!((f0 - 4184.0 / 782e-9).abs() < 1.0);
        let pinned = IdtSpec {
            center_frequency: Some(5.35e9),
            ..idt
        };
        assert_eq!(pinned.resolved_center_frequency(&material), 5.35e9);
    }
}

//! Cavity mode combs: free spectral range, per-mode linewidths, and coupling
//! assignment for Fabry-Perot and ring resonators.

use std::f64::consts::TAU;
use thiserror::Error;

use crate::model::{FpCavitySpec, Mode, ModeSet, RingCavitySpec};
use crate::wave::{self, WaveError};

/// Round-trip retention below which a Fabry-Perot mode is flagged as lossy.
pub const LOSSY_RETENTION_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("group velocity must be > 0, got {0}")]
    NonPositiveVelocity(f64),
    #[error("round-trip length must be > 0, got {0}")]
    NonPositiveLength(f64),
    #[error("band must satisfy lo < hi, got [{0}, {1}]")]
    EmptyBand(f64, f64),
    #[error(transparent)]
    Wave(#[from] WaveError),
}

/// Free spectral range `v_g / round_trip`. For a Fabry-Perot cavity the round
/// trip is twice the mirror separation; for a ring it is the circumference.
pub fn fsr(group_velocity: f64, round_trip: f64) -> Result<f64, SpectrumError> {
    if !(group_velocity > 0.0) {
        return Err(SpectrumError::NonPositiveVelocity(group_velocity));
    }
    if !(round_trip > 0.0) {
        return Err(SpectrumError::NonPositiveLength(round_trip));
    }
    Ok(group_velocity / round_trip)
}

/// FSR of a Fabry-Perot cavity with the given mirror separation.
pub fn fp_fsr(spec: &FpCavitySpec) -> Result<f64, SpectrumError> {
    fsr(spec.material.group_velocity, 2.0 * spec.mirror_separation)
}

/// FSR of a ring resonator with the given circumference.
pub fn ring_fsr(spec: &RingCavitySpec) -> Result<f64, SpectrumError> {
    fsr(spec.material.group_velocity, spec.circumference)
}

/// Linewidth of a Fabry-Perot mode at frequency `f` given the round-trip
/// power retention `retention = |r_L|²·|r_R|²`. Mirror leakage contributes
/// `ν_FSR · (−ln Rₜ) / 2π`; an intrinsic quality factor adds `f / Q` on top.
pub fn fp_mode_linewidth(f: f64, free_spectral_range: f64, retention: f64, intrinsic_q: Option<f64>) -> f64 {
    // Retention can underflow to 0 far outside the stopband; the mode is
    // then overdamped and the exact number no longer matters, so floor it.
    let retention = retention.max(1e-300);
    let leakage = free_spectral_range * (-retention.ln()) / TAU;
    let intrinsic = intrinsic_q.map_or(0.0, |q| f / q);
    leakage + intrinsic
}

/// Modes of a Fabry-Perot cavity inside `band`, on the comb
/// `fₘ = anchor + m·FSR`. Each mode carries the mirror-limited linewidth at
/// its own frequency and the IDT coupling evaluated there; modes whose
/// round-trip retention falls below [`LOSSY_RETENTION_THRESHOLD`] are flagged.
pub fn fp_mode_set(spec: &FpCavitySpec, band: (f64, f64)) -> Result<ModeSet, SpectrumError> {
    let (lo, hi) = band;
    if !(lo < hi) {
        return Err(SpectrumError::EmptyBand(lo, hi));
    }
    let free_spectral_range = fp_fsr(spec)?;
    let anchor = spec
        .mode_anchor
        .unwrap_or_else(|| wave::bragg_frequency(&spec.left_mirror, &spec.material));

    let m_lo = ((lo - anchor) / free_spectral_range).ceil() as i64;
    let m_hi = ((hi - anchor) / free_spectral_range).floor() as i64;
    let mut modes = Vec::new();
    for m in m_lo..=m_hi {
        let f = anchor + m as f64 * free_spectral_range;
        if !(f > 0.0) {
            continue;
        }
        let retention =
            wave::round_trip_retention(f, &spec.left_mirror, &spec.right_mirror, &spec.material)?;
        modes.push(Mode {
            frequency: f,
            linewidth: fp_mode_linewidth(f, free_spectral_range, retention, spec.intrinsic_q),
            coupling: wave::coupling_profile(f, &spec.idt, &spec.material),
            lossy: retention < LOSSY_RETENTION_THRESHOLD,
        });
    }
    Ok(ModeSet { modes, band })
}

/// Modes of a ring resonator inside `band`: uniform linewidth `f/Q` and
/// uniform coupling, on a comb anchored at the reference frequency.
pub fn ring_mode_set(spec: &RingCavitySpec, band: (f64, f64)) -> Result<ModeSet, SpectrumError> {
    let (lo, hi) = band;
    if !(lo < hi) {
        return Err(SpectrumError::EmptyBand(lo, hi));
    }
    let free_spectral_range = ring_fsr(spec)?;
    let anchor = spec.reference_frequency;

    let m_lo = ((lo - anchor) / free_spectral_range).ceil() as i64;
    let m_hi = ((hi - anchor) / free_spectral_range).floor() as i64;
    let mut modes = Vec::new();
    for m in m_lo..=m_hi {
        let f = anchor + m as f64 * free_spectral_range;
        if !(f > 0.0) {
            continue;
        }
        modes.push(Mode {
            frequency: f,
            linewidth: f / spec.uniform_q,
            coupling: spec.uniform_coupling,
            lossy: false,
        });
    }
    Ok(ModeSet { modes, band })
}

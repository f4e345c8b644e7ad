//! Frequency-domain responses of the passive acoustic elements: DBR mirror
//! reflectivity via 1D transfer matrices and the IDT coupling profile via an
//! array factor.

use num_complex::Complex64;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

use crate::model::{DbrSpec, IdtSpec, MaterialParams};

#[derive(Debug, Error)]
pub enum WaveError {
    #[error("frequency must be > 0, got {0}")]
    NonPositiveFrequency(f64),
    #[error("transfer-matrix conversion is singular (|m22| = {m22_abs:.3e})")]
    SingularConversion { m22_abs: f64 },
    #[error("scattering cascade is singular (|1 - r'r| = {denom_abs:.3e})")]
    SingularCascade { denom_abs: f64 },
}

/// 2×2 complex transfer matrix mapping (forward, backward) wave amplitudes on
/// the left of an element to those on its right.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub m11: Complex64,
    pub m12: Complex64,
    pub m21: Complex64,
    pub m22: Complex64,
}

impl TransferMatrix {
    pub const IDENTITY: TransferMatrix = TransferMatrix {
        m11: Complex64::new(1.0, 0.0),
        m12: Complex64::new(0.0, 0.0),
        m21: Complex64::new(0.0, 0.0),
        m22: Complex64::new(1.0, 0.0),
    };

    /// Propagation over length `len` at velocity `v`, with total amplitude
    /// attenuation `atten` accumulated along the segment.
    pub fn propagation(f: f64, len: f64, v: f64, atten: f64) -> TransferMatrix {
        let phase = TAU * f * len / v;
        let decay = (-atten).exp();
        TransferMatrix {
            m11: Complex64::from_polar(decay, phase),
            m12: Complex64::new(0.0, 0.0),
            m21: Complex64::new(0.0, 0.0),
            m22: Complex64::from_polar(1.0 / decay, -phase),
        }
    }

    /// Velocity-mismatch interface from a medium with velocity `v1` into one
    /// with velocity `v2`.
    pub fn interface(f: f64, v1: f64, v2: f64) -> TransferMatrix {
        let k1 = TAU * f / v1;
        let k2 = TAU * f / v2;
        let sum = Complex64::new((k2 + k1) / (2.0 * k2), 0.0);
        let diff = Complex64::new((k2 - k1) / (2.0 * k2), 0.0);
        TransferMatrix {
            m11: sum,
            m12: diff,
            m21: diff,
            m22: sum,
        }
    }

    /// `other ∘ self`: the matrix of `self`'s element followed by `other`'s.
    pub fn then(&self, other: &TransferMatrix) -> TransferMatrix {
        TransferMatrix {
            m11: other.m11 * self.m11 + other.m12 * self.m21,
            m12: other.m11 * self.m12 + other.m12 * self.m22,
            m21: other.m21 * self.m11 + other.m22 * self.m21,
            m22: other.m21 * self.m12 + other.m22 * self.m22,
        }
    }

    pub fn determinant(&self) -> Complex64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    /// Amplitude reflection and transmission for a wave incident from the
    /// left, with matched media on both sides.
    pub fn to_reflectivity(&self) -> Result<ComplexReflectivity, WaveError> {
        let m22_abs = self.m22.norm();
        if m22_abs < 1e-30 {
            return Err(WaveError::SingularConversion { m22_abs });
        }
        Ok(ComplexReflectivity {
            r: -self.m21 / self.m22,
            t: self.determinant() / self.m22,
        })
    }
}

/// Two-sided scattering amplitudes of a passive element. All four entries
/// are bounded by 1 for lossless media, so cascades stay numerically stable
/// where raw transfer-matrix products overflow in deep stop bands.
#[derive(Debug, Clone, Copy)]
struct Scattering {
    /// Reflection for incidence from the left.
    r: Complex64,
    /// Transmission left to right.
    t: Complex64,
    /// Reflection for incidence from the right.
    r_back: Complex64,
    /// Transmission right to left.
    t_back: Complex64,
}

impl Scattering {
    const IDENTITY: Scattering = Scattering {
        r: Complex64::new(0.0, 0.0),
        t: Complex64::new(1.0, 0.0),
        r_back: Complex64::new(0.0, 0.0),
        t_back: Complex64::new(1.0, 0.0),
    };

    fn from_matrix(m: &TransferMatrix) -> Result<Scattering, WaveError> {
        let m22_abs = m.m22.norm();
        if m22_abs < 1e-30 {
            return Err(WaveError::SingularConversion { m22_abs });
        }
        Ok(Scattering {
            r: -m.m21 / m.m22,
            t: m.determinant() / m.m22,
            r_back: m.m12 / m.m22,
            t_back: 1.0 / m.m22,
        })
    }

    /// Redheffer star product: `self`'s element followed by `other`'s.
    fn then(&self, other: &Scattering) -> Result<Scattering, WaveError> {
        let denom = Complex64::new(1.0, 0.0) - self.r_back * other.r;
        if denom.norm() < 1e-30 {
            return Err(WaveError::SingularCascade {
                denom_abs: denom.norm(),
            });
        }
        Ok(Scattering {
            r: self.r + self.t_back * other.r * self.t / denom,
            t: other.t * self.t / denom,
            r_back: other.r_back + other.t * self.r_back * other.t_back / denom,
            t_back: self.t_back * other.t_back / denom,
        })
    }

    /// `count` copies in series, by repeated squaring.
    fn repeated(&self, count: u32) -> Result<Scattering, WaveError> {
        let mut total = Scattering::IDENTITY;
        let mut power = *self;
        let mut n = count;
        loop {
            if n & 1 == 1 {
                total = total.then(&power)?;
            }
            n >>= 1;
            if n == 0 {
                return Ok(total);
            }
            power = power.then(&power)?;
        }
    }
}

/// Complex amplitude reflectivity and transmissivity of a mirror.
///
/// For a lossless mirror `|r|² + |t|² = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexReflectivity {
    pub r: Complex64,
    pub t: Complex64,
}

impl ComplexReflectivity {
    /// Power reflectivity |r|².
    pub fn power(&self) -> f64 {
        self.r.norm_sqr()
    }
}

/// Bragg frequency of the unit cell: the frequency at which the acoustic
/// phase accumulated over one period equals π.
pub fn bragg_frequency(spec: &DbrSpec, material: &MaterialParams) -> f64 {
    let v = material.phase_velocity;
    let v_metal = v * (1.0 - spec.velocity_contrast);
    let metal_len = spec.duty_cycle * spec.period;
    let bare_len = (1.0 - spec.duty_cycle) * spec.period;
    1.0 / (2.0 * (metal_len / v_metal + bare_len / v))
}

/// Transfer matrix of one DBR unit cell: a metalized segment (length
/// `duty·period`, velocity `v·(1−Δv/v)`) followed by a bare segment, with the
/// velocity-mismatch interfaces between them.
pub fn dbr_unit_cell_matrix(
    f: f64,
    spec: &DbrSpec,
    material: &MaterialParams,
) -> Result<TransferMatrix, WaveError> {
    if !(f > 0.0) {
        return Err(WaveError::NonPositiveFrequency(f));
    }
    let v = material.phase_velocity;
    let v_metal = v * (1.0 - spec.velocity_contrast);
    let metal_len = spec.duty_cycle * spec.period;
    let bare_len = (1.0 - spec.duty_cycle) * spec.period;
    // Loss is apportioned across the two segments by length.
    let metal_atten = spec.per_cell_amplitude_loss * spec.duty_cycle;
    let bare_atten = spec.per_cell_amplitude_loss * (1.0 - spec.duty_cycle);

    let cell = TransferMatrix::interface(f, v, v_metal)
        .then(&TransferMatrix::propagation(f, metal_len, v_metal, metal_atten))
        .then(&TransferMatrix::interface(f, v_metal, v))
        .then(&TransferMatrix::propagation(f, bare_len, v, bare_atten));
    Ok(cell)
}

/// Amplitude (r, t) of a cascade of `strip_count` unit cells. The cells are
/// combined as scattering matrices, which stays accurate deep in the stop
/// band where the raw transfer-matrix product loses the small transmitted
/// component to rounding.
pub fn mirror_reflectivity(
    f: f64,
    spec: &DbrSpec,
    material: &MaterialParams,
) -> Result<ComplexReflectivity, WaveError> {
    if !(f > 0.0) {
        return Err(WaveError::NonPositiveFrequency(f));
    }
    if spec.strip_count == 0 {
        return TransferMatrix::IDENTITY.to_reflectivity();
    }
    let cell = Scattering::from_matrix(&dbr_unit_cell_matrix(f, spec, material)?)?;
    let total = cell.repeated(spec.strip_count)?;
    Ok(ComplexReflectivity {
        r: total.r,
        t: total.t,
    })
}

/// Round-trip power retention between two mirrors,
/// `Rₜ = |r_left|² · |r_right|²`.
pub fn round_trip_retention(
    f: f64,
    left: &DbrSpec,
    right: &DbrSpec,
    material: &MaterialParams,
) -> Result<f64, WaveError> {
    let rl = mirror_reflectivity(f, left, material)?;
    let rr = mirror_reflectivity(f, right, material)?;
    Ok(rl.power() * rr.power())
}

/// Normalized IDT array factor `A(f) = |sin(Nπδ) / (N sin(πδ))|` with
/// `δ = (f − f₀)/f₀`, clamped to [0, 1]. `A(f₀) = 1`.
pub fn idt_response(f: f64, spec: &IdtSpec, material: &MaterialParams) -> f64 {
    let f0 = spec.resolved_center_frequency(material);
    let delta = (f - f0) / f0;
    let n = spec.finger_pairs as f64;
    let x = PI * delta;
    let s = x.sin();
    if s.abs() < 1e-12 {
        // Removable singularity at δ = 0 (and at every integer δ, where the
        // array factor returns to its grating-lobe maximum).
        return 1.0;
    }
    ((n * x).sin() / (n * s)).abs().clamp(0.0, 1.0)
}

/// Frequency-dependent qubit-cavity coupling, `g(f) = g_max · A(f)`.
pub fn coupling_profile(f: f64, spec: &IdtSpec, material: &MaterialParams) -> f64 {
    spec.peak_coupling * idt_response(f, spec, material)
}

//! Device description files.
//!
//! The format is INI-style: `[section]` headers and `key = value` lines,
//! with `#` or `;` starting a full-line comment. Values may carry an SI unit
//! suffix (Hz, kHz, MHz, GHz, nm, um, mm, m, us, ns, s) and are normalized
//! on parse. Keys mirror the field names of the device description types.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    DbrSpec, FpCavitySpec, IdtSpec, MaterialParams, QubitSpec, RingCavitySpec, Validate,
    Violation, DEFAULT_VELOCITY_CONTRAST,
};

/// The cavity a config file describes.
#[derive(Debug, Clone, PartialEq)]
pub enum CavityConfig {
    Fp(FpCavitySpec),
    Ring(RingCavitySpec),
}

/// A parsed and validated device description.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub cavity: CavityConfig,
    pub qubit: Option<QubitSpec>,
}

impl DeviceConfig {
    pub fn material(&self) -> &MaterialParams {
        match &self.cavity {
            CavityConfig::Fp(s) => &s.material,
            CavityConfig::Ring(s) => &s.material,
        }
    }

    /// The qubit section, required by decay and fit pipelines.
    pub fn require_qubit(&self) -> Result<&QubitSpec, ConfigError> {
        self.qubit
            .as_ref()
            .ok_or_else(|| ConfigError::MissingSection("qubit".to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("missing section [{0}]")]
    MissingSection(String),
    #[error("section [{section}] is missing key '{key}'")]
    MissingKey { section: String, key: String },
    #[error("section [{section}] does not apply to a {kind} cavity")]
    UnexpectedSection { section: String, kind: String },
    #[error("{}", violation_list(.0))]
    Invalid(Vec<Violation>),
}

fn violation_list(violations: &[Violation]) -> String {
    let items: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
    format!("invalid configuration: {}", items.join("; "))
}

const SECTIONS: [&str; 6] = ["material", "dbr.left", "dbr.right", "idt", "cavity", "qubit"];

/// Unit suffixes in match order; longer suffixes shadow their tails.
const UNITS: [(&str, f64); 11] = [
    ("GHz", 1e9),
    ("MHz", 1e6),
    ("kHz", 1e3),
    ("Hz", 1.0),
    ("nm", 1e-9),
    ("um", 1e-6),
    ("mm", 1e-3),
    ("us", 1e-6),
    ("ns", 1e-9),
    ("m", 1.0),
    ("s", 1.0),
];

/// Parses a number with an optional SI unit suffix, e.g. "430nm" or "7.1MHz".
pub fn parse_quantity(text: &str) -> Result<f64, String> {
    let t = text.trim();
    for (suffix, mult) in UNITS {
        if let Some(num) = t.strip_suffix(suffix) {
            let num = num.trim_end();
            if num.is_empty() {
                return Err(format!("missing number before unit '{suffix}'"));
            }
            return num
                .parse::<f64>()
                .map(|v| v * mult)
                .map_err(|_| format!("cannot parse number '{num}'"));
        }
    }
    t.parse::<f64>()
        .map_err(|_| format!("cannot parse number '{t}'"))
}

#[derive(Debug, Clone)]
struct RawValue {
    text: String,
    line: usize,
    column: usize,
}

struct SectionReader {
    name: String,
    entries: BTreeMap<String, RawValue>,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<RawValue> {
        self.entries.remove(key)
    }

    fn required(&mut self, key: &str) -> Result<RawValue, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::MissingKey {
            section: self.name.clone(),
            key: key.to_string(),
        })
    }

    fn quantity(&mut self, key: &str) -> Result<f64, ConfigError> {
        let raw = self.required(key)?;
        quantity_of(&raw)
    }

    fn optional_quantity(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.take(key).map(|raw| quantity_of(&raw)).transpose()
    }

    fn quantity_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.optional_quantity(key)?.unwrap_or(default))
    }

    fn count(&mut self, key: &str) -> Result<u32, ConfigError> {
        let raw = self.required(key)?;
        raw.text.parse::<u32>().map_err(|_| ConfigError::Parse {
            line: raw.line,
            column: raw.column,
            message: format!("'{}' is not a nonnegative integer", raw.text),
        })
    }

    fn word(&mut self, key: &str) -> Result<RawValue, ConfigError> {
        self.required(key)
    }

    /// Rejects any keys left unread; all schemas consume what they know.
    fn finish(self) -> Result<(), ConfigError> {
        if let Some((key, raw)) = self.entries.into_iter().next() {
            return Err(ConfigError::Parse {
                line: raw.line,
                column: raw.column,
                message: format!("unknown key '{key}' in section [{}]", self.name),
            });
        }
        Ok(())
    }
}

fn quantity_of(raw: &RawValue) -> Result<f64, ConfigError> {
    parse_quantity(&raw.text).map_err(|message| ConfigError::Parse {
        line: raw.line,
        column: raw.column,
        message,
    })
}

fn parse_raw(text: &str) -> Result<BTreeMap<String, SectionReader>, ConfigError> {
    let mut sections: BTreeMap<String, SectionReader> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw_line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw_line.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        let column = line.len() - line.trim_start().len() + 1;
        if let Some(inner) = trimmed.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: "unterminated section header".to_string(),
                });
            };
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: format!("unknown section [{name}]"),
                });
            }
            if sections.contains_key(name) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: format!("duplicate section [{name}]"),
                });
            }
            sections.insert(
                name.to_string(),
                SectionReader {
                    name: name.to_string(),
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name.to_string());
        } else if let Some(eq) = trimmed.find('=') {
            let key = trimmed[..eq].trim();
            let value = trimmed[eq + 1..].trim();
            if key.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: "empty key before '='".to_string(),
                });
            }
            if value.is_empty() {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: format!("key '{key}' has no value"),
                });
            }
            let Some(section) = &current else {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: format!("key '{key}' appears before any section header"),
                });
            };
            let reader = sections.get_mut(section).expect("section exists");
            if reader.entries.contains_key(key) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    column,
                    message: format!("duplicate key '{key}' in section [{section}]"),
                });
            }
            reader.entries.insert(
                key.to_string(),
                RawValue {
                    text: value.to_string(),
                    line: line_no,
                    column,
                },
            );
        } else {
            return Err(ConfigError::Parse {
                line: line_no,
                column,
                message: "expected '[section]' or 'key = value'".to_string(),
            });
        }
    }
    Ok(sections)
}

fn take_section(
    sections: &mut BTreeMap<String, SectionReader>,
    name: &str,
) -> Result<SectionReader, ConfigError> {
    sections
        .remove(name)
        .ok_or_else(|| ConfigError::MissingSection(name.to_string()))
}

fn material_from(mut sec: SectionReader) -> Result<MaterialParams, ConfigError> {
    let material = MaterialParams {
        phase_velocity: sec.quantity("phase_velocity")?,
        group_velocity: sec.quantity("group_velocity")?,
        substrate_velocity: sec.quantity("substrate_velocity")?,
    };
    sec.finish()?;
    Ok(material)
}

fn dbr_from(mut sec: SectionReader) -> Result<DbrSpec, ConfigError> {
    let spec = DbrSpec {
        period: sec.quantity("period")?,
        duty_cycle: sec.quantity("duty_cycle")?,
        strip_count: sec.count("strip_count")?,
        velocity_contrast: sec.quantity_or("velocity_contrast", DEFAULT_VELOCITY_CONTRAST)?,
        per_cell_amplitude_loss: sec.quantity_or("per_cell_amplitude_loss", 0.0)?,
    };
    sec.finish()?;
    Ok(spec)
}

fn idt_from(mut sec: SectionReader) -> Result<IdtSpec, ConfigError> {
    let spec = IdtSpec {
        finger_pairs: sec.count("finger_pairs")?,
        period: sec.quantity("period")?,
        center_frequency: sec.optional_quantity("center_frequency")?,
        peak_coupling: sec.quantity("peak_coupling")?,
    };
    sec.finish()?;
    Ok(spec)
}

fn qubit_from(mut sec: SectionReader) -> Result<QubitSpec, ConfigError> {
    let spec = QubitSpec {
        frequency: sec.quantity("frequency")?,
        intrinsic_rate: sec.quantity("intrinsic_rate")?,
    };
    sec.finish()?;
    Ok(spec)
}

/// Parses a device description, resolving unit suffixes and validating every
/// spec invariant.
pub fn parse_config(text: &str) -> Result<DeviceConfig, ConfigError> {
    let mut sections = parse_raw(text)?;
    let mut cavity_sec = take_section(&mut sections, "cavity")?;
    let kind_raw = cavity_sec.word("kind")?;
    let material = material_from(take_section(&mut sections, "material")?)?;

    let cavity = match kind_raw.text.as_str() {
        "fp" => {
            let spec = FpCavitySpec {
                mirror_separation: cavity_sec.quantity("mirror_separation")?,
                intrinsic_q: cavity_sec.optional_quantity("intrinsic_q")?,
                mode_anchor: cavity_sec.optional_quantity("mode_anchor")?,
                left_mirror: dbr_from(take_section(&mut sections, "dbr.left")?)?,
                right_mirror: dbr_from(take_section(&mut sections, "dbr.right")?)?,
                idt: idt_from(take_section(&mut sections, "idt")?)?,
                material,
            };
            CavityConfig::Fp(spec)
        }
        "ring" => {
            let spec = RingCavitySpec {
                circumference: cavity_sec.quantity("circumference")?,
                uniform_q: cavity_sec.quantity("uniform_q")?,
                uniform_coupling: cavity_sec.quantity("uniform_coupling")?,
                reference_frequency: cavity_sec.quantity("reference_frequency")?,
                material,
            };
            for name in ["dbr.left", "dbr.right", "idt"] {
                if sections.contains_key(name) {
                    return Err(ConfigError::UnexpectedSection {
                        section: name.to_string(),
                        kind: "ring".to_string(),
                    });
                }
            }
            CavityConfig::Ring(spec)
        }
        other => {
            return Err(ConfigError::Parse {
                line: kind_raw.line,
                column: kind_raw.column,
                message: format!("cavity kind must be 'fp' or 'ring', got '{other}'"),
            })
        }
    };
    cavity_sec.finish()?;

    let qubit = match sections.remove("qubit") {
        Some(sec) => Some(qubit_from(sec)?),
        None => None,
    };

    let mut violations = match &cavity {
        CavityConfig::Fp(s) => s.validate(),
        CavityConfig::Ring(s) => s.validate(),
    };
    if let Some(q) = &qubit {
        violations.extend(q.validate());
    }
    if !violations.is_empty() {
        return Err(ConfigError::Invalid(violations));
    }
    Ok(DeviceConfig { cavity, qubit })
}

fn push_kv(out: &mut String, key: &str, value: f64) {
    out.push_str(&format!("{key} = {value:.16e}\n"));
}

/// Serializes a device description; `parse_config` reads it back exactly.
pub fn write_config(config: &DeviceConfig) -> String {
    let mut out = String::new();
    let material = config.material();
    out.push_str("[material]\n");
    push_kv(&mut out, "phase_velocity", material.phase_velocity);
    push_kv(&mut out, "group_velocity", material.group_velocity);
    push_kv(&mut out, "substrate_velocity", material.substrate_velocity);
    out.push('\n');

    match &config.cavity {
        CavityConfig::Fp(spec) => {
            for (name, mirror) in [("dbr.left", &spec.left_mirror), ("dbr.right", &spec.right_mirror)]
            {
                out.push_str(&format!("[{name}]\n"));
                push_kv(&mut out, "period", mirror.period);
                push_kv(&mut out, "duty_cycle", mirror.duty_cycle);
                out.push_str(&format!("strip_count = {}\n", mirror.strip_count));
                push_kv(&mut out, "velocity_contrast", mirror.velocity_contrast);
                push_kv(
                    &mut out,
                    "per_cell_amplitude_loss",
                    mirror.per_cell_amplitude_loss,
                );
                out.push('\n');
            }
            out.push_str("[idt]\n");
            out.push_str(&format!("finger_pairs = {}\n", spec.idt.finger_pairs));
            push_kv(&mut out, "period", spec.idt.period);
            if let Some(f0) = spec.idt.center_frequency {
                push_kv(&mut out, "center_frequency", f0);
            }
            push_kv(&mut out, "peak_coupling", spec.idt.peak_coupling);
            out.push('\n');
            out.push_str("[cavity]\nkind = fp\n");
            push_kv(&mut out, "mirror_separation", spec.mirror_separation);
            if let Some(q) = spec.intrinsic_q {
                push_kv(&mut out, "intrinsic_q", q);
            }
            if let Some(f) = spec.mode_anchor {
                push_kv(&mut out, "mode_anchor", f);
            }
        }
        CavityConfig::Ring(spec) => {
            out.push_str("[cavity]\nkind = ring\n");
            push_kv(&mut out, "circumference", spec.circumference);
            push_kv(&mut out, "uniform_q", spec.uniform_q);
            push_kv(&mut out, "uniform_coupling", spec.uniform_coupling);
            push_kv(&mut out, "reference_frequency", spec.reference_frequency);
        }
    }

    if let Some(q) = &config.qubit {
        out.push('\n');
        out.push_str("[qubit]\n");
        push_kv(&mut out, "frequency", q.frequency);
        push_kv(&mut out, "intrinsic_rate", q.intrinsic_rate);
    }
    out
}

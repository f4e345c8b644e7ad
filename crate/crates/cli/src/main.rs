//! `cqad`: command-line front end for the phononic-cavity toolkit.
//!
//! Subcommands: `spectrum` (mirror reflectivity and coupling over a band),
//! `modes` (mode table), `scan` (decay rate vs qubit frequency), `decay`
//! (excited-population time trace), `fit` (parameter estimation from CSV),
//! `report` (Purcell numbers at one qubit frequency).
//!
//! Exit codes: 0 success, 1 usage, 2 data or validation, 3 numerical.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use cqad_core::dynamics::{self, RateConvention};
use cqad_core::fit::{
    self, FitProblem, FpModelParams, RingModelParams, MODE_WINDOW,
};
use cqad_core::io::config::{self, CavityConfig, DeviceConfig};
use cqad_core::io::csv::{self, format_number};
use cqad_core::io::synth;
use cqad_core::model::{FitResult, ModeSet};
use cqad_core::spectrum::{fp_fsr, fp_mode_set, ring_fsr, ring_mode_set};
use cqad_core::wave;

fn quantity(text: &str) -> Result<f64, String> {
    config::parse_quantity(text)
}

#[derive(Parser)]
#[command(
    name = "cqad",
    version,
    about = "Phononic cavity spectra, qubit decay dynamics, and parameter fits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mirror |r|^2 and IDT coupling over a frequency band (fp only).
    Spectrum {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = quantity)]
        from: f64,
        #[arg(long, value_parser = quantity)]
        to: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cavity mode table (frequency, linewidth, coupling) over a band.
    Modes {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = quantity)]
        from: f64,
        #[arg(long, value_parser = quantity)]
        to: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Qubit decay rate swept over qubit frequency.
    Scan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = quantity)]
        from: f64,
        #[arg(long, value_parser = quantity)]
        to: f64,
        #[arg(long, default_value_t = 601)]
        points: usize,
        /// Multiplicative noise fraction applied to the rates.
        #[arg(long)]
        noise: Option<f64>,
        /// Seed for synthetic noise; required with --noise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Excited-state population versus time at the configured qubit frequency.
    Decay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = quantity)]
        duration: f64,
        #[arg(long, default_value_t = 400)]
        points: usize,
        /// Additive population noise sigma.
        #[arg(long)]
        noise: Option<f64>,
        /// Seed for synthetic noise; required with --noise.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a model to CSV data and print a parameter report.
    Fit {
        /// One of: ring, fp, exponential, tls.
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// Device config supplying initial parameter values (ring/fp).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Hold a parameter: --fix name or --fix name=value. Repeatable.
        #[arg(long = "fix")]
        fix: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Purcell factor, emission probability, and pulse metrics at one frequency.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "qubit-freq", value_parser = quantity)]
        qubit_freq: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum AppError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<config::ConfigError> for AppError {
    fn from(e: config::ConfigError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<csv::CsvError> for AppError {
    fn from(e: csv::CsvError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<cqad_core::spectrum::SpectrumError> for AppError {
    fn from(e: cqad_core::spectrum::SpectrumError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<dynamics::DynamicsError> for AppError {
    fn from(e: dynamics::DynamicsError) -> Self {
        AppError::Numeric(e.to_string())
    }
}

impl From<fit::FitError> for AppError {
    fn from(e: fit::FitError) -> Self {
        match e {
            fit::FitError::Spectrum(inner) => AppError::Numeric(inner.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: &PathBuf) -> Result<DeviceConfig, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(config::parse_config(&text)?)
}

fn read_data(path: &PathBuf) -> Result<String, AppError> {
    fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), AppError> {
    match out {
        Some(path) => fs::write(path, text)
            .map_err(|e| AppError::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn check_band(from: f64, to: f64, points: usize) -> Result<(), AppError> {
    if !(from > 0.0) {
        return Err(AppError::Usage(format!("--from must be positive, got {from}")));
    }
    if !(to > from) {
        return Err(AppError::Usage(format!(
            "--to must exceed --from, got [{from}, {to}]"
        )));
    }
    if points < 2 {
        return Err(AppError::Usage(format!(
            "--points must be at least 2, got {points}"
        )));
    }
    Ok(())
}

fn check_noise(noise: &Option<f64>, seed: &Option<u64>) -> Result<(), AppError> {
    if let Some(n) = noise {
        if !(*n >= 0.0) {
            return Err(AppError::Usage(format!("--noise must be >= 0, got {n}")));
        }
        if seed.is_none() {
            return Err(AppError::Usage(
                "--noise requires an explicit --seed".to_string(),
            ));
        }
    }
    Ok(())
}

fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| from + (to - from) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Half-width of the mode band kept around any frequency of interest, in
/// free spectral ranges. Matches the fit model's summation window plus
/// guard modes.
fn mode_window(fsr: f64) -> f64 {
    (MODE_WINDOW + 2) as f64 * fsr
}

fn modes_around(config: &DeviceConfig, band: (f64, f64)) -> Result<ModeSet, AppError> {
    let set = match &config.cavity {
        CavityConfig::Fp(spec) => fp_mode_set(spec, band)?,
        CavityConfig::Ring(spec) => ring_mode_set(spec, band)?,
    };
    Ok(set)
}

fn device_fsr(config: &DeviceConfig) -> Result<f64, AppError> {
    let fsr = match &config.cavity {
        CavityConfig::Fp(spec) => fp_fsr(spec)?,
        CavityConfig::Ring(spec) => ring_fsr(spec)?,
    };
    Ok(fsr)
}

fn run(command: Command) -> Result<(), AppError> {
    match command {
        Command::Spectrum {
            config,
            from,
            to,
            points,
            out,
        } => {
            check_band(from, to, points)?;
            let device = load_config(&config)?;
            let CavityConfig::Fp(spec) = &device.cavity else {
                return Err(AppError::Data(
                    "spectrum requires an fp cavity config".to_string(),
                ));
            };
            let freqs = linspace(from, to, points);
            let mut r2_left = Vec::with_capacity(points);
            let mut r2_right = Vec::with_capacity(points);
            let mut g = Vec::with_capacity(points);
            for &f in &freqs {
                let left = wave::mirror_reflectivity(f, &spec.left_mirror, &spec.material)
                    .map_err(|e| AppError::Numeric(e.to_string()))?;
                let right = wave::mirror_reflectivity(f, &spec.right_mirror, &spec.material)
                    .map_err(|e| AppError::Numeric(e.to_string()))?;
                r2_left.push(left.power());
                r2_right.push(right.power());
                g.push(wave::coupling_profile(f, &spec.idt, &spec.material));
            }
            let text = csv::write_table(
                &["freq_hz", "r2_left", "r2_right", "g_hz"],
                &[&freqs, &r2_left, &r2_right, &g],
            );
            emit(&out, &text)
        }

        Command::Modes {
            config,
            from,
            to,
            out,
        } => {
            check_band(from, to, 2)?;
            let device = load_config(&config)?;
            let set = modes_around(&device, (from, to))?;
            let freqs: Vec<f64> = set.modes.iter().map(|m| m.frequency).collect();
            let kappas: Vec<f64> = set.modes.iter().map(|m| m.linewidth).collect();
            let gs: Vec<f64> = set.modes.iter().map(|m| m.coupling).collect();
            let lossy: Vec<f64> = set
                .modes
                .iter()
                .map(|m| if m.lossy { 1.0 } else { 0.0 })
                .collect();
            let text = csv::write_table(
                &["freq_hz", "kappa_hz", "g_hz", "lossy"],
                &[&freqs, &kappas, &gs, &lossy],
            );
            emit(&out, &text)
        }

        Command::Scan {
            config,
            from,
            to,
            points,
            noise,
            seed,
            out,
        } => {
            check_band(from, to, points)?;
            check_noise(&noise, &seed)?;
            let device = load_config(&config)?;
            let qubit = device.require_qubit()?;
            let freqs = linspace(from, to, points);
            let window = mode_window(device_fsr(&device)?);
            let mut scan = match &device.cavity {
                CavityConfig::Fp(spec) => {
                    dynamics::fp_decay_scan(&freqs, spec, qubit.intrinsic_rate, window)?
                }
                CavityConfig::Ring(spec) => {
                    let set = ring_mode_set(spec, (from - window, to + window))?;
                    dynamics::decay_scan(&freqs, &set, qubit.intrinsic_rate)?
                }
            };
            if let (Some(frac), Some(seed)) = (noise, seed) {
                let clean = scan.rates.clone();
                scan.rates = synth::apply_multiplicative_noise(&clean, frac, seed);
                if frac > 0.0 && clean.iter().all(|&r| r > 0.0) {
                    scan.uncertainties = Some(clean.iter().map(|&r| frac * r).collect());
                }
            }
            emit(&out, &csv::write_scan(&scan))
        }

        Command::Decay {
            config,
            duration,
            points,
            noise,
            seed,
            out,
        } => {
            if !(duration > 0.0) {
                return Err(AppError::Usage(format!(
                    "--duration must be positive, got {duration}"
                )));
            }
            if points < 8 {
                return Err(AppError::Usage(format!(
                    "--points must be at least 8, got {points}"
                )));
            }
            check_noise(&noise, &seed)?;
            let device = load_config(&config)?;
            let qubit = device.require_qubit()?;
            let window = mode_window(device_fsr(&device)?);
            let set = modes_around(
                &device,
                (qubit.frequency - window, qubit.frequency + window),
            )?;
            let t_grid = linspace(0.0, duration, points);
            let mut curve = dynamics::evolve_single_excitation(
                qubit.frequency,
                &set,
                qubit.intrinsic_rate,
                &t_grid,
            )?;
            if let (Some(sigma), Some(seed)) = (noise, seed) {
                curve.populations = synth::add_population_noise(&curve.populations, sigma, seed);
            }
            emit(&out, &csv::write_curve(&curve))
        }

        Command::Fit {
            model,
            data,
            init,
            fix,
            out,
        } => {
            let text = read_data(&data)?;
            let rendered = match model.as_str() {
                "ring" => {
                    let scan = csv::read_scan(&text)?;
                    let device = init_config(&init, "ring")?;
                    let mut problem = ring_problem(&device)?;
                    apply_fixes(&mut problem, &fix)?;
                    let result = fit::fit_ring_model(&scan, &problem)?;
                    render_fit("ring", &result)
                }
                "fp" => {
                    let scan = csv::read_scan(&text)?;
                    let device = init_config(&init, "fp")?;
                    let CavityConfig::Fp(spec) = &device.cavity else {
                        return Err(AppError::Data(
                            "--model fp needs an fp cavity config".to_string(),
                        ));
                    };
                    let mut problem = fp_problem(&device)?;
                    apply_fixes(&mut problem, &fix)?;
                    let result = fit::fit_fp_model(&scan, spec, &problem)?;
                    render_fit("fp", &result)
                }
                "exponential" => {
                    let curve = csv::read_curve(&text)?;
                    let result = fit::fit_exponential(&curve)?;
                    render_fit("exponential", &result)
                }
                "tls" => {
                    let cols = csv::read_columns(&text, &["n_phonon", "q"])?;
                    let result = fit::tls_q_fit(&cols[0], &cols[1])?;
                    render_fit("tls", &result)
                }
                other => {
                    return Err(AppError::Usage(format!(
                        "unknown model '{other}'; expected ring, fp, exponential, or tls"
                    )))
                }
            };
            emit(&out, &rendered)
        }

        Command::Report {
            config,
            qubit_freq,
            out,
        } => {
            if !(qubit_freq > 0.0) {
                return Err(AppError::Usage(format!(
                    "--qubit-freq must be positive, got {qubit_freq}"
                )));
            }
            let device = load_config(&config)?;
            let qubit = device.require_qubit()?;
            let window = mode_window(device_fsr(&device)?);
            let set = modes_around(&device, (qubit_freq - window, qubit_freq + window))?;
            let gamma_e =
                dynamics::multimode_decay_rate(qubit_freq, &set, qubit.intrinsic_rate);
            let purcell = dynamics::purcell_factor(gamma_e, qubit.intrinsic_rate)?;
            let probability = dynamics::phonon_emission_probability(gamma_e, qubit.intrinsic_rate)?;
            let (duration, length) = dynamics::emitted_pulse_metrics(
                gamma_e,
                device.material().group_velocity,
                RateConvention::FromHertz,
            )?;
            let mut text = String::from("[report]\n");
            text += &format!("qubit_freq_hz = {}\n", format_number(qubit_freq));
            text += &format!("gamma_0_hz = {}\n", format_number(qubit.intrinsic_rate));
            text += &format!("gamma_e_hz = {}\n", format_number(gamma_e));
            text += &format!("purcell_factor = {}\n", format_number(purcell));
            text += &format!("emission_probability = {}\n", format_number(probability));
            text += &format!("pulse_duration_s = {}\n", format_number(duration));
            text += &format!("pulse_length_m = {}\n", format_number(length));
            if let CavityConfig::Fp(spec) = &device.cavity {
                let regime = dynamics::classify_regime(
                    qubit_freq,
                    spec,
                    &dynamics::RegimeThresholds::default(),
                )?;
                text += &format!("regime = {regime}\n");
            }
            emit(&out, &text)
        }
    }
}

fn init_config(init: &Option<PathBuf>, model: &str) -> Result<DeviceConfig, AppError> {
    let Some(path) = init else {
        return Err(AppError::Usage(format!(
            "--model {model} requires --init <config>"
        )));
    };
    load_config(path)
}

fn ring_problem(device: &DeviceConfig) -> Result<FitProblem, AppError> {
    let CavityConfig::Ring(spec) = &device.cavity else {
        return Err(AppError::Data(
            "--model ring needs a ring cavity config".to_string(),
        ));
    };
    let qubit = device.require_qubit()?;
    if !(qubit.intrinsic_rate > 0.0) {
        return Err(AppError::Data(
            "ring fit needs a positive qubit intrinsic_rate for its initial value".to_string(),
        ));
    }
    let initial = RingModelParams {
        gamma_0: qubit.intrinsic_rate,
        q: spec.uniform_q,
        g: spec.uniform_coupling,
        fsr: ring_fsr(spec)?,
        f_offset: spec.reference_frequency,
    };
    Ok(FitProblem::ring(&initial))
}

fn fp_problem(device: &DeviceConfig) -> Result<FitProblem, AppError> {
    let CavityConfig::Fp(spec) = &device.cavity else {
        return Err(AppError::Data(
            "--model fp needs an fp cavity config".to_string(),
        ));
    };
    let qubit = device.require_qubit()?;
    if !(qubit.intrinsic_rate > 0.0) {
        return Err(AppError::Data(
            "fp fit needs a positive qubit intrinsic_rate for its initial value".to_string(),
        ));
    }
    let Some(intrinsic_q) = spec.intrinsic_q else {
        return Err(AppError::Data(
            "fp fit needs intrinsic_q in the [cavity] section".to_string(),
        ));
    };
    let initial = FpModelParams {
        gamma_0: qubit.intrinsic_rate,
        g_scale: 1.0,
        intrinsic_q,
        fsr: fp_fsr(spec)?,
        f_anchor: spec
            .mode_anchor
            .unwrap_or_else(|| wave::bragg_frequency(&spec.left_mirror, &spec.material)),
    };
    Ok(FitProblem::fp(&initial))
}

fn apply_fixes(problem: &mut FitProblem, fixes: &[String]) -> Result<(), AppError> {
    for entry in fixes {
        let (name, value) = match entry.split_once('=') {
            Some((n, v)) => {
                let parsed = config::parse_quantity(v)
                    .map_err(|e| AppError::Usage(format!("--fix {entry}: {e}")))?;
                (n.trim(), Some(parsed))
            }
            None => (entry.trim(), None),
        };
        if let Some(v) = value {
            if !problem.set_initial(name, v) {
                return Err(AppError::Usage(format!(
                    "--fix {entry}: no parameter named '{name}'"
                )));
            }
        }
        if !problem.set_fixed(name, true) {
            return Err(AppError::Usage(format!(
                "--fix {entry}: no parameter named '{name}'"
            )));
        }
    }
    Ok(())
}

fn render_fit(model: &str, result: &FitResult) -> String {
    let mut out = String::from("[fit_result]\n");
    out += &format!("model = {model}\n");
    out += &format!("status = {}\n", result.status);
    out += &format!("residual_norm = {}\n", format_number(result.residual_norm));
    for p in &result.parameters {
        out += &format!("{} = {}\n", p.name, format_number(p.value));
        if let Some(s) = p.stderr {
            out += &format!("{}_stderr = {}\n", p.name, format_number(s));
        }
        if p.fixed {
            out += &format!("{}_fixed = true\n", p.name);
        }
        if p.at_bound {
            out += &format!("{}_at_bound = true\n", p.name);
        }
    }
    out
}

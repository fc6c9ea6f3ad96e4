//! Flat `key = value` configuration files.
//!
//! Every key has a default from the core defaults. Unknown keys, duplicate
//! keys and malformed values are rejected with the offending key named.

use std::collections::BTreeSet;
use std::path::Path;

use qrelay_core::scenarios::{build_default_config, EvalMode, ExperimentConfig};
use qrelay_core::sources::{PairInterpretation, PairStatistics};
use qrelay_core::stability::{Controller, DriftModel, TemperatureProcess};
use qrelay_core::SimError;

use crate::CliError;

/// Settings of the stability subcommand that are not part of the drift model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilitySettings {
    pub hours: f64,
    pub dt_s: f64,
    pub controller: bool,
    /// Coincidence rate assumed for the dip-locking feasibility check.
    pub pid_count_rate_per_s: f64,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            hours: 24.0,
            dt_s: 60.0,
            controller: true,
            pid_count_rate_per_s: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub drift: DriftModel,
    pub controller: Controller,
    pub stability: StabilitySettings,
    /// When set, dark counts are scaled so the blocking background equals
    /// this multiple of the signal before the run.
    pub calibrate_ratio: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cfg = Self {
            experiment: build_default_config(),
            drift: DriftModel::default(),
            controller: Controller::default(),
            stability: StabilitySettings::default(),
            calibrate_ratio: None,
        };
        cfg.sync();
        cfg
    }
}

impl RunConfig {
    /// The drift model shares the laser rate and seed of the experiment.
    pub fn sync(&mut self) {
        self.drift.rep_rate_hz = self.experiment.rep_rate_hz;
        self.drift.seed = self.experiment.seed;
    }
}

fn schema(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

fn number(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| schema(key, format!("expected a finite number, got `{v}`")))
}

fn non_negative(key: &str, v: &str) -> Result<f64, CliError> {
    let x = number(key, v)?;
    if x < 0.0 {
        return Err(schema(key, format!("expected a non-negative number, got `{v}`")));
    }
    Ok(x)
}

fn probability(key: &str, v: &str) -> Result<f64, CliError> {
    let x = non_negative(key, v)?;
    if x > 1.0 {
        return Err(schema(key, format!("expected a probability in [0, 1], got `{v}`")));
    }
    Ok(x)
}

fn integer(key: &str, v: &str) -> Result<u64, CliError> {
    v.parse::<u64>()
        .map_err(|_| schema(key, format!("expected a non-negative integer, got `{v}`")))
}

fn boolean(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(schema(key, format!("expected `true` or `false`, got `{v}`"))),
    }
}

fn statistics(key: &str, v: &str) -> Result<PairStatistics, CliError> {
    match v {
        "thermal" => Ok(PairStatistics::Thermal),
        "poissonian" => Ok(PairStatistics::Poissonian),
        "single" => Ok(PairStatistics::SinglePair),
        _ => Err(schema(key, format!("expected thermal, poissonian or single, got `{v}`"))),
    }
}

pub fn parse_mode(key: &str, v: &str) -> Result<EvalMode, CliError> {
    match v {
        "analytic" => Ok(EvalMode::Analytic),
        "montecarlo" => Ok(EvalMode::MonteCarlo),
        _ => Err(schema(key, format!("expected analytic or montecarlo, got `{v}`"))),
    }
}

/// Drift temperature keys are collected first and assembled once all lines are read.
#[derive(Default)]
struct DriftKeys {
    kind: Option<String>,
    rate_k_per_h: Option<f64>,
    amplitude_k: Option<f64>,
    period_h: Option<f64>,
    step_k_per_sqrt_h: Option<f64>,
}

impl DriftKeys {
    fn process(&self, default: TemperatureProcess) -> Result<TemperatureProcess, CliError> {
        let kind = match &self.kind {
            Some(k) => k.as_str(),
            None => match default {
                TemperatureProcess::Constant => "constant",
                TemperatureProcess::Ramp { .. } => "ramp",
                TemperatureProcess::Sinusoid { .. } => "sinusoid",
                TemperatureProcess::RandomWalk { .. } => "random_walk",
            },
        };
        let (rate, amp, period, step) = match default {
            TemperatureProcess::Ramp { rate_k_per_h } => (rate_k_per_h, 0.5, 24.0, 0.05),
            _ => (0.12, 0.5, 24.0, 0.05),
        };
        Ok(match kind {
            "constant" => TemperatureProcess::Constant,
            "ramp" => TemperatureProcess::Ramp {
                rate_k_per_h: self.rate_k_per_h.unwrap_or(rate),
            },
            "sinusoid" => TemperatureProcess::Sinusoid {
                amplitude_k: self.amplitude_k.unwrap_or(amp),
                period_h: self.period_h.unwrap_or(period),
            },
            "random_walk" => TemperatureProcess::RandomWalk {
                step_k_per_sqrt_h: self.step_k_per_sqrt_h.unwrap_or(step),
            },
            other => {
                return Err(schema(
                    "drift_kind",
                    format!("expected constant, ramp, sinusoid or random_walk, got `{other}`"),
                ))
            }
        })
    }
}

/// Parses configuration text on top of the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeSet::new();
    let mut drift = DriftKeys::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
            key: format!("line {}", lineno + 1),
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(schema(key, "given more than once"));
        }
        apply(&mut cfg, &mut drift, key, value)?;
    }
    if seen.contains("pair_mean") && (seen.contains("pair_mean_alice") || seen.contains("pair_mean_epr")) {
        return Err(schema("pair_mean", "cannot be combined with pair_mean_alice or pair_mean_epr"));
    }
    cfg.drift.temperature = drift.process(cfg.drift.temperature)?;
    cfg.sync();
    validate(&cfg)?;
    Ok(cfg)
}

/// Maps core validation failures to schema errors naming the parameter.
pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let as_schema = |e: SimError| match e {
        SimError::InvalidParameter { name, reason } => schema(name, reason),
        other => CliError::Config {
            key: "config".into(),
            message: other.to_string(),
        },
    };
    cfg.experiment.validate().map_err(as_schema)?;
    cfg.drift.validate().map_err(as_schema)?;
    cfg.controller.validate().map_err(as_schema)?;
    if !(cfg.stability.dt_s > 0.0) {
        return Err(schema("stability_dt_s", "must be positive"));
    }
    if !(cfg.stability.pid_count_rate_per_s > 0.0) {
        return Err(schema("pid_count_rate_per_s", "must be positive"));
    }
    Ok(())
}

fn apply(cfg: &mut RunConfig, drift: &mut DriftKeys, key: &str, v: &str) -> Result<(), CliError> {
    let e = &mut cfg.experiment;
    match key {
        "pair_mean" => {
            let p = non_negative(key, v)?;
            e.pair_mean_alice = p;
            e.pair_mean_epr = p;
        }
        "pair_mean_alice" => e.pair_mean_alice = non_negative(key, v)?,
        "pair_mean_epr" => e.pair_mean_epr = non_negative(key, v)?,
        "pair_interpretation" => {
            e.pair_interpretation = match v {
                "mean" => PairInterpretation::Mean,
                "at_least_one" => PairInterpretation::AtLeastOne,
                _ => return Err(schema(key, format!("expected mean or at_least_one, got `{v}`"))),
            }
        }
        "statistics" => {
            let s = statistics(key, v)?;
            e.statistics_alice = s;
            e.statistics_epr = s;
        }
        "statistics_alice" => e.statistics_alice = statistics(key, v)?,
        "statistics_epr" => e.statistics_epr = statistics(key, v)?,
        "heralded" => e.heralded = boolean(key, v)?,
        "phase_pump" => e.phase_pump = number(key, v)?,
        "phase_alice" => e.phase_alice = number(key, v)?,
        "phase_bob" => e.phase_bob = number(key, v)?,
        "delta_x_um" => e.delta_x_um = number(key, v)?,
        "dip_fwhm_um" => e.overlap.dip_fwhm_um = non_negative(key, v)?,
        "coherence_length_um" => e.overlap.coherence_length_um = non_negative(key, v)?,
        "loss_alice_db" => e.loss_alice_db = non_negative(key, v)?,
        "loss_charlie_db" => e.loss_charlie_db = non_negative(key, v)?,
        "loss_herald_db" => e.loss_herald_db = non_negative(key, v)?,
        "loss_bob_db" => e.loss_bob_db = non_negative(key, v)?,
        "symmetric_bsa" => e.bsa.symmetric = boolean(key, v)?,
        "bsa_window_bins" => e.bsa.window_bins = integer(key, v)? as usize,
        "herald_bin" => e.herald_bin = integer(key, v)? as usize,
        "rep_rate_hz" => e.rep_rate_hz = number(key, v)?,
        "bin_pitch_s" => e.bin_pitch_s = number(key, v)?,
        "integration_minutes" => e.integration_minutes = non_negative(key, v)?,
        "pulses_per_point" => {
            let n = integer(key, v)?;
            if n == 0 {
                return Err(schema(key, "must be at least 1"));
            }
            e.pulses_override = Some(n);
        }
        "max_photons" => {
            e.max_photons = match v {
                "auto" => None,
                _ => Some(
                    v.parse::<usize>()
                        .map_err(|_| schema(key, format!("expected `auto` or an integer, got `{v}`")))?,
                ),
            }
        }
        "max_tail_mass" => e.max_tail_mass = probability(key, v)?,
        "mode" => e.mode = parse_mode(key, v)?,
        "trials" => e.trials = integer(key, v)?,
        "seed" => e.seed = integer(key, v)?,
        "spool_alice_m" => e.timing.spool_alice_m = non_negative(key, v)?,
        "spool_charlie_m" => e.timing.spool_charlie_m = non_negative(key, v)?,
        "fiber_bob_m" => e.timing.fiber_bob_m = non_negative(key, v)?,
        "fiber_classical_m" => e.timing.fiber_classical_m = non_negative(key, v)?,
        "spool_bob_m" => e.timing.spool_bob_m = non_negative(key, v)?,
        "group_index" => e.timing.group_index = number(key, v)?,
        "bsa_latency_ns" => e.timing.bsa_latency_s = non_negative(key, v)? * 1e-9,
        "calibrate_ratio" => {
            cfg.calibrate_ratio = match v {
                "none" => None,
                _ => Some(non_negative(key, v)?),
            }
        }
        "drift_kind" => drift.kind = Some(v.to_string()),
        "drift_rate_k_per_h" => drift.rate_k_per_h = Some(number(key, v)?),
        "drift_amplitude_k" => drift.amplitude_k = Some(non_negative(key, v)?),
        "drift_period_h" => drift.period_h = Some(non_negative(key, v)?),
        "drift_step_k_per_sqrt_h" => drift.step_k_per_sqrt_h = Some(non_negative(key, v)?),
        "thermal_coeff_um_per_k" => cfg.drift.thermal_coeff_um_per_k = non_negative(key, v)?,
        "pulse_spacing_m" => cfg.drift.pulse_spacing_m = non_negative(key, v)?,
        "rep_rate_coeff_hz_per_k" => {
            cfg.drift.rep_rate_coeff_hz_per_k = match v {
                "auto" => None,
                _ => Some(non_negative(key, v)?),
            }
        }
        "jitter_bound_um" => cfg.drift.jitter_bound_um = non_negative(key, v)?,
        "jitter_correlation_s" => cfg.drift.jitter_correlation_s = non_negative(key, v)?,
        "controller" => cfg.stability.controller = boolean(key, v)?,
        "controller_gain_um_per_hz" => cfg.controller.gain_um_per_hz = non_negative(key, v)?,
        "controller_gain_error" => cfg.controller.gain_error = number(key, v)?,
        "motor_resolution_um" => cfg.controller.motor_resolution_um = non_negative(key, v)?,
        "update_interval_s" => cfg.controller.update_interval_s = non_negative(key, v)?,
        "stability_hours" => cfg.stability.hours = non_negative(key, v)?,
        "stability_dt_s" => cfg.stability.dt_s = non_negative(key, v)?,
        "pid_count_rate_per_s" => cfg.stability.pid_count_rate_per_s = non_negative(key, v)?,
        _ => {
            if let Some(rest) = key.strip_prefix("eta_").or_else(|| key.strip_prefix("dark_")) {
                let d = detector(cfg, rest).ok_or_else(|| schema(key, "unknown key"))?;
                if key.starts_with("eta_") {
                    d.efficiency = probability(key, v)?;
                } else {
                    let p = probability(key, v)?;
                    if p >= 1.0 {
                        return Err(schema(key, "dark-count probability must be below 1"));
                    }
                    d.dark_prob_per_gate = p;
                }
            } else if let Some(rest) = key.strip_prefix("calibrated_") {
                let d = detector(cfg, rest).ok_or_else(|| schema(key, "unknown key"))?;
                d.calibrated = boolean(key, v)?;
            } else {
                return Err(schema(key, "unknown key"));
            }
        }
    }
    Ok(())
}

fn detector<'a>(cfg: &'a mut RunConfig, name: &str) -> Option<&'a mut qrelay_core::detection::DetectorModel> {
    let d = &mut cfg.experiment.detectors;
    match name {
        "ge" => Some(&mut d.bsa_ge),
        "ingaas" => Some(&mut d.bsa_ingaas),
        "herald" => Some(&mut d.herald),
        "bob" => Some(&mut d.bob),
        _ => None,
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        key: "config".into(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    parse_config(&text)
}

/// Fully resolved configuration, defaults included, as flat pairs.
pub fn to_flat(cfg: &RunConfig) -> Vec<(String, String)> {
    let mut out = cfg.experiment.to_flat();
    let (kind, extra): (&str, Vec<(&str, f64)>) = match cfg.drift.temperature {
        TemperatureProcess::Constant => ("constant", vec![]),
        TemperatureProcess::Ramp { rate_k_per_h } => ("ramp", vec![("drift_rate_k_per_h", rate_k_per_h)]),
        TemperatureProcess::Sinusoid { amplitude_k, period_h } => (
            "sinusoid",
            vec![("drift_amplitude_k", amplitude_k), ("drift_period_h", period_h)],
        ),
        TemperatureProcess::RandomWalk { step_k_per_sqrt_h } => {
            ("random_walk", vec![("drift_step_k_per_sqrt_h", step_k_per_sqrt_h)])
        }
    };
    out.push(("drift_kind".into(), kind.into()));
    out.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v.to_string())));
    let d = &cfg.drift;
    let c = &cfg.controller;
    let s = &cfg.stability;
    out.extend([
        ("thermal_coeff_um_per_k".to_string(), d.thermal_coeff_um_per_k.to_string()),
        ("pulse_spacing_m".into(), d.pulse_spacing_m.to_string()),
        (
            "rep_rate_coeff_hz_per_k".into(),
            d.rep_rate_coeff_hz_per_k.map_or_else(|| "auto".into(), |x| x.to_string()),
        ),
        ("jitter_bound_um".into(), d.jitter_bound_um.to_string()),
        ("jitter_correlation_s".into(), d.jitter_correlation_s.to_string()),
        ("controller".into(), s.controller.to_string()),
        ("controller_gain_um_per_hz".into(), c.gain_um_per_hz.to_string()),
        ("controller_gain_error".into(), c.gain_error.to_string()),
        ("motor_resolution_um".into(), c.motor_resolution_um.to_string()),
        ("update_interval_s".into(), c.update_interval_s.to_string()),
        ("stability_hours".into(), s.hours.to_string()),
        ("stability_dt_s".into(), s.dt_s.to_string()),
        ("pid_count_rate_per_s".into(), s.pid_count_rate_per_s.to_string()),
        (
            "calibrate_ratio".into(),
            cfg.calibrate_ratio.map_or_else(|| "none".into(), |x| x.to_string()),
        ),
    ]);
    out
}

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::{json, Map, Value};

use qrelay_core::analysis::{
    classify, fidelity, fit_dip, fit_fringe, net_visibility, CLASSICAL_LIMIT_V, CLONING_LIMIT_V,
};
use qrelay_core::detection::validate_timing;
use qrelay_core::scenarios::{
    calibrate_dark_counts, run_mandel_scan, run_teleport_scan, Calibration, EvalMode, ExperimentConfig, PhaseAveraged,
};
use qrelay_core::stability::{pid_alternative_analysis, simulate};

use crate::config::{to_flat, RunConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Mandel,
    Teleport,
    Noise,
    Stability,
    ValidateTiming,
    Limits,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Mandel => "mandel",
            Command::Teleport => "teleport",
            Command::Noise => "noise",
            Command::Stability => "stability",
            Command::ValidateTiming => "validate-timing",
            Command::Limits => "limits",
        }
    }
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    pub seed: Option<u64>,
    pub mode: Option<EvalMode>,
    pub trials: Option<u64>,
    pub heralded: bool,
    pub points: Option<usize>,
    pub periods: f64,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            seed: None,
            mode: None,
            trials: None,
            heralded: false,
            points: None,
            periods: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Value,
    /// CSV tables as (file name, contents).
    pub tables: Vec<(String, String)>,
}

impl Report {
    /// Writes the tables and `<command>.json` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path, command: Command) -> Result<(), CliError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| CliError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        for (name, text) in &self.tables {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(io(&path))?;
        }
        let path = dir.join(format!("{}.json", command.name()));
        std::fs::write(&path, self.summary_text()).map_err(io(&path))?;
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary is plain JSON");
        s.push('\n');
        s
    }
}

fn sci(x: f64) -> String {
    format!("{x:.8e}")
}

fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(sci).collect();
        writeln!(out, "{}", cells.join(",")).expect("writing to a String");
    }
    out
}

fn flat_json(cfg: &RunConfig) -> Value {
    Value::Object(to_flat(cfg).into_iter().map(|(k, v)| (k, Value::String(v))).collect::<Map<_, _>>())
}

fn apply_options(cfg: &RunConfig, opts: &Options) -> Result<RunConfig, CliError> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(mode) = opts.mode {
        cfg.experiment.mode = mode;
    }
    if let Some(trials) = opts.trials {
        cfg.experiment.trials = trials;
    }
    if opts.heralded {
        cfg.experiment.heralded = true;
    }
    if !(opts.periods > 0.0) || !opts.periods.is_finite() {
        return Err(CliError::Usage(format!("--periods must be positive, got {}", opts.periods)));
    }
    if matches!(opts.points, Some(p) if p < 5) {
        return Err(CliError::Usage("--points must be at least 5".into()));
    }
    cfg.sync();
    crate::config::validate(&cfg)?;
    Ok(cfg)
}

/// Dark counts rescaled to the configured background ratio, if one is set.
fn calibrated(cfg: &RunConfig) -> Result<(ExperimentConfig, Option<Calibration>), CliError> {
    let mut exp = cfg.experiment.clone();
    let Some(ratio) = cfg.calibrate_ratio else {
        return Ok((exp, None));
    };
    let cal = calibrate_dark_counts(&exp, ratio)?;
    exp.detectors = cal.detectors;
    Ok((exp, Some(cal)))
}

fn calibration_json(cal: &Option<Calibration>) -> Value {
    match cal {
        None => Value::Null,
        Some(c) => json!({
            "dark_scale": c.dark_scale,
            "dark_ge": c.detectors.bsa_ge.dark_prob_per_gate,
            "dark_ingaas": c.detectors.bsa_ingaas.dark_prob_per_gate,
            "dark_herald": c.detectors.herald.dark_prob_per_gate,
            "dark_bob": c.detectors.bob.dark_prob_per_gate,
        }),
    }
}

pub fn execute(command: Command, cfg: &RunConfig, opts: &Options) -> Result<Report, CliError> {
    let cfg = apply_options(cfg, opts)?;
    match command {
        Command::Mandel => mandel(&cfg, opts),
        Command::Teleport => teleport(&cfg, opts),
        Command::Noise => noise(&cfg),
        Command::Stability => stability(&cfg),
        Command::ValidateTiming => timing(&cfg),
        Command::Limits => Ok(limits()),
    }
}

fn header(command: Command, cfg: &RunConfig) -> Map<String, Value> {
    let e = &cfg.experiment;
    let mut m = Map::new();
    m.insert("command".into(), command.name().into());
    m.insert("mode".into(), e.mode.name().into());
    m.insert("seed".into(), e.seed.into());
    m.insert("trials".into(), e.trials.into());
    m
}

fn teleport(cfg: &RunConfig, opts: &Options) -> Result<Report, CliError> {
    let (exp, cal) = calibrated(cfg)?;
    let n = opts.points.unwrap_or(16);
    let phases: Vec<f64> = (0..n).map(|k| k as f64 * 2.0 * PI * opts.periods / n as f64).collect();
    let scan = run_teleport_scan(&exp, &phases)?;
    let fit = fit_fringe(&scan.control, &scan.counts)?;
    let budget = PhaseAveraged::new(&exp)?.budget(&exp, &exp.effective_detectors())?;
    // The background comes from the model, so only the fit carries uncertainty.
    let net = net_visibility(fit.visibility, fit.sigma_visibility, budget.mean, 0.0, budget.background, 0.0)?;

    let mut m = header(Command::Teleport, cfg);
    m.insert("points".into(), n.into());
    m.insert("pulses_per_point".into(), scan.pulses_per_point.into());
    m.insert("photon_cutoff".into(), exp.photon_cutoff()?.into());
    m.insert("V_raw".into(), fit.visibility.into());
    m.insert("sigma_V_raw".into(), fit.sigma_visibility.into());
    m.insert("V_raw_unconstrained".into(), fit.unconstrained_visibility.into());
    m.insert("fit_constrained".into(), fit.constrained.into());
    m.insert("amplitude".into(), fit.amplitude.into());
    m.insert("phase_rad".into(), fit.phase.into());
    m.insert("chi2_per_dof".into(), fit.chi2_per_dof.into());
    m.insert("F_raw".into(), fidelity(fit.visibility)?.into());
    m.insert("sigma_F_raw".into(), (fit.sigma_visibility / 2.0).into());
    m.insert("classification".into(), classify(fit.visibility).name().into());
    m.insert("V_net".into(), net.value.into());
    m.insert("sigma_V_net".into(), net.sigma.into());
    m.insert("V_net_capped".into(), net.capped.into());
    m.insert("F_net".into(), fidelity(net.value)?.into());
    m.insert("classification_net".into(), classify(net.value).name().into());
    m.insert(
        "noise".into(),
        json!({
            "mean": budget.mean,
            "background": budget.background,
            "signal": budget.signal,
            "ratio": budget.ratio(),
        }),
    );
    m.insert("calibration".into(), calibration_json(&cal));
    m.insert("config".into(), flat_json(cfg));

    let rows = (0..n).map(|i| vec![scan.control[i], scan.counts[i], scan.expected_probabilities[i]]);
    Ok(Report {
        summary: Value::Object(m),
        tables: vec![("teleport.csv".into(), csv(&["phi_b_rad", "counts", "expected_prob"], rows))],
    })
}

fn mandel(cfg: &RunConfig, opts: &Options) -> Result<Report, CliError> {
    let (exp, cal) = calibrated(cfg)?;
    let n = opts.points.unwrap_or(41);
    let half_span = 3.0 * exp.overlap.dip_fwhm_um;
    let dx: Vec<f64> = (0..n)
        .map(|k| -half_span + 2.0 * half_span * k as f64 / (n - 1) as f64)
        .collect();
    let (short, long) = run_mandel_scan(&exp, &dx)?;
    let fit = fit_dip(&dx, &short.counts)?;

    let mut m = header(Command::Mandel, cfg);
    m.insert("points".into(), n.into());
    m.insert("pulses_per_point".into(), short.pulses_per_point.into());
    m.insert("photon_cutoff".into(), exp.photon_cutoff()?.into());
    m.insert("dip_visibility".into(), fit.visibility().into());
    m.insert("dip_center_um".into(), fit.center.into());
    m.insert("sigma_dip_center_um".into(), fit.sigma_center.into());
    m.insert("dip_fwhm_um".into(), fit.fwhm.into());
    m.insert("sigma_dip_fwhm_um".into(), fit.sigma_fwhm.into());
    m.insert("chi2_per_dof".into(), fit.chi2_per_dof.into());
    m.insert("calibration".into(), calibration_json(&cal));
    m.insert("config".into(), flat_json(cfg));

    let rows = (0..n).map(|i| vec![dx[i], short.counts[i], long.counts[i]]);
    Ok(Report {
        summary: Value::Object(m),
        tables: vec![("mandel.csv".into(), csv(&["delta_x_um", "coinc_short", "coinc_long"], rows))],
    })
}

fn noise(cfg: &RunConfig) -> Result<Report, CliError> {
    let (exp, cal) = calibrated(cfg)?;
    let budget = PhaseAveraged::new(&exp)?.budget(&exp, &exp.effective_detectors())?;
    let pulses = exp.pulses_per_point() as f64;
    let mut m = header(Command::Noise, cfg);
    m.insert("pulses_per_point".into(), exp.pulses_per_point().into());
    m.insert("mean".into(), budget.mean.into());
    m.insert("blocked_alice".into(), budget.blocked_alice.into());
    m.insert("blocked_epr".into(), budget.blocked_epr.into());
    m.insert("blocked_both".into(), budget.blocked_both.into());
    m.insert("background".into(), budget.background.into());
    m.insert("signal".into(), budget.signal.into());
    m.insert("ratio".into(), budget.ratio().into());
    m.insert("calibration".into(), calibration_json(&cal));
    m.insert("config".into(), flat_json(cfg));

    let rows = [
        ("mean", budget.mean),
        ("blocked_alice", budget.blocked_alice),
        ("blocked_epr", budget.blocked_epr),
        ("blocked_both", budget.blocked_both),
        ("background", budget.background),
        ("signal", budget.signal),
    ];
    let mut text = String::from("quantity,probability,counts\n");
    for (name, p) in rows {
        writeln!(text, "{name},{},{}", sci(p), sci(p * pulses)).expect("writing to a String");
    }
    Ok(Report {
        summary: Value::Object(m),
        tables: vec![("noise.csv".into(), text)],
    })
}

/// Fraction of the dip-free coincidence level treated as recovered.
const PLATEAU_LEVEL: f64 = 0.95;

fn stability(cfg: &RunConfig) -> Result<Report, CliError> {
    let s = &cfg.stability;
    let controller = s.controller.then_some(&cfg.controller);
    let overlap = &cfg.experiment.overlap;
    let samples = simulate(&cfg.drift, controller, overlap, s.hours * 3600.0, s.dt_s)?;
    let pid = pid_alternative_analysis(&cfg.drift, overlap, s.pid_count_rate_per_s)?;
    let norm = samples.iter().map(|x| x.norm_coincidences);
    let max_norm = norm.clone().fold(f64::NEG_INFINITY, f64::max);
    let min_norm = norm.fold(f64::INFINITY, f64::min);
    let max_offset = samples.iter().map(|x| x.delta_x_um.abs()).fold(0.0, f64::max);
    let plateau = samples
        .iter()
        .find(|x| x.norm_coincidences >= PLATEAU_LEVEL)
        .map(|x| x.t_s / 3600.0);

    let mut m = header(Command::Stability, cfg);
    m.insert("controller".into(), s.controller.into());
    m.insert("samples".into(), samples.len().into());
    m.insert("max_norm_coincidences".into(), max_norm.into());
    m.insert("min_norm_coincidences".into(), min_norm.into());
    m.insert("max_abs_delta_x_um".into(), max_offset.into());
    m.insert("plateau_level".into(), PLATEAU_LEVEL.into());
    m.insert("plateau_hours".into(), plateau.map_or(Value::Null, Value::from));
    m.insert(
        "dip_lock".into(),
        json!({
            "count_rate_per_s": s.pid_count_rate_per_s,
            "integration_time_s": pid.integration_time_s,
            "drift_time_s": pid.drift_time_s,
            "feasible": pid.feasible,
            "tolerance_um": pid.tolerance_um,
        }),
    );
    m.insert("config".into(), flat_json(cfg));

    let rows = samples
        .iter()
        .map(|x| vec![x.t_s, x.delta_x_um, x.rep_rate_hz, x.motor_um, x.norm_coincidences]);
    Ok(Report {
        summary: Value::Object(m),
        tables: vec![(
            "stability.csv".into(),
            csv(&["t_s", "delta_x_um", "rep_rate_hz", "motor_um", "norm_coincidences"], rows),
        )],
    })
}

fn timing(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = &cfg.experiment.timing;
    t.validate()?;
    let slack_ns = validate_timing(t) * 1e9;
    let mut m = header(Command::ValidateTiming, cfg);
    m.insert("slack_ns".into(), slack_ns.into());
    m.insert("feasible".into(), (slack_ns >= 0.0).into());
    m.insert("config".into(), flat_json(cfg));
    Ok(Report {
        summary: Value::Object(m),
        tables: vec![],
    })
}

fn limits() -> Report {
    let f = |v: f64| fidelity(v).expect("limits lie in [0, 1]");
    let summary = json!({
        "command": Command::Limits.name(),
        "limits": [
            { "name": "classical", "visibility": CLASSICAL_LIMIT_V, "fidelity": f(CLASSICAL_LIMIT_V) },
            { "name": "cloning", "visibility": CLONING_LIMIT_V, "fidelity": f(CLONING_LIMIT_V) },
        ],
    });
    let rows = [
        vec![CLASSICAL_LIMIT_V, f(CLASSICAL_LIMIT_V)],
        vec![CLONING_LIMIT_V, f(CLONING_LIMIT_V)],
    ];
    Report {
        summary,
        tables: vec![("limits.csv".into(), csv(&["visibility", "fidelity"], rows))],
    }
}

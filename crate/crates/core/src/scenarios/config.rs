use serde::{Deserialize, Serialize};

use crate::detection::{BsaRule, DetectorModel, DetectorRole, TimingBudget};
use crate::error::{Result, SimError};
use crate::fock::{DEFAULT_MAX_PHOTONS, MAX_SUPPORTED_PHOTONS};
use crate::sources::{pair_probability, OverlapModel, PairInterpretation, PairStatistics, SpdcSource, DEFAULT_TAIL_TOLERANCE};

pub const DEFAULT_REP_RATE_HZ: f64 = 75e6;
pub const DEFAULT_BIN_PITCH_S: f64 = 1.2e-9;
pub const DEFAULT_INTEGRATION_MINUTES: f64 = 53.0;
pub const DEFAULT_SEED: u64 = 20_070_101;
pub const DEFAULT_TRIALS: u64 = 1_000_000;
/// Placeholder detector efficiency until calibrated.
pub const PLACEHOLDER_EFFICIENCY: f64 = 0.1;
/// Placeholder dark-count probability per gate until calibrated.
pub const PLACEHOLDER_DARK: f64 = 1e-5;

pub const CHANNEL_ALICE: &str = "alice-1310";
pub const CHANNEL_HERALD: &str = "alice-1555";
pub const CHANNEL_CHARLIE: &str = "charlie-1310";
pub const CHANNEL_BOB: &str = "bob-1555";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Analytic,
    MonteCarlo,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Analytic => "analytic",
            EvalMode::MonteCarlo => "montecarlo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSet {
    pub bsa_ge: DetectorModel,
    pub bsa_ingaas: DetectorModel,
    pub herald: DetectorModel,
    pub bob: DetectorModel,
}

impl DetectorSet {
    pub fn placeholder() -> Self {
        let make = |role, gated| DetectorModel {
            role,
            efficiency: PLACEHOLDER_EFFICIENCY,
            dark_prob_per_gate: PLACEHOLDER_DARK,
            gated,
            calibrated: false,
        };
        Self {
            bsa_ge: make(DetectorRole::BsaGe, false),
            bsa_ingaas: make(DetectorRole::BsaIngaas, true),
            herald: make(DetectorRole::Herald, true),
            bob: make(DetectorRole::Bob, true),
        }
    }

    pub fn ideal() -> Self {
        Self {
            bsa_ge: DetectorModel::ideal(DetectorRole::BsaGe),
            bsa_ingaas: DetectorModel::ideal(DetectorRole::BsaIngaas),
            herald: DetectorModel::ideal(DetectorRole::Herald),
            bob: DetectorModel::ideal(DetectorRole::Bob),
        }
    }

    pub fn all(&self) -> [DetectorModel; 4] {
        [self.bsa_ge, self.bsa_ingaas, self.herald, self.bob]
    }

    pub fn all_mut(&mut self) -> [&mut DetectorModel; 4] {
        [&mut self.bsa_ge, &mut self.bsa_ingaas, &mut self.herald, &mut self.bob]
    }

    /// Multiplies every dark-count probability by `factor`.
    pub fn scale_dark(&self, factor: f64) -> Self {
        let mut out = *self;
        for d in out.all_mut() {
            d.dark_prob_per_gate *= factor;
        }
        out
    }

    pub fn without_dark_counts(&self) -> Self {
        self.scale_dark(0.0)
    }
}

/// Complete parameter set for one run.
///
/// `pair_mean_epr` is referred to the pump before the pump interferometer, so
/// the crystal sees half of it, split evenly over the two pump bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pair_mean_alice: f64,
    pub pair_mean_epr: f64,
    pub pair_interpretation: PairInterpretation,
    pub statistics_alice: PairStatistics,
    pub statistics_epr: PairStatistics,
    pub heralded: bool,
    pub phase_pump: f64,
    pub phase_alice: f64,
    pub phase_bob: f64,
    pub delta_x_um: f64,
    pub overlap: OverlapModel,
    pub loss_alice_db: f64,
    pub loss_charlie_db: f64,
    pub loss_herald_db: f64,
    pub loss_bob_db: f64,
    pub detectors: DetectorSet,
    pub bsa: BsaRule,
    pub herald_bin: usize,
    pub rep_rate_hz: f64,
    pub bin_pitch_s: f64,
    pub integration_minutes: f64,
    /// Overrides `integration_minutes × rep_rate` when set.
    pub pulses_override: Option<u64>,
    /// Photon-number cutoff; `None` picks the smallest even cutoff whose
    /// discarded pair-number tail stays within `max_tail_mass`.
    pub max_photons: Option<usize>,
    pub max_tail_mass: f64,
    pub mode: EvalMode,
    pub trials: u64,
    pub seed: u64,
    pub timing: TimingBudget,
}

pub fn build_default_config() -> ExperimentConfig {
    ExperimentConfig {
        pair_mean_alice: 0.19,
        pair_mean_epr: 0.07,
        pair_interpretation: PairInterpretation::Mean,
        statistics_alice: PairStatistics::Thermal,
        statistics_epr: PairStatistics::Thermal,
        heralded: false,
        phase_pump: 0.0,
        phase_alice: 0.0,
        phase_bob: 0.0,
        delta_x_um: 0.0,
        overlap: OverlapModel::default(),
        loss_alice_db: 0.0,
        loss_charlie_db: 0.0,
        loss_herald_db: 0.0,
        loss_bob_db: 2.0,
        detectors: DetectorSet::placeholder(),
        bsa: BsaRule::default(),
        herald_bin: 0,
        rep_rate_hz: DEFAULT_REP_RATE_HZ,
        bin_pitch_s: DEFAULT_BIN_PITCH_S,
        integration_minutes: DEFAULT_INTEGRATION_MINUTES,
        pulses_override: None,
        max_photons: None,
        max_tail_mass: DEFAULT_TAIL_TOLERANCE,
        mode: EvalMode::Analytic,
        trials: DEFAULT_TRIALS,
        seed: DEFAULT_SEED,
        timing: TimingBudget::default(),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        build_default_config()
    }
}

impl ExperimentConfig {
    /// Same mean for both sources.
    pub fn with_common_pair_mean(mut self, p: f64) -> Self {
        self.pair_mean_alice = p;
        self.pair_mean_epr = p;
        self
    }

    pub fn pulses_per_point(&self) -> u64 {
        self.pulses_override
            .unwrap_or_else(|| (self.integration_minutes * 60.0 * self.rep_rate_hz).round() as u64)
    }

    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &'static str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::invalid(name, format!("{v} must be finite and non-negative")))
            }
        };
        non_negative("pair_mean_alice", self.pair_mean_alice)?;
        non_negative("pair_mean_epr", self.pair_mean_epr)?;
        non_negative("loss_alice_db", self.loss_alice_db)?;
        non_negative("loss_charlie_db", self.loss_charlie_db)?;
        non_negative("loss_herald_db", self.loss_herald_db)?;
        non_negative("loss_bob_db", self.loss_bob_db)?;
        non_negative("integration_minutes", self.integration_minutes)?;
        if self.pair_interpretation == PairInterpretation::AtLeastOne {
            for (name, p) in [("pair_mean_alice", self.pair_mean_alice), ("pair_mean_epr", self.pair_mean_epr)] {
                if p >= 1.0 {
                    return Err(SimError::invalid(name, "pair probability must be below 1"));
                }
            }
        }
        if !(self.rep_rate_hz > 0.0) {
            return Err(SimError::invalid("rep_rate_hz", "must be positive"));
        }
        if !(self.bin_pitch_s > 0.0) {
            return Err(SimError::invalid("bin_pitch_s", "must be positive"));
        }
        if let Some(n) = self.max_photons {
            if !(DEFAULT_MAX_PHOTONS..=MAX_SUPPORTED_PHOTONS).contains(&n) || n % 2 != 0 {
                return Err(SimError::invalid(
                    "max_photons",
                    format!("{n} must be even and in {DEFAULT_MAX_PHOTONS}..={MAX_SUPPORTED_PHOTONS}"),
                ));
            }
        }
        if !(self.max_tail_mass >= 0.0 && self.max_tail_mass < 1.0) {
            return Err(SimError::invalid("max_tail_mass", "must be in [0,1)"));
        }
        if self.pulses_per_point() < 1 {
            return Err(SimError::invalid("pulses_per_point", "must be at least 1"));
        }
        if self.trials < 1 {
            return Err(SimError::invalid("trials", "must be at least 1"));
        }
        if self.bsa.window_bins < 2 || self.bsa.window_bins > 4 {
            return Err(SimError::invalid("bsa_window_bins", "must be 2, 3 or 4"));
        }
        if self.herald_bin > 3 {
            return Err(SimError::invalid("herald_bin", "must be below 4"));
        }
        if !(self.overlap.dip_fwhm_um > 0.0) {
            return Err(SimError::invalid("dip_fwhm_um", "must be positive"));
        }
        self.detectors.all().iter().try_for_each(|d| d.validate())?;
        self.timing.validate()
    }

    fn mean_from_quoted(&self, quoted: f64, statistics: PairStatistics, temporal_modes: usize) -> Result<f64> {
        let probe = SpdcSource {
            mean_pairs: 0.0,
            statistics,
            temporal_modes,
            signal: String::new(),
            idler: String::new(),
            pump_phase: 0.0,
        };
        match self.pair_interpretation {
            PairInterpretation::Mean => Ok(quoted),
            PairInterpretation::AtLeastOne => probe.mean_for_pair_probability(quoted),
        }
    }

    pub fn alice_source(&self) -> Result<SpdcSource> {
        Ok(SpdcSource {
            mean_pairs: self.mean_from_quoted(self.pair_mean_alice, self.statistics_alice, 1)?,
            statistics: self.statistics_alice,
            temporal_modes: 1,
            signal: CHANNEL_ALICE.into(),
            idler: CHANNEL_HERALD.into(),
            pump_phase: 0.0,
        })
    }

    /// Untruncated probability mass with more than `max_photons / 2` pairs in total.
    pub fn joint_tail_mass(&self, max_photons: usize) -> Result<f64> {
        let alice = self.alice_source()?;
        let epr = self.epr_source()?;
        alice.validate()?;
        epr.validate()?;
        let k = max_photons / 2;
        let mut kept = 0.0;
        for na in 0..=k {
            let pa = pair_probability(&alice, na);
            kept += (0..=k - na).map(|nb| pa * pair_probability(&epr, nb)).sum::<f64>();
        }
        Ok((1.0 - kept).max(0.0))
    }

    /// Cutoff used for this configuration.
    pub fn photon_cutoff(&self) -> Result<usize> {
        if let Some(n) = self.max_photons {
            return Ok(n);
        }
        let mut tail = 1.0;
        for n in (DEFAULT_MAX_PHOTONS..=MAX_SUPPORTED_PHOTONS).step_by(2) {
            tail = self.joint_tail_mass(n)?;
            if tail <= self.max_tail_mass {
                return Ok(n);
            }
        }
        Err(SimError::TailMassTooLarge {
            tail,
            n_cut: MAX_SUPPORTED_PHOTONS / 2,
            tolerance: self.max_tail_mass,
        })
    }

    /// The pump interferometer passes half the pump power to the crystal.
    pub fn epr_source(&self) -> Result<SpdcSource> {
        let pump_referred = self.mean_from_quoted(self.pair_mean_epr, self.statistics_epr, 2)?;
        Ok(SpdcSource {
            mean_pairs: pump_referred / 2.0,
            statistics: self.statistics_epr,
            temporal_modes: 2,
            signal: CHANNEL_CHARLIE.into(),
            idler: CHANNEL_BOB.into(),
            pump_phase: self.phase_pump,
        })
    }

    /// Detector models with single-path channel losses folded into efficiency.
    pub fn effective_detectors(&self) -> DetectorSet {
        let mut d = self.detectors;
        d.herald.efficiency *= 10f64.powf(-self.loss_herald_db / 10.0);
        d.bob.efficiency *= 10f64.powf(-self.loss_bob_db / 10.0);
        d
    }

    /// Resolved configuration as flat key/value pairs, in a fixed order.
    pub fn to_flat(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("pair_mean_alice".into(), self.pair_mean_alice.to_string()),
            ("pair_mean_epr".into(), self.pair_mean_epr.to_string()),
            (
                "pair_interpretation".into(),
                match self.pair_interpretation {
                    PairInterpretation::Mean => "mean".into(),
                    PairInterpretation::AtLeastOne => "at_least_one".into(),
                },
            ),
            ("statistics_alice".into(), self.statistics_alice.name().into()),
            ("statistics_epr".into(), self.statistics_epr.name().into()),
            ("heralded".into(), self.heralded.to_string()),
            ("phase_pump".into(), self.phase_pump.to_string()),
            ("phase_alice".into(), self.phase_alice.to_string()),
            ("phase_bob".into(), self.phase_bob.to_string()),
            ("delta_x_um".into(), self.delta_x_um.to_string()),
            ("dip_fwhm_um".into(), self.overlap.dip_fwhm_um.to_string()),
            ("coherence_length_um".into(), self.overlap.coherence_length_um.to_string()),
            ("loss_alice_db".into(), self.loss_alice_db.to_string()),
            ("loss_charlie_db".into(), self.loss_charlie_db.to_string()),
            ("loss_herald_db".into(), self.loss_herald_db.to_string()),
            ("loss_bob_db".into(), self.loss_bob_db.to_string()),
        ];
        for (prefix, d) in [
            ("ge", self.detectors.bsa_ge),
            ("ingaas", self.detectors.bsa_ingaas),
            ("herald", self.detectors.herald),
            ("bob", self.detectors.bob),
        ] {
            out.push((format!("eta_{prefix}"), d.efficiency.to_string()));
            out.push((format!("dark_{prefix}"), d.dark_prob_per_gate.to_string()));
            out.push((format!("calibrated_{prefix}"), d.calibrated.to_string()));
        }
        out.extend([
            ("symmetric_bsa".into(), self.bsa.symmetric.to_string()),
            ("bsa_window_bins".into(), self.bsa.window_bins.to_string()),
            ("herald_bin".into(), self.herald_bin.to_string()),
            ("rep_rate_hz".into(), self.rep_rate_hz.to_string()),
            ("bin_pitch_s".into(), self.bin_pitch_s.to_string()),
            ("integration_minutes".into(), self.integration_minutes.to_string()),
            ("pulses_per_point".into(), self.pulses_per_point().to_string()),
            (
                "max_photons".into(),
                self.max_photons.map_or_else(|| "auto".to_string(), |n| n.to_string()),
            ),
            ("max_tail_mass".into(), self.max_tail_mass.to_string()),
            ("mode".into(), self.mode.name().into()),
            ("trials".into(), self.trials.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("spool_alice_m".into(), self.timing.spool_alice_m.to_string()),
            ("spool_charlie_m".into(), self.timing.spool_charlie_m.to_string()),
            ("fiber_bob_m".into(), self.timing.fiber_bob_m.to_string()),
            ("fiber_classical_m".into(), self.timing.fiber_classical_m.to_string()),
            ("spool_bob_m".into(), self.timing.spool_bob_m.to_string()),
            ("group_index".into(), self.timing.group_index.to_string()),
            ("bsa_latency_ns".into(), (self.timing.bsa_latency_s * 1e9).to_string()),
        ]);
        out
    }
}

use std::f64::consts::PI;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{
    DetectorSet, EvalMode, ExperimentConfig, CHANNEL_ALICE, CHANNEL_BOB, CHANNEL_CHARLIE, CHANNEL_HERALD,
};
use super::montecarlo::{block_rng, sample_events, McEstimate};
use crate::detection::{
    gate_distribution, herald_filter, psi_minus_filter, same_bin_coincidence, teleport_outcome_distribution,
    ClickPattern, DetectorLayout, DetectorRole, GateDistribution, TeleportOutcomes,
};
use crate::error::{Result, SimError};
use crate::fock::{FockState, ModeRegistry, DEFAULT_MAX_BINS, INTERNAL_ORTHOGONAL, INTERNAL_REFERENCE};
use crate::optics::{Circuit, CircuitBuilder};
use crate::sources::{emit_alice, emit_entangled, pair_probability, PairStatistics, SpdcSource};

/// Bob's analyzed qubit: the bin where both interferometer paths overlap.
pub const BOB_CENTRAL_BIN: usize = 1;

/// Phases averaged to obtain phase-independent means. Four equally spaced
/// points cancel every harmonic up to the third, which covers two photons at Bob.
const AVERAGING_PHASES: [f64; 4] = [0.0, PI / 2.0, PI, 3.0 * PI / 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blocked {
    None,
    Alice,
    Epr,
    Both,
}

impl Blocked {
    fn alice_off(self) -> bool {
        matches!(self, Blocked::Alice | Blocked::Both)
    }

    fn epr_off(self) -> bool {
        matches!(self, Blocked::Epr | Blocked::Both)
    }
}

/// One scan: a control value per point with its probability and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub control: Vec<f64>,
    /// Expected counts (analytic) or Poisson draws (Monte Carlo).
    pub counts: Vec<f64>,
    pub pulses_per_point: u64,
    /// Probability per pulse used to generate the counts.
    pub probabilities: Vec<f64>,
    /// Analytic probability per pulse, always present.
    pub expected_probabilities: Vec<f64>,
    /// Standard error of `probabilities`; zero in analytic mode.
    pub standard_errors: Vec<f64>,
    pub mode: EvalMode,
}

/// Linear-optics network split at Bob's interferometer.
struct Setup {
    pre: Circuit,
    bob: Circuit,
}

fn build_setup(cfg: &ExperimentConfig, phase_bob: Option<f64>) -> Result<Setup> {
    let mut b = CircuitBuilder::new(DEFAULT_MAX_BINS);
    b.ensure_channel(CHANNEL_ALICE, 1, &[INTERNAL_REFERENCE, INTERNAL_ORTHOGONAL])?;
    b.ensure_channel(CHANNEL_HERALD, 1, &[INTERNAL_REFERENCE])?;
    b.ensure_channel(CHANNEL_CHARLIE, 2, &[INTERNAL_REFERENCE])?;
    b.ensure_channel(CHANNEL_BOB, 2, &[INTERNAL_REFERENCE])?;
    if cfg.loss_alice_db > 0.0 {
        b.channel_loss(CHANNEL_ALICE, cfg.loss_alice_db)?;
    }
    if cfg.loss_charlie_db > 0.0 {
        b.channel_loss(CHANNEL_CHARLIE, cfg.loss_charlie_db)?;
    }
    b.michelson(CHANNEL_ALICE, cfg.phase_alice)?;
    b.channel_splitter(CHANNEL_ALICE, CHANNEL_CHARLIE)?;
    let split = b.len();
    if let Some(phi) = phase_bob {
        b.michelson(CHANNEL_BOB, phi)?;
    }
    let (pre, bob) = b.build().split_at(split);
    Ok(Setup { pre, bob })
}

/// Detector gates in a fixed order. The BSA output sharing Alice's channel
/// name feeds the Ge detector, the other feeds the InGaAs detector.
pub fn detector_layout(cfg: &ExperimentConfig, detectors: &DetectorSet, include_bob: bool) -> DetectorLayout {
    let w = cfg.bsa.window_bins;
    let mut layout = DetectorLayout::new()
        .with(detectors.bsa_ge, CHANNEL_ALICE, 0..w)
        .with(detectors.bsa_ingaas, CHANNEL_CHARLIE, 0..w)
        .with(detectors.herald, CHANNEL_HERALD, [cfg.herald_bin]);
    if include_bob {
        layout = layout.with(detectors.bob, CHANNEL_BOB, 0..3);
    }
    layout
}

/// All (n_A, n_B) pairs kept by the joint photon cutoff.
pub fn pair_branches(max_photons: usize) -> Vec<(usize, usize)> {
    let k = max_photons / 2;
    (0..=k)
        .flat_map(|na| (0..=k - na).map(move |nb| (na, nb)))
        .collect()
}

fn source_probabilities(source: &SpdcSource, off: bool, k: usize) -> Vec<f64> {
    (0..=k)
        .map(|n| {
            if off {
                f64::from(u8::from(n == 0))
            } else {
                pair_probability(source, n)
            }
        })
        .collect()
}

/// Weights of the kept pair branches, renormalized after checking the
/// discarded tail against `max_tail_mass`.
pub fn joint_pair_weights(cfg: &ExperimentConfig, blocked: Blocked) -> Result<Vec<((usize, usize), f64)>> {
    let alice = cfg.alice_source()?;
    let epr = cfg.epr_source()?;
    alice.validate()?;
    epr.validate()?;
    let cutoff = cfg.photon_cutoff()?;
    let k = cutoff / 2;
    let pa = source_probabilities(&alice, blocked.alice_off(), k);
    let pb = source_probabilities(&epr, blocked.epr_off(), k);
    let mut out: Vec<((usize, usize), f64)> = pair_branches(cutoff)
        .into_iter()
        .map(|(na, nb)| ((na, nb), pa[na] * pb[nb]))
        .collect();
    let kept: f64 = out.iter().map(|(_, w)| w).sum();
    let tail = (1.0 - kept).max(0.0);
    if tail > cfg.max_tail_mass {
        return Err(SimError::TailMassTooLarge {
            tail,
            n_cut: k,
            tolerance: cfg.max_tail_mass,
        });
    }
    for (_, w) in &mut out {
        *w /= kept;
    }
    Ok(out)
}

/// Gate photon-count distributions per pair branch. Independent of detector
/// parameters and source means, so blocking and calibration only reweight it.
#[derive(Debug, Clone)]
pub struct BranchTable {
    pub branches: Vec<((usize, usize), GateDistribution)>,
}

impl BranchTable {
    pub fn mixture<'a>(&'a self, weights: &[((usize, usize), f64)]) -> Vec<(f64, &'a GateDistribution)> {
        weights
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .filter_map(|(key, w)| {
                self.branches
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, d)| (*w, d))
            })
            .collect()
    }
}

fn branch_states(cfg: &ExperimentConfig, registry: &Arc<ModeRegistry>, overlap: f64) -> Result<Vec<((usize, usize), FockState)>> {
    let mut alice = cfg.alice_source()?;
    let mut epr = cfg.epr_source()?;
    // Emission shape does not depend on the statistics; only weights do.
    alice.statistics = PairStatistics::Thermal;
    epr.statistics = PairStatistics::Thermal;
    let cutoff = cfg.photon_cutoff()?;
    pair_branches(cutoff)
        .into_iter()
        .map(|(na, nb)| {
            let a = emit_alice(&alice, registry, cutoff, na, overlap)?;
            let e = emit_entangled(&epr, registry, cutoff, nb)?;
            Ok(((na, nb), a.product(&e)?))
        })
        .collect()
}

/// Propagated branch states ahead of Bob's interferometer.
struct Prepared {
    registry: Arc<ModeRegistry>,
    states: Vec<((usize, usize), FockState)>,
}

fn prepare(cfg: &ExperimentConfig, overlap: f64, with_bob: bool) -> Result<Prepared> {
    let setup = build_setup(cfg, with_bob.then_some(0.0))?;
    let registry = Arc::clone(setup.pre.registry());
    let states = branch_states(cfg, &registry, overlap)?
        .into_iter()
        .map(|(k, s)| Ok((k, setup.pre.apply(&s)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared { registry, states })
}

fn table_after_bob(cfg: &ExperimentConfig, prepared: &Prepared, phase_bob: f64) -> Result<BranchTable> {
    let setup = build_setup(cfg, Some(phase_bob))?;
    if **setup.bob.registry() != *prepared.registry {
        return Err(SimError::RegistryMismatch);
    }
    let layout = detector_layout(cfg, &cfg.detectors, true);
    let branches = prepared
        .states
        .iter()
        .map(|(k, s)| {
            let out = setup.bob.apply(s)?;
            Ok((*k, gate_distribution(&out, &layout)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BranchTable { branches })
}

fn overlap_for(cfg: &ExperimentConfig, delta_x_um: f64) -> f64 {
    cfg.overlap.overlap_from_mismatch(delta_x_um)
}

/// Branch tables for the full circuit at each Bob phase.
pub fn teleport_tables(cfg: &ExperimentConfig, phases: &[f64]) -> Result<Vec<BranchTable>> {
    cfg.validate()?;
    let prepared = prepare(cfg, overlap_for(cfg, cfg.delta_x_um), true)?;
    phases
        .par_iter()
        .map(|&phi| table_after_bob(cfg, &prepared, phi))
        .collect()
}

/// Branch table for the BSA-only circuit at a given overlap.
pub fn mandel_table(cfg: &ExperimentConfig, overlap: f64) -> Result<BranchTable> {
    let prepared = prepare(cfg, overlap, false)?;
    let layout = detector_layout(cfg, &cfg.detectors, false);
    let branches = prepared
        .states
        .iter()
        .map(|(k, s)| Ok((*k, gate_distribution(s, &layout)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BranchTable { branches })
}

fn outcomes(
    cfg: &ExperimentConfig,
    table: &BranchTable,
    weights: &[((usize, usize), f64)],
    detectors: &DetectorSet,
) -> TeleportOutcomes {
    let layout = detector_layout(cfg, detectors, true);
    teleport_outcome_distribution(&table.mixture(weights), &layout, &cfg.bsa, cfg.heralded, cfg.herald_bin)
}

/// Joint P(ψ⁻ ∧ herald ∧ Bob bin b) at the configured Bob phase.
pub fn teleport_outcome_distribution_for(cfg: &ExperimentConfig) -> Result<TeleportOutcomes> {
    let table = teleport_tables(cfg, &[cfg.phase_bob])?.remove(0);
    let weights = joint_pair_weights(cfg, Blocked::None)?;
    Ok(outcomes(cfg, &table, &weights, &cfg.effective_detectors()))
}

fn teleport_event(cfg: &ExperimentConfig) -> impl Fn(&ClickPattern) -> bool + Sync + '_ {
    move |p: &ClickPattern| {
        psi_minus_filter(p, &cfg.bsa)
            && herald_filter(p, cfg.heralded, cfg.herald_bin)
            && p.clicked(DetectorRole::Bob, BOB_CENTRAL_BIN)
    }
}

/// `stream_base` keeps the count draws of scans evaluated together independent.
fn counts_from(cfg: &ExperimentConfig, probabilities: &[f64], stream_base: u64) -> Result<Vec<f64>> {
    let pulses = cfg.pulses_per_point() as f64;
    match cfg.mode {
        EvalMode::Analytic => Ok(probabilities.iter().map(|p| p * pulses).collect()),
        EvalMode::MonteCarlo => probabilities
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let lambda = p * pulses;
                if lambda <= 0.0 {
                    return Ok(0.0);
                }
                let mut rng: ChaCha8Rng = block_rng(cfg.seed, (1 << 63) | (stream_base + i as u64), 0);
                let poisson = Poisson::new(lambda).map_err(|e| SimError::invalid("poisson_mean", format!("{e}")))?;
                Ok(poisson.sample(&mut rng))
            })
            .collect(),
    }
}

/// Sampled estimates of the teleportation event at each table.
pub fn teleport_monte_carlo(cfg: &ExperimentConfig, tables: &[BranchTable]) -> Result<Vec<McEstimate>> {
    let weights = joint_pair_weights(cfg, Blocked::None)?;
    let layout = detector_layout(cfg, &cfg.effective_detectors(), true);
    let event = teleport_event(cfg);
    tables
        .iter()
        .enumerate()
        .map(|(i, t)| Ok(sample_events(&t.mixture(&weights), &layout, &[&event], cfg.trials, cfg.seed, i as u64)?[0]))
        .collect()
}

/// Bob central-bin coincidences conditioned on ψ⁻ (and the herald when enabled) versus φ_B.
pub fn run_teleport_scan(cfg: &ExperimentConfig, phases: &[f64]) -> Result<ScanResult> {
    let tables = teleport_tables(cfg, phases)?;
    let weights = joint_pair_weights(cfg, Blocked::None)?;
    let detectors = cfg.effective_detectors();
    let expected: Vec<f64> = tables
        .iter()
        .map(|t| outcomes(cfg, t, &weights, &detectors).with_bob[BOB_CENTRAL_BIN])
        .collect();
    let (probabilities, standard_errors) = match cfg.mode {
        EvalMode::Analytic => (expected.clone(), vec![0.0; expected.len()]),
        EvalMode::MonteCarlo => teleport_monte_carlo(cfg, &tables)?
            .iter()
            .map(|e| (e.probability, e.standard_error))
            .unzip(),
    };
    Ok(ScanResult {
        control: phases.to_vec(),
        counts: counts_from(cfg, &probabilities, 0)?,
        pulses_per_point: cfg.pulses_per_point(),
        probabilities,
        expected_probabilities: expected,
        standard_errors,
        mode: cfg.mode,
    })
}

/// Short-path (bin 0) and long-path (bin 1) same-bin BSA coincidences versus δx.
pub fn run_mandel_scan(cfg: &ExperimentConfig, delta_x_um: &[f64]) -> Result<(ScanResult, ScanResult)> {
    cfg.validate()?;
    let weights = joint_pair_weights(cfg, Blocked::None)?;
    let detectors = cfg.effective_detectors();
    let layout = detector_layout(cfg, &detectors, false);
    let tables: Vec<BranchTable> = delta_x_um
        .par_iter()
        .map(|&dx| mandel_table(cfg, overlap_for(cfg, dx)))
        .collect::<Result<_>>()?;
    let mut scans = Vec::with_capacity(2);
    for bin in [0usize, 1] {
        let expected: Vec<f64> = tables
            .iter()
            .map(|t| same_bin_coincidence(&t.mixture(&weights), &layout, bin, cfg.heralded, cfg.herald_bin))
            .collect();
        let (probabilities, standard_errors) = match cfg.mode {
            EvalMode::Analytic => (expected.clone(), vec![0.0; expected.len()]),
            EvalMode::MonteCarlo => {
                let event = mandel_event(cfg, bin);
                tables
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let stream = ((bin as u64) << 32) | i as u64;
                        let e = sample_events(&t.mixture(&weights), &layout, &[&event], cfg.trials, cfg.seed, stream)?[0];
                        Ok((e.probability, e.standard_error))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip()
            }
        };
        scans.push(ScanResult {
            control: delta_x_um.to_vec(),
            counts: counts_from(cfg, &probabilities, (bin as u64) << 32)?,
            pulses_per_point: cfg.pulses_per_point(),
            probabilities,
            expected_probabilities: expected,
            standard_errors,
            mode: cfg.mode,
        });
    }
    let long = scans.pop().expect("two scans");
    let short = scans.pop().expect("two scans");
    Ok((short, long))
}

/// Same-bin coincidence event used by the Mandel scans.
pub fn mandel_event(cfg: &ExperimentConfig, bin: usize) -> impl Fn(&ClickPattern) -> bool + Sync + '_ {
    move |p: &ClickPattern| {
        p.clicked(DetectorRole::BsaGe, bin)
            && p.clicked(DetectorRole::BsaIngaas, bin)
            && herald_filter(p, cfg.heralded, cfg.herald_bin)
    }
}

/// Phase-averaged teleportation statistics with one or both sources blocked.
#[derive(Debug, Clone)]
pub struct PhaseAveraged {
    tables: Vec<BranchTable>,
}

impl PhaseAveraged {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            tables: teleport_tables(cfg, &AVERAGING_PHASES)?,
        })
    }

    /// Phase-averaged P(ψ⁻ ∧ herald ∧ Bob central bin).
    pub fn mean(&self, cfg: &ExperimentConfig, blocked: Blocked, detectors: &DetectorSet) -> Result<f64> {
        let weights = joint_pair_weights(cfg, blocked)?;
        let sum: f64 = self
            .tables
            .iter()
            .map(|t| outcomes(cfg, t, &weights, detectors).with_bob[BOB_CENTRAL_BIN])
            .sum();
        Ok(sum / self.tables.len() as f64)
    }

    /// Fringe mean, background (from the three blocking runs) and signal.
    pub fn budget(&self, cfg: &ExperimentConfig, detectors: &DetectorSet) -> Result<NoiseBudget> {
        let mean = self.mean(cfg, Blocked::None, detectors)?;
        let alice = self.mean(cfg, Blocked::Alice, detectors)?;
        let epr = self.mean(cfg, Blocked::Epr, detectors)?;
        let both = self.mean(cfg, Blocked::Both, detectors)?;
        let background = alice + epr - both;
        Ok(NoiseBudget {
            mean,
            blocked_alice: alice,
            blocked_epr: epr,
            blocked_both: both,
            background,
            signal: mean - background,
        })
    }
}

/// Phase-averaged coincidence probabilities per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub mean: f64,
    pub blocked_alice: f64,
    pub blocked_epr: f64,
    pub blocked_both: f64,
    /// Sum of the single-source runs minus the detector-only run, which both contain.
    pub background: f64,
    pub signal: f64,
}

impl NoiseBudget {
    pub fn ratio(&self) -> f64 {
        self.background / self.signal
    }
}

/// Background coincidence probability per pulse with the given sources blocked,
/// averaged over Bob's phase.
pub fn run_blocking(cfg: &ExperimentConfig, blocked: Blocked) -> Result<f64> {
    PhaseAveraged::new(cfg)?.mean(cfg, blocked, &cfg.effective_detectors())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Factor applied to every configured dark-count probability.
    pub dark_scale: f64,
    /// Calibrated detectors as configured (before loss folding).
    pub detectors: DetectorSet,
    pub budget: NoiseBudget,
}

/// Scales all dark-count probabilities by a common factor until the blocking
/// background reaches `target_ratio` times the signal.
pub fn calibrate_dark_counts(cfg: &ExperimentConfig, target_ratio: f64) -> Result<Calibration> {
    if !(target_ratio > 0.0) {
        return Err(SimError::invalid("target_ratio", "must be positive"));
    }
    let base = cfg.detectors;
    let max_dark = base
        .all()
        .iter()
        .map(|d| d.dark_prob_per_gate)
        .fold(0.0, f64::max);
    if max_dark <= 0.0 {
        return Err(SimError::Calibration("all dark-count probabilities are zero".into()));
    }
    let averaged = PhaseAveraged::new(cfg)?;
    let ratio_at = |scale: f64| -> Result<(f64, NoiseBudget)> {
        let mut c = cfg.clone();
        c.detectors = base.scale_dark(scale);
        let b = averaged.budget(&c, &c.effective_detectors())?;
        Ok((b.ratio(), b))
    };
    // Walk upward in log steps to bracket the target, stopping before the
    // signal estimate breaks down at very high dark rates.
    let mut lo = (1e-12 / max_dark).ln();
    let (r_lo, _) = ratio_at(lo.exp())?;
    if r_lo > target_ratio {
        return Err(SimError::Calibration(format!(
            "background/signal is {r_lo:.3} without dark counts, above the target {target_ratio}"
        )));
    }
    let ceiling = (0.2 / max_dark).ln();
    let step = 10f64.ln() / 4.0;
    let mut hi = lo;
    loop {
        hi += step;
        if hi > ceiling {
            return Err(SimError::Calibration(format!(
                "background/signal stays below {target_ratio} up to dark probability 0.2"
            )));
        }
        let (r, b) = ratio_at(hi.exp())?;
        if b.signal <= 0.0 || !r.is_finite() {
            return Err(SimError::Calibration("signal vanishes before the target ratio is reached".into()));
        }
        if r >= target_ratio {
            break;
        }
        lo = hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (r, _) = ratio_at(mid.exp())?;
        if r < target_ratio {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let scale = (0.5 * (lo + hi)).exp();
    let (_, budget) = ratio_at(scale)?;
    let mut detectors = base.scale_dark(scale);
    for d in detectors.all_mut() {
        d.calibrated = true;
    }
    Ok(Calibration {
        dark_scale: scale,
        detectors,
        budget,
    })
}

/// P(ψ⁻) per event in which both single photons reach the BSA, for a
/// single-pair, ideal-detector version of `cfg`.
pub fn bell_measurement_success(cfg: &ExperimentConfig) -> Result<f64> {
    let mut c = cfg.clone();
    c.statistics_alice = PairStatistics::SinglePair;
    c.statistics_epr = PairStatistics::SinglePair;
    c.detectors = DetectorSet::ideal();
    c.loss_herald_db = 0.0;
    c.loss_bob_db = 0.0;
    c.heralded = false;
    let prepared = prepare(&c, overlap_for(&c, c.delta_x_um), false)?;
    let (_, state) = prepared
        .states
        .iter()
        .find(|(k, _)| *k == (1, 1))
        .ok_or_else(|| SimError::invalid("max_photons", "single-pair branch not kept"))?;
    let reg = state.registry();
    let bsa_modes: Vec<usize> = reg
        .keys()
        .iter()
        .enumerate()
        .filter(|(_, k)| k.spatial == CHANNEL_ALICE || k.spatial == CHANNEL_CHARLIE)
        .map(|(i, _)| i)
        .collect();
    let arrived: f64 = state
        .occupation_distribution()?
        .iter()
        .filter(|(o, _)| bsa_modes.iter().map(|&m| o.get(m) as usize).sum::<usize>() == 2)
        .map(|(_, p)| p)
        .sum();
    let layout = detector_layout(&c, &c.detectors, false);
    let dist = gate_distribution(state, &layout)?;
    let o = teleport_outcome_distribution(&[(1.0, &dist)], &layout, &c.bsa, false, c.herald_bin);
    Ok(o.psi_minus / arrived)
}

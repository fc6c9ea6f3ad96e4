//! Threshold detection, the ψ⁻ coincidence rule, heralding and the timing budget.
//!
//! Detector efficiency is applied as an independent per-photon survival
//! probability before an ideal threshold. For a gate holding `n` photons this
//! gives `P(click) = 1 − (1−η)ⁿ(1−d)` with dark-count probability `d`, which is
//! the same POVM as a beamsplitter loss to an undetected mode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fock::FockState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorRole {
    /// Passive Ge APD on one BSA output.
    BsaGe,
    /// Gated InGaAs APD on the other BSA output, triggered by the Ge detector.
    BsaIngaas,
    Herald,
    Bob,
}

impl DetectorRole {
    pub fn label(self) -> &'static str {
        match self {
            DetectorRole::BsaGe => "Ge-BSA",
            DetectorRole::BsaIngaas => "InGaAs-BSA",
            DetectorRole::Herald => "InGaAs-herald",
            DetectorRole::Bob => "InGaAs-Bob",
        }
    }
}

impl fmt::Display for DetectorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub role: DetectorRole,
    pub efficiency: f64,
    pub dark_prob_per_gate: f64,
    pub gated: bool,
    /// False while the parameters are placeholders rather than fitted values.
    pub calibrated: bool,
}

impl DetectorModel {
    pub fn ideal(role: DetectorRole) -> Self {
        Self {
            role,
            efficiency: 1.0,
            dark_prob_per_gate: 0.0,
            gated: role != DetectorRole::BsaGe,
            calibrated: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(SimError::invalid("efficiency", format!("{} for {}", self.efficiency, self.role)));
        }
        if !(0.0..1.0).contains(&self.dark_prob_per_gate) {
            return Err(SimError::invalid(
                "dark_prob_per_gate",
                format!("{} for {}", self.dark_prob_per_gate, self.role),
            ));
        }
        Ok(())
    }

    /// Click probability of one gate holding `photons` photons.
    pub fn click_probability(&self, photons: u8) -> f64 {
        1.0 - (1.0 - self.efficiency).powi(photons as i32) * (1.0 - self.dark_prob_per_gate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Gate {
    pub detector: DetectorRole,
    pub bin: usize,
}

/// Set of (detector, bin) gates that clicked during one clock window.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClickPattern {
    clicked: BTreeSet<Gate>,
}

impl ClickPattern {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_clicks(clicks: impl IntoIterator<Item = (DetectorRole, usize)>) -> Self {
        Self {
            clicked: clicks
                .into_iter()
                .map(|(detector, bin)| Gate { detector, bin })
                .collect(),
        }
    }

    pub fn insert(&mut self, detector: DetectorRole, bin: usize) {
        self.clicked.insert(Gate { detector, bin });
    }

    pub fn clicked(&self, detector: DetectorRole, bin: usize) -> bool {
        self.clicked.contains(&Gate { detector, bin })
    }

    pub fn bins(&self, detector: DetectorRole) -> Vec<usize> {
        self.clicked
            .iter()
            .filter(|g| g.detector == detector)
            .map(|g| g.bin)
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.clicked.is_empty()
    }

    pub fn gates(&self) -> impl Iterator<Item = &Gate> {
        self.clicked.iter()
    }
}

/// One detector watching a spatial channel over a set of bins.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutEntry {
    pub model: DetectorModel,
    pub channel: String,
    pub bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectorLayout {
    entries: Vec<LayoutEntry>,
}

impl DetectorLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, model: DetectorModel, channel: impl Into<String>, bins: impl IntoIterator<Item = usize>) -> Self {
        self.entries.push(LayoutEntry {
            model,
            channel: channel.into(),
            bins: bins.into_iter().collect(),
        });
        self
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn validate(&self) -> Result<()> {
        self.entries.iter().try_for_each(|e| e.model.validate())
    }

    /// Gates in a fixed order: entries in insertion order, bins ascending as given.
    pub fn gates(&self) -> Vec<(Gate, &DetectorModel, &str)> {
        self.entries
            .iter()
            .flat_map(|e| {
                e.bins.iter().map(move |&bin| {
                    (
                        Gate {
                            detector: e.model.role,
                            bin,
                        },
                        &e.model,
                        e.channel.as_str(),
                    )
                })
            })
            .collect()
    }

    pub fn gate_index(&self, detector: DetectorRole, bin: usize) -> Option<usize> {
        self.gates()
            .iter()
            .position(|(g, _, _)| g.detector == detector && g.bin == bin)
    }

    pub fn model(&self, detector: DetectorRole) -> Option<&DetectorModel> {
        self.entries
            .iter()
            .find(|e| e.model.role == detector)
            .map(|e| &e.model)
    }

    /// Replaces the model of every entry with the given role.
    pub fn set_model(&mut self, model: DetectorModel) {
        for e in &mut self.entries {
            if e.model.role == model.role {
                e.model = model;
            }
        }
    }

    /// Mode indices summed into each gate (all internal labels of the channel bin).
    pub fn gate_modes(&self, state: &FockState) -> Vec<Vec<usize>> {
        let reg = state.registry();
        self.gates()
            .iter()
            .map(|(g, _, ch)| {
                reg.keys()
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.spatial == *ch && k.time_bin == g.bin)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect()
    }
}

/// Photon counts per gate with their probabilities, for one pure branch.
pub type GateDistribution = BTreeMap<Vec<u8>, f64>;

/// Marginal photon-count distribution over the layout's gates.
pub fn gate_distribution(state: &FockState, layout: &DetectorLayout) -> Result<GateDistribution> {
    let modes = layout.gate_modes(state);
    let mut out = GateDistribution::new();
    for (occ, p) in state.occupation_distribution()? {
        let counts: Vec<u8> = modes
            .iter()
            .map(|ms| ms.iter().map(|&m| occ.get(m)).sum())
            .collect();
        *out.entry(counts).or_default() += p;
    }
    Ok(out)
}

fn check_ensemble(ensemble: &[(f64, FockState)]) -> Result<()> {
    let total: f64 = ensemble.iter().map(|(w, _)| w).sum();
    if (total - 1.0).abs() > 1e-9 || ensemble.iter().any(|(w, _)| *w < 0.0) {
        return Err(SimError::UnnormalizedState(total));
    }
    Ok(())
}

/// Full distribution over click patterns for a weighted ensemble of pure branches.
///
/// Enumerates every gate outcome, so it is meant for small layouts; the
/// scenario pipeline uses the factorized event probabilities below.
pub fn click_distribution(
    ensemble: &[(f64, FockState)],
    layout: &DetectorLayout,
) -> Result<BTreeMap<ClickPattern, f64>> {
    check_ensemble(ensemble)?;
    layout.validate()?;
    let gates = layout.gates();
    let mut out: BTreeMap<ClickPattern, f64> = BTreeMap::new();
    for (w, state) in ensemble {
        for (counts, p) in gate_distribution(state, layout)? {
            let mut partial: Vec<(ClickPattern, f64)> = vec![(ClickPattern::new(), w * p)];
            for (gi, (gate, model, _)) in gates.iter().enumerate() {
                let pc = model.click_probability(counts[gi]);
                let mut next = Vec::with_capacity(partial.len() * 2);
                for (pattern, q) in partial {
                    if pc > 0.0 {
                        let mut clicked = pattern.clone();
                        clicked.clicked.insert(*gate);
                        next.push((clicked, q * pc));
                    }
                    if pc < 1.0 {
                        next.push((pattern, q * (1.0 - pc)));
                    }
                }
                partial = next;
            }
            for (pattern, q) in partial {
                *out.entry(pattern).or_default() += q;
            }
        }
    }
    Ok(out)
}

/// How the BSA electronics accept a ψ⁻ coincidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsaRule {
    /// Accept both time orderings; otherwise the InGaAs detector only looks
    /// in the bin after a Ge click.
    pub symmetric: bool,
    /// Bins `0..window_bins` fall inside the laser clock window.
    pub window_bins: usize,
}

impl Default for BsaRule {
    fn default() -> Self {
        Self {
            symmetric: false,
            window_bins: 3,
        }
    }
}

/// Two BSA clicks on different detectors one bin apart, inside the clock window.
pub fn psi_minus_filter(pattern: &ClickPattern, rule: &BsaRule) -> bool {
    let in_window = |bins: Vec<usize>| -> Vec<usize> { bins.into_iter().filter(|&b| b < rule.window_bins).collect() };
    let ge = in_window(pattern.bins(DetectorRole::BsaGe));
    let ingaas = in_window(pattern.bins(DetectorRole::BsaIngaas));
    if ge.len() != 1 {
        return false;
    }
    let t = ge[0];
    if rule.symmetric {
        ingaas.len() == 1 && t.abs_diff(ingaas[0]) == 1
    } else {
        t + 1 < rule.window_bins && ingaas.contains(&(t + 1))
    }
}

/// Herald click in the expected bin; vacuously true when heralding is off.
pub fn herald_filter(pattern: &ClickPattern, heralded: bool, herald_bin: usize) -> bool {
    !heralded || pattern.clicked(DetectorRole::Herald, herald_bin)
}

/// ψ⁻ acceptance probability from independent per-bin click probabilities of
/// the two BSA detectors (index = bin, covering the clock window).
pub fn psi_minus_probability(ge: &[f64], ingaas: &[f64], rule: &BsaRule) -> f64 {
    let w = rule.window_bins.min(ge.len()).min(ingaas.len());
    let only = |p: &[f64], t: usize| -> f64 {
        (0..w)
            .map(|u| if u == t { p[u] } else { 1.0 - p[u] })
            .product()
    };
    let mut total = 0.0;
    for t in 0..w {
        let ge_only = only(ge, t);
        if rule.symmetric {
            for u in [t.wrapping_sub(1), t + 1] {
                if u < w {
                    total += ge_only * only(ingaas, u);
                }
            }
        } else if t + 1 < w {
            total += ge_only * ingaas[t + 1];
        }
    }
    total
}

/// Joint probabilities of the post-selected teleportation events.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TeleportOutcomes {
    /// P(ψ⁻).
    pub psi_minus: f64,
    /// P(ψ⁻ ∧ herald).
    pub psi_minus_herald: f64,
    /// P(ψ⁻ ∧ herald ∧ Bob clicks in bin b), b = 0, 1, 2.
    pub with_bob: [f64; 3],
}

impl TeleportOutcomes {
    pub fn add_scaled(&mut self, other: &TeleportOutcomes, w: f64) {
        self.psi_minus += w * other.psi_minus;
        self.psi_minus_herald += w * other.psi_minus_herald;
        for b in 0..3 {
            self.with_bob[b] += w * other.with_bob[b];
        }
    }
}

/// Gate indices used by the teleportation and Mandel event rules.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGates {
    pub ge: Vec<Option<usize>>,
    pub ingaas: Vec<Option<usize>>,
    pub herald: Option<usize>,
    pub bob: [Option<usize>; 3],
}

impl EventGates {
    pub fn from_layout(layout: &DetectorLayout, rule: &BsaRule, herald_bin: usize) -> Self {
        Self {
            ge: (0..rule.window_bins)
                .map(|t| layout.gate_index(DetectorRole::BsaGe, t))
                .collect(),
            ingaas: (0..rule.window_bins)
                .map(|t| layout.gate_index(DetectorRole::BsaIngaas, t))
                .collect(),
            herald: layout.gate_index(DetectorRole::Herald, herald_bin),
            bob: [0, 1, 2].map(|b| layout.gate_index(DetectorRole::Bob, b)),
        }
    }
}

fn gate_click(counts: &[u8], models: &[DetectorModel], idx: Option<usize>, fallback_dark: f64) -> f64 {
    match idx {
        Some(i) => models[i].click_probability(counts[i]),
        None => fallback_dark,
    }
}

/// Per-gate models in layout order.
pub fn gate_models(layout: &DetectorLayout) -> Vec<DetectorModel> {
    layout.gates().into_iter().map(|(_, m, _)| *m).collect()
}

fn dark_of(layout: &DetectorLayout, role: DetectorRole) -> f64 {
    layout.model(role).map_or(0.0, |m| m.dark_prob_per_gate)
}

/// Factorized ψ⁻ ∧ herald ∧ Bob probabilities for one gate-count vector.
pub fn teleport_outcomes_for_counts(
    counts: &[u8],
    layout: &DetectorLayout,
    models: &[DetectorModel],
    gates: &EventGates,
    rule: &BsaRule,
    heralded: bool,
) -> TeleportOutcomes {
    let ge: Vec<f64> = gates
        .ge
        .iter()
        .map(|&g| gate_click(counts, models, g, dark_of(layout, DetectorRole::BsaGe)))
        .collect();
    let ingaas: Vec<f64> = gates
        .ingaas
        .iter()
        .map(|&g| gate_click(counts, models, g, dark_of(layout, DetectorRole::BsaIngaas)))
        .collect();
    let psi = psi_minus_probability(&ge, &ingaas, rule);
    let herald = if heralded {
        gate_click(counts, models, gates.herald, dark_of(layout, DetectorRole::Herald))
    } else {
        1.0
    };
    let with_bob = gates
        .bob
        .map(|g| psi * herald * gate_click(counts, models, g, dark_of(layout, DetectorRole::Bob)));
    TeleportOutcomes {
        psi_minus: psi,
        psi_minus_herald: psi * herald,
        with_bob,
    }
}

/// Mixes factorized outcomes over weighted gate distributions.
pub fn teleport_outcome_distribution(
    branches: &[(f64, &GateDistribution)],
    layout: &DetectorLayout,
    rule: &BsaRule,
    heralded: bool,
    herald_bin: usize,
) -> TeleportOutcomes {
    let models = gate_models(layout);
    let gates = EventGates::from_layout(layout, rule, herald_bin);
    let mut out = TeleportOutcomes::default();
    for (w, dist) in branches {
        for (counts, p) in dist.iter() {
            let o = teleport_outcomes_for_counts(counts, layout, &models, &gates, rule, heralded);
            out.add_scaled(&o, w * p);
        }
    }
    out
}

/// P(both BSA detectors click in `bin`), optionally requiring the herald.
pub fn same_bin_coincidence(
    branches: &[(f64, &GateDistribution)],
    layout: &DetectorLayout,
    bin: usize,
    heralded: bool,
    herald_bin: usize,
) -> f64 {
    let models = gate_models(layout);
    let ge = layout.gate_index(DetectorRole::BsaGe, bin);
    let ingaas = layout.gate_index(DetectorRole::BsaIngaas, bin);
    let herald = layout.gate_index(DetectorRole::Herald, herald_bin);
    let mut total = 0.0;
    for (w, dist) in branches {
        for (counts, p) in dist.iter() {
            let h = if heralded {
                gate_click(counts, &models, herald, dark_of(layout, DetectorRole::Herald))
            } else {
                1.0
            };
            total += w
                * p
                * gate_click(counts, &models, ge, dark_of(layout, DetectorRole::BsaGe))
                * gate_click(counts, &models, ingaas, dark_of(layout, DetectorRole::BsaIngaas))
                * h;
        }
    }
    total
}

/// Samples one click pattern for a gate-count vector.
pub fn sample_clicks<R: Rng + ?Sized>(counts: &[u8], layout: &DetectorLayout, rng: &mut R) -> ClickPattern {
    let mut pattern = ClickPattern::new();
    for (i, (gate, model, _)) in layout.gates().into_iter().enumerate() {
        let mut clicked = rng.random::<f64>() < model.dark_prob_per_gate;
        for _ in 0..counts[i] {
            if rng.random::<f64>() < model.efficiency {
                clicked = true;
            }
        }
        if clicked {
            pattern.clicked.insert(gate);
        }
    }
    pattern
}

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Fiber lengths and electronic latency relevant to gating Bob's detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBudget {
    pub spool_alice_m: f64,
    pub spool_charlie_m: f64,
    pub fiber_bob_m: f64,
    pub fiber_classical_m: f64,
    pub spool_bob_m: f64,
    pub group_index: f64,
    pub bsa_latency_s: f64,
}

impl Default for TimingBudget {
    fn default() -> Self {
        Self {
            spool_alice_m: 177.0,
            spool_charlie_m: 179.72,
            fiber_bob_m: 800.0,
            fiber_classical_m: 800.0,
            spool_bob_m: 250.0,
            group_index: 1.468,
            bsa_latency_s: 220e-9,
        }
    }
}

impl TimingBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spool_alice_m", self.spool_alice_m),
            ("spool_charlie_m", self.spool_charlie_m),
            ("fiber_bob_m", self.fiber_bob_m),
            ("fiber_classical_m", self.fiber_classical_m),
            ("spool_bob_m", self.spool_bob_m),
            ("bsa_latency_s", self.bsa_latency_s),
        ] {
            if !(v >= 0.0) {
                return Err(SimError::invalid(name, format!("{v} is negative")));
            }
        }
        if !(self.group_index > 0.0) {
            return Err(SimError::invalid("group_index", "must be positive"));
        }
        Ok(())
    }

    fn fiber_delay(&self, meters: f64) -> f64 {
        meters * self.group_index / SPEED_OF_LIGHT
    }
}

/// Photon arrival at Bob's detector minus arrival of the classical trigger, in
/// seconds, both measured from pair creation. Positive slack means the gate
/// opens before the photon arrives.
pub fn validate_timing(budget: &TimingBudget) -> f64 {
    let photon = budget.fiber_delay(budget.fiber_bob_m + budget.spool_bob_m);
    let classical =
        budget.fiber_delay(budget.spool_charlie_m) + budget.bsa_latency_s + budget.fiber_delay(budget.fiber_classical_m);
    photon - classical
}

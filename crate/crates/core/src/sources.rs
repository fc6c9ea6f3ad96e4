//! Pair sources and the wavepacket-overlap model.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::fock::{FockState, ModeRegistry, INTERNAL_ORTHOGONAL, INTERNAL_REFERENCE};

use std::sync::Arc;

/// Tail mass allowed beyond the pair-number cutoff unless the caller relaxes it.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStatistics {
    /// Geometric pair number per temporal mode.
    Thermal,
    Poissonian,
    /// Exactly one pair per pulse.
    SinglePair,
}

impl PairStatistics {
    pub fn name(self) -> &'static str {
        match self {
            PairStatistics::Thermal => "thermal",
            PairStatistics::Poissonian => "poissonian",
            PairStatistics::SinglePair => "single",
        }
    }
}

/// How a quoted "pair probability per pulse" maps onto the source mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairInterpretation {
    /// The quoted number is the mean pair number.
    Mean,
    /// The quoted number is P(n ≥ 1).
    AtLeastOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdcSource {
    /// Mean pairs emitted per laser pulse, summed over temporal modes.
    pub mean_pairs: f64,
    pub statistics: PairStatistics,
    /// Independent pump time bins feeding the crystal (1 or 2).
    pub temporal_modes: usize,
    pub signal: String,
    pub idler: String,
    pub pump_phase: f64,
}

impl SpdcSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.mean_pairs >= 0.0) || !self.mean_pairs.is_finite() {
            return Err(SimError::invalid("mean_pairs", format!("{} is negative or not finite", self.mean_pairs)));
        }
        if self.temporal_modes == 0 {
            return Err(SimError::invalid("temporal_modes", "must be at least 1"));
        }
        Ok(())
    }

    /// Mean producing a given P(n ≥ 1) under this source's statistics.
    pub fn mean_for_pair_probability(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(SimError::invalid("pair_probability", format!("{p} outside [0,1)")));
        }
        let m = self.temporal_modes as f64;
        Ok(match self.statistics {
            PairStatistics::Thermal => m * ((1.0 - p).powf(-1.0 / m) - 1.0),
            PairStatistics::Poissonian => -(1.0 - p).ln(),
            PairStatistics::SinglePair => 1.0,
        })
    }
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Untruncated P(n) for the source statistics.
pub fn pair_probability(source: &SpdcSource, n: usize) -> f64 {
    let mu = source.mean_pairs;
    match source.statistics {
        PairStatistics::SinglePair => {
            if n == 1 {
                1.0
            } else {
                0.0
            }
        }
        _ if mu == 0.0 => {
            if n == 0 {
                1.0
            } else {
                0.0
            }
        }
        PairStatistics::Thermal => {
            let m = source.temporal_modes;
            let per_mode = mu / m as f64;
            let p = per_mode / (1.0 + per_mode);
            (ln_binomial(n + m - 1, n) + n as f64 * p.ln() + m as f64 * (1.0 - p).ln()).exp()
        }
        PairStatistics::Poissonian => (-mu + n as f64 * mu.ln() - ln_factorial(n)).exp(),
    }
}

/// Pair-number distribution over `0..=n_cut`, renormalized after checking the
/// discarded tail against `tail_tolerance`.
pub fn pair_count_distribution(source: &SpdcSource, n_cut: usize, tail_tolerance: f64) -> Result<Vec<f64>> {
    source.validate()?;
    let mut probs: Vec<f64> = (0..=n_cut).map(|n| pair_probability(source, n)).collect();
    let kept: f64 = probs.iter().sum();
    let tail = (1.0 - kept).max(0.0);
    if tail > tail_tolerance {
        return Err(SimError::TailMassTooLarge {
            tail,
            n_cut,
            tolerance: tail_tolerance,
        });
    }
    for p in &mut probs {
        *p /= kept;
    }
    Ok(probs)
}

fn unit() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

fn repeated(state: FockState, op: &[(Complex64, Vec<usize>)], n: usize) -> Result<FockState> {
    let mut s = state;
    for _ in 0..n {
        s = s.apply_polynomial(op)?;
    }
    s.normalize()
}

/// `(c†₀b†₀ + e^{iφ_p} c†₁b†₁)ⁿ |vac⟩`, normalized, with `c` the signal and `b` the idler channel.
pub fn emit_entangled(
    source: &SpdcSource,
    registry: &Arc<ModeRegistry>,
    max_photons: usize,
    n_pairs: usize,
) -> Result<FockState> {
    let vac = FockState::vacuum(Arc::clone(registry), max_photons)?;
    if 2 * n_pairs > max_photons {
        return Err(SimError::TruncationOverflow {
            photons: 2 * n_pairs,
            max: max_photons,
        });
    }
    let mut op = Vec::with_capacity(2);
    for bin in 0..2 {
        let c = registry.lookup(&source.signal, bin, INTERNAL_REFERENCE)?;
        let b = registry.lookup(&source.idler, bin, INTERNAL_REFERENCE)?;
        let amp = Complex64::from_polar(1.0, source.pump_phase * bin as f64);
        op.push((amp, vec![c, b]));
    }
    repeated(vac, &op, n_pairs)
}

/// Single-bin pair on (signal, idler) with the signal photon's wavepacket split
/// as `ξ a†(internal 0) + √(1−ξ²) a†(internal 1)`.
pub fn emit_alice(
    source: &SpdcSource,
    registry: &Arc<ModeRegistry>,
    max_photons: usize,
    n_pairs: usize,
    overlap: f64,
) -> Result<FockState> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(SimError::invalid("overlap", format!("{overlap} outside [0,1]")));
    }
    let vac = FockState::vacuum(Arc::clone(registry), max_photons)?;
    if 2 * n_pairs > max_photons {
        return Err(SimError::TruncationOverflow {
            photons: 2 * n_pairs,
            max: max_photons,
        });
    }
    let herald = registry.lookup(&source.idler, 0, INTERNAL_REFERENCE)?;
    let same = registry.lookup(&source.signal, 0, INTERNAL_REFERENCE)?;
    let mut op = vec![(unit() * overlap, vec![same, herald])];
    let orth_weight = (1.0 - overlap * overlap).max(0.0).sqrt();
    if orth_weight > 0.0 {
        let orth = registry.lookup(&source.signal, 0, INTERNAL_ORTHOGONAL)?;
        op.push((unit() * orth_weight, vec![orth, herald]));
    }
    repeated(vac, &op, n_pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapModel {
    /// FWHM of the coincidence dip, micrometres.
    pub dip_fwhm_um: f64,
    /// Coherence length after filtering, micrometres.
    pub coherence_length_um: f64,
}

impl Default for OverlapModel {
    fn default() -> Self {
        Self {
            dip_fwhm_um: 144.0,
            coherence_length_um: 150.0,
        }
    }
}

impl OverlapModel {
    /// Gaussian width ℓ such that ξ² has the configured FWHM.
    pub fn width_um(&self) -> f64 {
        self.dip_fwhm_um / (2.0 * std::f64::consts::LN_2).sqrt()
    }

    /// ξ(δx) = exp(−(δx/ℓ)²).
    pub fn overlap_from_mismatch(&self, delta_x_um: f64) -> f64 {
        let u = delta_x_um / self.width_um();
        (-u * u).exp()
    }
}

//! Stratified sampling of photon-number outcomes at the detector gates.
//!
//! Trials are grouped into fixed-size blocks. Every block owns a ChaCha8
//! stream positioned by (seed, stream id, block index), so the result does not
//! depend on thread scheduling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use std::collections::BTreeMap;

use crate::detection::{ClickPattern, DetectorLayout, DetectorModel, Gate, GateDistribution};
use crate::error::{Result, SimError};

pub const BLOCK_TRIALS: u64 = 1 << 16;

/// Stratified estimate of one event probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub probability: f64,
    pub standard_error: f64,
    pub trials: u64,
}

/// Seeds a generator for one (stream, block) cell.
pub fn block_rng(seed: u64, stream: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(block) << 40);
    rng
}

/// Strata allocated fewer trials than this are pooled.
const MIN_STRATUM_TRIALS: u64 = 1000;

struct Branch<'a> {
    counts: Vec<&'a [u8]>,
    index: WeightedIndex<f64>,
}

impl<'a> Branch<'a> {
    fn new(dist: &'a GateDistribution) -> Result<Self> {
        let counts: Vec<&[u8]> = dist.keys().map(|k| k.as_slice()).collect();
        let probs: Vec<f64> = dist.values().copied().collect();
        let index =
            WeightedIndex::new(&probs).map_err(|e| SimError::invalid("gate_distribution", format!("{e}")))?;
        Ok(Self { counts, index })
    }
}

/// One or more branches sampled in proportion to their weights.
struct Stratum<'a> {
    weight: f64,
    trials: u64,
    /// Index of this stratum's first block in the stream.
    first_block: u64,
    branches: Vec<Branch<'a>>,
    pick: Option<WeightedIndex<f64>>,
}

impl Stratum<'_> {
    fn sample_counts(&self, rng: &mut ChaCha8Rng) -> &[u8] {
        let b = match &self.pick {
            Some(pick) => &self.branches[pick.sample(rng)],
            None => &self.branches[0],
        };
        b.counts[b.index.sample(rng)]
    }
}

/// Splits `trials` over branches in proportion to √weight.
///
/// Rare multi-pair branches carry most of the coincidence signal, so
/// proportional allocation would leave them nearly unsampled. Branches whose
/// share is below `MIN_STRATUM_TRIALS` are pooled into one proportionally
/// sampled stratum, which keeps every stratum large enough for its variance
/// estimate to be meaningful.
fn strata<'a>(mixture: &[(f64, &'a GateDistribution)], trials: u64) -> Result<Vec<Stratum<'a>>> {
    let live: Vec<(f64, &GateDistribution)> = mixture.iter().filter(|(w, _)| *w > 0.0).copied().collect();
    let root_sum: f64 = live.iter().map(|(w, _)| w.sqrt()).sum();
    if !(root_sum > 0.0) {
        return Err(SimError::invalid("mixture", "no branch has positive weight"));
    }
    let share = |w: f64| (trials as f64 * w.sqrt() / root_sum).floor() as u64;
    let mut out = Vec::new();
    let mut pooled = Vec::new();
    for (w, dist) in live {
        let t = share(w);
        if t >= MIN_STRATUM_TRIALS || trials < MIN_STRATUM_TRIALS {
            out.push(Stratum {
                weight: w,
                trials: t.max(1),
                first_block: 0,
                branches: vec![Branch::new(dist)?],
                pick: None,
            });
        } else {
            pooled.push((w, dist));
        }
    }
    if !pooled.is_empty() {
        let weight: f64 = pooled.iter().map(|(w, _)| w).sum();
        let t: u64 = pooled.iter().map(|(w, _)| share(*w)).sum();
        let weights: Vec<f64> = pooled.iter().map(|(w, _)| *w).collect();
        out.push(Stratum {
            weight,
            trials: t.max(MIN_STRATUM_TRIALS),
            first_block: 0,
            branches: pooled.iter().map(|(_, d)| Branch::new(d)).collect::<Result<_>>()?,
            pick: Some(
                WeightedIndex::new(&weights).map_err(|e| SimError::invalid("mixture", format!("{e}")))?,
            ),
        });
    }
    let mut next_block = 0;
    for s in &mut out {
        s.first_block = next_block;
        next_block += s.trials.div_ceil(BLOCK_TRIALS);
    }
    Ok(out)
}

/// Probability that each event fires for one gate-count vector, summed
/// exactly over detector efficiency and dark-count outcomes.
fn event_probabilities<F>(counts: &[u8], models: &[(Gate, DetectorModel)], events: &[F]) -> Vec<f64>
where
    F: Fn(&ClickPattern) -> bool,
{
    let mut fixed = ClickPattern::new();
    let mut free = Vec::new();
    for ((gate, model), &n) in models.iter().zip(counts) {
        let p = model.click_probability(n);
        if p >= 1.0 {
            fixed.insert(gate.detector, gate.bin);
        } else if p > 0.0 {
            free.push((*gate, p));
        }
    }
    let mut out = vec![0.0; events.len()];
    for mask in 0u64..(1 << free.len()) {
        let mut pattern = fixed.clone();
        let mut weight = 1.0;
        for (k, (gate, p)) in free.iter().enumerate() {
            if mask >> k & 1 == 1 {
                pattern.insert(gate.detector, gate.bin);
                weight *= p;
            } else {
                weight *= 1.0 - p;
            }
        }
        for (o, ev) in out.iter_mut().zip(events) {
            if ev(&pattern) {
                *o += weight;
            }
        }
    }
    out
}

/// Samples about `trials` pulses, stratified over pair-number branches, and
/// estimates the probability of each event.
///
/// Photon-number outcomes at the gates are sampled; detector efficiency and
/// dark counts are then integrated exactly for each sampled count vector
/// (conditional Monte Carlo). Coincidence events here are so rare per pulse
/// that sampling the detector noise too would leave most runs with no hits.
pub fn sample_events<F>(
    mixture: &[(f64, &GateDistribution)],
    layout: &DetectorLayout,
    events: &[F],
    trials: u64,
    seed: u64,
    stream: u64,
) -> Result<Vec<McEstimate>>
where
    F: Fn(&ClickPattern) -> bool + Sync,
{
    if trials == 0 {
        return Err(SimError::invalid("trials", "must be at least 1"));
    }
    layout.validate()?;
    let models: Vec<(Gate, DetectorModel)> = layout.gates().into_iter().map(|(g, m, _)| (g, *m)).collect();
    let strata = strata(mixture, trials)?;
    let cells: Vec<(usize, u64)> = strata
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.trials.div_ceil(BLOCK_TRIALS)).map(move |b| (i, b)))
        .collect();
    // Integer histograms of sampled count vectors keep the result independent of scheduling.
    let block_hist: Vec<(usize, BTreeMap<&[u8], u64>)> = cells
        .par_iter()
        .map(|&(i, block)| {
            let s = &strata[i];
            let mut rng = block_rng(seed, stream, s.first_block + block);
            let n = BLOCK_TRIALS.min(s.trials - block * BLOCK_TRIALS);
            let mut hist = BTreeMap::new();
            for _ in 0..n {
                *hist.entry(s.sample_counts(&mut rng)).or_insert(0u64) += 1;
            }
            (i, hist)
        })
        .collect();
    let mut per_stratum: Vec<BTreeMap<&[u8], u64>> = vec![BTreeMap::new(); strata.len()];
    for (i, hist) in block_hist {
        for (k, n) in hist {
            *per_stratum[i].entry(k).or_insert(0) += n;
        }
    }
    let mut cache: BTreeMap<&[u8], Vec<f64>> = BTreeMap::new();
    for hist in &per_stratum {
        for k in hist.keys() {
            cache.entry(*k).or_insert_with(|| event_probabilities(k, &models, events));
        }
    }
    let total_trials: u64 = strata.iter().map(|s| s.trials).sum();
    Ok((0..events.len())
        .map(|e| {
            let mut p = 0.0;
            let mut var = 0.0;
            for (s, hist) in strata.iter().zip(&per_stratum) {
                let t = s.trials as f64;
                let mean = hist.iter().map(|(k, &n)| n as f64 * cache[k][e]).sum::<f64>() / t;
                p += s.weight * mean;
                if s.trials > 1 {
                    let ss: f64 = hist.iter().map(|(k, &n)| n as f64 * (cache[k][e] - mean).powi(2)).sum();
                    var += s.weight * s.weight * ss / (t - 1.0) / t;
                }
            }
            McEstimate {
                probability: p,
                standard_error: var.sqrt(),
                trials: total_trials,
            }
        })
        .collect())
}

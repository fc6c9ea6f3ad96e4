//! Truncated Fock-space states over a registry of optical modes.
//!
//! A mode is a (spatial channel, time bin, internal wavepacket label) triple.
//! States are sparse maps from occupation vectors to complex amplitudes and
//! are treated as immutable values: every operation returns a new state.
//!
//! Linear optics acts on creation operators. A transform substitutes each
//! input operator `a†_j` with `Σ_k U_jk a†_k` and re-expands the polynomial,
//! which is exact for any photon number below the cutoff.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Amplitudes below this magnitude are dropped after every operation.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Default photon-number cutoff (two pairs in flight).
pub const DEFAULT_MAX_PHOTONS: usize = 4;

/// Largest supported photon-number cutoff.
pub const MAX_SUPPORTED_PHOTONS: usize = 12;

/// Default number of time bins per channel.
pub const DEFAULT_MAX_BINS: usize = 4;

/// Reference wavepacket label.
pub const INTERNAL_REFERENCE: u8 = 0;

/// Wavepacket label orthogonal to the reference.
pub const INTERNAL_ORTHOGONAL: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeKey {
    pub spatial: String,
    pub time_bin: usize,
    pub internal: u8,
}

impl ModeKey {
    pub fn new(spatial: impl Into<String>, time_bin: usize, internal: u8) -> Self {
        Self {
            spatial: spatial.into(),
            time_bin,
            internal,
        }
    }
}

impl fmt::Display for ModeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[t{}/i{}]", self.spatial, self.time_bin, self.internal)
    }
}

/// Append-only mapping from [`ModeKey`] to dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeRegistry {
    modes: Vec<ModeKey>,
    index: HashMap<ModeKey, usize>,
    max_bins: usize,
}

impl ModeRegistry {
    pub fn new(max_bins: usize) -> Self {
        Self {
            modes: Vec::new(),
            index: HashMap::new(),
            max_bins,
        }
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Registers a new mode and returns its index.
    pub fn register(&mut self, key: ModeKey) -> Result<usize> {
        if key.time_bin >= self.max_bins {
            return Err(SimError::BinOverflow {
                bin: key.time_bin,
                max_bins: self.max_bins,
            });
        }
        if self.index.contains_key(&key) {
            return Err(SimError::DuplicateMode(key.to_string()));
        }
        let idx = self.modes.len();
        self.index.insert(key.clone(), idx);
        self.modes.push(key);
        Ok(idx)
    }

    /// Returns the index of `key`, registering it if needed.
    pub fn ensure(&mut self, key: ModeKey) -> Result<usize> {
        match self.index.get(&key) {
            Some(&idx) => Ok(idx),
            None => self.register(key),
        }
    }

    pub fn index_of(&self, spatial: &str, time_bin: usize, internal: u8) -> Option<usize> {
        self.index
            .get(&ModeKey::new(spatial, time_bin, internal))
            .copied()
    }

    pub fn lookup(&self, spatial: &str, time_bin: usize, internal: u8) -> Result<usize> {
        self.index_of(spatial, time_bin, internal)
            .ok_or_else(|| SimError::UnknownMode(ModeKey::new(spatial, time_bin, internal).to_string()))
    }

    pub fn key(&self, idx: usize) -> Option<&ModeKey> {
        self.modes.get(idx)
    }

    pub fn keys(&self) -> &[ModeKey] {
        &self.modes
    }

    /// Indices of every registered mode of a spatial channel, ordered by (bin, internal).
    pub fn channel_modes(&self, spatial: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .modes
            .iter()
            .enumerate()
            .filter(|(_, k)| k.spatial == spatial)
            .map(|(i, _)| i)
            .collect();
        out.sort_by_key(|&i| (self.modes[i].time_bin, self.modes[i].internal));
        out
    }

    /// Highest registered bin of a channel, if the channel exists.
    pub fn channel_max_bin(&self, spatial: &str) -> Option<usize> {
        self.modes
            .iter()
            .filter(|k| k.spatial == spatial)
            .map(|k| k.time_bin)
            .max()
    }

    /// Internal labels registered anywhere on a channel.
    pub fn channel_internals(&self, spatial: &str) -> Vec<u8> {
        let mut labels: Vec<u8> = self
            .modes
            .iter()
            .filter(|k| k.spatial == spatial)
            .map(|k| k.internal)
            .collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }
}

/// Photon counts per registered mode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Occupation(Box<[u8]>);

impl Occupation {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len].into_boxed_slice())
    }

    pub fn from_counts(counts: &[u8]) -> Self {
        Self(counts.into())
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(|&n| n as usize).sum()
    }

    pub fn get(&self, mode: usize) -> u8 {
        self.0[mode]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Occupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

fn factorial_sqrt(n: u8) -> f64 {
    (1..=n as u32).map(|k| k as f64).product::<f64>().sqrt()
}

/// Sparse pure state in the truncated Fock space of a registry.
#[derive(Debug, Clone)]
pub struct FockState {
    registry: Arc<ModeRegistry>,
    terms: BTreeMap<Occupation, Complex64>,
    max_photons: usize,
}

impl FockState {
    /// The vacuum: a single all-zero term with amplitude one.
    pub fn vacuum(registry: Arc<ModeRegistry>, max_photons: usize) -> Result<Self> {
        if registry.is_empty() {
            return Err(SimError::invalid("registry", "no modes registered"));
        }
        if max_photons > MAX_SUPPORTED_PHOTONS {
            return Err(SimError::invalid(
                "max_photons",
                format!("{max_photons} exceeds the supported cutoff {MAX_SUPPORTED_PHOTONS}"),
            ));
        }
        let mut terms = BTreeMap::new();
        terms.insert(Occupation::zeros(registry.len()), Complex64::new(1.0, 0.0));
        Ok(Self {
            registry,
            terms,
            max_photons,
        })
    }

    /// Builds a state from explicit terms; duplicate occupations are summed.
    pub fn from_terms(
        registry: Arc<ModeRegistry>,
        max_photons: usize,
        terms: impl IntoIterator<Item = (Vec<u8>, Complex64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (counts, amp) in terms {
            if counts.len() != registry.len() {
                return Err(SimError::DimensionMismatch {
                    expected: registry.len(),
                    got: counts.len(),
                });
            }
            let occ = Occupation::from_counts(&counts);
            let total = occ.total();
            if total > max_photons {
                return Err(SimError::TruncationOverflow {
                    photons: total,
                    max: max_photons,
                });
            }
            *map.entry(occ).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        let mut state = Self {
            registry,
            terms: map,
            max_photons,
        };
        state.prune();
        Ok(state)
    }

    pub fn registry(&self) -> &Arc<ModeRegistry> {
        &self.registry
    }

    pub fn max_photons(&self) -> usize {
        self.max_photons
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Occupation, &Complex64)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn amplitude(&self, counts: &[u8]) -> Complex64 {
        self.terms
            .get(&Occupation::from_counts(counts))
            .copied()
            .unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.registry.len() {
            Err(SimError::UnregisteredMode(mode))
        } else {
            Ok(())
        }
    }

    fn prune(&mut self) {
        self.terms.retain(|_, a| a.norm() >= PRUNE_THRESHOLD);
    }

    fn with_terms(&self, terms: BTreeMap<Occupation, Complex64>) -> Self {
        let mut out = Self {
            registry: Arc::clone(&self.registry),
            terms,
            max_photons: self.max_photons,
        };
        out.prune();
        out
    }

    pub fn normalize(&self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm < PRUNE_THRESHOLD {
            return Err(SimError::UnnormalizedState(norm * norm));
        }
        Ok(self.scale(Complex64::new(1.0 / norm, 0.0)))
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        self.with_terms(self.terms.iter().map(|(o, a)| (o.clone(), a * factor)).collect())
    }

    /// Applies `a†_mode`, multiplying each term by `√(n+1)`.
    pub fn apply_creation(&self, mode: usize) -> Result<Self> {
        self.apply_polynomial(&[(Complex64::new(1.0, 0.0), vec![mode])])
    }

    /// Applies `Σ_i c_i Π_{m ∈ modes_i} a†_m` to the state.
    pub fn apply_polynomial(&self, poly: &[(Complex64, Vec<usize>)]) -> Result<Self> {
        for (_, modes) in poly {
            for &m in modes {
                self.check_mode(m)?;
            }
        }
        let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (occ, amp) in &self.terms {
            for (coeff, modes) in poly {
                let total = occ.total() + modes.len();
                if total > self.max_photons {
                    return Err(SimError::TruncationOverflow {
                        photons: total,
                        max: self.max_photons,
                    });
                }
                let mut counts = occ.0.to_vec();
                let mut a = amp * coeff;
                for &m in modes {
                    counts[m] += 1;
                    a *= (counts[m] as f64).sqrt();
                }
                *out.entry(Occupation(counts.into_boxed_slice()))
                    .or_default() += a;
            }
        }
        Ok(self.with_terms(out))
    }

    /// Substitutes `a†_{inputs[r]} → Σ_{(k,u) ∈ images[r]} u a†_k` and re-expands.
    ///
    /// Image modes may lie outside `inputs`. The caller is responsible for the
    /// map being an isometry on the occupied subspace when norm preservation
    /// is required.
    pub fn linear_map(&self, inputs: &[usize], images: &[Vec<(usize, Complex64)>]) -> Result<Self> {
        if inputs.len() != images.len() {
            return Err(SimError::DimensionMismatch {
                expected: inputs.len(),
                got: images.len(),
            });
        }
        for &m in inputs {
            self.check_mode(m)?;
        }
        for image in images {
            for &(k, _) in image {
                self.check_mode(k)?;
            }
        }

        let mut out: BTreeMap<Occupation, Complex64> = BTreeMap::new();
        for (occ, amp) in &self.terms {
            let mut base = occ.0.to_vec();
            let mut factor = *amp;
            for &m in inputs {
                factor /= factorial_sqrt(base[m]);
                base[m] = 0;
            }
            let mut partial: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
            partial.insert(base, factor);
            for (r, &m) in inputs.iter().enumerate() {
                for _ in 0..occ.get(m) {
                    let mut next: BTreeMap<Vec<u8>, Complex64> = BTreeMap::new();
                    for (counts, a) in &partial {
                        for &(k, u) in &images[r] {
                            let mut c = counts.clone();
                            c[k] += 1;
                            let amp = a * u * (c[k] as f64).sqrt();
                            *next.entry(c).or_default() += amp;
                        }
                    }
                    partial = next;
                }
            }
            for (counts, a) in partial {
                *out.entry(Occupation(counts.into_boxed_slice()))
                    .or_default() += a;
            }
        }
        Ok(self.with_terms(out))
    }

    /// Square linear transform over `modes`: `a†_{modes[j]} → Σ_k U[j,k] a†_{modes[k]}`.
    pub fn mode_transform(&self, modes: &[usize], matrix: &DMatrix<Complex64>) -> Result<Self> {
        if matrix.nrows() != modes.len() || matrix.ncols() != modes.len() {
            return Err(SimError::DimensionMismatch {
                expected: modes.len(),
                got: if matrix.nrows() != modes.len() {
                    matrix.nrows()
                } else {
                    matrix.ncols()
                },
            });
        }
        let images: Vec<Vec<(usize, Complex64)>> = (0..modes.len())
            .map(|j| {
                (0..modes.len())
                    .filter(|&k| matrix[(j, k)].norm() > 0.0)
                    .map(|k| (modes[k], matrix[(j, k)]))
                    .collect()
            })
            .collect();
        self.linear_map(modes, &images)
    }

    /// Multiplies every term by `e^{iφ n_mode}`.
    pub fn phase_shift(&self, mode: usize, phase: f64) -> Result<Self> {
        self.check_mode(mode)?;
        let step = Complex64::from_polar(1.0, phase);
        Ok(self.with_terms(
            self.terms
                .iter()
                .map(|(o, a)| (o.clone(), a * step.powu(o.get(mode) as u32)))
                .collect(),
        ))
    }

    /// Tensor product of two states supported on disjoint modes.
    pub fn product(&self, other: &FockState) -> Result<Self> {
        self.same_registry(other)?;
        let max = self.max_photons.max(other.max_photons);
        let mut out = BTreeMap::new();
        for (oa, aa) in &self.terms {
            for (ob, ab) in &other.terms {
                let mut counts = oa.0.to_vec();
                for (i, &n) in ob.0.iter().enumerate() {
                    if n > 0 && counts[i] > 0 {
                        return Err(SimError::invalid(
                            "product",
                            "factors share an occupied mode",
                        ));
                    }
                    counts[i] += n;
                }
                let total: usize = counts.iter().map(|&n| n as usize).sum();
                if total > max {
                    return Err(SimError::TruncationOverflow { photons: total, max });
                }
                *out.entry(Occupation(counts.into_boxed_slice())).or_default() += aa * ab;
            }
        }
        let mut s = self.with_terms(out);
        s.max_photons = max;
        Ok(s)
    }

    fn same_registry(&self, other: &FockState) -> Result<()> {
        if Arc::ptr_eq(&self.registry, &other.registry) || *self.registry == *other.registry {
            Ok(())
        } else {
            Err(SimError::RegistryMismatch)
        }
    }

    /// `⟨self|other⟩` in the orthonormal occupation basis.
    pub fn inner(&self, other: &FockState) -> Result<Complex64> {
        self.same_registry(other)?;
        Ok(self
            .terms
            .iter()
            .filter_map(|(o, a)| other.terms.get(o).map(|b| a.conj() * b))
            .sum())
    }

    /// Probability of every occupation; the state must be normalized to 1e-9.
    pub fn occupation_distribution(&self) -> Result<BTreeMap<Occupation, f64>> {
        let n = self.norm_sqr();
        if (n - 1.0).abs() > 1e-9 {
            return Err(SimError::UnnormalizedState(n));
        }
        Ok(self
            .terms
            .iter()
            .map(|(o, a)| (o.clone(), a.norm_sqr()))
            .collect())
    }

    /// Probability mass carried by terms with at least one photon in any of `modes`.
    pub fn probability_any(&self, modes: &[usize]) -> f64 {
        self.terms
            .iter()
            .filter(|(o, _)| modes.iter().any(|&m| o.get(m) > 0))
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Expected photon number in `mode`.
    pub fn mean_photons(&self, mode: usize) -> f64 {
        self.terms
            .iter()
            .map(|(o, a)| o.get(mode) as f64 * a.norm_sqr())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_modes() -> Arc<ModeRegistry> {
        let mut r = ModeRegistry::new(4);
        r.register(ModeKey::new("a", 0, 0)).unwrap();
        r.register(ModeKey::new("b", 0, 0)).unwrap();
        Arc::new(r)
    }

    fn balanced_splitter() -> DMatrix<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        DMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(0.0, s), c(0.0, s), c(s, 0.0)])
    }

    #[test]
    fn vacuum_is_single_unit_term() {
        let vac = FockState::vacuum(two_modes(), 4).unwrap();
        assert_eq!(vac.num_terms(), 1);
        assert_eq!(vac.amplitude(&[0, 0]), c(1.0, 0.0));
        assert_abs_diff_eq!(vac.norm_sqr(), 1.0);
        let dist = vac.occupation_distribution().unwrap();
        assert_eq!(dist.len(), 1);
        assert_abs_diff_eq!(dist[&Occupation::from_counts(&[0, 0])], 1.0);
    }

    #[test]
    fn empty_registry_rejected() {
        assert!(FockState::vacuum(Arc::new(ModeRegistry::new(4)), 4).is_err());
    }

    #[test]
    fn registry_rejects_duplicates_and_overflow() {
        let mut r = ModeRegistry::new(2);
        r.register(ModeKey::new("a", 0, 0)).unwrap();
        assert!(matches!(
            r.register(ModeKey::new("a", 0, 0)),
            Err(SimError::DuplicateMode(_))
        ));
        assert!(matches!(
            r.register(ModeKey::new("a", 2, 0)),
            Err(SimError::BinOverflow { .. })
        ));
        assert_eq!(r.ensure(ModeKey::new("a", 0, 0)).unwrap(), 0);
    }

    #[test]
    fn creation_has_bosonic_factor() {
        let vac = FockState::vacuum(two_modes(), 4).unwrap();
        let one = vac.apply_creation(0).unwrap();
        assert_eq!(one.amplitude(&[1, 0]), c(1.0, 0.0));
        let two = one.apply_creation(0).unwrap();
        assert_abs_diff_eq!(two.amplitude(&[2, 0]).re, 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn creation_past_cutoff_overflows() {
        let vac = FockState::vacuum(two_modes(), 1).unwrap();
        let one = vac.apply_creation(0).unwrap();
        assert!(matches!(
            one.apply_creation(1),
            Err(SimError::TruncationOverflow { photons: 2, max: 1 })
        ));
    }

    #[test]
    fn single_photon_splits_evenly() {
        let s = FockState::vacuum(two_modes(), 4)
            .unwrap()
            .apply_creation(0)
            .unwrap()
            .mode_transform(&[0, 1], &balanced_splitter())
            .unwrap();
        let d = s.occupation_distribution().unwrap();
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[1, 0])], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[0, 1])], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn hong_ou_mandel_bunching() {
        let s = FockState::vacuum(two_modes(), 4)
            .unwrap()
            .apply_polynomial(&[(c(1.0, 0.0), vec![0, 1])])
            .unwrap()
            .mode_transform(&[0, 1], &balanced_splitter())
            .unwrap();
        let d = s.occupation_distribution().unwrap();
        assert!(!d.contains_key(&Occupation::from_counts(&[1, 1])));
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[2, 0])], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[0, 2])], 0.5, epsilon = 1e-14);
    }

    /// Orthogonal internal labels: brute-force enumeration over the four output
    /// modes shows each photon routes independently, so P(coincidence) = 1/2.
    #[test]
    fn distinguishable_photons_do_not_bunch() {
        let mut r = ModeRegistry::new(4);
        let a0 = r.register(ModeKey::new("a", 0, 0)).unwrap();
        let a1 = r.register(ModeKey::new("a", 0, 1)).unwrap();
        let b0 = r.register(ModeKey::new("b", 0, 0)).unwrap();
        let b1 = r.register(ModeKey::new("b", 0, 1)).unwrap();
        let r = Arc::new(r);
        let s = FockState::vacuum(r, 4)
            .unwrap()
            .apply_polynomial(&[(c(1.0, 0.0), vec![a0, b1])])
            .unwrap()
            .mode_transform(&[a0, b0], &balanced_splitter())
            .unwrap()
            .mode_transform(&[a1, b1], &balanced_splitter())
            .unwrap();
        let coincidence: f64 = s
            .occupation_distribution()
            .unwrap()
            .iter()
            .filter(|(o, _)| o.get(a0) + o.get(a1) == 1 && o.get(b0) + o.get(b1) == 1)
            .map(|(_, p)| p)
            .sum();
        assert_abs_diff_eq!(coincidence, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn inner_products() {
        let r = two_modes();
        let vac = FockState::vacuum(Arc::clone(&r), 4).unwrap();
        assert_eq!(vac.inner(&vac).unwrap(), c(1.0, 0.0));
        let a = vac.apply_creation(0).unwrap();
        let b = vac.apply_creation(1).unwrap();
        assert_eq!(a.inner(&b).unwrap(), c(0.0, 0.0));
        let psi = FockState::from_terms(
            Arc::clone(&r),
            4,
            vec![(vec![1, 0], c(1.0, 0.0)), (vec![0, 1], c(-1.0, 0.0))],
        )
        .unwrap()
        .normalize()
        .unwrap();
        assert_abs_diff_eq!(psi.inner(&psi).unwrap().re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inner_rejects_foreign_registry() {
        let a = FockState::vacuum(two_modes(), 4).unwrap();
        let mut r = ModeRegistry::new(4);
        r.register(ModeKey::new("z", 0, 0)).unwrap();
        let b = FockState::vacuum(Arc::new(r), 4).unwrap();
        assert_eq!(a.inner(&b), Err(SimError::RegistryMismatch));
    }

    #[test]
    fn distribution_of_superposition() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let st = FockState::from_terms(
            two_modes(),
            4,
            vec![(vec![1, 0], c(s, 0.0)), (vec![0, 1], c(s, 0.0))],
        )
        .unwrap();
        let d = st.occupation_distribution().unwrap();
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[1, 0])], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(d[&Occupation::from_counts(&[0, 1])], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        let st = FockState::from_terms(two_modes(), 4, vec![(vec![1, 0], c(2.0, 0.0))]).unwrap();
        assert!(matches!(
            st.occupation_distribution(),
            Err(SimError::UnnormalizedState(_))
        ));
    }

    #[test]
    fn transform_dimension_checked() {
        let vac = FockState::vacuum(two_modes(), 4).unwrap();
        let m = DMatrix::<Complex64>::identity(3, 3);
        assert!(matches!(
            vac.mode_transform(&[0, 1], &m),
            Err(SimError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            vac.mode_transform(&[0, 7], &balanced_splitter()),
            Err(SimError::UnregisteredMode(7))
        ));
    }

    #[test]
    fn product_requires_disjoint_support() {
        let r = two_modes();
        let vac = FockState::vacuum(Arc::clone(&r), 4).unwrap();
        let a = vac.apply_creation(0).unwrap();
        let b = vac.apply_creation(1).unwrap();
        let ab = a.product(&b).unwrap();
        assert_eq!(ab.amplitude(&[1, 1]), c(1.0, 0.0));
        assert!(a.product(&a).is_err());
    }
}

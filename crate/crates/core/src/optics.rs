//! Linear-optical elements and circuit construction.
//!
//! Circuits are assembled with a [`CircuitBuilder`], which owns the mode
//! registry while elements are added and freezes it on [`CircuitBuilder::build`].
//! Loss elements are lowered to a beamsplitter against a freshly registered
//! loss mode, so every built circuit is unitary on system plus loss modes.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SimError};
use crate::fock::{FockState, ModeKey, ModeRegistry};

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    /// `[[√t, i√(1−t)], [i√(1−t)e^{iφ}, √t e^{iφ}]]` with the phase on `mode_b`.
    BeamSplitter {
        mode_a: usize,
        mode_b: usize,
        transmittance: f64,
        phase: f64,
    },
    PhaseShift {
        mode: usize,
        phase: f64,
    },
    /// Shifts every mode of a channel by `bins` time bins.
    BinDelay {
        spatial: String,
        bins: usize,
    },
    /// Transmission `T` on one mode. Lowered to a beamsplitter when pushed.
    Loss {
        mode: usize,
        transmission: f64,
    },
}

impl Element {
    pub fn beam_splitter_matrix(transmittance: f64, phase: f64) -> DMatrix<Complex64> {
        let t = transmittance.sqrt();
        let r = (1.0 - transmittance).sqrt();
        let e = Complex64::from_polar(1.0, phase);
        DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(t, 0.0),
                Complex64::new(0.0, r),
                Complex64::new(0.0, r) * e,
                Complex64::new(t, 0.0) * e,
            ],
        )
    }
}

/// Loss element for a given attenuation in dB: `T = 10^(−dB/10)`.
pub fn loss_from_db(mode: usize, db: f64) -> Result<Element> {
    if !(db >= 0.0) || !db.is_finite() {
        return Err(SimError::invalid("loss_db", format!("{db} is not a non-negative attenuation")));
    }
    Ok(Element::Loss {
        mode,
        transmission: 10f64.powf(-db / 10.0),
    })
}

#[derive(Debug, Clone)]
pub struct Circuit {
    registry: Arc<ModeRegistry>,
    elements: Vec<Element>,
}

impl Circuit {
    pub fn registry(&self) -> &Arc<ModeRegistry> {
        &self.registry
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    /// Splits into the first `n` elements and the rest, both on the same registry.
    pub fn split_at(&self, n: usize) -> (Circuit, Circuit) {
        let n = n.min(self.elements.len());
        let head = Circuit {
            registry: Arc::clone(&self.registry),
            elements: self.elements[..n].to_vec(),
        };
        let tail = Circuit {
            registry: Arc::clone(&self.registry),
            elements: self.elements[n..].to_vec(),
        };
        (head, tail)
    }

    /// Applies every element in order.
    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        if !Arc::ptr_eq(state.registry(), &self.registry) && **state.registry() != *self.registry {
            return Err(SimError::RegistryMismatch);
        }
        let mut s = state.clone();
        for el in &self.elements {
            s = apply_element(&self.registry, el, &s)?;
        }
        Ok(s)
    }
}

fn apply_element(registry: &ModeRegistry, el: &Element, s: &FockState) -> Result<FockState> {
    match el {
        Element::BeamSplitter {
            mode_a,
            mode_b,
            transmittance,
            phase,
        } => s.mode_transform(
            &[*mode_a, *mode_b],
            &Element::beam_splitter_matrix(*transmittance, *phase),
        ),
        Element::PhaseShift { mode, phase } => s.phase_shift(*mode, *phase),
        Element::BinDelay { spatial, bins } => {
            let mut inputs = Vec::new();
            let mut images = Vec::new();
            for idx in registry.channel_modes(spatial) {
                let key = registry.key(idx).expect("channel mode is registered");
                match registry.index_of(spatial, key.time_bin + bins, key.internal) {
                    Some(target) => {
                        inputs.push(idx);
                        images.push(vec![(target, Complex64::new(1.0, 0.0))]);
                    }
                    None => {
                        if s.mean_photons(idx) > 0.0 {
                            return Err(SimError::BinOverflow {
                                bin: key.time_bin + bins,
                                max_bins: registry.max_bins(),
                            });
                        }
                    }
                }
            }
            s.linear_map(&inputs, &images)
        }
        Element::Loss { .. } => Err(SimError::invalid(
            "circuit",
            "loss element was not lowered to a beamsplitter",
        )),
    }
}

/// Mutable circuit under construction.
#[derive(Debug, Clone)]
pub struct CircuitBuilder {
    registry: ModeRegistry,
    elements: Vec<Element>,
    sinks: usize,
}

impl CircuitBuilder {
    pub fn new(max_bins: usize) -> Self {
        Self::from_registry(ModeRegistry::new(max_bins))
    }

    pub fn from_registry(registry: ModeRegistry) -> Self {
        Self {
            registry,
            elements: Vec::new(),
            sinks: 0,
        }
    }

    pub fn registry(&self) -> &ModeRegistry {
        &self.registry
    }

    /// Number of elements pushed so far, after lowering.
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn ensure_mode(&mut self, spatial: &str, time_bin: usize, internal: u8) -> Result<usize> {
        self.registry.ensure(ModeKey::new(spatial, time_bin, internal))
    }

    /// Registers `spatial` for every (bin, internal) combination given.
    pub fn ensure_channel(&mut self, spatial: &str, bins: usize, internals: &[u8]) -> Result<()> {
        for t in 0..bins {
            for &i in internals {
                self.ensure_mode(spatial, t, i)?;
            }
        }
        Ok(())
    }

    fn fresh_sink(&mut self, prefix: &str) -> String {
        self.sinks += 1;
        format!("{prefix}-{}", self.sinks)
    }

    pub fn push(&mut self, element: Element) -> Result<()> {
        let n = self.registry.len();
        let check = |m: usize| if m < n { Ok(()) } else { Err(SimError::UnregisteredMode(m)) };
        match element {
            Element::BeamSplitter {
                mode_a,
                mode_b,
                transmittance,
                ..
            } => {
                check(mode_a)?;
                check(mode_b)?;
                if !(0.0..=1.0).contains(&transmittance) {
                    return Err(SimError::invalid("transmittance", format!("{transmittance}")));
                }
                self.elements.push(element);
            }
            Element::PhaseShift { mode, .. } => {
                check(mode)?;
                self.elements.push(element);
            }
            Element::BinDelay { ref spatial, bins } => {
                let modes = self.registry.channel_modes(spatial);
                if modes.is_empty() {
                    return Err(SimError::UnknownMode(spatial.clone()));
                }
                let max_bins = self.registry.max_bins();
                for idx in modes {
                    let key = self.registry.key(idx).cloned().expect("registered");
                    if key.time_bin + bins < max_bins {
                        self.registry
                            .ensure(ModeKey::new(spatial.clone(), key.time_bin + bins, key.internal))?;
                    }
                }
                self.elements.push(element);
            }
            Element::Loss { mode, transmission } => {
                check(mode)?;
                if !(0.0..=1.0).contains(&transmission) {
                    return Err(SimError::invalid("transmission", format!("{transmission}")));
                }
                let key = self.registry.key(mode).cloned().expect("checked");
                let sink_name = self.fresh_sink("loss");
                let sink = self
                    .registry
                    .register(ModeKey::new(sink_name, key.time_bin, key.internal))?;
                self.elements.push(Element::BeamSplitter {
                    mode_a: mode,
                    mode_b: sink,
                    transmittance: transmission,
                    phase: 0.0,
                });
            }
        }
        Ok(())
    }

    /// Uniform loss on every registered mode of a channel.
    pub fn channel_loss(&mut self, spatial: &str, db: f64) -> Result<()> {
        for idx in self.registry.channel_modes(spatial) {
            self.push(loss_from_db(idx, db)?)?;
        }
        Ok(())
    }

    /// 50/50 splitter between two channels, bin by bin and label by label.
    pub fn channel_splitter(&mut self, a: &str, b: &str) -> Result<()> {
        let bins = self
            .registry
            .channel_max_bin(a)
            .max(self.registry.channel_max_bin(b))
            .ok_or_else(|| SimError::UnknownMode(a.to_string()))?
            + 1;
        let mut internals = self.registry.channel_internals(a);
        internals.extend(self.registry.channel_internals(b));
        internals.sort_unstable();
        internals.dedup();
        self.ensure_channel(a, bins, &internals)?;
        self.ensure_channel(b, bins, &internals)?;
        for t in 0..bins {
            for &i in &internals {
                let ma = self.registry.lookup(a, t, i)?;
                let mb = self.registry.lookup(b, t, i)?;
                self.push(Element::BeamSplitter {
                    mode_a: ma,
                    mode_b: mb,
                    transmittance: 0.5,
                    phase: 0.0,
                })?;
            }
        }
        Ok(())
    }

    /// Unbalanced Michelson interferometer with a one-bin arm imbalance.
    ///
    /// Maps `a†(s,t) → ½ a†(s,t) + ½ e^{iφ} a†(s,t+1)` plus an undetected
    /// back-port term of total weight ½. The back port is a fresh, bin-resolved
    /// channel so the map stays unitary for photons entering in different bins.
    pub fn michelson(&mut self, spatial: &str, phase: f64) -> Result<String> {
        let top = self
            .registry
            .channel_max_bin(spatial)
            .ok_or_else(|| SimError::UnknownMode(spatial.to_string()))?;
        let max_bins = self.registry.max_bins();
        if top + 1 >= max_bins {
            return Err(SimError::BinOverflow {
                bin: top + 1,
                max_bins,
            });
        }
        let internals = self.registry.channel_internals(spatial);
        let arm = self.fresh_sink(&format!("{spatial}~arm"));
        self.ensure_channel(spatial, top + 2, &internals)?;
        self.ensure_channel(&arm, top + 2, &internals)?;

        let split = |b: &mut Self, bins: std::ops::RangeInclusive<usize>| -> Result<()> {
            for t in bins {
                for &i in &internals {
                    let ms = b.registry.lookup(spatial, t, i)?;
                    let ma = b.registry.lookup(&arm, t, i)?;
                    b.push(Element::BeamSplitter {
                        mode_a: ms,
                        mode_b: ma,
                        transmittance: 0.5,
                        phase: 0.0,
                    })?;
                }
            }
            Ok(())
        };

        split(self, 0..=top)?;
        self.push(Element::BinDelay {
            spatial: arm.clone(),
            bins: 1,
        })?;
        // The two i factors picked up on the long arm contribute −1.
        for t in 1..=top + 1 {
            for &i in &internals {
                let ma = self.registry.lookup(&arm, t, i)?;
                self.push(Element::PhaseShift {
                    mode: ma,
                    phase: phase + PI,
                })?;
            }
        }
        split(self, 0..=top + 1)?;
        Ok(arm)
    }

    pub fn build(self) -> Circuit {
        Circuit {
            registry: Arc::new(self.registry),
            elements: self.elements,
        }
    }
}

/// Circuit holding a single Michelson on `spatial`, which must already be registered.
pub fn build_michelson(registry: ModeRegistry, spatial: &str, phase: f64) -> Result<Circuit> {
    let mut b = CircuitBuilder::from_registry(registry);
    b.michelson(spatial, phase)?;
    Ok(b.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_channel(bins: usize) -> ModeRegistry {
        let mut r = ModeRegistry::new(bins);
        r.register(ModeKey::new("s", 0, 0)).unwrap();
        r
    }

    fn photon_in(circuit: &Circuit, spatial: &str, bin: usize) -> FockState {
        let m = circuit.registry().lookup(spatial, bin, 0).unwrap();
        FockState::vacuum(Arc::clone(circuit.registry()), 4)
            .unwrap()
            .apply_creation(m)
            .unwrap()
    }

    fn bin_probability(state: &FockState, spatial: &str, bin: usize) -> f64 {
        let m = state.registry().lookup(spatial, bin, 0).unwrap();
        state.probability_any(&[m])
    }

    #[test]
    fn empty_circuit_is_identity() {
        let c = CircuitBuilder::from_registry(single_channel(4)).build();
        let s = photon_in(&c, "s", 0);
        let out = c.apply(&s).unwrap();
        assert_abs_diff_eq!(out.inner(&s).unwrap().re, 1.0);
    }

    #[test]
    fn loss_of_two_db() {
        let mut b = CircuitBuilder::from_registry(single_channel(4));
        let el = loss_from_db(0, 2.0).unwrap();
        match el {
            Element::Loss { transmission, .. } => assert_abs_diff_eq!(transmission, 0.630957, epsilon = 1e-6),
            _ => unreachable!(),
        }
        b.push(el).unwrap();
        let c = b.build();
        let out = c.apply(&photon_in(&c, "s", 0)).unwrap();
        assert_abs_diff_eq!(bin_probability(&out, "s", 0), 10f64.powf(-0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_from_db_values() {
        let t = |db| match loss_from_db(0, db).unwrap() {
            Element::Loss { transmission, .. } => transmission,
            _ => unreachable!(),
        };
        assert_eq!(t(0.0), 1.0);
        assert_abs_diff_eq!(t(3.01), 0.5, epsilon = 1e-3);
        assert!(loss_from_db(0, -1.0).is_err());
    }

    #[test]
    fn phase_shift_keeps_probabilities() {
        let mut b = CircuitBuilder::from_registry(single_channel(4));
        b.push(Element::PhaseShift { mode: 0, phase: 1.3 }).unwrap();
        let c = b.build();
        let s = photon_in(&c, "s", 0);
        let out = c.apply(&s).unwrap();
        assert_eq!(
            out.occupation_distribution().unwrap(),
            s.occupation_distribution().unwrap()
        );
    }

    #[test]
    fn unit_transmittance_splitter_is_identity() {
        let mut r = single_channel(4);
        r.register(ModeKey::new("t", 0, 0)).unwrap();
        let mut b = CircuitBuilder::from_registry(r);
        b.push(Element::BeamSplitter {
            mode_a: 0,
            mode_b: 1,
            transmittance: 1.0,
            phase: 0.0,
        })
        .unwrap();
        let c = b.build();
        let out = c.apply(&photon_in(&c, "s", 0)).unwrap();
        assert_abs_diff_eq!(bin_probability(&out, "s", 0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn michelson_amplitudes() {
        for &phi in &[0.0, 0.7, -2.1] {
            let c = build_michelson(single_channel(4), "s", phi).unwrap();
            let out = c.apply(&photon_in(&c, "s", 0)).unwrap();
            let n = c.registry().len();
            let amp = |bin| {
                let mut counts = vec![0u8; n];
                counts[c.registry().lookup("s", bin, 0).unwrap()] = 1;
                out.amplitude(&counts)
            };
            assert_abs_diff_eq!(amp(0).re, 0.5, epsilon = 1e-14);
            assert_abs_diff_eq!(amp(0).im, 0.0, epsilon = 1e-14);
            let expected = Complex64::from_polar(0.5, phi);
            assert_abs_diff_eq!((amp(1) - expected).norm(), 0.0, epsilon = 1e-14);
            let p0 = bin_probability(&out, "s", 0);
            let p1 = bin_probability(&out, "s", 1);
            assert_abs_diff_eq!(p0, 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(p1, 0.25, epsilon = 1e-14);
            assert_abs_diff_eq!(1.0 - p0 - p1, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn michelson_is_unitary_across_bins() {
        let mut r = single_channel(4);
        r.register(ModeKey::new("s", 1, 0)).unwrap();
        let c = build_michelson(r, "s", 0.4).unwrap();
        let m0 = c.registry().lookup("s", 0, 0).unwrap();
        let m1 = c.registry().lookup("s", 1, 0).unwrap();
        let vac = FockState::vacuum(Arc::clone(c.registry()), 4).unwrap();
        let a = c.apply(&vac.apply_creation(m0).unwrap()).unwrap();
        let b = c.apply(&vac.apply_creation(m1).unwrap()).unwrap();
        assert_abs_diff_eq!(a.inner(&b).unwrap().norm(), 0.0, epsilon = 1e-14);
        let both = c
            .apply(&vac.apply_polynomial(&[(Complex64::new(1.0, 0.0), vec![m0, m1])]).unwrap())
            .unwrap();
        assert_abs_diff_eq!(both.norm_sqr(), 1.0, epsilon = 1e-12);
    }

    /// Two cascaded interferometers at ±φ: the central bin carries
    /// ¼(e^{iφ} + e^{−iφ}), so P(bin 1) = (1 + cos 2φ)/8.
    #[test]
    fn chained_michelsons_interfere() {
        for k in 0..12 {
            let phi = k as f64 * PI / 6.0;
            let mut b = CircuitBuilder::from_registry(single_channel(4));
            b.michelson("s", phi).unwrap();
            b.michelson("s", -phi).unwrap();
            let c = b.build();
            let out = c.apply(&photon_in(&c, "s", 0)).unwrap();
            let p1 = bin_probability(&out, "s", 1);
            assert_abs_diff_eq!(p1, (1.0 + (2.0 * phi).cos()) / 8.0, epsilon = 1e-13);
            assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn michelson_bin_overflow() {
        let mut r = ModeRegistry::new(2);
        r.register(ModeKey::new("s", 1, 0)).unwrap();
        assert!(matches!(
            build_michelson(r, "s", 0.0),
            Err(SimError::BinOverflow { .. })
        ));
    }

    #[test]
    fn unregistered_mode_rejected() {
        let mut b = CircuitBuilder::from_registry(single_channel(4));
        assert_eq!(
            b.push(Element::PhaseShift { mode: 3, phase: 0.0 }),
            Err(SimError::UnregisteredMode(3))
        );
    }
}

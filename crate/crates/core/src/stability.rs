//! Path-length drift between the two sources and the repetition-rate feedback.
//!
//! The optical delay mismatch seen at the BSA is
//! `δx = α·ΔT + L_s·Δf/f₀ + jitter − motor`,
//! where the laser repetition rate follows the same temperature,
//! `Δf = κ·ΔT`. With `κ = α / (g − L_s/f₀)` the mismatch per unit of rate
//! change is exactly the controller gain `g`, so a gain-matched controller
//! cancels everything but quantization and spool jitter.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detection::SPEED_OF_LIGHT;
use crate::error::{Result, SimError};
use crate::sources::OverlapModel;

pub const REP_RATE_HZ: f64 = 75e6;
/// Extra fibre on Alice's side matching one pulse period.
pub const PULSE_SPACING_M: f64 = 2.72;
pub const THERMAL_COEFF_UM_PER_K: f64 = 100.0;
pub const REP_RATE_WANDER_BOUND_HZ_PER_H: f64 = 400.0;
pub const SPOOL_JITTER_BOUND_UM: f64 = 10.0;
pub const LONG_SPOOL_JITTER_BOUND_UM: f64 = 60.0;
pub const CONTROLLER_GAIN_UM_PER_HZ: f64 = 0.07;
pub const MOTOR_RESOLUTION_UM: f64 = 0.2;
pub const DEFAULT_UPDATE_INTERVAL_S: f64 = 60.0;
/// Net dip visibility of unheralded pair sources.
pub const UNHERALDED_DIP_VISIBILITY: f64 = 1.0 / 3.0;

/// Length change of the pulse-matching fibre when the repetition rate moves by `delta_f_hz`, in metres.
pub fn rep_rate_length_shift(delta_f_hz: f64) -> f64 {
    PULSE_SPACING_M * delta_f_hz / REP_RATE_HZ
}

/// Fibre length between consecutive pulses, in metres.
pub fn pulse_spacing(rep_rate_hz: f64, group_index: f64) -> Result<f64> {
    if !(rep_rate_hz > 0.0) || !(group_index > 0.0) {
        return Err(SimError::invalid("pulse_spacing", "rate and group index must be positive"));
    }
    Ok(SPEED_OF_LIGHT / (group_index * rep_rate_hz))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemperatureProcess {
    Constant,
    Ramp { rate_k_per_h: f64 },
    Sinusoid { amplitude_k: f64, period_h: f64 },
    /// Gaussian increments with standard deviation `step_k_per_sqrt_h·√(dt/1h)`.
    RandomWalk { step_k_per_sqrt_h: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub temperature: TemperatureProcess,
    pub thermal_coeff_um_per_k: f64,
    pub pulse_spacing_m: f64,
    pub rep_rate_hz: f64,
    /// Repetition-rate change per kelvin; `None` derives the gain-matched value.
    pub rep_rate_coeff_hz_per_k: Option<f64>,
    pub jitter_bound_um: f64,
    pub jitter_correlation_s: f64,
    pub seed: u64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            temperature: TemperatureProcess::Ramp { rate_k_per_h: 0.12 },
            thermal_coeff_um_per_k: THERMAL_COEFF_UM_PER_K,
            pulse_spacing_m: PULSE_SPACING_M,
            rep_rate_hz: REP_RATE_HZ,
            rep_rate_coeff_hz_per_k: None,
            jitter_bound_um: SPOOL_JITTER_BOUND_UM,
            jitter_correlation_s: 600.0,
            seed: 1,
        }
    }
}

impl DriftModel {
    /// 800 m spools with larger differential fluctuations.
    pub fn long_spool() -> Self {
        Self {
            jitter_bound_um: LONG_SPOOL_JITTER_BOUND_UM,
            ..Self::default()
        }
    }

    pub fn without_drift() -> Self {
        Self {
            temperature: TemperatureProcess::Constant,
            jitter_bound_um: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("thermal_coeff_um_per_k", self.thermal_coeff_um_per_k),
            ("pulse_spacing_m", self.pulse_spacing_m),
            ("jitter_bound_um", self.jitter_bound_um),
            ("jitter_correlation_s", self.jitter_correlation_s),
        ] {
            if !(v >= 0.0) {
                return Err(SimError::invalid(name, format!("{v} is negative")));
            }
        }
        if !(self.rep_rate_hz > 0.0) {
            return Err(SimError::invalid("rep_rate_hz", "must be positive"));
        }
        if let TemperatureProcess::Sinusoid { period_h, .. } = self.temperature {
            if !(period_h > 0.0) {
                return Err(SimError::invalid("period_h", "must be positive"));
            }
        }
        if self.rep_rate_coeff_hz_per_k.is_none() && self.matched_denominator() <= 0.0 {
            return Err(SimError::invalid(
                "rep_rate_coeff_hz_per_k",
                "controller gain does not exceed L_s/f0; no gain-matched coupling exists",
            ));
        }
        Ok(())
    }

    /// Pulse-fibre length change per Hz, µm/Hz.
    fn fibre_um_per_hz(&self) -> f64 {
        self.pulse_spacing_m * 1e6 / self.rep_rate_hz
    }

    fn matched_denominator(&self) -> f64 {
        CONTROLLER_GAIN_UM_PER_HZ - self.fibre_um_per_hz()
    }

    /// κ in Hz/K.
    pub fn rep_rate_coeff(&self) -> f64 {
        self.rep_rate_coeff_hz_per_k
            .unwrap_or_else(|| self.thermal_coeff_um_per_k / self.matched_denominator())
    }

    /// δx per unit rate change before correction, µm/Hz.
    pub fn sensitivity_um_per_hz(&self) -> f64 {
        self.thermal_coeff_um_per_k / self.rep_rate_coeff() + self.fibre_um_per_hz()
    }

    /// Largest |dδx/dt| of the deterministic drift, µm/s; `None` for a random walk.
    pub fn drift_rate_um_per_s(&self) -> Option<f64> {
        let um_per_k = self.sensitivity_um_per_hz() * self.rep_rate_coeff();
        match self.temperature {
            TemperatureProcess::Constant => Some(0.0),
            TemperatureProcess::Ramp { rate_k_per_h } => Some(um_per_k * rate_k_per_h.abs() / 3600.0),
            TemperatureProcess::Sinusoid { amplitude_k, period_h } => {
                Some(um_per_k * amplitude_k.abs() * 2.0 * std::f64::consts::PI / (period_h * 3600.0))
            }
            TemperatureProcess::RandomWalk { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub gain_um_per_hz: f64,
    /// Relative gain mismatch: the motor moves by `g(1+gain_error)Δf`.
    pub gain_error: f64,
    pub motor_resolution_um: f64,
    pub update_interval_s: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Self {
            gain_um_per_hz: CONTROLLER_GAIN_UM_PER_HZ,
            gain_error: 0.0,
            motor_resolution_um: MOTOR_RESOLUTION_UM,
            update_interval_s: DEFAULT_UPDATE_INTERVAL_S,
        }
    }
}

impl Controller {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain_um_per_hz >= 0.0) {
            return Err(SimError::invalid("gain_um_per_hz", "must be non-negative"));
        }
        if !(self.motor_resolution_um > 0.0) {
            return Err(SimError::invalid("motor_resolution_um", "must be positive"));
        }
        if !(self.update_interval_s > 0.0) {
            return Err(SimError::invalid("update_interval_s", "must be positive"));
        }
        Ok(())
    }

    /// Motor position for a measured rate change, rounded to whole steps.
    pub fn motor_target(&self, delta_f_hz: f64) -> f64 {
        let raw = self.gain_um_per_hz * (1.0 + self.gain_error) * delta_f_hz;
        (raw / self.motor_resolution_um).round() * self.motor_resolution_um
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySample {
    pub t_s: f64,
    pub delta_x_um: f64,
    pub rep_rate_hz: f64,
    pub motor_um: f64,
    pub norm_coincidences: f64,
}

/// Coincidences relative to the level outside the dip.
pub fn normalized_coincidences(overlap: &OverlapModel, delta_x_um: f64, dip_visibility: f64) -> f64 {
    let xi = overlap.overlap_from_mismatch(delta_x_um);
    1.0 - dip_visibility * xi * xi
}

fn temperature_at(process: &TemperatureProcess, t_s: f64, state: &mut f64, dt_s: f64, rng: &mut ChaCha8Rng) -> f64 {
    let h = t_s / 3600.0;
    match *process {
        TemperatureProcess::Constant => 0.0,
        TemperatureProcess::Ramp { rate_k_per_h } => rate_k_per_h * h,
        TemperatureProcess::Sinusoid { amplitude_k, period_h } => {
            amplitude_k * (2.0 * std::f64::consts::PI * h / period_h).sin()
        }
        TemperatureProcess::RandomWalk { step_k_per_sqrt_h } => {
            if t_s > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *state += step_k_per_sqrt_h * (dt_s / 3600.0).sqrt() * z;
            }
            *state
        }
    }
}

/// Time-stepped drift with an optional controller; deterministic for a given seed.
pub fn simulate(
    drift: &DriftModel,
    controller: Option<&Controller>,
    overlap: &OverlapModel,
    duration_s: f64,
    dt_s: f64,
) -> Result<Vec<StabilitySample>> {
    if !(dt_s > 0.0) {
        return Err(SimError::invalid("dt", "must be positive"));
    }
    if !(duration_s >= 0.0) {
        return Err(SimError::invalid("duration", "must be non-negative"));
    }
    drift.validate()?;
    if let Some(c) = controller {
        c.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(drift.seed);
    let kappa = drift.rep_rate_coeff();
    let steps = (duration_s / dt_s).floor() as usize;
    let mut walk = 0.0;
    let mut jitter = 0.0;
    let mut motor = 0.0;
    let mut next_update = 0.0;
    let decay = if drift.jitter_correlation_s > 0.0 {
        (-dt_s / drift.jitter_correlation_s).exp()
    } else {
        0.0
    };
    let sigma = drift.jitter_bound_um / 3.0;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * dt_s;
        let temp = temperature_at(&drift.temperature, t, &mut walk, dt_s, &mut rng);
        let delta_f = kappa * temp;
        if drift.jitter_bound_um > 0.0 && k > 0 {
            let z: f64 = rng.sample(StandardNormal);
            jitter = (jitter * decay + sigma * (1.0 - decay * decay).sqrt() * z)
                .clamp(-drift.jitter_bound_um, drift.jitter_bound_um);
        }
        if let Some(c) = controller {
            if t + 1e-9 >= next_update {
                motor = c.motor_target(delta_f);
                next_update += c.update_interval_s;
            }
        }
        let delta_x = drift.thermal_coeff_um_per_k * temp + drift.fibre_um_per_hz() * delta_f + jitter - motor;
        out.push(StabilitySample {
            t_s: t,
            delta_x_um: delta_x,
            rep_rate_hz: drift.rep_rate_hz + delta_f,
            motor_um: motor,
            norm_coincidences: normalized_coincidences(overlap, delta_x, UNHERALDED_DIP_VISIBILITY),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidFeasibility {
    /// Integration needed to see the coincidence change of a `tolerance_um` offset at `sigmas` significance.
    pub integration_time_s: f64,
    /// Time for the drift to move the delay by `tolerance_um`.
    pub drift_time_s: f64,
    pub feasible: bool,
    pub tolerance_um: f64,
    pub sigmas: f64,
}

/// Offset a dip-locking loop must resolve.
pub const PID_TOLERANCE_UM: f64 = 20.0;
pub const PID_SIGMAS: f64 = 3.0;

/// Whether locking directly on the coincidence dip could keep up with the drift.
///
/// Poisson statistics need `N = k²/ΔC²` counts to resolve a relative change
/// `ΔC`, i.e. `τ_int = k²/(R·ΔC²)`. The loop is feasible when `τ_int` is
/// shorter than the time the drift takes to cover the tolerance.
pub fn pid_alternative_analysis(drift: &DriftModel, overlap: &OverlapModel, count_rate_per_s: f64) -> Result<PidFeasibility> {
    if !(count_rate_per_s > 0.0) {
        return Err(SimError::invalid("count_rate_per_s", "must be positive"));
    }
    drift.validate()?;
    let tol = PID_TOLERANCE_UM;
    let bottom = normalized_coincidences(overlap, 0.0, UNHERALDED_DIP_VISIBILITY);
    let offset = normalized_coincidences(overlap, tol, UNHERALDED_DIP_VISIBILITY);
    let delta_c = (offset - bottom) / bottom;
    let integration = PID_SIGMAS * PID_SIGMAS / (count_rate_per_s * delta_c * delta_c);
    let drift_time = match drift.temperature {
        TemperatureProcess::RandomWalk { step_k_per_sqrt_h } => {
            let um_per_sqrt_s = drift.sensitivity_um_per_hz() * drift.rep_rate_coeff() * step_k_per_sqrt_h / 60.0;
            if um_per_sqrt_s > 0.0 {
                (tol / um_per_sqrt_s).powi(2)
            } else {
                f64::INFINITY
            }
        }
        _ => {
            let rate = drift.drift_rate_um_per_s().unwrap_or(0.0);
            if rate > 0.0 {
                tol / rate
            } else {
                f64::INFINITY
            }
        }
    };
    Ok(PidFeasibility {
        integration_time_s: integration,
        drift_time_s: drift_time,
        feasible: integration < drift_time,
        tolerance_um: tol,
        sigmas: PID_SIGMAS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn length_shift_values() {
        assert_eq!(rep_rate_length_shift(0.0), 0.0);
        assert_abs_diff_eq!(rep_rate_length_shift(400.0), 2.72 * 400.0 / 75e6, epsilon = 1e-18);
        assert_abs_diff_eq!(rep_rate_length_shift(-400.0), -rep_rate_length_shift(400.0));
    }

    #[test]
    fn pulse_spacing_values() {
        assert_abs_diff_eq!(pulse_spacing(75e6, 1.0).unwrap(), 3.997_232_773, epsilon = 1e-8);
        let a = pulse_spacing(75e6, 1.47).unwrap();
        assert_abs_diff_eq!(pulse_spacing(150e6, 1.47).unwrap(), a / 2.0, epsilon = 1e-15);
        assert!(pulse_spacing(0.0, 1.47).is_err());
    }

    #[test]
    fn matched_coupling_gives_gain_sensitivity() {
        let d = DriftModel::default();
        assert_abs_diff_eq!(d.sensitivity_um_per_hz(), CONTROLLER_GAIN_UM_PER_HZ, epsilon = 1e-12);
        let per_hour = d.rep_rate_coeff() * 0.12;
        assert!(per_hour < REP_RATE_WANDER_BOUND_HZ_PER_H, "{per_hour}");
    }

    #[test]
    fn no_drift_stays_at_dip_bottom() {
        let s = simulate(&DriftModel::without_drift(), None, &OverlapModel::default(), 3600.0, 60.0).unwrap();
        assert!(s.iter().all(|x| (x.norm_coincidences - 2.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn free_drift_rises_monotonically_without_jitter() {
        let d = DriftModel {
            jitter_bound_um: 0.0,
            ..DriftModel::default()
        };
        let s = simulate(&d, None, &OverlapModel::default(), 12.0 * 3600.0, 60.0).unwrap();
        assert!(s.windows(2).all(|w| w[1].norm_coincidences >= w[0].norm_coincidences));
        assert!(s.last().unwrap().norm_coincidences > 0.999);
    }

    #[test]
    fn gain_matched_controller_bounds_residual() {
        let d = DriftModel::default();
        let c = Controller::default();
        let s = simulate(&d, Some(&c), &OverlapModel::default(), 24.0 * 3600.0, 60.0).unwrap();
        let bound = MOTOR_RESOLUTION_UM / 2.0 + d.jitter_bound_um + 1e-9;
        assert!(s.iter().all(|x| x.delta_x_um.abs() <= bound));
    }

    #[test]
    fn motor_steps_are_quantized() {
        let c = Controller::default();
        for df in [0.0, 1.3, -7.77, 123.4] {
            let m = c.motor_target(df) / MOTOR_RESOLUTION_UM;
            assert_abs_diff_eq!(m, m.round(), epsilon = 1e-9);
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let d = DriftModel {
            temperature: TemperatureProcess::RandomWalk { step_k_per_sqrt_h: 0.1 },
            ..DriftModel::long_spool()
        };
        let run = || simulate(&d, Some(&Controller::default()), &OverlapModel::default(), 7200.0, 30.0).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_bad_step() {
        assert!(simulate(&DriftModel::default(), None, &OverlapModel::default(), 10.0, 0.0).is_err());
    }

    #[test]
    fn pid_feasibility_cases() {
        let o = OverlapModel::default();
        let d = DriftModel::default();
        assert!(pid_alternative_analysis(&d, &o, 1e6).unwrap().feasible);
        let published_rate = 300.0 / (53.0 * 60.0);
        let r = pid_alternative_analysis(&d, &o, published_rate).unwrap();
        assert!(!r.feasible, "{r:?}");
        let still = pid_alternative_analysis(&DriftModel::without_drift(), &o, 1e-3).unwrap();
        assert!(still.feasible && still.drift_time_s.is_infinite());
        assert!(pid_alternative_analysis(&d, &o, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn coincidences_monotone_in_mismatch(a in 0.0f64..500.0, b in 0.0f64..500.0) {
            let o = OverlapModel::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let cl = normalized_coincidences(&o, lo, UNHERALDED_DIP_VISIBILITY);
            let ch = normalized_coincidences(&o, -hi, UNHERALDED_DIP_VISIBILITY);
            proptest::prop_assert!(ch >= cl - 1e-15);
        }

        #[test]
        fn residual_bounded_for_any_seed(seed in 0u64..1000, rate in -0.3f64..0.3) {
            let d = DriftModel { temperature: TemperatureProcess::Ramp { rate_k_per_h: rate }, seed, ..DriftModel::default() };
            let s = simulate(&d, Some(&Controller::default()), &OverlapModel::default(), 6.0 * 3600.0, 60.0).unwrap();
            let bound = MOTOR_RESOLUTION_UM / 2.0 + d.jitter_bound_um + 1e-9;
            proptest::prop_assert!(s.iter().all(|x| x.delta_x_um.abs() <= bound));
        }
    }
}

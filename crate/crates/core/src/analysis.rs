//! Fringe and dip fitting, fidelity, background subtraction and classification.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// Visibility reachable by measure-and-prepare strategies.
pub const CLASSICAL_LIMIT_V: f64 = 1.0 / 3.0;
/// Visibility above which no clone could be as good.
pub const CLONING_LIMIT_V: f64 = 2.0 / 3.0;

/// Fit of `A(1 + V cos(x − φ₀))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub visibility: f64,
    pub phase: f64,
    pub sigma_amplitude: f64,
    pub sigma_visibility: f64,
    pub sigma_phase: f64,
    pub chi2_per_dof: f64,
    /// True when the free fit exceeded V = 1 and the reported values come from
    /// the fit with V held at 1.
    pub constrained: bool,
    pub unconstrained_visibility: f64,
}

fn poisson_sigma(y: f64) -> f64 {
    y.max(1.0).sqrt()
}

fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Weighted least squares with σᵢ = √max(yᵢ, 1).
pub fn fit_fringe(x: &[f64], y: &[f64]) -> Result<FitResult> {
    if x.len() != y.len() {
        return Err(SimError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 5 {
        return Err(SimError::InsufficientPoints { needed: 5, got: n });
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // A uniform grid over one period omits the endpoint.
    let span = (hi - lo) * n as f64 / (n - 1) as f64;
    if span < 2.0 * PI - 1e-9 {
        return Err(SimError::invalid("phases", format!("span {span:.3} rad is less than one period")));
    }

    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&xi, &yi) in x.iter().zip(y) {
        let row = Vector3::new(1.0, xi.cos(), xi.sin());
        let w = 1.0 / poisson_sigma(yi).powi(2);
        normal += w * row * row.transpose();
        rhs += w * yi * row;
    }
    let cov = normal
        .try_inverse()
        .ok_or_else(|| SimError::NonConvergence("singular normal matrix; phases are degenerate".into()))?;
    let c = cov * rhs;
    let (c0, c1, c2) = (c[0], c[1], c[2]);
    if !(c0 > 0.0) {
        return Err(SimError::NonConvergence(format!("fitted mean {c0:.3e} is not positive")));
    }
    let r = (c1 * c1 + c2 * c2).sqrt();
    let v = r / c0;
    let phase = if r > 0.0 { c2.atan2(c1) } else { 0.0 };
    let sigma_v = if r > 1e-300 {
        let g = Vector3::new(-v / c0, c1 / (r * c0), c2 / (r * c0));
        (g.transpose() * cov * g)[0].max(0.0).sqrt()
    } else {
        ((cov[(1, 1)] + cov[(2, 2)]) / 2.0).max(0.0).sqrt() / c0
    };
    let sigma_phase = if r > 1e-300 {
        let g = Vector3::new(0.0, -c2 / (r * r), c1 / (r * r));
        (g.transpose() * cov * g)[0].max(0.0).sqrt()
    } else {
        PI
    };
    let chi2 = |a: f64, vis: f64, ph: f64| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| ((yi - a * (1.0 + vis * (xi - ph).cos())) / poisson_sigma(yi)).powi(2))
            .sum()
    };
    let dof = (n - 3) as f64;
    if v <= 1.0 {
        return Ok(FitResult {
            amplitude: c0,
            visibility: v,
            phase: wrap_phase(phase),
            sigma_amplitude: cov[(0, 0)].sqrt(),
            sigma_visibility: sigma_v,
            sigma_phase,
            chi2_per_dof: chi2(c0, v, phase) / dof,
            constrained: false,
            unconstrained_visibility: v,
        });
    }
    let (a, ph, sigma_a, sigma_ph) = fit_full_contrast(x, y, c0, phase)?;
    Ok(FitResult {
        amplitude: a,
        visibility: 1.0,
        phase: wrap_phase(ph),
        sigma_amplitude: sigma_a,
        sigma_visibility: sigma_v,
        sigma_phase: sigma_ph,
        chi2_per_dof: chi2(a, 1.0, ph) / (n - 2) as f64,
        constrained: true,
        unconstrained_visibility: v,
    })
}

/// Gauss–Newton fit of `A(1 + cos(x − φ))`.
fn fit_full_contrast(x: &[f64], y: &[f64], a0: f64, phi0: f64) -> Result<(f64, f64, f64, f64)> {
    let mut p = [a0, phi0];
    for _ in 0..100 {
        let mut jtj = nalgebra::Matrix2::<f64>::zeros();
        let mut jtr = nalgebra::Vector2::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let w = 1.0 / poisson_sigma(yi).powi(2);
            let cs = (xi - p[1]).cos();
            let model = p[0] * (1.0 + cs);
            let j = nalgebra::Vector2::new(1.0 + cs, p[0] * (xi - p[1]).sin());
            jtj += w * j * j.transpose();
            jtr += w * (yi - model) * j;
        }
        let step = jtj
            .try_inverse()
            .ok_or_else(|| SimError::NonConvergence("singular Jacobian in the V = 1 fit".into()))?
            * jtr;
        p[0] += step[0];
        p[1] += step[1];
        if step.norm() < 1e-12 * (1.0 + p[0].abs()) {
            let cov = jtj.try_inverse().expect("checked above");
            return Ok((p[0], p[1], cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()));
        }
    }
    Err(SimError::NonConvergence("V = 1 fit did not settle in 100 iterations".into()))
}

/// Gaussian dip `C₀ − D·exp(−4 ln2 (x − x₀)²/w²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DipFit {
    pub baseline: f64,
    pub depth: f64,
    pub center: f64,
    pub fwhm: f64,
    pub sigma_center: f64,
    pub sigma_fwhm: f64,
    pub chi2_per_dof: f64,
}

impl DipFit {
    /// Net dip visibility D/C₀.
    pub fn visibility(&self) -> f64 {
        self.depth / self.baseline
    }

    pub fn model(&self, x: f64) -> f64 {
        dip_model(&[self.baseline, self.depth, self.center, self.fwhm], x)
    }
}

fn dip_model(p: &[f64; 4], x: f64) -> f64 {
    let u = (x - p[2]) / p[3];
    p[0] - p[1] * (-4.0 * LN_2 * u * u).exp()
}

fn dip_jacobian(p: &[f64; 4], x: f64) -> [f64; 4] {
    let u = (x - p[2]) / p[3];
    let e = (-4.0 * LN_2 * u * u).exp();
    [
        1.0,
        -e,
        -p[1] * e * 8.0 * LN_2 * u / p[3],
        -p[1] * e * 8.0 * LN_2 * u * u / p[3],
    ]
}

/// Levenberg–Marquardt fit with σᵢ = √max(yᵢ, 1).
pub fn fit_dip(x: &[f64], y: &[f64]) -> Result<DipFit> {
    if x.len() != y.len() {
        return Err(SimError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 5 {
        return Err(SimError::InsufficientPoints { needed: 5, got: n });
    }
    let (imin, ymin) = y
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let xspan = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
    // Width guess: extent of points below half depth.
    let half = 0.5 * (ymax + ymin);
    let below: Vec<f64> = x.iter().zip(y).filter(|(_, &v)| v <= half).map(|(&u, _)| u).collect();
    let w0 = below
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
        - below.iter().cloned().fold(f64::INFINITY, f64::min);
    let w0 = if w0 > 0.0 { w0 } else { xspan / 4.0 };
    let mut p = [ymax, ymax - ymin, x[imin], w0];
    let weights: Vec<f64> = y.iter().map(|&v| 1.0 / poisson_sigma(v).powi(2)).collect();
    // Scale residuals so the damping is insensitive to the data magnitude.
    let scale = if ymax > 0.0 { 1.0 / ymax } else { 1.0 };
    let cost = |p: &[f64; 4]| -> f64 {
        x.iter()
            .zip(y)
            .zip(&weights)
            .map(|((&xi, &yi), &w)| w * ((yi - dip_model(p, xi)) * scale).powi(2))
            .sum()
    };
    let mut lambda = 1e-3;
    let mut current = cost(&p);
    let mut converged = false;
    for _ in 0..500 {
        let mut jtj = DMatrix::<f64>::zeros(4, 4);
        let mut jtr = DVector::<f64>::zeros(4);
        for ((&xi, &yi), &w) in x.iter().zip(y).zip(&weights) {
            let j = DVector::from_row_slice(&dip_jacobian(&p, xi)) * scale;
            let r = (yi - dip_model(&p, xi)) * scale;
            jtj += w * &j * j.transpose();
            jtr += w * r * &j;
        }
        let mut improved = false;
        for _ in 0..50 {
            let mut damped = jtj.clone();
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            let c = cost(&trial);
            if c.is_finite() && c <= current && trial[3] > 0.0 {
                let rel = (current - c) / current.max(1e-300);
                let small_step = step.iter().zip(&trial).all(|(s, t)| s.abs() <= 1e-10 * (1.0 + t.abs()));
                p = trial;
                current = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-14 || small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !converged || !(p[3] > 0.0) {
        return Err(SimError::NonConvergence(format!("dip fit stopped at {p:?}")));
    }
    let mut jtj = DMatrix::<f64>::zeros(4, 4);
    for (&xi, &w) in x.iter().zip(&weights) {
        let j = DVector::from_row_slice(&dip_jacobian(&p, xi));
        jtj += w * &j * j.transpose();
    }
    let cov = jtj.try_inverse().unwrap_or_else(|| DMatrix::from_element(4, 4, f64::NAN));
    Ok(DipFit {
        baseline: p[0],
        depth: p[1],
        center: p[2],
        fwhm: p[3].abs(),
        sigma_center: cov[(2, 2)].sqrt(),
        sigma_fwhm: cov[(3, 3)].sqrt(),
        chi2_per_dof: if n > 4 {
            current / (scale * scale) / (n - 4) as f64
        } else {
            0.0
        },
    })
}

/// Teleportation fidelity for equatorial input states.
pub fn fidelity(visibility: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(SimError::invalid("visibility", format!("{visibility} outside [0,1]")));
    }
    Ok((1.0 + visibility) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetVisibility {
    pub value: f64,
    pub sigma: f64,
    /// Set when the background-corrected value exceeded 1 and was capped.
    pub capped: bool,
    pub uncapped: f64,
}

/// Visibility after subtracting a phase-flat background.
pub fn net_visibility(
    v_raw: f64,
    sigma_v_raw: f64,
    mean: f64,
    sigma_mean: f64,
    background: f64,
    sigma_background: f64,
) -> Result<NetVisibility> {
    if !(background >= 0.0) {
        return Err(SimError::invalid("background", "must be non-negative"));
    }
    if background >= mean {
        return Err(SimError::BackgroundTooLarge { background, mean });
    }
    let s = mean - background;
    // Written as a ratio so that a zero background is an exact identity.
    let d_raw = 1.0 / (1.0 - background / mean);
    let value = v_raw * d_raw;
    let d_mean = -v_raw * background / (s * s);
    let d_bg = v_raw * mean / (s * s);
    let sigma = ((d_raw * sigma_v_raw).powi(2) + (d_mean * sigma_mean).powi(2) + (d_bg * sigma_background).powi(2)).sqrt();
    Ok(NetVisibility {
        value: value.min(1.0),
        sigma,
        capped: value > 1.0,
        uncapped: value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    BelowClassical,
    Quantum,
    AboveCloning,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::BelowClassical => "below_classical",
            Classification::Quantum => "quantum",
            Classification::AboveCloning => "above_cloning",
        }
    }
}

/// Boundary values are classified upward.
pub fn classify(visibility: f64) -> Classification {
    if visibility >= CLONING_LIMIT_V {
        Classification::AboveCloning
    } else if visibility >= CLASSICAL_LIMIT_V {
        Classification::Quantum
    } else {
        Classification::BelowClassical
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, periods: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 * 2.0 * PI * periods / n as f64).collect()
    }

    fn fringe(x: &[f64], a: f64, v: f64, ph: f64) -> Vec<f64> {
        x.iter().map(|&u| a * (1.0 + v * (u - ph).cos())).collect()
    }

    #[test]
    fn noiseless_full_fringe() {
        let x = grid(24, 2.0);
        let f = fit_fringe(&x, &fringe(&x, 1000.0, 1.0, 0.4)).unwrap();
        assert_abs_diff_eq!(f.visibility, 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(f.phase, 0.4, epsilon = 1e-9);
        assert_abs_diff_eq!(f.amplitude, 1000.0, epsilon = 1e-6);
    }

    #[test]
    fn constant_data_has_no_significant_visibility() {
        let x = grid(16, 1.0);
        let f = fit_fringe(&x, &[500.0; 16]).unwrap();
        assert!(f.visibility < 3.0 * f.sigma_visibility + 1e-12);
    }

    #[test]
    fn overshoot_is_constrained() {
        let x = grid(16, 1.0);
        let mut y = fringe(&x, 100.0, 1.0, 0.0);
        for (v, u) in y.iter_mut().zip(&x) {
            *v += 10.0 * u.cos();
        }
        let f = fit_fringe(&x, &y).unwrap();
        assert!(f.constrained);
        assert_eq!(f.visibility, 1.0);
        assert!(f.unconstrained_visibility > 1.0);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(
            fit_fringe(&[0.0, 1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(SimError::InsufficientPoints { .. })
        ));
        let x: Vec<f64> = (0..8).map(|k| k as f64 * 0.1).collect();
        assert!(fit_fringe(&x, &[1.0; 8]).is_err());
        assert!(fit_fringe(&grid(8, 1.0), &[0.0; 8]).is_err());
    }

    #[test]
    fn dip_recovers_width_and_center() {
        let truth = DipFit {
            baseline: 3.0,
            depth: 1.0,
            center: 12.0,
            fwhm: 144.0,
            sigma_center: 0.0,
            sigma_fwhm: 0.0,
            chi2_per_dof: 0.0,
        };
        let x: Vec<f64> = (-20..=20).map(|k| k as f64 * 15.0).collect();
        let y: Vec<f64> = x.iter().map(|&u| truth.model(u)).collect();
        let f = fit_dip(&x, &y).unwrap();
        assert_abs_diff_eq!(f.fwhm, 144.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.center, 12.0, epsilon = 1e-6);
        assert_abs_diff_eq!(f.visibility(), 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn dip_fit_scale_invariant() {
        let x: Vec<f64> = (-15..=15).map(|k| k as f64 * 20.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&u| 1e-7 * (1.0 - (1.0 / 3.0) * (-4.0 * LN_2 * (u / 144.0).powi(2)).exp()))
            .collect();
        let f = fit_dip(&x, &y).unwrap();
        assert_abs_diff_eq!(f.fwhm, 144.0, epsilon = 1e-4);
    }

    #[test]
    fn fidelity_values() {
        assert_abs_diff_eq!(fidelity(0.46).unwrap(), 0.73, epsilon = 1e-15);
        assert_abs_diff_eq!(fidelity(0.87).unwrap(), 0.935, epsilon = 1e-15);
        assert_eq!(fidelity(1.0).unwrap(), 1.0);
        assert_eq!(fidelity(CLASSICAL_LIMIT_V).unwrap(), 2.0 / 3.0);
        assert_abs_diff_eq!(fidelity(CLONING_LIMIT_V).unwrap(), 5.0 / 6.0, epsilon = 1e-15);
        assert!(fidelity(1.2).is_err());
    }

    #[test]
    fn net_visibility_cases() {
        let same = net_visibility(0.46, 0.06, 10.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(same.value, 0.46);
        let doubled = net_visibility(0.46, 0.06, 10.0, 0.0, 5.0, 0.0).unwrap();
        assert_abs_diff_eq!(doubled.value, 0.92, epsilon = 1e-15);
        assert_abs_diff_eq!(doubled.sigma, 0.12, epsilon = 1e-15);
        let capped = net_visibility(0.5, 0.0, 10.0, 0.0, 6.0, 0.0).unwrap();
        assert!(capped.capped);
        assert_eq!(capped.value, 1.0);
        assert_abs_diff_eq!(capped.uncapped, 1.25, epsilon = 1e-12);
        assert!(matches!(
            net_visibility(0.5, 0.0, 10.0, 0.0, 10.0, 0.0),
            Err(SimError::BackgroundTooLarge { .. })
        ));
    }

    #[test]
    fn classification_boundaries() {
        assert_eq!(classify(0.46), Classification::Quantum);
        assert_eq!(classify(0.87), Classification::AboveCloning);
        assert_eq!(classify(CLASSICAL_LIMIT_V), Classification::Quantum);
        assert_eq!(classify(CLONING_LIMIT_V), Classification::AboveCloning);
        assert_eq!(classify(0.2), Classification::BelowClassical);
    }

    proptest::proptest! {
        #[test]
        fn phase_relabeling(shift in -3.0f64..3.0, v in 0.05f64..0.95, ph in -3.0f64..3.0) {
            let x = grid(20, 2.0);
            let y = fringe(&x, 400.0, v, ph);
            let shifted: Vec<f64> = x.iter().map(|u| u + shift).collect();
            let a = fit_fringe(&x, &y).unwrap();
            let b = fit_fringe(&shifted, &y).unwrap();
            proptest::prop_assert!((a.visibility - b.visibility).abs() < 1e-9);
            proptest::prop_assert!((a.amplitude - b.amplitude).abs() < 1e-9 * a.amplitude);
            proptest::prop_assert!(wrap_phase(b.phase - a.phase - shift).abs() < 1e-9);
        }

        #[test]
        fn fidelity_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(fidelity(lo).unwrap() <= fidelity(hi).unwrap());
        }

        #[test]
        fn zero_background_is_identity(v in 0.0f64..=1.0, m in 1e-9f64..1e9) {
            proptest::prop_assert_eq!(net_visibility(v, 0.0, m, 0.0, 0.0, 0.0).unwrap().value, v);
        }
    }
}

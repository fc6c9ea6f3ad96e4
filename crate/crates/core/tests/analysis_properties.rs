use std::f64::consts::PI;

use qrelay_core::analysis::fit_fringe;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

const POINTS: usize = 16;
const PERIODS: f64 = 2.0;

fn grid() -> Vec<f64> {
    (0..POINTS).map(|k| k as f64 * 2.0 * PI * PERIODS / POINTS as f64).collect()
}

fn synthetic(x: &[f64], amplitude: f64, v: f64, phase: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    x.iter()
        .map(|&u| Poisson::new(amplitude * (1.0 + v * (u - phase).cos())).unwrap().sample(rng))
        .collect()
}

/// Fraction of fits whose visibility lies within `k` standard errors of the truth.
fn coverage(amplitude: f64, v: f64, k: f64, trials: usize, seed: u64) -> (f64, f64) {
    let x = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = 0;
    let mut sigma_sum = 0.0;
    for t in 0..trials {
        let y = synthetic(&x, amplitude, v, 0.3 * t as f64, &mut rng);
        let f = fit_fringe(&x, &y).unwrap();
        sigma_sum += f.sigma_visibility;
        if (f.visibility - v).abs() <= k * f.sigma_visibility {
            inside += 1;
        }
    }
    (inside as f64 / trials as f64, sigma_sum / trials as f64)
}

#[test]
fn recovery_within_three_sigma() {
    for (i, v) in [0.2, 0.5, 0.9].into_iter().enumerate() {
        let (frac, _) = coverage(1000.0, v, 3.0, 1000, 100 + i as u64);
        assert!(frac >= 0.99, "V = {v}: only {frac} within 3σ");
    }
}

/// About 35 counts per point over two periods gives σ_V near 0.06 at V = 0.46.
#[test]
fn three_photon_scale_statistics() {
    let (frac, sigma) = coverage(35.0, 0.46, 2.0, 1000, 7);
    assert!(frac >= 0.9, "only {frac} within 2σ");
    assert!((0.045..=0.075).contains(&sigma), "mean σ_V {sigma}");
}

#[test]
fn noiseless_fits_are_exact() {
    let x = grid();
    for v in [0.0, 0.3, 0.999] {
        let y: Vec<f64> = x.iter().map(|&u| 500.0 * (1.0 + v * (u - 1.0).cos())).collect();
        let f = fit_fringe(&x, &y).unwrap();
        assert!((f.visibility - v).abs() < 1e-9);
        assert!(f.chi2_per_dof < 1e-18);
    }
}

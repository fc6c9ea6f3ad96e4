use std::f64::consts::PI;

use proptest::prelude::*;
use qrelay_core::analysis::fit_fringe;
use qrelay_core::scenarios::{
    build_default_config, run_blocking, run_mandel_scan, run_teleport_scan, Blocked, DetectorSet, EvalMode,
    ExperimentConfig,
};
use qrelay_core::sources::PairStatistics;

fn phases(points: usize, periods: f64, offset: f64) -> Vec<f64> {
    (0..points).map(|k| offset + k as f64 * 2.0 * PI * periods / points as f64).collect()
}

fn visibility(cfg: &ExperimentConfig) -> f64 {
    let scan = run_teleport_scan(cfg, &phases(12, 2.0, 0.0)).unwrap();
    fit_fringe(&scan.control, &scan.probabilities).unwrap().visibility
}

fn low_mu(p: f64) -> ExperimentConfig {
    build_default_config().with_common_pair_mean(p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn fringe_mean_is_phase_independent(p in 0.005f64..0.05, offset in 0.0f64..PI, heralded in any::<bool>()) {
        let mut c = low_mu(p);
        c.heralded = heralded;
        let mean = |o: f64| {
            let s = run_teleport_scan(&c, &phases(4, 1.0, o)).unwrap();
            s.probabilities.iter().sum::<f64>() / 4.0
        };
        let (a, b) = (mean(0.0), mean(offset));
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300), "{a} {b}");
    }

    #[test]
    fn heralding_never_lowers_visibility(p in 0.005f64..0.05) {
        let mut c = low_mu(p);
        c.heralded = false;
        let unheralded = visibility(&c);
        c.heralded = true;
        let heralded = visibility(&c);
        prop_assert!(heralded >= unheralded - 1e-9, "{heralded} < {unheralded}");
    }

    #[test]
    fn lower_means_never_lower_visibility_without_darks(p in 0.01f64..0.05, s in 0.2f64..1.0, heralded in any::<bool>()) {
        let mut c = low_mu(p);
        c.heralded = heralded;
        c.detectors = c.detectors.without_dark_counts();
        let v = visibility(&c);
        let scaled = ExperimentConfig { pair_mean_alice: c.pair_mean_alice * s, pair_mean_epr: c.pair_mean_epr * s, ..c.clone() };
        prop_assert!(visibility(&scaled) >= v - 1e-9);
    }

    #[test]
    fn analytic_counts_are_probability_times_pulses(p in 0.005f64..0.05) {
        let c = low_mu(p);
        let s = run_teleport_scan(&c, &phases(5, 1.0, 0.0)).unwrap();
        for (n, q) in s.counts.iter().zip(&s.probabilities) {
            prop_assert_eq!(*n, q * s.pulses_per_point as f64);
        }
    }
}

#[test]
fn mandel_minima_coincide() {
    let c = build_default_config();
    let dx: Vec<f64> = (-10..=10).map(|k| k as f64 * 25.0).collect();
    let (short, long) = run_mandel_scan(&c, &dx).unwrap();
    let argmin = |v: &[f64]| (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
    assert_eq!(argmin(&short.probabilities), argmin(&long.probabilities));
    assert_eq!(dx[argmin(&short.probabilities)], 0.0);
}

/// Heralded multi-pair noise vanishes faster than the signal as μ → 0.
#[test]
fn heralded_low_gain_limit_is_full_contrast() {
    let mut c = low_mu(0.002);
    c.detectors = DetectorSet::ideal();
    c.heralded = true;
    let v = visibility(&c);
    assert!(v > 0.99, "{v}");
    c.heralded = false;
    let unheralded = visibility(&c);
    let mut lower = c.clone().with_common_pair_mean(0.001);
    lower.heralded = false;
    assert!((visibility(&lower) - unheralded).abs() < 0.01, "unheralded limit not settled");
}

#[test]
fn low_gain_visibility_depends_on_statistics() {
    let mut thermal = low_mu(0.002);
    thermal.detectors = DetectorSet::ideal();
    let mut poisson = thermal.clone();
    poisson.statistics_alice = PairStatistics::Poissonian;
    poisson.statistics_epr = PairStatistics::Poissonian;
    // Double pairs are twice as likely for thermal statistics at equal mean.
    assert!(visibility(&poisson) > visibility(&thermal) + 0.05);
}

#[test]
fn blocking_channels() {
    let mut c = low_mu(0.05);
    c.detectors = c.detectors.without_dark_counts();
    c.heralded = false;
    assert_eq!(run_blocking(&c, Blocked::Epr).unwrap(), 0.0, "Bob needs a photon or a dark count");
    assert_eq!(run_blocking(&c, Blocked::Both).unwrap(), 0.0);
    c.detectors.bob.dark_prob_per_gate = 1e-4;
    assert!(run_blocking(&c, Blocked::Epr).unwrap() > 0.0, "Alice double pairs fake a BSA event");
    assert_eq!(run_blocking(&c, Blocked::Both).unwrap(), 0.0);
    c.heralded = true;
    c.detectors = c.detectors.without_dark_counts();
    assert_eq!(run_blocking(&c, Blocked::Alice).unwrap(), 0.0);
}

#[test]
fn heralded_alice_blocking_is_dark_limited() {
    let mut c = low_mu(0.05);
    c.heralded = true;
    let with_darks = run_blocking(&c, Blocked::Alice).unwrap();
    let mean = run_blocking(&c, Blocked::None).unwrap();
    assert!(with_darks > 0.0);
    assert!(with_darks < 1e-3 * mean, "{with_darks} vs {mean}");
}

#[test]
fn monte_carlo_matches_analytic() {
    let mut c = low_mu(0.03);
    c.mode = EvalMode::MonteCarlo;
    c.trials = 200_000;
    let s = run_teleport_scan(&c, &phases(6, 1.0, 0.0)).unwrap();
    for ((p, q), se) in s.probabilities.iter().zip(&s.expected_probabilities).zip(&s.standard_errors) {
        assert!(*se > 0.0);
        assert!((p - q).abs() <= 4.0 * se, "{p} {q} {se}");
    }
    let again = run_teleport_scan(&c, &phases(6, 1.0, 0.0)).unwrap();
    assert_eq!(s, again);
    c.seed += 1;
    assert_ne!(run_teleport_scan(&c, &phases(6, 1.0, 0.0)).unwrap().counts, s.counts);
}

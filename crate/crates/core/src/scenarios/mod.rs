//! Experiment assembly and measurement campaigns.
//!
//! Alice's source emits a single-bin pair; its 1310 nm photon passes her
//! interferometer and meets the 1310 nm photon of the entangled source at the
//! BSA splitter. The 1555 nm partner travels to Bob's interferometer. The two
//! sources are statistically independent per event.

pub mod config;
pub mod engine;
pub mod montecarlo;

pub use config::{build_default_config, DetectorSet, EvalMode, ExperimentConfig};
pub use engine::{
    bell_measurement_success, calibrate_dark_counts, detector_layout, joint_pair_weights, run_blocking,
    run_mandel_scan, run_teleport_scan, teleport_outcome_distribution_for, teleport_tables, Blocked,
    BranchTable, Calibration, NoiseBudget, PhaseAveraged, ScanResult, BOB_CENTRAL_BIN,
};
pub use montecarlo::{sample_events, McEstimate};

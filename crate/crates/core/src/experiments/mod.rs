//! Monte Carlo harness, phase segmentation, and comparison against theory.

mod export;
mod monte_carlo;
mod phases;
mod verdicts;

pub use export::{curves_csv, fmt_f64, ExperimentReport, CURVES_HEADER, SCHEMA};
pub use monte_carlo::{
    random_state, residual_energy, run_experiment, tail_start, ExperimentConfig, Init,
    LearningCurves, Prepared, CHUNK,
};
pub use phases::{
    detect_phases, fit_rate, PhaseReport, RateFit, MIN_FIT_WINDOW, PHASE1_FLOOR_FACTOR,
    PHASE1_RELATIVE_DROP, PHASE2_STEADY_FACTOR, TAIL_RATIO_LIMIT,
};
pub use verdicts::{
    compare_to_theory, curve_envelopes, ComparisonOptions, Status, Verdict, VerdictTable,
};

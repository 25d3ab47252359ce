//! Accuracy games, the monitor, reference selectors, and lemma verifiers.

pub mod games;
pub mod selectors;
pub mod verify;

pub use games::{
    run_accuracy_game, run_monitor, run_sample_accuracy_game, Analyst, AnalystFactory,
    FixedQueryAnalyst, GameResult, GameSummary, MechanismFactory, MonitorOutput, SqMechanism,
};
pub use verify::{
    em_utility_sweep, run_generalization_check, run_lower_bound_demo, verify_decorrelated_lowsens,
    verify_decorrelated_sq, verify_decorrelated_tv, verify_em_utility, LemmaVerdict,
    LowerBoundReport,
};

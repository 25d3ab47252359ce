//! Experiment configuration, dispatch, and deterministic execution.
//!
//! Every experiment is a pure function of (params, trials, seed); the
//! summary JSON embeds all three plus a digest of the seed-independent
//! part, so any run can be replayed bit-identically later.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use asl_core::analysts::AnalystConfig;
use asl_core::harness::selectors::{
    ArgmaxLowSensSelector, ArgmaxLowSensTSelector, ArgmaxSqSelector, ConstantLowSensSelector,
    ConstantLowSensTSelector, ConstantSqSelector, ExpMechLowSensSelector, ExpMechLowSensTSelector,
    ExpMechSqSelector, LowSensSelector, LowSensTSelector, RandomizedResponseSelector, SqSelector,
};
use asl_core::harness::verify::{balanced_binary_queries, balanced_scaled_menu};
use asl_core::harness::{
    run_accuracy_game, run_generalization_check, run_lower_bound_demo, run_monitor,
    verify_decorrelated_lowsens, verify_decorrelated_sq, verify_decorrelated_tv,
    verify_em_utility, LemmaVerdict,
};
use asl_core::mechanisms::{MechanismConfig, MechanismKind};
use asl_core::query::LowSensitivityQuery;
use asl_core::seed::child_seed;
use asl_core::stability::{
    calibrate_per_query, plan_transfer, sample_complexity, QueryFamily, Regime, StabilityBudget,
    TransferVariant,
};
use asl_core::stats::{median, run_trials};
use asl_core::universe::{Distribution, Universe};

/// Library version tag recorded in summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seed index reserved for fixed query menus (trial indices stay below it).
const MENU_SEED_INDEX: u64 = 1 << 40;

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration: exit 1 with a machine-readable report.
    Config(String),
    /// Execution failure unrelated to configuration.
    Runtime(String),
}

impl CliError {
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Runtime(_) => "runtime",
        }
    }
}

impl From<asl_core::Error> for CliError {
    fn from(e: asl_core::Error) -> Self {
        match e {
            asl_core::Error::InvalidConfig(_)
            | asl_core::Error::InvalidDistribution(_)
            | asl_core::Error::InvalidQuery(_)
            | asl_core::Error::OutOfRange(_)
            | asl_core::Error::Unsupported(_)
            | asl_core::Error::Infeasible(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// A fully resolved experiment description; what the summary stores.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub params: Value,
    pub seed: u64,
    pub trials: usize,
    #[serde(default)]
    pub out_path: Option<String>,
}

/// The partially specified on-disk form; the CLI fills the gaps.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: Option<String>,
    #[serde(default)]
    pub params: Value,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub out_path: Option<String>,
}

/// One CSV record in long format.
#[derive(Clone, Debug, Serialize)]
pub struct CsvRow {
    pub experiment: String,
    pub seed: u64,
    pub trial: i64,
    pub metric: String,
    pub value: f64,
}

/// Everything a run produces besides files.
pub struct RunOutcome {
    pub metrics: BTreeMap<String, f64>,
    pub rows: Vec<CsvRow>,
    /// The verdict gate: `Some(false)` means exit code 2.
    pub holds: Option<bool>,
    /// Experiment-specific structured payload (plans, verdicts).
    pub detail: Value,
}

/// FNV-1a 64 over the canonical JSON of the seed-independent config parts.
pub fn config_digest(config: &ExperimentConfig) -> String {
    #[derive(Serialize)]
    struct SeedFree<'a> {
        experiment: &'a str,
        params: &'a Value,
        trials: usize,
    }
    let text = serde_json::to_string(&SeedFree {
        experiment: &config.experiment,
        params: &config.params,
        trials: config.trials,
    })
    .expect("config serializes");
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

pub fn default_trials(experiment: &str) -> usize {
    match experiment {
        "game" | "attack_demo" => 100,
        "monitor" => 1000,
        "em_utility" | "plan" => 1,
        _ => 10_000,
    }
}

fn parse_params<T: for<'de> Deserialize<'de>>(params: &Value) -> CliResult<T> {
    let value = match params {
        Value::Null => Value::Object(serde_json::Map::new()),
        other => other.clone(),
    };
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("bad params: {e}")))
}

fn uniform_or_pmf(universe_size: usize, pmf: &Option<Vec<f64>>) -> CliResult<Distribution> {
    let universe = Universe::indexed(universe_size).map_err(CliError::from)?;
    Ok(match pmf {
        Some(pmf) => Distribution::new(universe, pmf.clone()).map_err(CliError::from)?,
        None => Distribution::uniform(universe),
    })
}

fn verdict_metrics(metrics: &mut BTreeMap<String, f64>, v: &LemmaVerdict) {
    metrics.insert("estimate".into(), v.estimate);
    metrics.insert("ci_halfwidth".into(), v.ci_halfwidth);
    metrics.insert("bound".into(), v.bound);
    metrics.insert("holds".into(), f64::from(u8::from(v.holds_within_ci)));
}

fn gate(holds: bool, expect_violation: bool) -> bool {
    holds != expect_violation
}

// ---------------------------------------------------------------------------
// Per-experiment parameter types
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct GameParams {
    universe_size: usize,
    #[serde(default)]
    pmf: Option<Vec<f64>>,
    n: usize,
    k: usize,
    mechanism: MechanismConfig,
    analyst: AnalystConfig,
    #[serde(default = "default_pop_err_threshold")]
    pop_err_threshold: f64,
}

fn default_pop_err_threshold() -> f64 {
    0.05
}

#[derive(Deserialize)]
struct AttackDemoParams {
    universe_size: usize,
    n: usize,
    k_probe: usize,
    #[serde(default = "default_selection_fraction")]
    selection_fraction: f64,
    mechanism: MechanismConfig,
    /// When set with a Laplace mechanism, the noise scale is derived so the
    /// whole (k_probe + 1)-round interaction meets this total budget.
    #[serde(default)]
    calibrate_total: Option<StabilityBudget>,
    #[serde(default = "default_success_threshold")]
    success_threshold: f64,
}

fn default_selection_fraction() -> f64 {
    0.5
}

fn default_success_threshold() -> f64 {
    0.2
}

#[derive(Deserialize)]
struct MonitorParams {
    universe_size: usize,
    #[serde(default)]
    pmf: Option<Vec<f64>>,
    n: usize,
    t: usize,
    k: usize,
    mechanism: MechanismConfig,
    analyst: AnalystConfig,
    /// Detection threshold on the selected query's population error.
    alpha: f64,
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum SelectorKind {
    Constant,
    Expmech,
    Argmax,
    RandomizedResponse,
}

#[derive(Deserialize)]
struct SelectorSpec {
    kind: SelectorKind,
    #[serde(default)]
    eta: Option<f64>,
}

#[derive(Deserialize)]
struct LemmaSqParams {
    universe_size: usize,
    n: usize,
    t: usize,
    eps: f64,
    delta: f64,
    menu_size: usize,
    selector: SelectorSpec,
    #[serde(default)]
    expect_violation: bool,
}

#[derive(Deserialize)]
struct LemmaLowsensParams {
    universe_size: usize,
    n: usize,
    t: usize,
    eps: f64,
    delta: f64,
    menu_size: usize,
    selector: SelectorSpec,
    #[serde(default)]
    with_clamped: bool,
    #[serde(default)]
    expect_violation: bool,
}

#[derive(Deserialize)]
struct LemmaTvParams {
    universe_size: usize,
    n: usize,
    #[serde(default = "default_stay_prob")]
    stay_prob: f64,
    /// Claimed TV parameter for non randomized-response selectors.
    #[serde(default)]
    claimed_eps_tv: f64,
    selector: SelectorSpec,
    #[serde(default)]
    expect_violation: bool,
}

fn default_stay_prob() -> f64 {
    0.52
}

#[derive(Deserialize)]
struct EmUtilityParams {
    #[serde(default)]
    f_values: Option<Vec<f64>>,
    #[serde(default)]
    eta: Option<f64>,
    #[serde(default = "default_instances")]
    instances: usize,
    #[serde(default = "default_max_size")]
    max_size: usize,
}

fn default_instances() -> usize {
    1000
}

fn default_max_size() -> usize {
    50
}

#[derive(Deserialize)]
struct LowerBoundParams {
    alpha: f64,
    delta: f64,
    n: usize,
    delta_sens: f64,
    #[serde(default = "default_exact_tolerance")]
    exact_tolerance: f64,
}

fn default_exact_tolerance() -> f64 {
    0.01
}

#[derive(Deserialize)]
struct GeneralizationParams {
    universe_size: usize,
    n: usize,
    eps: f64,
    delta: f64,
    menu_size: usize,
    selector: SelectorSpec,
    #[serde(default = "default_true")]
    require_hypothesis: bool,
    #[serde(default)]
    expect_violation: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
struct PlanParams {
    alpha: f64,
    beta: f64,
    delta_sens: f64,
    n: usize,
    k: usize,
    variant: TransferVariant,
    #[serde(default)]
    table: Option<TableParams>,
}

#[derive(Deserialize)]
struct TableParams {
    family: QueryFamily,
    regime: Regime,
    k: usize,
    alpha: f64,
    beta: f64,
    universe_size: usize,
    #[serde(default)]
    d: Option<usize>,
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Run the experiment described by `config`. Pure in (params, trials, seed).
pub fn execute(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    match config.experiment.as_str() {
        "game" => run_game(config),
        "attack_demo" => run_attack_demo(config),
        "monitor" => run_monitor_experiment(config),
        "lemma_sq" => run_lemma_sq(config),
        "lemma_lowsens" => run_lemma_lowsens(config),
        "lemma_tv" => run_lemma_tv(config),
        "em_utility" => run_em_utility(config),
        "lower_bound" => run_lower_bound(config),
        "generalization" => run_generalization(config),
        "plan" => run_plan(config),
        other => Err(CliError::Config(format!("unknown experiment {other:?}"))),
    }
}

fn run_game(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: GameParams = parse_params(&config.params)?;
    p.mechanism.validate().map_err(CliError::from)?;
    p.analyst.validate().map_err(CliError::from)?;
    let population = uniform_or_pmf(p.universe_size, &p.pmf)?;
    let results = run_trials(config.trials, config.seed, |_, trial_seed| {
        run_accuracy_game(&population, p.n, p.k, &p.mechanism, &p.analyst, trial_seed)
    });
    let mut rows = Vec::new();
    let mut max_pop = Vec::new();
    let mut max_sample = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        let r = r.map_err(CliError::from)?;
        let pop = r.max_pop_err.unwrap_or(f64::NAN);
        rows.push(row(config, t as i64, "max_pop_err", pop));
        rows.push(row(config, t as i64, "max_sample_err", r.max_sample_err));
        max_pop.push(pop);
        max_sample.push(r.max_sample_err);
    }
    let within = max_pop.iter().filter(|&&v| v <= p.pop_err_threshold).count();
    let mut metrics = BTreeMap::new();
    metrics.insert("mean_max_pop_err".into(), mean(&max_pop));
    metrics.insert("mean_max_sample_err".into(), mean(&max_sample));
    metrics.insert(
        "frac_pop_err_within".into(),
        within as f64 / config.trials as f64,
    );
    Ok(RunOutcome {
        metrics,
        rows,
        holds: None,
        detail: Value::Null,
    })
}

fn run_attack_demo(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: AttackDemoParams = parse_params(&config.params)?;
    let population = uniform_or_pmf(p.universe_size, &None)?;
    let k = p.k_probe + 1;
    let mut mechanism = p.mechanism.clone();
    if let Some(total) = p.calibrate_total {
        if mechanism.kind != MechanismKind::Laplace {
            return Err(CliError::Config(
                "calibrate_total is only supported for the laplace mechanism".into(),
            ));
        }
        let (eps0, _) =
            calibrate_per_query(total, k, total.delta / 2.0).map_err(CliError::from)?;
        if eps0 <= 0.0 {
            return Err(CliError::Config("calibration yielded a zero per-query epsilon".into()));
        }
        mechanism.noise_scale = (1.0 / p.n as f64) / eps0;
    }
    mechanism.k_max = mechanism.k_max.max(k);
    mechanism.validate().map_err(CliError::from)?;
    let analyst = AnalystConfig::overfit_attack(asl_core::analysts::AttackParams {
        k_probe: p.k_probe,
        selection_fraction: p.selection_fraction,
    });
    let results = run_trials(config.trials, config.seed, |_, trial_seed| {
        run_accuracy_game(&population, p.n, k, &mechanism, &analyst, trial_seed)
    });
    let mut rows = Vec::new();
    let mut err_p = Vec::new();
    let mut gaps = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        let r = r.map_err(CliError::from)?;
        if r.refused || r.transcript.rounds() < k {
            return Err(CliError::Runtime(format!(
                "the mechanism refused at round {} of {k}; raise k_max or the update budget",
                r.transcript.rounds()
            )));
        }
        let pop_errs = r
            .per_round_pop_errs
            .as_ref()
            .ok_or_else(|| CliError::Runtime("accuracy game lost population errors".into()))?;
        let final_err = *pop_errs
            .last()
            .expect("k >= 1 rounds were answered");
        let final_gap = final_err - r.per_round_sample_errs.last().expect("final round exists");
        rows.push(row(config, t as i64, "final_err_p", final_err));
        rows.push(row(config, t as i64, "final_gap", final_gap));
        err_p.push(final_err);
        gaps.push(final_gap);
    }
    let abs_err: Vec<f64> = err_p.iter().map(|v| v.abs()).collect();
    let success = err_p.iter().filter(|&&v| v >= p.success_threshold).count();
    let mut metrics = BTreeMap::new();
    metrics.insert("median_final_err_p".into(), median(&err_p));
    metrics.insert("median_abs_final_err_p".into(), median(&abs_err));
    metrics.insert("median_final_gap".into(), median(&gaps));
    metrics.insert("noise_scale".into(), mechanism.noise_scale);
    metrics.insert(
        "frac_success".into(),
        success as f64 / config.trials as f64,
    );
    Ok(RunOutcome {
        metrics,
        rows,
        holds: None,
        detail: Value::Null,
    })
}

fn run_monitor_experiment(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: MonitorParams = parse_params(&config.params)?;
    p.mechanism.validate().map_err(CliError::from)?;
    p.analyst.validate().map_err(CliError::from)?;
    let population = uniform_or_pmf(p.universe_size, &p.pmf)?;
    let results = run_trials(config.trials, config.seed, |_, trial_seed| {
        run_monitor(&population, p.n, p.t, p.k, &p.mechanism, &p.analyst, trial_seed)
    });
    let mut rows = Vec::new();
    let mut detections = 0usize;
    let mut pop_errors = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        let r = r.map_err(CliError::from)?;
        rows.push(row(config, t as i64, "pop_error", r.pop_error));
        if r.pop_error > p.alpha {
            detections += 1;
        }
        pop_errors.push(r.pop_error);
    }
    let mut metrics = BTreeMap::new();
    metrics.insert(
        "detection_freq".into(),
        detections as f64 / config.trials as f64,
    );
    metrics.insert("mean_pop_error".into(), mean(&pop_errors));
    Ok(RunOutcome {
        metrics,
        rows,
        holds: None,
        detail: Value::Null,
    })
}

fn run_lemma_sq(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: LemmaSqParams = parse_params(&config.params)?;
    let population = uniform_or_pmf(p.universe_size, &None)?;
    let universe = population.universe().clone();
    let menu = balanced_binary_queries(&universe, p.menu_size, child_seed(config.seed, MENU_SEED_INDEX))
        .map_err(CliError::from)?;
    let selector: Box<dyn SqSelector> = match p.selector.kind {
        SelectorKind::Constant => Box::new(ConstantSqSelector {
            query: menu[0].clone(),
            t_index: 0,
        }),
        SelectorKind::Expmech => Box::new(ExpMechSqSelector {
            eta: p
                .selector
                .eta
                .unwrap_or_else(|| ExpMechSqSelector::eta_for_epsilon(p.eps, p.n)),
            menu,
        }),
        SelectorKind::Argmax => Box::new(ArgmaxSqSelector { menu }),
        SelectorKind::RandomizedResponse => {
            return Err(CliError::Config(
                "randomized response is the TV lemma's selector".into(),
            ))
        }
    };
    let verdict = verify_decorrelated_sq(
        selector.as_ref(),
        &population,
        p.n,
        p.t,
        p.eps,
        p.delta,
        config.trials,
        config.seed,
    )
    .map_err(CliError::from)?;
    finish_verdict(config, verdict, p.expect_violation)
}

fn lowsens_menu(
    universe: &Universe,
    menu_size: usize,
    n: usize,
    with_clamped: bool,
    seed: u64,
) -> CliResult<Vec<LowSensitivityQuery>> {
    let delta_sens = 1.0 / n as f64;
    let scaled = menu_size.saturating_sub(if with_clamped { 2 } else { 0 }).max(1);
    let mut menu =
        balanced_scaled_menu(universe, scaled, n, 1.0, seed).map_err(CliError::from)?;
    if with_clamped {
        menu.push(
            LowSensitivityQuery::clamped_count(universe, 0, 4, delta_sens)
                .map_err(CliError::from)?,
        );
        menu.push(
            LowSensitivityQuery::clamped_count(universe, 1, 4, delta_sens)
                .map_err(CliError::from)?,
        );
    }
    Ok(menu)
}

fn run_lemma_lowsens(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: LemmaLowsensParams = parse_params(&config.params)?;
    let population = uniform_or_pmf(p.universe_size, &None)?;
    let universe = population.universe().clone();
    let delta_sens = 1.0 / p.n as f64;
    let menu = lowsens_menu(
        &universe,
        p.menu_size,
        p.n,
        p.with_clamped,
        child_seed(config.seed, MENU_SEED_INDEX),
    )?;
    let selector: Box<dyn LowSensTSelector> = match p.selector.kind {
        SelectorKind::Constant => Box::new(ConstantLowSensTSelector {
            query: menu[0].clone(),
            t_index: 0,
        }),
        SelectorKind::Expmech => Box::new(ExpMechLowSensTSelector {
            eta: p.selector.eta.unwrap_or(p.eps / (2.0 * delta_sens)),
            menu,
        }),
        SelectorKind::Argmax => Box::new(ArgmaxLowSensTSelector { menu }),
        SelectorKind::RandomizedResponse => {
            return Err(CliError::Config(
                "randomized response is the TV lemma's selector".into(),
            ))
        }
    };
    let verdict = verify_decorrelated_lowsens(
        selector.as_ref(),
        &population,
        p.n,
        p.t,
        p.eps,
        p.delta,
        delta_sens,
        config.trials,
        config.seed,
    )
    .map_err(CliError::from)?;
    finish_verdict(config, verdict, p.expect_violation)
}

fn run_lemma_tv(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: LemmaTvParams = parse_params(&config.params)?;
    let population = uniform_or_pmf(p.universe_size, &None)?;
    let universe = population.universe().clone();
    let delta_sens = 1.0 / p.n as f64;
    let menu = balanced_scaled_menu(
        &universe,
        2,
        p.n,
        1.0,
        child_seed(config.seed, MENU_SEED_INDEX),
    )
    .map_err(CliError::from)?;
    let (selector, eps_tv): (Box<dyn LowSensSelector>, f64) = match p.selector.kind {
        SelectorKind::RandomizedResponse => {
            let rr = RandomizedResponseSelector {
                first: menu[0].clone(),
                second: menu[1].clone(),
                stay_prob: p.stay_prob,
            };
            let eps = rr.tv_parameter();
            (Box::new(rr), eps)
        }
        SelectorKind::Constant => (
            Box::new(ConstantLowSensSelector { query: menu[0].clone() }),
            p.claimed_eps_tv,
        ),
        SelectorKind::Argmax => (Box::new(ArgmaxLowSensSelector { menu }), p.claimed_eps_tv),
        SelectorKind::Expmech => {
            return Err(CliError::Config(
                "use the sq or lowsens lemma for exponential-mechanism selectors".into(),
            ))
        }
    };
    let verdict = verify_decorrelated_tv(
        selector.as_ref(),
        &population,
        p.n,
        eps_tv,
        delta_sens,
        config.trials,
        config.seed,
    )
    .map_err(CliError::from)?;
    finish_verdict(config, verdict, p.expect_violation)
}

fn run_em_utility(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: EmUtilityParams = parse_params(&config.params)?;
    let mut metrics = BTreeMap::new();
    let holds;
    let detail;
    match (p.f_values, p.eta) {
        (Some(values), Some(eta)) => {
            let verdict = verify_em_utility(&values, eta).map_err(CliError::from)?;
            verdict_metrics(&mut metrics, &verdict);
            holds = verdict.holds_within_ci;
            detail = serde_json::to_value(verdict).unwrap_or(Value::Null);
        }
        (None, None) => {
            let passes = asl_core::harness::em_utility_sweep(p.instances, p.max_size, config.seed)
                .map_err(CliError::from)?;
            metrics.insert("instances".into(), p.instances as f64);
            metrics.insert("passes".into(), passes as f64);
            holds = passes == p.instances;
            detail = Value::Null;
        }
        _ => {
            return Err(CliError::Config(
                "give both f_values and eta for a single instance, or neither for the sweep"
                    .into(),
            ))
        }
    }
    metrics.insert("holds".into(), f64::from(u8::from(holds)));
    Ok(RunOutcome {
        metrics,
        rows: Vec::new(),
        holds: Some(holds),
        detail,
    })
}

fn run_lower_bound(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: LowerBoundParams = parse_params(&config.params)?;
    let report = run_lower_bound_demo(
        p.alpha,
        p.delta,
        p.n,
        p.delta_sens,
        config.trials,
        config.seed,
    )
    .map_err(CliError::from)?;
    let holds = (report.freq - report.exact).abs() <= p.exact_tolerance
        && report.freq >= report.bound;
    let mut metrics = BTreeMap::new();
    metrics.insert("freq".into(), report.freq);
    metrics.insert("ci_halfwidth".into(), report.ci_halfwidth);
    metrics.insert("bound".into(), report.bound);
    metrics.insert("exact".into(), report.exact);
    metrics.insert("blocks".into(), report.blocks as f64);
    metrics.insert("holds".into(), f64::from(u8::from(holds)));
    Ok(RunOutcome {
        metrics,
        rows: Vec::new(),
        holds: Some(holds),
        detail: serde_json::to_value(report).unwrap_or(Value::Null),
    })
}

fn run_generalization(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: GeneralizationParams = parse_params(&config.params)?;
    let population = uniform_or_pmf(p.universe_size, &None)?;
    let universe = population.universe().clone();
    let delta_sens = 1.0 / p.n as f64;
    let menu = balanced_scaled_menu(
        &universe,
        p.menu_size,
        p.n,
        1.0,
        child_seed(config.seed, MENU_SEED_INDEX),
    )
    .map_err(CliError::from)?;
    let selector: Box<dyn LowSensSelector> = match p.selector.kind {
        SelectorKind::Expmech => Box::new(ExpMechLowSensSelector {
            eta: p.selector.eta.unwrap_or(p.eps / (2.0 * delta_sens)),
            menu,
        }),
        SelectorKind::Argmax => Box::new(ArgmaxLowSensSelector { menu }),
        SelectorKind::Constant => Box::new(ConstantLowSensSelector { query: menu[0].clone() }),
        SelectorKind::RandomizedResponse => {
            return Err(CliError::Config(
                "randomized response is the TV lemma's selector".into(),
            ))
        }
    };
    let verdict = run_generalization_check(
        selector.as_ref(),
        &population,
        p.n,
        p.eps,
        p.delta,
        delta_sens,
        config.trials,
        config.seed,
        p.require_hypothesis,
    )
    .map_err(CliError::from)?;
    finish_verdict(config, verdict, p.expect_violation)
}

fn run_plan(config: &ExperimentConfig) -> CliResult<RunOutcome> {
    let p: PlanParams = parse_params(&config.params)?;
    let plan = plan_transfer(p.alpha, p.beta, p.delta_sens, p.n, p.k, p.variant)
        .map_err(CliError::from)?;
    let mut metrics = BTreeMap::new();
    metrics.insert("epsilon".into(), plan.required_budget.epsilon);
    metrics.insert("delta".into(), plan.required_budget.delta);
    metrics.insert("alpha_prime".into(), plan.required_sample_accuracy.0);
    metrics.insert("beta_prime".into(), plan.required_sample_accuracy.1);
    metrics.insert(
        "laplace_feasible".into(),
        f64::from(u8::from(plan.laplace_feasible)),
    );
    let mut detail = serde_json::to_value(&plan)
        .map_err(|e| CliError::Runtime(format!("plan serialization: {e}")))?;
    if let Some(t) = p.table {
        let count = sample_complexity(t.family, t.regime, t.k, t.alpha, t.beta, t.universe_size, t.d)
            .map_err(CliError::from)?;
        metrics.insert("table_n".into(), count as f64);
        if let Value::Object(map) = &mut detail {
            map.insert("table_n".into(), Value::from(count));
        }
    }
    Ok(RunOutcome {
        metrics,
        rows: Vec::new(),
        holds: None,
        detail,
    })
}

fn finish_verdict(
    config: &ExperimentConfig,
    verdict: LemmaVerdict,
    expect_violation: bool,
) -> CliResult<RunOutcome> {
    let mut metrics = BTreeMap::new();
    verdict_metrics(&mut metrics, &verdict);
    metrics.insert(
        "expect_violation".into(),
        f64::from(u8::from(expect_violation)),
    );
    let rows = metrics
        .iter()
        .map(|(k, v)| row(config, -1, k, *v))
        .collect();
    Ok(RunOutcome {
        metrics,
        rows,
        holds: Some(gate(verdict.holds_within_ci, expect_violation)),
        detail: serde_json::to_value(verdict).unwrap_or(Value::Null),
    })
}

fn row(config: &ExperimentConfig, trial: i64, metric: &str, value: f64) -> CsvRow {
    CsvRow {
        experiment: config.experiment.clone(),
        seed: config.seed,
        trial,
        metric: metric.to_string(),
        value,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

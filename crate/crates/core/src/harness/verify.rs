//! Monte Carlo and exact verifiers for the de-correlated expectation
//! bounds, the selection-utility bound, the generalization bound, and the
//! leak-and-query lower-bound construction.
//!
//! Every verifier reports an estimate with a 95% confidence half-width and
//! a verdict; "holds" means the estimate does not exceed the bound by more
//! than the half-width. Negative controls are expected to fail their
//! bounds, and the test suites assert that they do.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::selectors::{LowSensSelector, LowSensTSelector, SqSelector};
use crate::query::LowSensitivityQuery;
use crate::seed::{child_seed, rng_from_seed};
use crate::stats::{freq_ci, mean_ci, run_trials};
use crate::universe::Distribution;

/// Inner Monte Carlo budget used to estimate a selected query's population
/// value when it has no closed form.
const POPULATION_INNER_TRIALS: usize = 64;

/// Minimum trial count for a meaningful confidence interval.
const MIN_TRIALS: usize = 100;

/// Outcome of one verifier run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub bound: f64,
    pub holds_within_ci: bool,
    pub trials: usize,
}

impl LemmaVerdict {
    fn from_values(values: &[f64], bound: f64) -> Self {
        let (estimate, ci_halfwidth) = mean_ci(values);
        Self {
            estimate,
            ci_halfwidth,
            bound,
            holds_within_ci: estimate.abs() <= bound + ci_halfwidth,
            trials: values.len(),
        }
    }

    fn from_freq(hits: usize, trials: usize, bound: f64) -> Self {
        let (estimate, ci_halfwidth) = freq_ci(hits, trials);
        Self {
            estimate,
            ci_halfwidth,
            bound,
            holds_within_ci: estimate <= bound + ci_halfwidth,
            trials,
        }
    }

    fn exact(estimate: f64, bound: f64) -> Self {
        Self {
            estimate,
            ci_halfwidth: 0.0,
            bound,
            holds_within_ci: estimate.abs() <= bound,
            trials: 1,
        }
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        Err(Error::InvalidConfig(format!(
            "refusing to run {trials} trials; confidence intervals need at least {MIN_TRIALS}"
        )))
    } else {
        Ok(())
    }
}

/// Statistical-query de-correlated expectation: for an (eps, delta)-max-KL
/// stable `W : (X^n)^T -> Q x [T]`, the selected query satisfies
/// `|E[q(P)] - E[q(x_t)]| <= e^eps - 1 + T delta`.
#[allow(clippy::too_many_arguments)]
pub fn verify_decorrelated_sq(
    selector: &dyn SqSelector,
    population: &Distribution,
    n: usize,
    t_count: usize,
    eps: f64,
    delta: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaVerdict> {
    check_trials(trials)?;
    if t_count == 0 {
        return Err(Error::InvalidConfig("T must be >= 1".into()));
    }
    let diffs = run_trials(trials, seed, |_, trial_seed| -> Result<f64> {
        let mut rng = rng_from_seed(trial_seed);
        let samples: Vec<_> = (0..t_count)
            .map(|_| population.sample(n, &mut rng))
            .collect::<Result<_>>()?;
        let (query, t) = selector.select(&samples, &mut rng)?;
        Ok(query.eval_population(population)? - query.eval_sample(&samples[t])?)
    });
    let diffs: Vec<f64> = diffs.into_iter().collect::<Result<_>>()?;
    let bound = eps.exp() - 1.0 + t_count as f64 * delta;
    Ok(LemmaVerdict::from_values(&diffs, bound))
}

/// Low-sensitivity de-correlated expectation, bound
/// `2 (e^eps - 1 + T delta) Delta n`.
#[allow(clippy::too_many_arguments)]
pub fn verify_decorrelated_lowsens(
    selector: &dyn LowSensTSelector,
    population: &Distribution,
    n: usize,
    t_count: usize,
    eps: f64,
    delta: f64,
    delta_sens: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaVerdict> {
    check_trials(trials)?;
    if t_count == 0 {
        return Err(Error::InvalidConfig("T must be >= 1".into()));
    }
    let diffs = run_trials(trials, seed, |_, trial_seed| -> Result<f64> {
        let mut rng = rng_from_seed(trial_seed);
        let samples: Vec<_> = (0..t_count)
            .map(|_| population.sample(n, &mut rng))
            .collect::<Result<_>>()?;
        let (query, t) = selector.select(&samples, &mut rng)?;
        let (pop, _) = query.population_value(
            population,
            n,
            POPULATION_INNER_TRIALS,
            child_seed(trial_seed, 1),
        )?;
        Ok(pop - query.eval(&samples[t]))
    });
    let diffs: Vec<f64> = diffs.into_iter().collect::<Result<_>>()?;
    let bound = 2.0 * (eps.exp() - 1.0 + t_count as f64 * delta) * delta_sens * n as f64;
    Ok(LemmaVerdict::from_values(&diffs, bound))
}

/// Total-variation de-correlated expectation: for an eps-TV stable
/// `W : X^n -> Q`, `|E[q(P)] - E[q(x)]| <= 2 eps Delta n`.
pub fn verify_decorrelated_tv(
    selector: &dyn LowSensSelector,
    population: &Distribution,
    n: usize,
    eps_tv: f64,
    delta_sens: f64,
    trials: usize,
    seed: u64,
) -> Result<LemmaVerdict> {
    check_trials(trials)?;
    let diffs = run_trials(trials, seed, |_, trial_seed| -> Result<f64> {
        let mut rng = rng_from_seed(trial_seed);
        let x = population.sample(n, &mut rng)?;
        let query = selector.select(&x, &mut rng)?;
        let (pop, _) = query.population_value(
            population,
            n,
            POPULATION_INNER_TRIALS,
            child_seed(trial_seed, 1),
        )?;
        Ok(pop - query.eval(&x))
    });
    let diffs: Vec<f64> = diffs.into_iter().collect::<Result<_>>()?;
    let bound = 2.0 * eps_tv * delta_sens * n as f64;
    Ok(LemmaVerdict::from_values(&diffs, bound))
}

/// Expected value of `f` under the softmax draw with weight
/// `exp(eta * f)`, computed exactly (no sampling).
pub fn em_expected_value(f_values: &[f64], eta: f64) -> Result<f64> {
    if f_values.is_empty() {
        return Err(Error::InvalidConfig("the outcome set must be nonempty".into()));
    }
    if f_values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax scores".into()));
    }
    let max = f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut normalizer = 0.0;
    let mut weighted = 0.0;
    for &v in f_values {
        let w = (eta * (v - max)).exp();
        normalizer += w;
        weighted += v * w;
    }
    Ok(weighted / normalizer)
}

/// Exact verification of the selection-utility bound
/// `E[f(X)] >= max f - ln|F| / eta` for the softmax draw. The verdict's
/// estimate is the expected suboptimality gap `max f - E[f(X)]`, checked
/// against the bound `ln|F| / eta` with zero confidence width.
pub fn verify_em_utility(f_values: &[f64], eta: f64) -> Result<LemmaVerdict> {
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::OutOfRange(format!("eta {eta} must be positive and finite")));
    }
    let expected = em_expected_value(f_values, eta)?;
    let max = f_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gap = max - expected;
    let bound = (f_values.len() as f64).ln() / eta;
    Ok(LemmaVerdict::exact(gap, bound))
}

/// Randomized sweep of [`verify_em_utility`]: draws `instances` cases with
/// set size up to `max_size`, values uniform in `[-10, 10]`, and eta
/// log-uniform in `[0.01, 100]`. Returns the number of instances on which
/// the bound holds.
pub fn em_utility_sweep(instances: usize, max_size: usize, seed: u64) -> Result<usize> {
    let mut rng = rng_from_seed(seed);
    let mut passes = 0;
    for _ in 0..instances {
        let size = rng.random_range(1..=max_size.max(1));
        let f_values: Vec<f64> = (0..size).map(|_| rng.random::<f64>() * 20.0 - 10.0).collect();
        let eta = 10f64.powf(rng.random::<f64>() * 4.0 - 2.0);
        if verify_em_utility(&f_values, eta)?.holds_within_ci {
            passes += 1;
        }
    }
    Ok(passes)
}

/// Universe size used by the lower-bound demo: the uniform distribution on
/// [0,1] discretized to 2^20 points. The leaked indicator then has mass up
/// to n/2^20 instead of exactly 0; that mass is folded into the detection
/// threshold.
pub const LOWER_BOUND_UNIVERSE: u32 = 1 << 20;

/// Result of the lower-bound demonstration.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LowerBoundReport {
    /// Measured frequency of `q_p(X) - q_p(U) >= alpha Delta n`.
    pub freq: f64,
    pub ci_halfwidth: f64,
    /// The guaranteed lower bound `delta / (2 alpha)`.
    pub bound: f64,
    /// The exact success probability `1 - (1 - delta)^blocks`.
    pub exact: f64,
    pub blocks: usize,
    pub trials: usize,
}

/// The leak-and-query construction: split the sample into `1/alpha` blocks
/// of `alpha n` elements, release each block with probability `delta`
/// (a (0, delta)-max-KL stable step), and return the indicator query of
/// the released elements scaled by the sensitivity. Whenever any block
/// leaks, the query overfits by at least `alpha Delta n`.
pub fn run_lower_bound_demo(
    alpha: f64,
    delta: f64,
    n: usize,
    delta_sens: f64,
    trials: usize,
    seed: u64,
) -> Result<LowerBoundReport> {
    check_trials(trials)?;
    if alpha.is_nan() || alpha <= 0.0 || alpha > 1.0 {
        return Err(Error::OutOfRange(format!("alpha {alpha} must lie in (0, 1]")));
    }
    if delta.is_nan() || delta < 0.0 || delta >= alpha {
        return Err(Error::OutOfRange(format!(
            "delta {delta} must satisfy 0 <= delta < alpha = {alpha}"
        )));
    }
    if !delta_sens.is_finite() || delta_sens <= 0.0 {
        return Err(Error::OutOfRange("the sensitivity must be positive".into()));
    }
    if (n as f64) < 1.0 / alpha {
        return Err(Error::OutOfRange(format!("n {n} must be at least 1/alpha")));
    }
    let blocks = ((1.0 / alpha) + 1e-9).floor() as usize;
    let block_size = ((alpha * n as f64) + 1e-9).floor() as usize;
    if blocks == 0 || block_size == 0 || blocks * block_size > n {
        return Err(Error::OutOfRange(format!(
            "cannot split n = {n} into {blocks} blocks of {block_size}"
        )));
    }
    let universe = LOWER_BOUND_UNIVERSE as f64;
    let threshold = alpha * delta_sens * n as f64;
    // q_p(U) never exceeds the support mass Delta * n * n / |X|
    let tolerance = delta_sens * n as f64 * (n as f64 / universe);
    if threshold <= tolerance {
        return Err(Error::OutOfRange(
            "alpha too small for the discretized universe".into(),
        ));
    }

    let hits = run_trials(trials, seed, |_, trial_seed| {
        let mut rng = rng_from_seed(trial_seed);
        let x: Vec<u32> = (0..n)
            .map(|_| rng.random_range(0..LOWER_BOUND_UNIVERSE))
            .collect();
        let mut support: HashSet<u32> = HashSet::new();
        for b in 0..blocks {
            if rng.random::<f64>() < delta {
                support.extend(&x[b * block_size..(b + 1) * block_size]);
            }
        }
        let q_x = delta_sens * x.iter().filter(|e| support.contains(e)).count() as f64;
        let q_u = delta_sens * n as f64 * (support.len() as f64 / universe);
        q_x - q_u >= threshold - tolerance
    });
    let hit_count = hits.iter().filter(|&&h| h).count();
    let (freq, ci_halfwidth) = freq_ci(hit_count, trials);
    Ok(LowerBoundReport {
        freq,
        ci_halfwidth,
        bound: delta / (2.0 * alpha),
        exact: 1.0 - (1.0 - delta).powi(blocks as i32),
        blocks,
        trials,
    })
}

/// Generalization check: for an (eps, delta)-max-KL stable selector of
/// Delta-sensitive queries and `n >= (1/eps^2) ln(4 eps / delta)`, the
/// frequency of `|q(P) - q(x)| >= 18 eps Delta n` stays below
/// `delta / eps`. Pass `require_hypothesis = false` to run negative
/// controls at hypothesis-violating parameters.
#[allow(clippy::too_many_arguments)]
pub fn run_generalization_check(
    selector: &dyn LowSensSelector,
    population: &Distribution,
    n: usize,
    eps: f64,
    delta: f64,
    delta_sens: f64,
    trials: usize,
    seed: u64,
    require_hypothesis: bool,
) -> Result<LemmaVerdict> {
    check_trials(trials)?;
    if eps.is_nan() || delta.is_nan() || eps <= 0.0 || delta <= 0.0 {
        return Err(Error::OutOfRange("eps and delta must be positive".into()));
    }
    if require_hypothesis {
        if eps >= 1.0 / 3.0 || delta >= eps / 4.0 {
            return Err(Error::OutOfRange(format!(
                "hypothesis needs eps in (0, 1/3) and delta in (0, eps/4); got ({eps}, {delta})"
            )));
        }
        let needed = (1.0 / (eps * eps)) * (4.0 * eps / delta).ln();
        if (n as f64) < needed {
            return Err(Error::OutOfRange(format!(
                "hypothesis needs n >= {needed:.1}, got {n}"
            )));
        }
    }
    let threshold = 18.0 * eps * delta_sens * n as f64;
    let hits = run_trials(trials, seed, |_, trial_seed| -> Result<bool> {
        let mut rng = rng_from_seed(trial_seed);
        let x = population.sample(n, &mut rng)?;
        let query = selector.select(&x, &mut rng)?;
        let (pop, _) = query.population_value(
            population,
            n,
            POPULATION_INNER_TRIALS,
            child_seed(trial_seed, 1),
        )?;
        Ok((pop - query.eval(&x)).abs() >= threshold)
    });
    let hits: Vec<bool> = hits.into_iter().collect::<Result<_>>()?;
    let hit_count = hits.iter().filter(|&&h| h).count();
    Ok(LemmaVerdict::from_freq(hit_count, trials, delta / eps))
}

/// Menu helper: random {0,1} tables with exactly half the entries set, so
/// every menu entry has population value 1/2 under the uniform
/// distribution. Selection bias then shows up purely as sample deviation.
pub fn balanced_binary_queries(
    universe: &crate::universe::Universe,
    count: usize,
    seed: u64,
) -> Result<Vec<crate::query::StatisticalQuery>> {
    let size = universe.size();
    if !size.is_multiple_of(2) {
        return Err(Error::InvalidConfig("balanced menus need an even universe".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut menu = Vec::with_capacity(count);
    for _ in 0..count {
        let mut idx: Vec<usize> = (0..size).collect();
        // Fisher-Yates; first half gets value 1
        for i in (1..size).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let mut table = vec![0.0; size];
        for &i in idx.iter().take(size / 2) {
            table[i] = 1.0;
        }
        menu.push(crate::query::StatisticalQuery::new(universe.clone(), table)?);
    }
    Ok(menu)
}

/// The same balanced menu lifted to the low-sensitivity family at scale
/// `scale` (sensitivity `scale/n`).
pub fn balanced_scaled_menu(
    universe: &crate::universe::Universe,
    count: usize,
    n: usize,
    scale: f64,
    seed: u64,
) -> Result<Vec<LowSensitivityQuery>> {
    Ok(balanced_binary_queries(universe, count, seed)?
        .into_iter()
        .map(|sq| LowSensitivityQuery::from_sq_scaled(sq, n, scale))
        .collect())
}

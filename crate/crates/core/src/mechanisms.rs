//! Interactive answering mechanisms.
//!
//! A mechanism holds a sample, answers adaptively chosen queries one at a
//! time, and claims a per-interaction stability budget. Budget exhaustion
//! is a refusal error rather than silent degradation so that game runners
//! can detect over-asking.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as RandDistribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::{MinimizationQuery, StatisticalQuery};
use crate::seed::rng_from_seed;
use crate::stability::{compose_advanced, compose_basic, StabilityBudget};
use crate::universe::{check_same_universe, Sample};

/// Private multiplicative weights constants. The defaults correspond to a
/// target accuracy of 0.2 via threshold = alpha/2 and update rate =
/// alpha/4; tuned empirically, overridable per run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PmwParams {
    pub threshold: f64,
    pub update_rate: f64,
    pub failure_budget: usize,
}

impl Default for PmwParams {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            update_rate: 0.05,
            failure_budget: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Empirical,
    Laplace,
    Gaussian,
    Pmw,
    ExpmechMin,
}

/// Static configuration of a mechanism. `noise_scale` is the Laplace b or
/// the Gaussian sigma; for PMW it is the Laplace scale of both the answer
/// noise and the threshold noise (the per-round budget split evenly
/// between the two).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub pmw_params: PmwParams,
    #[serde(default)]
    pub expmech_eta: Option<f64>,
    pub k_max: usize,
    #[serde(default)]
    pub truncation: bool,
}

impl MechanismConfig {
    pub fn empirical(k_max: usize) -> Self {
        Self {
            kind: MechanismKind::Empirical,
            noise_scale: 0.0,
            pmw_params: PmwParams::default(),
            expmech_eta: None,
            k_max,
            truncation: false,
        }
    }

    pub fn laplace(noise_scale: f64, k_max: usize) -> Self {
        Self {
            kind: MechanismKind::Laplace,
            noise_scale,
            ..Self::empirical(k_max)
        }
    }

    pub fn gaussian(noise_scale: f64, k_max: usize) -> Self {
        Self {
            kind: MechanismKind::Gaussian,
            noise_scale,
            ..Self::empirical(k_max)
        }
    }

    pub fn pmw(noise_scale: f64, params: PmwParams, k_max: usize) -> Self {
        Self {
            kind: MechanismKind::Pmw,
            noise_scale,
            pmw_params: params,
            ..Self::empirical(k_max)
        }
    }

    pub fn expmech(eta: f64, k_max: usize) -> Self {
        Self {
            kind: MechanismKind::ExpmechMin,
            expmech_eta: Some(eta),
            ..Self::empirical(k_max)
        }
    }

    pub fn with_truncation(mut self) -> Self {
        self.truncation = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_scale {} must be a finite nonnegative real",
                self.noise_scale
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be >= 1".into()));
        }
        if let Some(eta) = self.expmech_eta {
            if !eta.is_finite() || eta < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "expmech_eta {eta} must be a finite nonnegative real"
                )));
            }
        }
        let p = &self.pmw_params;
        if !(p.threshold.is_finite() && p.threshold >= 0.0)
            || !(p.update_rate.is_finite() && p.update_rate >= 0.0)
        {
            return Err(Error::InvalidConfig("pmw threshold and update rate must be >= 0".into()));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        match self.kind {
            MechanismKind::Empirical => "empirical".into(),
            MechanismKind::Laplace => format!("laplace(b={})", self.noise_scale),
            MechanismKind::Gaussian => format!("gaussian(sigma={})", self.noise_scale),
            MechanismKind::Pmw => format!("pmw(b={})", self.noise_scale),
            MechanismKind::ExpmechMin => {
                format!("expmech(eta={})", self.expmech_eta.unwrap_or(0.0))
            }
        }
    }
}

#[derive(Clone, Debug)]
struct PmwState {
    weights: Vec<f64>,
    updates: usize,
}

/// A mechanism instance bound to one sample for one interaction. Confined
/// to a single game run; distinct runs use distinct states.
#[derive(Clone, Debug)]
pub struct MechanismState {
    sample: Sample,
    config: MechanismConfig,
    answered: usize,
    pmw: Option<PmwState>,
    rng: ChaCha8Rng,
}

impl MechanismState {
    pub fn new(sample: Sample, config: MechanismConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let pmw = if config.kind == MechanismKind::Pmw {
            let m = sample.universe().size();
            Some(PmwState {
                weights: vec![1.0 / m as f64; m],
                updates: 0,
            })
        } else {
            None
        };
        Ok(Self {
            sample,
            config,
            answered: 0,
            pmw,
            rng: rng_from_seed(seed),
        })
    }

    pub fn answered(&self) -> usize {
        self.answered
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn pmw_updates(&self) -> usize {
        self.pmw.as_ref().map_or(0, |s| s.updates)
    }

    /// Current PMW synthetic answer for a query, without consuming budget
    /// or noise. Deterministic in the current weights.
    pub fn pmw_synthetic_answer(&self, query: &StatisticalQuery) -> Result<f64> {
        let st = self
            .pmw
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("not a pmw mechanism".into()))?;
        check_same_universe(query.universe(), self.sample.universe(), "pmw synthetic answer")?;
        Ok(synthetic_answer(&st.weights, query.table()))
    }

    fn check_budget(&self) -> Result<()> {
        if self.answered >= self.config.k_max {
            Err(Error::BudgetExhausted(self.config.k_max))
        } else {
            Ok(())
        }
    }

    /// Answer a statistical query.
    pub fn answer_sq(&mut self, query: &StatisticalQuery) -> Result<f64> {
        self.check_budget()?;
        check_same_universe(query.universe(), self.sample.universe(), "answer_sq")?;
        let empirical = query.eval_sample(&self.sample)?;
        let raw = match self.config.kind {
            MechanismKind::Empirical => empirical,
            MechanismKind::Laplace => {
                empirical + sample_laplace(&mut self.rng, self.config.noise_scale)
            }
            MechanismKind::Gaussian => {
                let normal = Normal::new(0.0, self.config.noise_scale)
                    .map_err(|e| Error::InvalidConfig(format!("gaussian noise: {e}")))?;
                empirical + normal.sample(&mut self.rng)
            }
            MechanismKind::Pmw => self.pmw_answer(query, empirical)?,
            MechanismKind::ExpmechMin => {
                return Err(Error::Unsupported(
                    "the exponential-mechanism configuration answers minimization queries only"
                        .into(),
                ))
            }
        };
        let answer = if self.config.truncation {
            // interval of width 2 * Delta * n centered at the empirical
            // answer; Delta = 1/n for statistical queries
            let n = self.sample.len() as f64;
            let half_width = (1.0 / n) * n;
            raw.clamp(empirical - half_width, empirical + half_width)
        } else {
            raw
        };
        self.answered += 1;
        Ok(answer)
    }

    fn pmw_answer(&mut self, query: &StatisticalQuery, empirical: f64) -> Result<f64> {
        let params = self.config.pmw_params;
        let b = self.config.noise_scale;
        let st = self.pmw.as_mut().expect("pmw state exists for pmw kind");
        let synthetic = synthetic_answer(&st.weights, query.table());
        let noisy_empirical = empirical + sample_laplace(&mut self.rng, b);
        let noisy_threshold = params.threshold + sample_laplace(&mut self.rng, b);
        if (noisy_empirical - synthetic).abs() <= noisy_threshold {
            return Ok(synthetic);
        }
        if st.updates >= params.failure_budget {
            return Err(Error::UpdateBudgetExhausted(params.failure_budget));
        }
        let sign = if noisy_empirical > synthetic { 1.0 } else { -1.0 };
        let mut total = 0.0;
        for (w, &qz) in st.weights.iter_mut().zip(query.table()) {
            *w *= (sign * params.update_rate * qz).exp();
            total += *w;
        }
        for w in st.weights.iter_mut() {
            *w /= total;
        }
        st.updates += 1;
        Ok(noisy_empirical)
    }

    /// Answer a minimization query with the exponential mechanism: theta is
    /// drawn with probability proportional to `exp(-eta * L(x; theta))`.
    /// With `eta = eps / (2 Delta)` the draw is (eps, 0)-max-KL stable.
    pub fn answer_min(&mut self, query: &MinimizationQuery) -> Result<usize> {
        self.check_budget()?;
        let eta = self.config.expmech_eta.ok_or_else(|| {
            Error::InvalidConfig("expmech_eta must be set to answer minimization queries".into())
        })?;
        let losses = query.losses(&self.sample)?;
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = losses.iter().map(|&l| (-eta * (l - min)).exp()).collect();
        let theta = sample_categorical(&mut self.rng, &weights);
        self.answered += 1;
        Ok(theta)
    }
}

fn synthetic_answer(weights: &[f64], table: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .zip(table)
        .map(|(&w, &q)| w * q)
        .sum::<f64>()
        / total
}

/// Inverse-CDF Laplace sampling; scale 0 yields exactly 0.
fn sample_laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    let u: f64 = rng.random::<f64>() - 0.5;
    let w = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * w.ln()
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// The per-k-query budget a configuration guarantees for answering
/// Delta-sensitive queries on samples of size n.
///
/// Per-query budgets: Laplace `(Delta/b, 0)`; Gaussian `(eps0, delta0)`
/// with `eps0 = Delta sqrt(2 ln(1.25/delta0)) / sigma` and `delta0` set to
/// `delta_prime`; exponential mechanism `(2 eta Delta, 0)`; PMW
/// `(2 Delta / b, 0)` per update (answer plus threshold noise at equal
/// scale), composed over its update budget. Composition uses the advanced
/// formula with slack `delta_prime` for k >= 2 when the per-query epsilon
/// allows it, and basic composition otherwise. Never errors: configurations
/// with no guarantee report the vacuous budget (infinity, 1).
pub fn claimed_budget(
    config: &MechanismConfig,
    delta_sens: f64,
    _n: usize,
    k: usize,
    delta_prime: f64,
) -> StabilityBudget {
    match config.kind {
        MechanismKind::Empirical => StabilityBudget::none(),
        MechanismKind::Laplace => {
            if config.noise_scale <= 0.0 {
                return StabilityBudget::none();
            }
            compose_capped(delta_sens / config.noise_scale, 0.0, k, delta_prime)
        }
        MechanismKind::Gaussian => {
            if config.noise_scale <= 0.0 || !(0.0..1.0).contains(&delta_prime) {
                return StabilityBudget::none();
            }
            let delta0 = delta_prime;
            let eps0 = delta_sens * (2.0 * (1.25 / delta0).ln()).sqrt() / config.noise_scale;
            compose_capped(eps0, delta0, k, delta_prime)
        }
        MechanismKind::Pmw => {
            if config.noise_scale <= 0.0 {
                return StabilityBudget::none();
            }
            let eps_update = 2.0 * delta_sens / config.noise_scale;
            compose_capped(
                eps_update,
                0.0,
                config.pmw_params.failure_budget.max(1),
                delta_prime,
            )
        }
        MechanismKind::ExpmechMin => {
            let eta = config.expmech_eta.unwrap_or(f64::INFINITY);
            if !eta.is_finite() {
                return StabilityBudget::none();
            }
            compose_capped(2.0 * eta * delta_sens, 0.0, k, delta_prime)
        }
    }
}

fn compose_capped(eps0: f64, delta0: f64, k: usize, delta_prime: f64) -> StabilityBudget {
    if !eps0.is_finite() {
        return StabilityBudget::none();
    }
    if k <= 1 || eps0 > 1.0 {
        compose_basic(eps0, delta0, k)
    } else {
        compose_advanced(eps0, delta0, k, delta_prime)
            .expect("arguments checked to be in the formula's domain")
    }
}

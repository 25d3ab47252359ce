//! The (epsilon, delta) stability algebra: adaptive composition, inverse
//! calibration, transfer-theorem parameter planning, and the
//! sample-complexity planner.
//!
//! Logarithms are natural throughout, matching the composition theorem the
//! budgets come from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An (epsilon, delta) stability budget. `epsilon` may be infinite (no
/// guarantee); `delta` lives in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl StabilityBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::OutOfRange(format!("epsilon {epsilon} must be >= 0")));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::OutOfRange(format!("delta {delta} must be in [0, 1]")));
        }
        Ok(Self { epsilon, delta })
    }

    /// The vacuous budget: no stability at all.
    pub fn none() -> Self {
        Self {
            epsilon: f64::INFINITY,
            delta: 1.0,
        }
    }

    pub fn is_vacuous(&self) -> bool {
        self.epsilon.is_infinite() || self.delta >= 1.0
    }

    /// Componentwise comparison.
    pub fn within(&self, target: &StabilityBudget) -> bool {
        self.epsilon <= target.epsilon && self.delta <= target.delta
    }
}

/// k-fold adaptive composition: a per-query (eps0, delta0) interaction run
/// for k queries remains
/// `(eps0 * sqrt(k ln(1/delta')) + 2 eps0^2 k, delta' + k delta0)`-stable.
/// Requires `0 <= eps0 <= 1` and `delta' > 0`.
pub fn compose_advanced(
    eps0: f64,
    delta0: f64,
    k: usize,
    delta_prime: f64,
) -> Result<StabilityBudget> {
    if !(0.0..=1.0).contains(&eps0) {
        return Err(Error::OutOfRange(format!(
            "per-query epsilon {eps0} outside [0, 1], the composition formula's hypothesis"
        )));
    }
    if !(0.0..=1.0).contains(&delta0) {
        return Err(Error::OutOfRange(format!("per-query delta {delta0} outside [0, 1]")));
    }
    if delta_prime.is_nan() || delta_prime <= 0.0 {
        return Err(Error::OutOfRange(format!("delta' {delta_prime} must be positive")));
    }
    let kf = k as f64;
    let epsilon = eps0 * (kf * (1.0 / delta_prime).ln()).sqrt() + 2.0 * eps0 * eps0 * kf;
    StabilityBudget::new(epsilon, (delta_prime + kf * delta0).min(1.0))
}

/// Basic (linear) composition, valid for any eps0.
pub fn compose_basic(eps0: f64, delta0: f64, k: usize) -> StabilityBudget {
    StabilityBudget {
        epsilon: eps0 * k as f64,
        delta: (delta0 * k as f64).min(1.0),
    }
}

/// Bisection tolerance for [`calibrate_per_query`].
pub const CALIBRATION_TOLERANCE: f64 = 1e-12;

/// Invert the composition formula: the largest per-query `eps0 <= 1` such
/// that k-fold composition stays within `target`, with
/// `delta0 = (target.delta - delta_split) / k`.
pub fn calibrate_per_query(
    target: StabilityBudget,
    k: usize,
    delta_split: f64,
) -> Result<(f64, f64)> {
    if !target.epsilon.is_finite() {
        return Err(Error::OutOfRange("target epsilon must be finite".into()));
    }
    if target.epsilon < 0.0 {
        return Err(Error::Infeasible(format!(
            "target epsilon {} is negative",
            target.epsilon
        )));
    }
    if delta_split.is_nan() || delta_split <= 0.0 || delta_split >= target.delta {
        return Err(Error::OutOfRange(format!(
            "delta split {delta_split} must lie strictly between 0 and the target delta {}",
            target.delta
        )));
    }
    if k == 0 {
        return Err(Error::OutOfRange("k must be >= 1".into()));
    }
    let mut delta0 = (target.delta - delta_split) / k as f64;
    // guard against the division rounding up past the target
    while delta_split + k as f64 * delta0 > target.delta {
        delta0 *= 1.0 - f64::EPSILON;
    }
    if target.epsilon == 0.0 {
        return Ok((0.0, delta0));
    }
    let total = |eps0: f64| -> f64 {
        compose_advanced(eps0, delta0, k, delta_split)
            .expect("bisection stays inside the formula's domain")
            .epsilon
    };
    if total(0.0) > target.epsilon {
        return Err(Error::Infeasible(format!(
            "even a zero per-query epsilon exceeds the target {}",
            target.epsilon
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    if total(hi) <= target.epsilon {
        return Ok((hi, delta0));
    }
    while hi - lo > CALIBRATION_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if total(mid) <= target.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, delta0))
}

/// Which transfer theorem a plan instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferVariant {
    LowSensitivity,
    Minimization,
}

/// The stability and sample-accuracy requirements that make a mechanism
/// (alpha, beta)-accurate for the population, per the transfer theorems.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferPlan {
    pub alpha: f64,
    pub beta: f64,
    pub delta_sens: f64,
    pub n: usize,
    pub k: usize,
    pub variant: TransferVariant,
    pub required_budget: StabilityBudget,
    pub required_sample_accuracy: (f64, f64),
    /// Whether a Laplace mechanism calibrated to the required budget can
    /// also meet the required sample accuracy at this n.
    pub laplace_feasible: bool,
}

/// Evaluate the transfer-theorem constants.
///
/// Low-sensitivity variant (hypothesis `alpha, beta in (0, 0.1)`):
/// `eps = alpha/(64 Dn)`, `delta = alpha beta/(32 Dn)`, `alpha' = alpha/8`,
/// `beta' = alpha beta/(16 Dn)`. Minimization variant: denominators
/// 128/64/8/32.
pub fn plan_transfer(
    alpha: f64,
    beta: f64,
    delta_sens: f64,
    n: usize,
    k: usize,
    variant: TransferVariant,
) -> Result<TransferPlan> {
    let in_range = |v: f64| v > 0.0 && v < 0.1;
    if variant == TransferVariant::LowSensitivity && !(in_range(alpha) && in_range(beta)) {
        return Err(Error::OutOfRange(format!(
            "alpha {alpha} and beta {beta} must lie in (0, 0.1) for the low-sensitivity variant"
        )));
    }
    if alpha.is_nan() || beta.is_nan() || alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::OutOfRange("alpha and beta must be positive".into()));
    }
    if !delta_sens.is_finite() || delta_sens <= 0.0 || n == 0 || k == 0 {
        return Err(Error::OutOfRange(
            "sensitivity, n, and k must all be positive".into(),
        ));
    }
    let dn = delta_sens * n as f64;
    let (eps_den, delta_den, beta_den) = match variant {
        TransferVariant::LowSensitivity => (64.0, 32.0, 16.0),
        TransferVariant::Minimization => (128.0, 64.0, 32.0),
    };
    let required_budget = StabilityBudget::new(
        alpha / (eps_den * dn),
        (alpha * beta / (delta_den * dn)).min(1.0),
    )?;
    let alpha_prime = alpha / 8.0;
    let beta_prime = alpha * beta / (beta_den * dn);
    let laplace_feasible = laplace_meets(
        &required_budget,
        k,
        delta_sens,
        alpha_prime,
        beta_prime,
    );
    Ok(TransferPlan {
        alpha,
        beta,
        delta_sens,
        n,
        k,
        variant,
        required_budget,
        required_sample_accuracy: (alpha_prime, beta_prime),
        laplace_feasible,
    })
}

/// Can a Laplace mechanism at the largest composable per-query epsilon also
/// be (alpha', beta')-sample-accurate for k queries? Uses the union-bound
/// tail `k * exp(-alpha'/b)` with `b = Delta/eps0`.
fn laplace_meets(
    budget: &StabilityBudget,
    k: usize,
    delta_sens: f64,
    alpha_prime: f64,
    beta_prime: f64,
) -> bool {
    if budget.delta <= 0.0 {
        return false;
    }
    let Ok((eps0, _)) = calibrate_per_query(*budget, k, budget.delta / 2.0) else {
        return false;
    };
    if eps0 <= 0.0 {
        return false;
    }
    let b = delta_sens / eps0;
    (k as f64) * (-alpha_prime / b).exp() <= beta_prime
}

/// Query family rows of the sample-complexity planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryFamily {
    Statistical,
    LowSensitivity,
    ConvexMin,
}

/// Number-of-queries regimes of the planner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// k much smaller than n^2 (noise-addition mechanisms).
    SmallK,
    /// k much larger than n^2 (multiplicative-weights style mechanisms).
    LargeK,
}

fn ln_at_least_one(v: f64) -> f64 {
    v.ln().max(1.0)
}

/// Order-of-magnitude sample-complexity planner. All hidden constants are
/// taken as 1 and every log factor is written out in natural logs, each
/// clamped below at 1; treat the output as a planning estimate, not an
/// exact bound.
pub fn sample_complexity(
    family: QueryFamily,
    regime: Regime,
    k: usize,
    alpha: f64,
    beta: f64,
    universe_size: usize,
    d_opt: Option<usize>,
) -> Result<u64> {
    if alpha.is_nan() || beta.is_nan() || alpha <= 0.0 || alpha > 1.0 || beta <= 0.0 || beta >= 1.0 {
        return Err(Error::OutOfRange(format!(
            "alpha {alpha} must be in (0,1] and beta {beta} in (0,1)"
        )));
    }
    if k == 0 || universe_size == 0 {
        return Err(Error::OutOfRange("k and |X| must be positive".into()));
    }
    let kf = k as f64;
    let lx = ln_at_least_one(universe_size as f64);
    let lk = ln_at_least_one(kf);
    let lab = ln_at_least_one(1.0 / (alpha * beta));
    let a2 = alpha * alpha;
    let a3 = a2 * alpha;
    let n = match (family, regime) {
        (QueryFamily::Statistical | QueryFamily::LowSensitivity, Regime::SmallK) => {
            (kf * ln_at_least_one(lk)).sqrt() * lab.powf(1.5) / a2
        }
        (QueryFamily::Statistical, Regime::LargeK) => lx.sqrt() * lk * lab.powf(1.5) / a3,
        (QueryFamily::LowSensitivity, Regime::LargeK) => lx * lk * lab.powf(1.5) / a3,
        (QueryFamily::ConvexMin, _) => {
            let d = d_opt.ok_or_else(|| {
                Error::Unsupported("convex minimization rows need the dimension d".into())
            })? as f64;
            if d < 1.0 {
                return Err(Error::OutOfRange("dimension d must be >= 1".into()));
            }
            match regime {
                Regime::SmallK => (d * kf).sqrt() * lab * lab / a2,
                Regime::LargeK => lx.sqrt() * (d.sqrt() + lk) * lab.powf(1.5) / a3,
            }
        }
    };
    Ok((n.ceil() as u64).max(1))
}

/// Pinsker conversion: an algorithm whose per-neighbor KL divergence is at
/// most `2 eps^2` (eps-KL stability) is eps-TV stable.
pub fn kl_to_tv(eps_kl: f64) -> f64 {
    eps_kl
}

/// TV stability implied by an (eps, delta) max-KL budget with `eps <= 1`:
/// `2 eps + delta`.
pub fn max_kl_to_tv(budget: &StabilityBudget) -> Result<f64> {
    if budget.epsilon > 1.0 {
        return Err(Error::OutOfRange(
            "the max-KL to TV conversion needs epsilon <= 1".into(),
        ));
    }
    Ok(2.0 * budget.epsilon + budget.delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn compose_null_mechanism() {
        let b = compose_advanced(0.0, 0.0, 17, 1e-6).unwrap();
        assert_eq!(b.epsilon, 0.0);
        assert_eq!(b.delta, 1e-6);
    }

    #[test]
    fn compose_single_query_hand_value() {
        // k=1, eps0=0.5, delta0=0, delta'=e^-4: (0.5*2 + 0.5, e^-4)
        let dp = (-4.0f64).exp();
        let b = compose_advanced(0.5, 0.0, 1, dp).unwrap();
        assert!((b.epsilon - 1.5).abs() < 1e-12, "epsilon {}", b.epsilon);
        assert_eq!(b.delta, dp);
    }

    #[test]
    fn compose_rejects_large_eps0() {
        assert!(compose_advanced(1.5, 0.0, 2, 1e-6).is_err());
        assert!(compose_advanced(0.5, 0.0, 2, 0.0).is_err());
    }

    #[test]
    fn compose_monotone_in_all_arguments() {
        let mut rng = crate::seed::rng_from_seed(31);
        for _ in 0..200 {
            let e = rng.random::<f64>() * 0.9;
            let d = rng.random::<f64>() * 1e-3;
            let k = rng.random_range(1..50usize);
            let dp = 1e-7;
            let base = compose_advanced(e, d, k, dp).unwrap();
            let more_e = compose_advanced(e + 0.05, d, k, dp).unwrap();
            let more_d = compose_advanced(e, d + 1e-4, k, dp).unwrap();
            let more_k = compose_advanced(e, d, k + 1, dp).unwrap();
            assert!(more_e.epsilon >= base.epsilon);
            assert!(more_d.delta >= base.delta);
            assert!(more_k.epsilon >= base.epsilon && more_k.delta >= base.delta);
        }
    }

    #[test]
    fn calibrate_round_trip_never_exceeds_target() {
        let mut rng = crate::seed::rng_from_seed(77);
        for _ in 0..100 {
            let target = StabilityBudget::new(
                rng.random::<f64>() * 4.0 + 1e-3,
                rng.random::<f64>() * 1e-4 + 1e-9,
            )
            .unwrap();
            let k = rng.random_range(1..200usize);
            let split = target.delta / 2.0;
            let (eps0, delta0) = calibrate_per_query(target, k, split).unwrap();
            let composed = compose_advanced(eps0, delta0, k, split).unwrap();
            assert!(
                composed.within(&target),
                "composed {composed:?} target {target:?}"
            );
        }
    }

    #[test]
    fn calibrate_matches_closed_form_at_k1() {
        // at k=1: eps0 sqrt(L) + 2 eps0^2 = eps_t with L = ln(1/delta'),
        // so eps0 = (-sqrt(L) + sqrt(L + 8 eps_t)) / 4
        let target = StabilityBudget::new(1.0, 1e-6).unwrap();
        let split = 5e-7;
        let (eps0, delta0) = calibrate_per_query(target, 1, split).unwrap();
        let l = (1.0f64 / split).ln();
        let closed = ((-l.sqrt()) + (l + 8.0).sqrt()) / 4.0;
        assert!((eps0 - closed).abs() < 1e-9, "bisection {eps0} closed {closed}");
        assert!((delta0 - 5e-7).abs() < 1e-20);
    }

    #[test]
    fn calibrate_zero_epsilon_target() {
        let target = StabilityBudget::new(0.0, 1e-6).unwrap();
        let (eps0, _) = calibrate_per_query(target, 10, 5e-7).unwrap();
        assert_eq!(eps0, 0.0);
    }

    #[test]
    fn plan_transfer_identities_hold() {
        // eps * 64 * Dn = alpha and delta * 32 * Dn = alpha * beta, exactly
        let n = 500;
        let delta_sens = 1.0 / n as f64;
        let plan = plan_transfer(0.064, 0.032, delta_sens, n, 10, TransferVariant::LowSensitivity)
            .unwrap();
        let dn = delta_sens * n as f64;
        assert!((plan.required_budget.epsilon * 64.0 * dn - 0.064).abs() < 1e-12);
        assert!((plan.required_budget.delta * 32.0 * dn - 0.064 * 0.032).abs() < 1e-12);
        assert!((plan.required_sample_accuracy.0 - 0.008).abs() < 1e-15);
        assert!((plan.required_sample_accuracy.1 - 0.064 * 0.032 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn plan_transfer_minimization_doubles_denominators() {
        let n = 100;
        let d = 1.0 / n as f64;
        let low = plan_transfer(0.05, 0.05, d, n, 5, TransferVariant::LowSensitivity).unwrap();
        let min = plan_transfer(0.05, 0.05, d, n, 5, TransferVariant::Minimization).unwrap();
        assert!((low.required_budget.epsilon / min.required_budget.epsilon - 2.0).abs() < 1e-12);
        assert!((low.required_budget.delta / min.required_budget.delta - 2.0).abs() < 1e-12);
        assert!((low.required_sample_accuracy.1 / min.required_sample_accuracy.1 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn plan_transfer_enforces_hypothesis_range() {
        let d = 0.01;
        assert!(plan_transfer(0.5, 0.05, d, 100, 5, TransferVariant::LowSensitivity).is_err());
        assert!(plan_transfer(0.05, 0.2, d, 100, 5, TransferVariant::LowSensitivity).is_err());
        // the minimization theorem has no (0, 0.1) hypothesis
        assert!(plan_transfer(0.5, 0.2, d, 100, 5, TransferVariant::Minimization).is_ok());
    }

    #[test]
    fn sample_complexity_rows() {
        // statistical small k: sqrt(k)/alpha^2 times polylog
        let n = sample_complexity(QueryFamily::Statistical, Regime::SmallK, 10_000, 0.1, 0.1, 1000, None)
            .unwrap();
        let expected = (10_000.0f64 * (10_000.0f64.ln()).ln()).sqrt()
            * (1.0f64 / 0.01).ln().powf(1.5)
            / 0.01;
        assert_eq!(n, expected.ceil() as u64);

        // statistical large k: sqrt(ln |X|) ln k / alpha^3 times polylog
        let n = sample_complexity(QueryFamily::Statistical, Regime::LargeK, 10_000, 0.1, 0.1, 1 << 20, None)
            .unwrap();
        let expected = ((1u64 << 20) as f64).ln().sqrt() * 10_000.0f64.ln()
            * (1.0f64 / 0.01).ln().powf(1.5)
            / 0.001;
        assert_eq!(n, expected.ceil() as u64);

        // sanity floor
        let n = sample_complexity(QueryFamily::Statistical, Regime::SmallK, 1, 1.0, 0.5, 2, None)
            .unwrap();
        assert!(n >= 1);

        // convex rows need d
        assert!(sample_complexity(QueryFamily::ConvexMin, Regime::SmallK, 10, 0.1, 0.1, 2, None)
            .is_err());
        assert!(sample_complexity(QueryFamily::ConvexMin, Regime::SmallK, 10, 0.1, 0.1, 2, Some(3))
            .is_ok());
    }

    #[test]
    fn stability_conversions() {
        assert_eq!(kl_to_tv(0.3), 0.3);
        let b = StabilityBudget::new(0.2, 0.01).unwrap();
        assert!((max_kl_to_tv(&b).unwrap() - 0.41).abs() < 1e-15);
        assert!(max_kl_to_tv(&StabilityBudget::new(1.5, 0.0).unwrap()).is_err());
    }
}

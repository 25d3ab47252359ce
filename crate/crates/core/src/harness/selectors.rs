//! Reference selection procedures for the lemma verifiers.
//!
//! The verifiers need procedures whose stability parameters are known
//! exactly: constants (perfectly stable), exponential-mechanism selection
//! over a fixed menu (max-KL stable with computable epsilon), randomized
//! response over a two-query menu (TV stable with an exactly computed
//! parameter), and exact argmax (unstable; the negative control).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::query::{LowSensitivityQuery, StatisticalQuery};
use crate::universe::Sample;

/// Multi-sample selection over statistical queries:
/// `W : (X^n)^T -> Q x [T]`.
pub trait SqSelector: Sync {
    fn select(
        &self,
        samples: &[Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<(StatisticalQuery, usize)>;
    fn tag(&self) -> String;
}

/// Multi-sample selection over low-sensitivity queries.
pub trait LowSensTSelector: Sync {
    fn select(
        &self,
        samples: &[Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<(LowSensitivityQuery, usize)>;
    fn tag(&self) -> String;
}

/// Single-sample selection over low-sensitivity queries:
/// `W : X^n -> Q`.
pub trait LowSensSelector: Sync {
    fn select(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<LowSensitivityQuery>;
    fn tag(&self) -> String;
}

fn softmax_pick(scores: &[f64], eta: f64, rng: &mut ChaCha8Rng) -> usize {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| (eta * (s - max)).exp()).collect();
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

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Ignores its input entirely: (0, 0)-max-KL stable.
pub struct ConstantSqSelector {
    pub query: StatisticalQuery,
    pub t_index: usize,
}

impl SqSelector for ConstantSqSelector {
    fn select(&self, _: &[Sample], _: &mut ChaCha8Rng) -> Result<(StatisticalQuery, usize)> {
        Ok((self.query.clone(), self.t_index))
    }

    fn tag(&self) -> String {
        "constant".into()
    }
}

/// Exponential-mechanism selection of the (query, sample) pair with the
/// largest sample value. The score `q(x_t)` moves by at most 1/n when one
/// element changes, so at `eta = eps * n / 2` the draw is
/// (eps, 0)-max-KL stable.
pub struct ExpMechSqSelector {
    pub menu: Vec<StatisticalQuery>,
    pub eta: f64,
}

impl ExpMechSqSelector {
    /// The eta making this selector (eps, 0)-max-KL stable at sample size n.
    pub fn eta_for_epsilon(eps: f64, n: usize) -> f64 {
        eps * n as f64 / 2.0
    }
}

impl SqSelector for ExpMechSqSelector {
    fn select(
        &self,
        samples: &[Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<(StatisticalQuery, usize)> {
        let scores = sq_scores(&self.menu, samples)?;
        let pick = softmax_pick(&scores, self.eta, rng);
        Ok((self.menu[pick / samples.len()].clone(), pick % samples.len()))
    }

    fn tag(&self) -> String {
        format!("expmech(eta={})", self.eta)
    }
}

/// Exact argmax of `q(x_t)`: data-determined, not stable for any useful
/// budget. The negative control.
pub struct ArgmaxSqSelector {
    pub menu: Vec<StatisticalQuery>,
}

impl SqSelector for ArgmaxSqSelector {
    fn select(
        &self,
        samples: &[Sample],
        _: &mut ChaCha8Rng,
    ) -> Result<(StatisticalQuery, usize)> {
        let scores = sq_scores(&self.menu, samples)?;
        let pick = argmax(&scores);
        Ok((self.menu[pick / samples.len()].clone(), pick % samples.len()))
    }

    fn tag(&self) -> String {
        "argmax".into()
    }
}

fn sq_scores(menu: &[StatisticalQuery], samples: &[Sample]) -> Result<Vec<f64>> {
    if menu.is_empty() || samples.is_empty() {
        return Err(Error::InvalidConfig("selector needs a menu and samples".into()));
    }
    let mut scores = Vec::with_capacity(menu.len() * samples.len());
    for q in menu {
        for x in samples {
            scores.push(q.eval_sample(x)?);
        }
    }
    Ok(scores)
}

fn lowsens_scores(menu: &[LowSensitivityQuery], samples: &[Sample]) -> Result<Vec<f64>> {
    if menu.is_empty() || samples.is_empty() {
        return Err(Error::InvalidConfig("selector needs a menu and samples".into()));
    }
    let mut scores = Vec::with_capacity(menu.len() * samples.len());
    for q in menu {
        for x in samples {
            scores.push(q.eval(x));
        }
    }
    Ok(scores)
}

/// Constant low-sensitivity selection.
pub struct ConstantLowSensTSelector {
    pub query: LowSensitivityQuery,
    pub t_index: usize,
}

impl LowSensTSelector for ConstantLowSensTSelector {
    fn select(&self, _: &[Sample], _: &mut ChaCha8Rng) -> Result<(LowSensitivityQuery, usize)> {
        Ok((self.query.clone(), self.t_index))
    }

    fn tag(&self) -> String {
        "constant".into()
    }
}

/// Exponential-mechanism selection over a low-sensitivity menu; with menu
/// sensitivity Delta, `eta = eps / (2 Delta)` gives (eps, 0)-max-KL.
pub struct ExpMechLowSensTSelector {
    pub menu: Vec<LowSensitivityQuery>,
    pub eta: f64,
}

impl LowSensTSelector for ExpMechLowSensTSelector {
    fn select(
        &self,
        samples: &[Sample],
        rng: &mut ChaCha8Rng,
    ) -> Result<(LowSensitivityQuery, usize)> {
        let scores = lowsens_scores(&self.menu, samples)?;
        let pick = softmax_pick(&scores, self.eta, rng);
        Ok((self.menu[pick / samples.len()].clone(), pick % samples.len()))
    }

    fn tag(&self) -> String {
        format!("expmech(eta={})", self.eta)
    }
}

/// Unstable argmax over a low-sensitivity menu.
pub struct ArgmaxLowSensTSelector {
    pub menu: Vec<LowSensitivityQuery>,
}

impl LowSensTSelector for ArgmaxLowSensTSelector {
    fn select(
        &self,
        samples: &[Sample],
        _: &mut ChaCha8Rng,
    ) -> Result<(LowSensitivityQuery, usize)> {
        let scores = lowsens_scores(&self.menu, samples)?;
        let pick = argmax(&scores);
        Ok((self.menu[pick / samples.len()].clone(), pick % samples.len()))
    }

    fn tag(&self) -> String {
        "argmax".into()
    }
}

/// Constant single-sample selection.
pub struct ConstantLowSensSelector {
    pub query: LowSensitivityQuery,
}

impl LowSensSelector for ConstantLowSensSelector {
    fn select(&self, _: &Sample, _: &mut ChaCha8Rng) -> Result<LowSensitivityQuery> {
        Ok(self.query.clone())
    }

    fn tag(&self) -> String {
        "constant".into()
    }
}

/// Randomized response over a two-query menu: pick the query with the
/// larger sample value, keep it with probability `stay_prob`, otherwise
/// output the other. Changing one sample element can flip the comparison,
/// swapping the output law between (p, 1-p) and (1-p, p), so the TV
/// parameter is exactly `|2 stay_prob - 1|`.
pub struct RandomizedResponseSelector {
    pub first: LowSensitivityQuery,
    pub second: LowSensitivityQuery,
    pub stay_prob: f64,
}

impl RandomizedResponseSelector {
    pub fn tv_parameter(&self) -> f64 {
        (2.0 * self.stay_prob - 1.0).abs()
    }
}

impl LowSensSelector for RandomizedResponseSelector {
    fn select(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<LowSensitivityQuery> {
        let preferred_first = self.first.eval(sample) >= self.second.eval(sample);
        let stay = rng.random::<f64>() < self.stay_prob;
        let pick_first = preferred_first == stay;
        Ok(if pick_first {
            self.first.clone()
        } else {
            self.second.clone()
        })
    }

    fn tag(&self) -> String {
        format!("randomized-response(p={})", self.stay_prob)
    }
}

/// Unstable single-sample argmax of `q(x)` over a menu.
pub struct ArgmaxLowSensSelector {
    pub menu: Vec<LowSensitivityQuery>,
}

impl LowSensSelector for ArgmaxLowSensSelector {
    fn select(&self, sample: &Sample, _: &mut ChaCha8Rng) -> Result<LowSensitivityQuery> {
        if self.menu.is_empty() {
            return Err(Error::InvalidConfig("selector needs a menu".into()));
        }
        let scores: Vec<f64> = self.menu.iter().map(|q| q.eval(sample)).collect();
        Ok(self.menu[argmax(&scores)].clone())
    }

    fn tag(&self) -> String {
        "argmax".into()
    }
}

/// Exponential-mechanism single-sample selection.
pub struct ExpMechLowSensSelector {
    pub menu: Vec<LowSensitivityQuery>,
    pub eta: f64,
}

impl LowSensSelector for ExpMechLowSensSelector {
    fn select(&self, sample: &Sample, rng: &mut ChaCha8Rng) -> Result<LowSensitivityQuery> {
        if self.menu.is_empty() {
            return Err(Error::InvalidConfig("selector needs a menu".into()));
        }
        let scores: Vec<f64> = self.menu.iter().map(|q| q.eval(sample)).collect();
        Ok(self.menu[softmax_pick(&scores, self.eta, rng)].clone())
    }

    fn tag(&self) -> String {
        format!("expmech(eta={})", self.eta)
    }
}

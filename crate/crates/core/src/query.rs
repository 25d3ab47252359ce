//! The three query families and their error functionals.
//!
//! A statistical query is a per-element table in [0,1], answered by its
//! mean on a sample or its expectation under a distribution. A
//! low-sensitivity query is an arbitrary sample functional with a declared
//! sensitivity bound; its population value is an expectation over fresh
//! size-n samples. A minimization query is a loss table over a finite
//! parameter set, answered by a parameter index.
//!
//! Declared sensitivities are validated probabilistically on random
//! neighbor pairs (exhaustive neighbor enumeration is infeasible); see
//! [`LowSensitivityQuery::validate_sensitivity`].

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{child_seed, rng_from_seed};
use crate::stats::mean_ci;
use crate::universe::{check_same_universe, Distribution, Sample, Universe};

/// Slack added on top of a declared sensitivity when validating it.
pub const SENSITIVITY_TOLERANCE: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Statistical queries
// ---------------------------------------------------------------------------

/// A statistical query `q : X -> [0,1]`, stored as a table aligned with the
/// universe elements.
#[derive(Clone, Debug)]
pub struct StatisticalQuery {
    universe: Universe,
    table: Arc<Vec<f64>>,
}

impl StatisticalQuery {
    pub fn new(universe: Universe, table: Vec<f64>) -> Result<Self> {
        if table.len() != universe.size() {
            return Err(Error::InvalidQuery(format!(
                "table has {} entries for a universe of size {}",
                table.len(),
                universe.size()
            )));
        }
        for &v in &table {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidQuery(format!("table value {v} outside [0,1]")));
            }
        }
        Ok(Self {
            universe,
            table: Arc::new(table),
        })
    }

    /// Constant query `q(z) = c`.
    pub fn constant(universe: Universe, c: f64) -> Result<Self> {
        let n = universe.size();
        Self::new(universe, vec![c; n])
    }

    /// Indicator of an element subset.
    pub fn indicator(universe: Universe, members: &[u32]) -> Result<Self> {
        let mut table = vec![0.0; universe.size()];
        for &m in members {
            if !universe.contains(m) {
                return Err(Error::DomainMismatch(format!(
                    "element {m} not in universe of size {}",
                    universe.size()
                )));
            }
            table[m as usize] = 1.0;
        }
        Self::new(universe, table)
    }

    /// Load a table from a JSON array aligned with the universe elements.
    pub fn from_json(universe: Universe, text: &str) -> Result<Self> {
        let table: Vec<f64> = serde_json::from_str(text)
            .map_err(|e| Error::InvalidQuery(format!("bad JSON table: {e}")))?;
        Self::new(universe, table)
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// `q(x) = (1/n) sum_i q(x_i)`.
    pub fn eval_sample(&self, x: &Sample) -> Result<f64> {
        check_same_universe(&self.universe, x.universe(), "eval_sq_sample")?;
        let sum: f64 = x.elements().iter().map(|&e| self.table[e as usize]).sum();
        Ok(sum / x.len() as f64)
    }

    /// `q(P) = E_{z~P}[q(z)]`, computed exactly as a dot product.
    pub fn eval_population(&self, p: &Distribution) -> Result<f64> {
        check_same_universe(&self.universe, p.universe(), "eval_sq_population")?;
        Ok(self
            .table
            .iter()
            .zip(p.pmf())
            .map(|(&q, &w)| q * w)
            .sum())
    }

    /// Signed sample error `err_x(q, a) = a - q(x)`.
    pub fn sample_error(&self, answer: f64, x: &Sample) -> Result<f64> {
        Ok(answer - self.eval_sample(x)?)
    }

    /// Signed population error `err_P(q, a) = a - q(P)`.
    pub fn population_error(&self, answer: f64, p: &Distribution) -> Result<f64> {
        Ok(answer - self.eval_population(p)?)
    }
}

// ---------------------------------------------------------------------------
// Low-sensitivity queries
// ---------------------------------------------------------------------------

type Evaluator = Arc<dyn Fn(&Sample) -> f64 + Send + Sync>;
type PopulationFn = Arc<dyn Fn(&Distribution, usize) -> Result<f64> + Send + Sync>;

#[derive(Clone)]
enum PopulationForm {
    /// Lifted statistical query: population value is an exact dot product.
    LiftedSq { query: StatisticalQuery, scale: f64 },
    /// A closed form is known for `E_{z~P^n}[q(z)]`.
    Analytic(PopulationFn),
    /// No closed form; estimated by Monte Carlo over fresh samples.
    MonteCarlo,
}

/// A Delta-sensitive query `q : X^n -> R`. The family is closed under
/// negation; [`Self::negated`] flips the sign of values and errors alike.
#[derive(Clone)]
pub struct LowSensitivityQuery {
    label: String,
    evaluator: Evaluator,
    sensitivity: f64,
    negated: bool,
    population: PopulationForm,
}

impl fmt::Debug for LowSensitivityQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LowSensitivityQuery")
            .field("label", &self.label)
            .field("sensitivity", &self.sensitivity)
            .field("negated", &self.negated)
            .finish()
    }
}

impl LowSensitivityQuery {
    /// General constructor from an arbitrary evaluator with declared
    /// sensitivity. Population values will be Monte Carlo estimates.
    pub fn from_fn(
        label: impl Into<String>,
        sensitivity: f64,
        evaluator: impl Fn(&Sample) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if !sensitivity.is_finite() || sensitivity < 0.0 {
            return Err(Error::InvalidQuery(format!(
                "sensitivity {sensitivity} must be a finite nonnegative real"
            )));
        }
        Ok(Self {
            label: label.into(),
            evaluator: Arc::new(evaluator),
            sensitivity,
            negated: false,
            population: PopulationForm::MonteCarlo,
        })
    }

    /// Lift a statistical query to the low-sensitivity family; the mean
    /// form forces sensitivity exactly `1/n`.
    pub fn from_sq(query: StatisticalQuery, n: usize) -> Self {
        Self::from_sq_scaled(query, n, 1.0)
    }

    /// Lift `scale * q` for a statistical query `q`; sensitivity `scale/n`.
    pub fn from_sq_scaled(query: StatisticalQuery, n: usize, scale: f64) -> Self {
        let q = query.clone();
        Self {
            label: format!("scaled-sq(x{scale})"),
            evaluator: Arc::new(move |x: &Sample| {
                scale * q.eval_sample(x).expect("universe checked at game boundary")
            }),
            sensitivity: scale.abs() / n as f64,
            negated: false,
            population: PopulationForm::LiftedSq { query, scale },
        }
    }

    /// `q(x) = sensitivity * min(cap, #{i : x_i = element})`, a clamped
    /// count with an exact (binomial) population value.
    pub fn clamped_count(
        universe: &Universe,
        element: u32,
        cap: usize,
        sensitivity: f64,
    ) -> Result<Self> {
        if !universe.contains(element) {
            return Err(Error::DomainMismatch(format!(
                "element {element} not in universe of size {}",
                universe.size()
            )));
        }
        let delta = sensitivity;
        let evaluator = move |x: &Sample| {
            let count = x.elements().iter().filter(|&&e| e == element).count();
            delta * count.min(cap) as f64
        };
        let pop = move |p: &Distribution, n: usize| -> Result<f64> {
            // E[min(cap, Binomial(n, p_e))] = sum_{j=0}^{cap-1} Pr[B > j]
            let pe = p.pmf()[element as usize];
            Ok(delta * expected_clamped_binomial(n, pe, cap))
        };
        Ok(Self {
            label: format!("clamped-count(e={element}, cap={cap})"),
            evaluator: Arc::new(evaluator),
            sensitivity,
            negated: false,
            population: PopulationForm::Analytic(Arc::new(pop)),
        })
    }

    /// `q(x) = max_j q_j(x)` over statistical queries; sensitivity `1/n`.
    /// No closed-form population value.
    pub fn max_of_sqs(queries: Vec<StatisticalQuery>, n: usize) -> Result<Self> {
        if queries.is_empty() {
            return Err(Error::InvalidQuery("max-of-sqs needs at least one query".into()));
        }
        let label = format!("max-of-{}-sqs", queries.len());
        let sensitivity = 1.0 / n as f64;
        Ok(Self {
            label,
            evaluator: Arc::new(move |x: &Sample| {
                queries
                    .iter()
                    .map(|q| q.eval_sample(x).expect("universe checked at game boundary"))
                    .fold(f64::NEG_INFINITY, f64::max)
            }),
            sensitivity,
            negated: false,
            population: PopulationForm::MonteCarlo,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn is_negated(&self) -> bool {
        self.negated
    }

    /// The query `-q`; the Delta-sensitive family is closed under negation.
    pub fn negated(&self) -> Self {
        let mut q = self.clone();
        q.negated = !q.negated;
        q
    }

    pub fn eval(&self, x: &Sample) -> f64 {
        let raw = (self.evaluator)(x);
        if self.negated {
            -raw
        } else {
            raw
        }
    }

    /// `q(P) = E_{z~P^n}[q(z)]` with a 95% normal-approximation confidence
    /// half-width. Lifted statistical queries and queries with a known
    /// closed form take the exact route and report a zero half-width.
    pub fn population_value(
        &self,
        p: &Distribution,
        n: usize,
        trials: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        let sign = if self.negated { -1.0 } else { 1.0 };
        match &self.population {
            PopulationForm::LiftedSq { query, scale } => {
                Ok((sign * scale * query.eval_population(p)?, 0.0))
            }
            PopulationForm::Analytic(f) => Ok((sign * f(p, n)?, 0.0)),
            PopulationForm::MonteCarlo => {
                if trials < 2 {
                    return Err(Error::InvalidConfig(
                        "population Monte Carlo needs at least 2 trials".into(),
                    ));
                }
                let values: Vec<f64> = (0..trials)
                    .map(|t| {
                        let mut rng = rng_from_seed(child_seed(seed, t as u64));
                        let x = p.sample(n, &mut rng)?;
                        Ok(self.eval(&x))
                    })
                    .collect::<Result<_>>()?;
                Ok(mean_ci(&values))
            }
        }
    }

    /// Signed sample error `err_x(q, a) = a - q(x)`.
    pub fn sample_error(&self, answer: f64, x: &Sample) -> f64 {
        answer - self.eval(x)
    }

    /// Check the declared sensitivity on `pairs` random neighbor pairs
    /// `x ~ x'` with elements drawn from `p`. Probabilistic: passing does
    /// not prove the bound, failing disproves it.
    pub fn validate_sensitivity(
        &self,
        p: &Distribution,
        n: usize,
        pairs: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = rng_from_seed(seed);
        for _ in 0..pairs {
            let x = p.sample(n, &mut rng)?;
            let i = rng.random_range(0..n);
            let z = p.sample_element(&mut rng);
            let x2 = x.replaced(i, z)?;
            let gap = (self.eval(&x) - self.eval(&x2)).abs();
            if gap > self.sensitivity + SENSITIVITY_TOLERANCE {
                return Err(Error::InvalidQuery(format!(
                    "query {:?} declared sensitivity {} but a neighbor pair moved it by {}",
                    self.label, self.sensitivity, gap
                )));
            }
        }
        Ok(())
    }
}

fn expected_clamped_binomial(n: usize, p: f64, cap: usize) -> f64 {
    if cap == 0 || p <= 0.0 {
        return 0.0;
    }
    // iterate the binomial pmf; E[min(cap, B)] = sum_j min(cap, j) pmf(j)
    let q = 1.0 - p;
    let mut pmf = q.powi(n as i32);
    let mut expect = 0.0;
    for j in 0..=n {
        expect += (j.min(cap)) as f64 * pmf;
        if j < n {
            pmf *= (n - j) as f64 / (j + 1) as f64;
            pmf *= if q > 0.0 { p / q } else { 0.0 };
            if q == 0.0 {
                // p == 1: all mass at j = n
                expect = cap.min(n) as f64;
                break;
            }
        }
    }
    expect
}

// ---------------------------------------------------------------------------
// Minimization queries
// ---------------------------------------------------------------------------

type LossFn = Arc<dyn Fn(&Sample, usize) -> f64 + Send + Sync>;

/// A minimization query: a loss `L(x; theta)` over a finite parameter set,
/// Delta-sensitive in the sample for every fixed parameter.
#[derive(Clone)]
pub struct MinimizationQuery {
    label: String,
    theta_count: usize,
    loss: LossFn,
    sensitivity: f64,
    loss_bound: f64,
}

impl fmt::Debug for MinimizationQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MinimizationQuery")
            .field("label", &self.label)
            .field("theta_count", &self.theta_count)
            .field("sensitivity", &self.sensitivity)
            .field("loss_bound", &self.loss_bound)
            .finish()
    }
}

impl MinimizationQuery {
    pub fn new(
        label: impl Into<String>,
        theta_count: usize,
        sensitivity: f64,
        loss_bound: f64,
        loss: impl Fn(&Sample, usize) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if theta_count == 0 {
            return Err(Error::InvalidQuery("parameter set must be nonempty".into()));
        }
        if !sensitivity.is_finite() || sensitivity < 0.0 {
            return Err(Error::InvalidQuery(format!(
                "sensitivity {sensitivity} must be a finite nonnegative real"
            )));
        }
        if !loss_bound.is_finite() || loss_bound < 0.0 {
            return Err(Error::InvalidQuery(format!(
                "loss bound {loss_bound} must be a finite nonnegative real"
            )));
        }
        Ok(Self {
            label: label.into(),
            theta_count,
            loss: Arc::new(loss),
            sensitivity,
            loss_bound,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn theta_count(&self) -> usize {
        self.theta_count
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn loss_bound(&self) -> f64 {
        self.loss_bound
    }

    pub fn loss(&self, x: &Sample, theta: usize) -> Result<f64> {
        if theta >= self.theta_count {
            return Err(Error::IndexOutOfRange {
                index: theta,
                len: self.theta_count,
            });
        }
        let v = (self.loss)(x, theta);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss of {:?} at theta {theta}", self.label)));
        }
        Ok(v)
    }

    pub fn losses(&self, x: &Sample) -> Result<Vec<f64>> {
        (0..self.theta_count).map(|t| self.loss(x, t)).collect()
    }

    /// Index minimizing the loss on `x`; ties broken by lowest index.
    pub fn argmin_sample(&self, x: &Sample) -> Result<usize> {
        let losses = self.losses(x)?;
        let mut best = 0;
        for (i, &v) in losses.iter().enumerate().skip(1) {
            if v < losses[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// `err_x(L, theta) = L(x, theta) - min_theta* L(x, theta*)`.
    pub fn sample_error(&self, theta: usize, x: &Sample) -> Result<f64> {
        let losses = self.losses(x)?;
        if theta >= losses.len() {
            return Err(Error::IndexOutOfRange {
                index: theta,
                len: losses.len(),
            });
        }
        let min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(losses[theta] - min)
    }

    /// Monte Carlo estimate of `err_P(L, theta) = E_{z~P^n}[err_z(L, theta)]`
    /// with a 95% confidence half-width.
    pub fn population_error(
        &self,
        theta: usize,
        p: &Distribution,
        n: usize,
        trials: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        if trials < 2 {
            return Err(Error::InvalidConfig(
                "population Monte Carlo needs at least 2 trials".into(),
            ));
        }
        let values: Vec<f64> = (0..trials)
            .map(|t| {
                let mut rng = rng_from_seed(child_seed(seed, t as u64));
                let z = p.sample(n, &mut rng)?;
                self.sample_error(theta, &z)
            })
            .collect::<Result<_>>()?;
        Ok(mean_ci(&values))
    }

    /// Probabilistic validation of the per-parameter sensitivity bound on
    /// random neighbor pairs and random parameters.
    pub fn validate_sensitivity(
        &self,
        p: &Distribution,
        n: usize,
        pairs: usize,
        seed: u64,
    ) -> Result<()> {
        let mut rng = rng_from_seed(seed);
        for _ in 0..pairs {
            let x = p.sample(n, &mut rng)?;
            let i = rng.random_range(0..n);
            let z = p.sample_element(&mut rng);
            let theta = rng.random_range(0..self.theta_count);
            let x2 = x.replaced(i, z)?;
            let gap = (self.loss(&x, theta)? - self.loss(&x2, theta)?).abs();
            if gap > self.sensitivity + SENSITIVITY_TOLERANCE {
                return Err(Error::InvalidQuery(format!(
                    "loss {:?} declared sensitivity {} but a neighbor pair moved it by {}",
                    self.label, self.sensitivity, gap
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tagged union and generic error functionals
// ---------------------------------------------------------------------------

/// Any query from the three families.
#[derive(Clone, Debug)]
pub enum Query {
    Statistical(StatisticalQuery),
    LowSensitivity(LowSensitivityQuery),
    Minimization(MinimizationQuery),
}

/// A mechanism answer: a real for statistical and low-sensitivity queries,
/// a parameter index for minimization queries.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Answer {
    Value(f64),
    ThetaIndex(usize),
}

impl Answer {
    pub fn value(&self) -> Result<f64> {
        match self {
            Answer::Value(v) => Ok(*v),
            Answer::ThetaIndex(_) => Err(Error::InvalidQuery(
                "expected a real answer, got a parameter index".into(),
            )),
        }
    }

    pub fn theta_index(&self) -> Result<usize> {
        match self {
            Answer::ThetaIndex(t) => Ok(*t),
            Answer::Value(_) => Err(Error::InvalidQuery(
                "expected a parameter index, got a real answer".into(),
            )),
        }
    }
}

/// Signed sample error of an answer, per query family.
pub fn sample_error(query: &Query, answer: &Answer, x: &Sample) -> Result<f64> {
    match (query, answer) {
        (Query::Statistical(q), Answer::Value(a)) => q.sample_error(*a, x),
        (Query::LowSensitivity(q), Answer::Value(a)) => Ok(q.sample_error(*a, x)),
        (Query::Minimization(q), Answer::ThetaIndex(t)) => q.sample_error(*t, x),
        _ => Err(Error::InvalidQuery("answer kind does not match query kind".into())),
    }
}

/// Signed population error of an answer when an exact route exists.
pub fn population_error_exact(query: &Query, answer: &Answer, p: &Distribution) -> Result<f64> {
    match (query, answer) {
        (Query::Statistical(q), Answer::Value(a)) => q.population_error(*a, p),
        (Query::LowSensitivity(q), Answer::Value(a)) => match &q.population {
            // only the lifted mean has a population value independent of n;
            // other forms go through the Monte Carlo route, which carries n
            PopulationForm::LiftedSq { query, scale } => {
                let sign = if q.negated { -1.0 } else { 1.0 };
                Ok(a - sign * scale * query.eval_population(p)?)
            }
            _ => Err(Error::Unsupported(
                "no n-free exact population value for this query; use the Monte Carlo route"
                    .into(),
            )),
        },
        _ => Err(Error::Unsupported(
            "exact population error is only available for statistical and closed-form queries"
                .into(),
        )),
    }
}

/// Monte Carlo population error with a 95% confidence half-width.
pub fn population_error_mc(
    query: &Query,
    answer: &Answer,
    p: &Distribution,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    match (query, answer) {
        (Query::Statistical(q), Answer::Value(a)) => Ok((q.population_error(*a, p)?, 0.0)),
        (Query::LowSensitivity(q), Answer::Value(a)) => {
            let (qp, ci) = q.population_value(p, n, trials, seed)?;
            Ok((a - qp, ci))
        }
        (Query::Minimization(q), Answer::ThetaIndex(t)) => {
            q.population_error(*t, p, n, trials, seed)
        }
        _ => Err(Error::InvalidQuery("answer kind does not match query kind".into())),
    }
}

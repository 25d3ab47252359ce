//! The accuracy games and the monitor.
//!
//! The information barrier is enforced by the trait signatures: a
//! mechanism factory receives only the hidden sample and a seed, an
//! analyst factory receives only the population (when the analyst chose
//! it) and a seed. Neither side can reach the other's private state.

use serde::{Deserialize, Serialize};

use crate::analysts::{AnalystConfig, AnalystState};
use crate::error::{Error, Result};
use crate::mechanisms::{MechanismConfig, MechanismState};
use crate::query::{Answer, LowSensitivityQuery, Query, StatisticalQuery};
use crate::seed::child_seed;
use crate::transcript::Transcript;
use crate::universe::{Distribution, Sample, Universe};

/// One side of the game: answers statistical queries on a hidden sample.
pub trait SqMechanism {
    fn answer_sq(&mut self, query: &StatisticalQuery) -> Result<f64>;
    fn tag(&self) -> String;
}

impl SqMechanism for MechanismState {
    fn answer_sq(&mut self, query: &StatisticalQuery) -> Result<f64> {
        MechanismState::answer_sq(self, query)
    }

    fn tag(&self) -> String {
        self.config().tag()
    }
}

/// Builds a fresh mechanism for one game run. Receives the sample and a
/// seed; never the population.
pub trait MechanismFactory: Sync {
    fn build(&self, sample: Sample, seed: u64) -> Result<Box<dyn SqMechanism>>;
    fn tag(&self) -> String;
}

impl MechanismFactory for MechanismConfig {
    fn build(&self, sample: Sample, seed: u64) -> Result<Box<dyn SqMechanism>> {
        Ok(Box::new(MechanismState::new(sample, self.clone(), seed)?))
    }

    fn tag(&self) -> String {
        MechanismConfig::tag(self)
    }
}

/// The other side of the game: issues queries and observes answers.
pub trait Analyst {
    fn next_query(&mut self, universe: &Universe, round: usize) -> Result<StatisticalQuery>;
    fn observe(&mut self, query: &StatisticalQuery, answer: f64);
    fn tag(&self) -> String;
    /// How many rounds this analyst plays out of an allowed k.
    fn rounds(&self, k: usize) -> usize {
        k
    }
}

impl Analyst for AnalystState {
    fn next_query(&mut self, universe: &Universe, round: usize) -> Result<StatisticalQuery> {
        AnalystState::next_query(self, universe, round)
    }

    fn observe(&mut self, query: &StatisticalQuery, answer: f64) {
        AnalystState::observe(self, query, answer)
    }

    fn tag(&self) -> String {
        AnalystState::tag(self).to_string()
    }

    fn rounds(&self, k: usize) -> usize {
        self.planned_rounds(k)
    }
}

/// Builds a fresh analyst for one game run. Receives the population only
/// when the analyst chose it; never the sample.
pub trait AnalystFactory: Sync {
    fn build(&self, population: Option<Distribution>, seed: u64) -> Result<Box<dyn Analyst>>;
    fn tag(&self) -> String;
}

impl AnalystFactory for AnalystConfig {
    fn build(&self, population: Option<Distribution>, seed: u64) -> Result<Box<dyn Analyst>> {
        Ok(Box::new(AnalystState::new(self, population, seed)?))
    }

    fn tag(&self) -> String {
        AnalystConfig::tag(self)
    }
}

/// Test and monitor utility: replays a fixed query list.
#[derive(Clone, Debug)]
pub struct FixedQueryAnalyst {
    pub queries: Vec<StatisticalQuery>,
}

impl Analyst for FixedQueryAnalyst {
    fn next_query(&mut self, _universe: &Universe, round: usize) -> Result<StatisticalQuery> {
        self.queries
            .get(round)
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("no scripted query for round {round}")))
    }

    fn observe(&mut self, _query: &StatisticalQuery, _answer: f64) {}

    fn tag(&self) -> String {
        format!("scripted({} queries)", self.queries.len())
    }

    fn rounds(&self, k: usize) -> usize {
        k.min(self.queries.len())
    }
}

impl AnalystFactory for FixedQueryAnalyst {
    fn build(&self, _population: Option<Distribution>, _seed: u64) -> Result<Box<dyn Analyst>> {
        Ok(Box::new(self.clone()))
    }

    fn tag(&self) -> String {
        Analyst::tag(self)
    }
}

/// The outcome of one game: the transcript, the hidden sample, and the
/// per-round signed errors.
#[derive(Clone, Debug)]
pub struct GameResult {
    pub transcript: Transcript,
    pub sample: Sample,
    pub per_round_sample_errs: Vec<f64>,
    /// Omitted in the sample accuracy game.
    pub per_round_pop_errs: Option<Vec<f64>>,
    pub max_sample_err: f64,
    pub max_pop_err: Option<f64>,
    /// The mechanism refused a round (budget exhausted); the transcript is
    /// truncated at the refusal.
    pub refused: bool,
    pub seed: u64,
}

/// JSON-facing view of a [`GameResult`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GameSummary {
    pub mechanism: String,
    pub analyst: String,
    pub seed: u64,
    pub rounds: usize,
    pub refused: bool,
    pub max_sample_err: f64,
    pub max_pop_err: Option<f64>,
    pub per_round_sample_errs: Vec<f64>,
    pub per_round_pop_errs: Option<Vec<f64>>,
}

impl GameResult {
    pub fn summary(&self) -> GameSummary {
        GameSummary {
            mechanism: self.transcript.mechanism_tag().to_string(),
            analyst: self.transcript.analyst_tag().to_string(),
            seed: self.seed,
            rounds: self.transcript.rounds(),
            refused: self.refused,
            max_sample_err: self.max_sample_err,
            max_pop_err: self.max_pop_err,
            per_round_sample_errs: self.per_round_sample_errs.clone(),
            per_round_pop_errs: self.per_round_pop_errs.clone(),
        }
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn is_refusal(err: &Error) -> bool {
    matches!(
        err,
        Error::BudgetExhausted(_) | Error::UpdateBudgetExhausted(_)
    )
}

fn play(
    sample: Sample,
    population: Option<&Distribution>,
    k: usize,
    mechanism_factory: &dyn MechanismFactory,
    analyst_factory: &dyn AnalystFactory,
    analyst_population: Option<Distribution>,
    seed: u64,
) -> Result<GameResult> {
    let universe = sample.universe().clone();
    let mut mechanism = mechanism_factory.build(sample.clone(), child_seed(seed, 1))?;
    let mut analyst = analyst_factory.build(analyst_population, child_seed(seed, 2))?;
    let mut transcript = Transcript::new(mechanism.tag(), analyst.tag(), seed);
    let mut sample_errs = Vec::new();
    let mut pop_errs = population.map(|_| Vec::new());
    let mut refused = false;

    let rounds = analyst.rounds(k);
    for round in 0..rounds {
        let query = analyst.next_query(&universe, round)?;
        let answer = match mechanism.answer_sq(&query) {
            Ok(a) => a,
            Err(e) if is_refusal(&e) => {
                refused = true;
                break;
            }
            Err(e) => return Err(e),
        };
        sample_errs.push(query.sample_error(answer, &sample)?);
        if let (Some(errs), Some(p)) = (pop_errs.as_mut(), population) {
            errs.push(query.population_error(answer, p)?);
        }
        analyst.observe(&query, answer);
        transcript.push(Query::Statistical(query), Answer::Value(answer));
    }

    Ok(GameResult {
        max_sample_err: max_abs(&sample_errs),
        max_pop_err: pop_errs.as_deref().map(max_abs),
        per_round_sample_errs: sample_errs,
        per_round_pop_errs: pop_errs,
        transcript,
        sample,
        refused,
        seed,
    })
}

/// The accuracy game: draw a hidden sample of size n from the population,
/// play k rounds, and score both sample and population errors. The analyst
/// knows the population (it chose it); the mechanism never sees it.
pub fn run_accuracy_game(
    population: &Distribution,
    n: usize,
    k: usize,
    mechanism: &dyn MechanismFactory,
    analyst: &dyn AnalystFactory,
    seed: u64,
) -> Result<GameResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mut rng = crate::seed::rng_from_seed(child_seed(seed, 0));
    let sample = population.sample(n, &mut rng)?;
    play(
        sample,
        Some(population),
        k,
        mechanism,
        analyst,
        Some(population.clone()),
        seed,
    )
}

/// The sample accuracy game: the analyst supplies the sample and may
/// inspect it (it receives the empirical distribution); population errors
/// are omitted.
pub fn run_sample_accuracy_game(
    sample: &Sample,
    k: usize,
    mechanism: &dyn MechanismFactory,
    analyst: &dyn AnalystFactory,
    seed: u64,
) -> Result<GameResult> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    play(
        sample.clone(),
        None,
        k,
        mechanism,
        analyst,
        Some(sample.empirical_distribution()),
        seed,
    )
}

/// The monitor's selection from T simulated interactions.
#[derive(Clone, Debug)]
pub struct MonitorOutput {
    /// The worst query, negated if needed so that `answer - q*(P) >= 0`.
    pub qstar: LowSensitivityQuery,
    /// Which of the T interactions produced it.
    pub tstar: usize,
    /// `q*(P) - q*(x_{t*})`, the de-correlated expectation integrand.
    pub qstar_pop_minus_sample: f64,
    /// The (sign-adjusted) answer the mechanism gave to q*.
    pub answer: f64,
    /// `answer - q*(P)`, nonnegative by the sign convention.
    pub pop_error: f64,
}

/// Run T independent games on independent samples and return the query
/// with the largest absolute population error, sign-fixed so its answer
/// does not undershoot the population value. Ties break to the lowest
/// (t, j) lexicographically.
pub fn run_monitor(
    population: &Distribution,
    n: usize,
    t_count: usize,
    k: usize,
    mechanism: &dyn MechanismFactory,
    analyst: &dyn AnalystFactory,
    seed: u64,
) -> Result<MonitorOutput> {
    if t_count == 0 {
        return Err(Error::InvalidConfig("the monitor needs T >= 1".into()));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    let mut games = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let game = run_accuracy_game(population, n, k, mechanism, analyst, child_seed(seed, t as u64))?;
        let errs = game
            .per_round_pop_errs
            .as_ref()
            .expect("accuracy games report population errors");
        for (j, &err) in errs.iter().enumerate() {
            let better = match best {
                None => true,
                Some((b, _, _)) => err.abs() > b,
            };
            if better {
                best = Some((err.abs(), t, j));
            }
        }
        games.push(game);
    }
    let (_, tstar, jstar) = best.ok_or_else(|| {
        Error::Protocol("the monitor saw no answered rounds (all games refused immediately)".into())
    })?;
    let game = &games[tstar];
    let (query, answer) = match &game.transcript.records()[jstar] {
        (Query::Statistical(q), Answer::Value(a)) => (q.clone(), *a),
        _ => unreachable!("accuracy games record statistical rounds"),
    };
    let err_p = game.per_round_pop_errs.as_ref().expect("population errors")[jstar];
    let lifted = LowSensitivityQuery::from_sq(query, n);
    // sign fix: negate so that the answer does not fall below q*(P)
    let (qstar, answer) = if err_p >= 0.0 {
        (lifted, answer)
    } else {
        (lifted.negated(), -answer)
    };
    let (qstar_pop, _) = qstar.population_value(population, n, 2, 0)?;
    let qstar_sample = qstar.eval(&game.sample);
    Ok(MonitorOutput {
        qstar_pop_minus_sample: qstar_pop - qstar_sample,
        answer,
        pop_error: answer - qstar_pop,
        qstar,
        tstar,
    })
}

//! Adaptive adversaries that issue query sequences against a mechanism.
//!
//! Two built-in strategies: a nonadaptive analyst issuing fresh random
//! {0,1}-valued queries (the union-bound baseline), and an overfitting
//! attack that correlates probe answers with sample membership and then
//! emits one query engineered so its empirical value on the hidden sample
//! exceeds its population value. The attack assumes the analyst knows the
//! population query values, which holds in the accuracy game where the
//! analyst chooses the distribution.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::StatisticalQuery;
use crate::seed::rng_from_seed;
use crate::universe::{Distribution, Universe};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalystKind {
    RandomNonadaptive,
    OverfitAttack,
}

/// Attack shape: `k_probe` random probes followed by one correlation query
/// whose table is 1 on the top `ceil(selection_fraction * |X|)` elements by
/// score.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AttackParams {
    pub k_probe: usize,
    pub selection_fraction: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            k_probe: 100,
            selection_fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalystConfig {
    pub kind: AnalystKind,
    #[serde(default)]
    pub attack_params: AttackParams,
}

impl AnalystConfig {
    pub fn random_nonadaptive() -> Self {
        Self {
            kind: AnalystKind::RandomNonadaptive,
            attack_params: AttackParams::default(),
        }
    }

    pub fn overfit_attack(params: AttackParams) -> Self {
        Self {
            kind: AnalystKind::OverfitAttack,
            attack_params: params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.attack_params.selection_fraction;
        if self.kind == AnalystKind::OverfitAttack && !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "selection_fraction {f} must lie in (0, 1]"
            )));
        }
        Ok(())
    }

    pub fn tag(&self) -> String {
        match self.kind {
            AnalystKind::RandomNonadaptive => "random-nonadaptive".into(),
            AnalystKind::OverfitAttack => format!(
                "overfit-attack(k_probe={}, f={})",
                self.attack_params.k_probe, self.attack_params.selection_fraction
            ),
        }
    }
}

/// A live analyst bound to one game run. Sees only its own query/answer
/// history and, when it chose the distribution, the population; never the
/// mechanism's sample.
pub struct AnalystState {
    kind: AnalystKind,
    attack: AttackParams,
    history: Vec<(StatisticalQuery, f64)>,
    population: Option<Distribution>,
    rng: ChaCha8Rng,
    tag: String,
}

impl AnalystState {
    pub fn new(config: &AnalystConfig, population: Option<Distribution>, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.kind == AnalystKind::OverfitAttack && population.is_none() {
            return Err(Error::InvalidConfig(
                "the overfit attack needs the population it chose".into(),
            ));
        }
        Ok(Self {
            kind: config.kind,
            attack: config.attack_params,
            history: Vec::new(),
            population,
            rng: rng_from_seed(seed),
            tag: config.tag(),
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn history(&self) -> &[(StatisticalQuery, f64)] {
        &self.history
    }

    /// The query for `round`; rounds are numbered from 0 and the caller
    /// must report the answer via [`Self::observe`] before the next round.
    pub fn next_query(&mut self, universe: &Universe, round: usize) -> Result<StatisticalQuery> {
        if round != self.history.len() {
            return Err(Error::Protocol(format!(
                "round {round} requested but {} rounds are recorded",
                self.history.len()
            )));
        }
        match self.kind {
            AnalystKind::RandomNonadaptive => random_binary_query(universe, &mut self.rng),
            AnalystKind::OverfitAttack => {
                if round < self.attack.k_probe {
                    random_binary_query(universe, &mut self.rng)
                } else if round == self.attack.k_probe {
                    let p = self.population.as_ref().expect("checked at construction");
                    // degenerate attack with no probes ranks by zero scores
                    let scores = if self.history.is_empty() {
                        vec![0.0; universe.size()]
                    } else {
                        attack_score_table(&self.history, p)?
                    };
                    build_selection_query(universe, &scores, self.attack.selection_fraction)
                } else {
                    Err(Error::Protocol(format!(
                        "the attack plays {} rounds, round {round} requested",
                        self.attack.k_probe + 1
                    )))
                }
            }
        }
    }

    /// Record the mechanism's answer to the last issued query.
    pub fn observe(&mut self, query: &StatisticalQuery, answer: f64) {
        self.history.push((query.clone(), answer));
    }

    /// How many rounds this analyst plays out of an allowed k. The attack
    /// stops after its probes plus the one engineered query.
    pub fn planned_rounds(&self, k: usize) -> usize {
        match self.kind {
            AnalystKind::RandomNonadaptive => k,
            AnalystKind::OverfitAttack => k.min(self.attack.k_probe + 1),
        }
    }
}

fn random_binary_query(universe: &Universe, rng: &mut ChaCha8Rng) -> Result<StatisticalQuery> {
    let table: Vec<f64> = (0..universe.size())
        .map(|_| f64::from(rng.random::<bool>()))
        .collect();
    StatisticalQuery::new(universe.clone(), table)
}

/// Per-element attack scores over the recorded probes:
/// `s(z) = sum_j (a_j - q_j(P)) * (q_j(z) - 1/2)`.
pub fn attack_score_table(
    history: &[(StatisticalQuery, f64)],
    population: &Distribution,
) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::Protocol("attack scores need at least one probe".into()));
    }
    let size = population.universe().size();
    let mut scores = vec![0.0; size];
    for (query, answer) in history {
        let residual = answer - query.eval_population(population)?;
        for (s, &qz) in scores.iter_mut().zip(query.table()) {
            *s += residual * (qz - 0.5);
        }
    }
    Ok(scores)
}

/// Indicator of the top `ceil(fraction * |X|)` elements by score, ties
/// broken by element index.
fn build_selection_query(
    universe: &Universe,
    scores: &[f64],
    fraction: f64,
) -> Result<StatisticalQuery> {
    let size = universe.size();
    let take = ((fraction * size as f64).ceil() as usize).clamp(1, size);
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut table = vec![0.0; size];
    for &i in order.iter().take(take) {
        table[i] = 1.0;
    }
    StatisticalQuery::new(universe.clone(), table)
}

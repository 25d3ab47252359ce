//! Transcript bookkeeping for one run of an accuracy game.

use crate::query::{Answer, Query};

/// The ordered query/answer pairs produced by one mechanism/analyst
/// interaction, together with the tags and seed that reproduce it.
#[derive(Clone, Debug)]
pub struct Transcript {
    records: Vec<(Query, Answer)>,
    mechanism_tag: String,
    analyst_tag: String,
    seed: u64,
}

impl Transcript {
    pub fn new(mechanism_tag: impl Into<String>, analyst_tag: impl Into<String>, seed: u64) -> Self {
        Self {
            records: Vec::new(),
            mechanism_tag: mechanism_tag.into(),
            analyst_tag: analyst_tag.into(),
            seed,
        }
    }

    pub fn push(&mut self, query: Query, answer: Answer) {
        self.records.push((query, answer));
    }

    pub fn records(&self) -> &[(Query, Answer)] {
        &self.records
    }

    pub fn rounds(&self) -> usize {
        self.records.len()
    }

    pub fn mechanism_tag(&self) -> &str {
        &self.mechanism_tag
    }

    pub fn analyst_tag(&self) -> &str {
        &self.analyst_tag
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

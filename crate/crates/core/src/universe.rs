//! Finite universes, distributions over them, and samples drawn from them.
//!
//! Element identifiers are dense integer indices into the universe so that
//! query tables and multiplicative-weights vectors get O(1) lookups. A
//! universe may optionally carry string labels (used when loading from
//! JSON); labels play no role in evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Tolerance for pmf normalization checks.
pub const PMF_TOLERANCE: f64 = 1e-12;

#[derive(Debug)]
struct UniverseInner {
    size: usize,
    labels: Option<Vec<String>>,
}

/// A finite ground set. Cheap to clone; shared by samples, queries, and
/// distributions over it.
#[derive(Clone, Debug)]
pub struct Universe {
    inner: Arc<UniverseInner>,
}

impl Universe {
    /// Universe of `size` anonymous elements indexed `0..size`.
    pub fn indexed(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDistribution("universe must be nonempty".into()));
        }
        Ok(Self {
            inner: Arc::new(UniverseInner { size, labels: None }),
        })
    }

    /// Universe with explicit, distinct element labels.
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDistribution("universe must be nonempty".into()));
        }
        let mut seen = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if seen.insert(l.clone(), i).is_some() {
                return Err(Error::InvalidDistribution(format!(
                    "duplicate element identifier {l:?}"
                )));
            }
        }
        Ok(Self {
            inner: Arc::new(UniverseInner {
                size: labels.len(),
                labels: Some(labels),
            }),
        })
    }

    pub fn size(&self) -> usize {
        self.inner.size
    }

    pub fn label(&self, index: usize) -> String {
        match &self.inner.labels {
            Some(ls) => ls[index].clone(),
            None => index.to_string(),
        }
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        match &self.inner.labels {
            Some(ls) => ls.iter().position(|l| l == label),
            None => label.parse::<usize>().ok().filter(|&i| i < self.inner.size),
        }
    }

    pub fn contains(&self, element: u32) -> bool {
        (element as usize) < self.inner.size
    }

    fn check_contains(&self, element: u32) -> Result<()> {
        if self.contains(element) {
            Ok(())
        } else {
            Err(Error::DomainMismatch(format!(
                "element {element} not in universe of size {}",
                self.size()
            )))
        }
    }
}

impl PartialEq for Universe {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.size == other.inner.size && self.inner.labels == other.inner.labels)
    }
}

/// Fail with a domain-mismatch error unless both universes agree.
pub fn check_same_universe(a: &Universe, b: &Universe, context: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DomainMismatch(format!("{context}: universes differ")))
    }
}

/// A probability distribution over a [`Universe`], stored as an explicit
/// probability mass function.
#[derive(Clone, Debug)]
pub struct Distribution {
    universe: Universe,
    pmf: Arc<Vec<f64>>,
    cdf: Arc<Vec<f64>>,
}

impl Distribution {
    pub fn new(universe: Universe, pmf: Vec<f64>) -> Result<Self> {
        if pmf.len() != universe.size() {
            return Err(Error::InvalidDistribution(format!(
                "pmf has {} entries for a universe of size {}",
                pmf.len(),
                universe.size()
            )));
        }
        let mut total = 0.0;
        for &p in &pmf {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "pmf entry {p} is negative or non-finite"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "pmf sums to {total}, expected 1 within {PMF_TOLERANCE:e}"
            )));
        }
        let mut cdf = Vec::with_capacity(pmf.len());
        let mut acc = 0.0;
        for &p in &pmf {
            acc += p;
            cdf.push(acc);
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Ok(Self {
            universe,
            pmf: Arc::new(pmf),
            cdf: Arc::new(cdf),
        })
    }

    pub fn uniform(universe: Universe) -> Self {
        let n = universe.size();
        let p = 1.0 / n as f64;
        let pmf = vec![p; n];
        let cdf: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
        Self {
            universe,
            pmf: Arc::new(pmf),
            cdf: Arc::new(cdf),
        }
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample_element(&self, rng: &mut ChaCha8Rng) -> u32 {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u) as u32
    }

    /// Draw `n` independent elements.
    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Sample> {
        if n == 0 {
            return Err(Error::InvalidDistribution("sample size must be >= 1".into()));
        }
        let elements = (0..n).map(|_| self.sample_element(rng)).collect();
        Ok(Sample {
            universe: self.universe.clone(),
            elements,
        })
    }

    /// Load `{"elements": [...], "pmf": [...]}` from JSON text. Elements may
    /// be strings or numbers; they become labels in listed order.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            elements: Vec<serde_json::Value>,
            pmf: Vec<f64>,
        }
        let doc: Doc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidDistribution(format!("bad JSON: {e}")))?;
        let labels = doc
            .elements
            .iter()
            .map(|v| match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect();
        let universe = Universe::from_labels(labels)?;
        Distribution::new(universe, doc.pmf)
    }
}

/// An ordered vector of `n` elements from a universe. Order is retained
/// only so that replace-one operations can address positions; all query
/// semantics are multiset semantics.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    universe: Universe,
    elements: Vec<u32>,
}

impl Sample {
    pub fn new(universe: Universe, elements: Vec<u32>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidDistribution("sample must be nonempty".into()));
        }
        for &e in &elements {
            universe.check_contains(e)?;
        }
        Ok(Self { universe, elements })
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[u32] {
        &self.elements
    }

    /// New sample equal to `self` except position `index` holds `element`.
    pub fn replaced(&self, index: usize, element: u32) -> Result<Sample> {
        if index >= self.elements.len() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.elements.len(),
            });
        }
        self.universe.check_contains(element)?;
        let mut elements = self.elements.clone();
        elements[index] = element;
        Ok(Sample {
            universe: self.universe.clone(),
            elements,
        })
    }

    /// The empirical distribution of this sample over its universe.
    pub fn empirical_distribution(&self) -> Distribution {
        let mut pmf = vec![0.0; self.universe.size()];
        let w = 1.0 / self.elements.len() as f64;
        for &e in &self.elements {
            pmf[e as usize] += w;
        }
        Distribution::new(self.universe.clone(), pmf)
            .expect("empirical pmf is normalized by construction")
    }
}

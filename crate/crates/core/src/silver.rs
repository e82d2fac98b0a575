//! Bag-of-words logistic classifiers producing silver subjectivity and
//! objectivity labels.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{tokenize, Corpus};
use crate::error::{Error, Result};
use crate::tape::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubjectivityLabel {
    Subjective,
    Objective,
}

impl SubjectivityLabel {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "subj" => Ok(Self::Subjective),
            "obj" => Ok(Self::Objective),
            other => Err(Error::Data(format!("subjectivity label must be subj or obj, got {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Subjective => "subj",
            Self::Objective => "obj",
        }
    }
}

/// One line of a subjectivity training corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSentence {
    pub label: SubjectivityLabel,
    pub tokens: Vec<String>,
}

impl LabeledSentence {
    pub fn new(label: SubjectivityLabel, text: &str) -> Self {
        Self {
            label,
            tokens: tokenize(text),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelerConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the training loss changes by less than this between epochs.
    pub tolerance: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_epochs: 200,
            tolerance: 1e-6,
        }
    }
}

/// Linear model over token counts; label 1 iff probability ≥ 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct SilverLabeler {
    pub positive: SubjectivityLabel,
    terms: BTreeMap<String, usize>,
    weights: Vec<f64>,
    bias: f64,
    epochs: usize,
}

impl SilverLabeler {
    pub fn from_parts(positive: SubjectivityLabel, weights: BTreeMap<String, f64>, bias: f64) -> Self {
        let mut terms = BTreeMap::new();
        let mut w = Vec::with_capacity(weights.len());
        for (i, (t, v)) in weights.into_iter().enumerate() {
            terms.insert(t, i);
            w.push(v);
        }
        Self {
            positive,
            terms,
            weights: w,
            bias,
            epochs: 0,
        }
    }

    fn score<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut z = self.bias;
        for t in tokens {
            if let Some(&i) = self.terms.get(t.as_ref()) {
                z += self.weights[i];
            }
        }
        z
    }

    pub fn probability<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        sigmoid(self.score(tokens))
    }

    pub fn label<S: AsRef<str>>(&self, tokens: &[S]) -> bool {
        self.probability(tokens) >= 0.5
    }

    pub fn weight(&self, term: &str) -> Option<f64> {
        self.terms.get(term).map(|&i| self.weights[i])
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs
    }
}

/// Fits a logistic model by full-batch gradient descent from zero weights.
pub fn train_silver_labeler(
    corpus: &[LabeledSentence],
    positive: SubjectivityLabel,
    cfg: &LabelerConfig,
) -> Result<SilverLabeler> {
    let n_pos = corpus.iter().filter(|s| s.label == positive).count();
    if n_pos == 0 || n_pos == corpus.len() {
        return Err(Error::Data(
            "subjectivity corpus needs examples of both classes".to_string(),
        ));
    }
    let mut terms: BTreeMap<String, usize> = BTreeMap::new();
    for s in corpus {
        for t in &s.tokens {
            let next = terms.len();
            terms.entry(t.clone()).or_insert(next);
        }
    }
    // Sparse count vectors.
    let rows: Vec<(Vec<(usize, f64)>, f64)> = corpus
        .iter()
        .map(|s| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for t in &s.tokens {
                *counts.entry(terms[t]).or_insert(0.0) += 1.0;
            }
            let y = if s.label == positive { 1.0 } else { 0.0 };
            (counts.into_iter().collect(), y)
        })
        .collect();
    let n = rows.len() as f64;
    let mut w = vec![0.0; terms.len()];
    let mut b = 0.0;
    let mut prev = f64::INFINITY;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        epochs += 1;
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, y) in &rows {
            let z = b + x.iter().map(|&(i, c)| w[i] * c).sum::<f64>();
            let p = sigmoid(z);
            loss += softplus(z) - y * z;
            let d = p - y;
            gb += d;
            for &(i, c) in x {
                gw[i] += d * c;
            }
        }
        loss /= n;
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= cfg.learning_rate * gi / n;
        }
        b -= cfg.learning_rate * gb / n;
        if (prev - loss).abs() < cfg.tolerance {
            break;
        }
        prev = loss;
    }
    Ok(SilverLabeler {
        positive,
        terms,
        weights: w,
        bias: b,
        epochs,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Sets both silver labels on every example. Labels are independent.
pub fn assign_silver_labels(corpus: &mut Corpus, subj: &SilverLabeler, obj: &SilverLabeler) {
    for e in &mut corpus.examples {
        e.silver_subj = Some(subj.label(&e.tokens));
        e.silver_obj = Some(obj.label(&e.tokens));
    }
}

//! Utterances, corpora, tokenization and batch sampling.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stance {
    Favour,
    Against,
    Neutral,
}

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Favour, Stance::Against, Stance::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Parses a corpus stance column. `UNKNOWN` yields `Ok(None)`.
    pub fn parse(s: &str) -> Result<Option<Self>> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" | "FAVOUR" => Ok(Some(Stance::Favour)),
            "AGAINST" => Ok(Some(Stance::Against)),
            "NONE" | "NEUTRAL" => Ok(Some(Stance::Neutral)),
            "UNKNOWN" => Ok(None),
            other => Err(Error::Data(format!("unknown stance label {other:?}"))),
        }
    }

    /// Column spelling used when writing corpora.
    pub fn as_str(self) -> &'static str {
        match self {
            Stance::Favour => "FAVOR",
            Stance::Against => "AGAINST",
            Stance::Neutral => "NONE",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::Data(format!("unknown domain tag {other:?}"))),
        }
    }
}

/// One utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub topic: String,
    pub text: String,
    pub tokens: Vec<String>,
    /// Vocabulary ids; empty until [`Corpus::index`] runs.
    pub token_ids: Vec<usize>,
    pub stance: Option<Stance>,
    pub silver_subj: Option<bool>,
    pub silver_obj: Option<bool>,
    pub domain: Domain,
}

impl Example {
    pub fn new(id: &str, topic: &str, text: &str, stance: Option<Stance>, domain: Domain) -> Self {
        Self {
            id: id.to_string(),
            topic: topic.to_string(),
            text: text.to_string(),
            tokens: tokenize(text),
            token_ids: Vec::new(),
            stance,
            silver_subj: None,
            silver_obj: None,
            domain,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    pub topic: String,
    pub examples: Vec<Example>,
}

impl Corpus {
    /// Rejects duplicate ids.
    pub fn new(topic: &str, examples: Vec<Example>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &examples {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Data(format!("duplicate example id {:?}", e.id)));
            }
        }
        Ok(Self {
            topic: topic.to_string(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Counts per stance class in [`Stance::ALL`] order, plus unlabeled.
    pub fn label_histogram(&self) -> ([usize; 3], usize) {
        let mut h = [0; 3];
        let mut unlabeled = 0;
        for e in &self.examples {
            match e.stance {
                Some(s) => h[s.index()] += 1,
                None => unlabeled += 1,
            }
        }
        (h, unlabeled)
    }

    pub fn index(&mut self, vocab: &Vocabulary) {
        for e in &mut self.examples {
            e.token_ids = vocab.encode(&e.tokens);
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().flat_map(|e| e.tokens.iter().map(String::as_str))
    }

    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            topic: self.topic.clone(),
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Copy with every stance label removed.
    pub fn without_labels(&self) -> Corpus {
        let mut c = self.clone();
        for e in &mut c.examples {
            e.stance = None;
        }
        c
    }
}

/// Lowercases and splits on whitespace and punctuation. Hashtags and
/// mentions stay whole; URLs collapse to `<url>`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut word = String::new();
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let starts_with = |i: usize, p: &str| p.chars().enumerate().all(|(k, pc)| chars.get(i + k) == Some(&pc));
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if word.is_empty() && (starts_with(i, "http://") || starts_with(i, "https://") || starts_with(i, "www.")) {
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            out.push("<url>".to_string());
            continue;
        }
        if is_word(c) {
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(core::mem::take(&mut word));
            }
            if (c == '#' || c == '@') && chars.get(i + 1).is_some_and(|&n| is_word(n)) {
                let mut tag = String::new();
                tag.push(c);
                i += 1;
                while i < chars.len() && is_word(chars[i]) {
                    tag.push(chars[i]);
                    i += 1;
                }
                out.push(tag);
                continue;
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        i += 1;
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Deterministic train/validation split. Each part keeps corpus order.
pub fn split_validation(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
    }
    let n = corpus.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0x5917);
    idx.shuffle(&mut rng);
    let mut n_val = libm::round(fraction * n as f64) as usize;
    if fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let mut val: Vec<usize> = idx[..n_val].to_vec();
    let mut train: Vec<usize> = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((corpus.subset(&train), corpus.subset(&val)))
}

/// Indices of one training batch per domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchIndices {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    /// Set when a corpus is smaller than the batch and was sampled with replacement.
    pub with_replacement: bool,
}

/// Draws `m` examples from each corpus for iteration `iteration` (1-based).
///
/// Examples are visited in a fresh permutation each epoch; the result depends
/// only on `(seed, iteration)`, never on prior calls.
pub fn sample_batches(n_source: usize, n_target: usize, m: usize, seed: u64, iteration: u64) -> Result<BatchIndices> {
    if n_source == 0 || n_target == 0 {
        return Err(Error::Data("cannot sample from an empty corpus".into()));
    }
    if m == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if iteration == 0 {
        return Err(Error::InvalidArgument("iterations are numbered from 1".into()));
    }
    let source = draw(n_source, m, seed, 1, iteration);
    let target = draw(n_target, m, seed, 2, iteration);
    Ok(BatchIndices {
        source,
        target,
        with_replacement: m > n_source || m > n_target,
    })
}

fn epoch_permutation(n: usize, seed: u64, stream: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng);
    p
}

fn draw(n: usize, m: usize, seed: u64, stream: u64, iteration: u64) -> Vec<usize> {
    if m > n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ iteration.wrapping_mul(0xD1B5_4A32_D192_ED03));
        rng.set_stream(stream + 16);
        return (0..m).map(|_| rng.random_range(0..n)).collect();
    }
    let start = (iteration - 1) * m as u64;
    let mut out = Vec::with_capacity(m);
    let mut epoch = start / n as u64;
    let mut pos = (start % n as u64) as usize;
    let mut perm = epoch_permutation(n, seed, stream, epoch);
    while out.len() < m {
        if pos == n {
            epoch += 1;
            pos = 0;
            perm = epoch_permutation(n, seed, stream, epoch);
        }
        out.push(perm[pos]);
        pos += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(toks("Women are STRONG!"), ["women", "are", "strong", "!"]);
        assert_eq!(toks("#RapeCulture is"), ["#rapeculture", "is"]);
        assert_eq!(toks("see http://x.co"), ["see", "<url>"]);
        assert_eq!(toks("@Someone, hi."), ["@someone", ",", "hi", "."]);
        assert!(toks("   ").is_empty());
        assert_eq!(toks("a#b"), ["a", "#b"]);
        assert_eq!(toks("# alone"), ["#", "alone"]);
    }

    #[test]
    fn stance_parsing() {
        assert_eq!(Stance::parse("FAVOR").unwrap(), Some(Stance::Favour));
        assert_eq!(Stance::parse("none").unwrap(), Some(Stance::Neutral));
        assert_eq!(Stance::parse("UNKNOWN").unwrap(), None);
        assert!(Stance::parse("MAYBE").is_err());
        for s in Stance::ALL {
            assert_eq!(Stance::parse(s.as_str()).unwrap(), Some(s));
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let e = Example::new("1", "t", "x", None, Domain::Target);
        assert!(Corpus::new("t", vec![e.clone(), e]).is_err());
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let b = sample_batches(100, 50, 8, 7, 3).unwrap();
        assert_eq!(b.source.len(), 8);
        assert_eq!(b.target.len(), 8);
        assert_eq!(b, sample_batches(100, 50, 8, 7, 3).unwrap());
        assert_ne!(b, sample_batches(100, 50, 8, 7, 4).unwrap());
        assert!(!b.with_replacement);
    }

    #[test]
    fn one_example_corpora() {
        for it in 1..5 {
            let b = sample_batches(1, 1, 1, 0, it).unwrap();
            assert_eq!(b.source, [0]);
            assert_eq!(b.target, [0]);
        }
    }

    #[test]
    fn epoch_covers_every_example() {
        let n = 40;
        let m = 8;
        for epoch in 0..3u64 {
            let mut seen = BTreeSet::new();
            for k in 1..=(n / m) as u64 {
                let b = sample_batches(n, n, m, 11, epoch * (n / m) as u64 + k).unwrap();
                seen.extend(b.source);
            }
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn oversized_batch_uses_replacement() {
        let b = sample_batches(3, 10, 5, 1, 1).unwrap();
        assert!(b.with_replacement);
        assert_eq!(b.source.len(), 5);
        assert!(b.source.iter().all(|&i| i < 3));
    }

    #[test]
    fn validation_split_is_deterministic_and_disjoint() {
        let ex: Vec<Example> = (0..50)
            .map(|i| Example::new(&format!("{i}"), "t", "a b", Some(Stance::Favour), Domain::Source))
            .collect();
        let c = Corpus::new("t", ex).unwrap();
        let (tr, va) = split_validation(&c, 0.1, 5).unwrap();
        assert_eq!(va.len(), 5);
        assert_eq!(tr.len(), 45);
        let (tr2, va2) = split_validation(&c, 0.1, 5).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let ids: BTreeSet<_> = tr.examples.iter().chain(&va.examples).map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 50);
    }
}

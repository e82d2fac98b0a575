//! Two-domain synthetic stance corpora with a controllable lexical shift.
//!
//! Each utterance carries subjective and/or objective cue words of its stance
//! class among neutral filler words. The target domain swaps a fraction of
//! word types for synonyms whose vectors sit near the original plus a domain
//! offset. By default subjective cues, objective cues and fillers each get
//! their own offset direction, so the two views shift differently.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{Corpus, Domain, Example, Stance};
use crate::error::{Error, Result};
use crate::silver::{LabeledSentence, SubjectivityLabel};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_source: usize,
    pub n_target: usize,
    /// Fraction of word types replaced by target-only synonyms.
    pub shift_rate: f64,
    pub seed: u64,
    pub embed_dim: usize,
    /// Subjective (and, separately, objective) cue words per stance class.
    pub cues_per_class: usize,
    pub fillers: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Length of the domain offset added to synonym vectors.
    pub shift_strength: f64,
    /// Spread of cue vectors around their class prototype.
    pub cue_spread: f64,
    /// Per-component noise on synonym vectors.
    pub synonym_noise: f64,
    /// Probabilities of (subjective only, objective only, both) cue sets in
    /// the source domain.
    pub source_mix: [f64; 3],
    /// The same for the target domain.
    pub target_mix: [f64; 3],
    /// Subjectivity-corpus sentences per class.
    pub subjectivity_size: usize,
    /// Shift subjective cues, objective cues and fillers along independent
    /// offset directions instead of one shared direction.
    pub separate_offsets: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_source: 2000,
            n_target: 2000,
            shift_rate: 0.6,
            seed: 0,
            embed_dim: 16,
            cues_per_class: 4,
            fillers: 40,
            min_len: 5,
            max_len: 10,
            shift_strength: 3.0,
            cue_spread: 0.5,
            synonym_noise: 0.1,
            source_mix: [0.4, 0.4, 0.2],
            target_mix: [0.4, 0.4, 0.2],
            subjectivity_size: 500,
            separate_offsets: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.shift_rate) {
            return Err(Error::Config(format!("shift rate {} outside [0, 1]", self.shift_rate)));
        }
        if self.n_source == 0 || self.n_target == 0 || self.embed_dim == 0 || self.cues_per_class == 0 {
            return Err(Error::Config("synthetic sizes must be at least 1".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "utterance lengths need 1 ≤ min_len ≤ max_len (got {}..{})",
                self.min_len, self.max_len
            )));
        }
        for mix in [self.source_mix, self.target_mix] {
            if mix.iter().any(|&p| p.is_nan() || p < 0.0) || mix.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!("cue mix {mix:?} must be non-negative and not all zero")));
            }
        }
        Ok(())
    }
}

/// Generated corpora plus the vectors and subjectivity data that go with them.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    /// Labeled, with silver labels set from the planted cue types.
    pub source: Corpus,
    /// Unlabeled; silver labels set.
    pub target: Corpus,
    /// Held-out stance of every target example, in corpus order.
    pub target_gold: Vec<Stance>,
    /// One vector per word type, both domains included.
    pub embeddings: Vec<(String, Vec<f64>)>,
    pub subjectivity: Vec<LabeledSentence>,
}

impl SynthCorpus {
    pub fn embedding_map(&self) -> BTreeMap<&str, &[f64]> {
        self.embeddings.iter().map(|(w, v)| (w.as_str(), v.as_slice())).collect()
    }
}

const CLASS_TAG: [&str; 3] = ["f", "a", "n"];

fn cue_word(subjective: bool, class: usize, k: usize) -> String {
    format!("{}{}{k}", if subjective { "sub" } else { "obj" }, CLASS_TAG[class])
}

fn filler_word(k: usize) -> String {
    format!("fil{k}")
}

fn synonym(w: &str) -> String {
    format!("{w}t")
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

struct Lexicon {
    /// `[subjective?][class][k]`
    cues: [[Vec<String>; 3]; 2],
    fillers: Vec<String>,
    /// Word types that appear as their synonym in the target domain.
    shifted: BTreeMap<String, String>,
}

impl Lexicon {
    fn surface<'a>(&'a self, w: &'a str, domain: Domain) -> &'a str {
        match domain {
            Domain::Target => self.shifted.get(w).map(String::as_str).unwrap_or(w),
            Domain::Source => w,
        }
    }
}

fn pick_mix(rng: &mut ChaCha8Rng, mix: &[f64; 3]) -> usize {
    let total: f64 = mix.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &p) in mix.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    2
}

fn utterance(
    rng: &mut ChaCha8Rng,
    spec: &SynthSpec,
    lex: &Lexicon,
    class: usize,
    kind: usize,
    domain: Domain,
) -> (Vec<String>, bool, bool) {
    let has_subj = kind != 1;
    let has_obj = kind != 0;
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut words: Vec<&str> = Vec::with_capacity(len.max(2));
    if has_subj {
        let c = &lex.cues[1][class];
        words.push(&c[rng.random_range(0..c.len())]);
    }
    if has_obj {
        let c = &lex.cues[0][class];
        words.push(&c[rng.random_range(0..c.len())]);
    }
    while words.len() < len && !lex.fillers.is_empty() {
        words.push(&lex.fillers[rng.random_range(0..lex.fillers.len())]);
    }
    words.shuffle(rng);
    let out = words.iter().map(|w| String::from(lex.surface(w, domain))).collect();
    (out, has_subj, has_obj)
}

/// Builds both corpora. Identical specs give identical output.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.embed_dim;
    let base_scale = 1.0 / libm::sqrt(d as f64);

    let mut vectors: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let empty = || [Vec::new(), Vec::new(), Vec::new()];
    let mut cues = [empty(), empty()];
    for (s, cue_set) in cues.iter_mut().enumerate() {
        for (class, words) in cue_set.iter_mut().enumerate() {
            let proto = unit(normal_vec(&mut rng, d, 1.0));
            for k in 0..spec.cues_per_class {
                let w = cue_word(s == 1, class, k);
                let noise = normal_vec(&mut rng, d, spec.cue_spread * base_scale);
                vectors.insert(w.clone(), proto.iter().zip(&noise).map(|(p, n)| p + n).collect());
                words.push(w);
            }
        }
    }
    let mut fillers = Vec::with_capacity(spec.fillers);
    for k in 0..spec.fillers {
        let w = filler_word(k);
        vectors.insert(w.clone(), normal_vec(&mut rng, d, base_scale));
        fillers.push(w);
    }

    // Shift a `shift_rate` share of every word family.
    let shared = unit(normal_vec(&mut rng, d, 1.0));
    let mut view_offsets = [shared.clone(), shared.clone(), shared];
    if spec.separate_offsets {
        for o in &mut view_offsets[1..] {
            *o = unit(normal_vec(&mut rng, d, 1.0));
        }
    }
    let mut shifted = BTreeMap::new();
    let mut families: Vec<(Vec<String>, usize)> = Vec::new();
    for (s, cue_set) in cues.iter().enumerate() {
        families.extend(cue_set.iter().map(|f| (f.clone(), s)));
    }
    families.push((fillers.clone(), 2));
    for (fam, which) in &families {
        let offset = &view_offsets[*which];
        let k = libm::round(spec.shift_rate * fam.len() as f64) as usize;
        let mut order = fam.clone();
        order.shuffle(&mut rng);
        for w in order.into_iter().take(k) {
            let base = &vectors[&w];
            let noise = normal_vec(&mut rng, d, spec.synonym_noise * base_scale);
            let v: Vec<f64> = (0..d)
                .map(|j| base[j] + spec.shift_strength * offset[j] + noise[j])
                .collect();
            let syn = synonym(&w);
            shifted.insert(w, syn.clone());
            vectors.insert(syn, v);
        }
    }
    let lex = Lexicon { cues, fillers, shifted };

    let topic = "synthetic";
    let mut make = |n: usize, domain: Domain, mix: &[f64; 3], prefix: &str| -> Result<(Corpus, Vec<Stance>)> {
        let mut examples = Vec::with_capacity(n);
        let mut gold = Vec::with_capacity(n);
        for i in 0..n {
            let class = rng.random_range(0..3);
            let kind = pick_mix(&mut rng, mix);
            let (tokens, subj, obj) = utterance(&mut rng, spec, &lex, class, kind, domain);
            let stance = Stance::from_index(class).unwrap();
            let label = (domain == Domain::Source).then_some(stance);
            let mut e = Example::new(&format!("{prefix}{i:05}"), topic, &tokens.join(" "), label, domain);
            e.silver_subj = Some(subj);
            e.silver_obj = Some(obj);
            examples.push(e);
            gold.push(stance);
        }
        Ok((Corpus::new(topic, examples)?, gold))
    };
    let (source, _) = make(spec.n_source, Domain::Source, &spec.source_mix, "s")?;
    let (target, target_gold) = make(spec.n_target, Domain::Target, &spec.target_mix, "t")?;

    let mut subjectivity = Vec::with_capacity(2 * spec.subjectivity_size);
    for i in 0..2 * spec.subjectivity_size {
        let subjective = i % 2 == 0;
        let class = rng.random_range(0..3);
        let kind = if subjective { 0 } else { 1 };
        let (tokens, _, _) = utterance(&mut rng, spec, &lex, class, kind, Domain::Source);
        let label = if subjective {
            SubjectivityLabel::Subjective
        } else {
            SubjectivityLabel::Objective
        };
        subjectivity.push(LabeledSentence { label, tokens });
    }

    Ok(SynthCorpus {
        source,
        target,
        target_gold,
        embeddings: vectors.into_iter().collect(),
        subjectivity,
    })
}

/// Stance implied by the planted cue words of a token sequence, if any.
pub fn planted_stance<S: AsRef<str>>(tokens: &[S]) -> Option<Stance> {
    tokens.iter().find_map(|t| {
        let t = t.as_ref();
        let rest = t.strip_prefix("sub").or_else(|| t.strip_prefix("obj"))?;
        let class = CLASS_TAG.iter().position(|c| rest.starts_with(c))?;
        rest[1..].chars().next().filter(char::is_ascii_digit)?;
        Stance::from_index(class)
    })
}

//! Macro-F1, the proxy A-distance probe and feature dumps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Corpus, Domain, Stance};
use crate::error::{Error, Result};
use crate::model::{argmax, DanModel, FeatureView};

/// Per-class scores behind a macro average.
#[derive(Clone, Debug, PartialEq)]
pub struct F1Breakdown {
    pub macro_f1: f64,
    pub per_class: Vec<(usize, f64)>,
    /// Classes seen in neither gold nor predictions; each scored 0.
    pub absent: Vec<usize>,
}

pub fn macro_f1_detail(pred: &[usize], gold: &[usize], classes: &[usize]) -> Result<F1Breakdown> {
    if pred.is_empty() || classes.is_empty() {
        return Err(Error::InvalidArgument("macro-F1 of an empty input".into()));
    }
    if pred.len() != gold.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let mut per_class = Vec::with_capacity(classes.len());
    let mut absent = Vec::new();
    for &c in classes {
        let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
        for (&p, &g) in pred.iter().zip(gold) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        if tp + fp + fneg == 0 {
            absent.push(c);
        }
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
        };
        per_class.push((c, f1));
    }
    let macro_f1 = per_class.iter().map(|&(_, f)| f).sum::<f64>() / classes.len() as f64;
    Ok(F1Breakdown {
        macro_f1,
        per_class,
        absent,
    })
}

/// Unweighted mean of per-class F1 over `classes`.
pub fn macro_f1(pred: &[usize], gold: &[usize], classes: &[usize]) -> Result<f64> {
    Ok(macro_f1_detail(pred, gold, classes)?.macro_f1)
}

/// Macro-F1 over favour, against and neutral.
pub fn macro_f1_stance(pred: &[Stance], gold: &[Stance]) -> Result<f64> {
    let p: Vec<usize> = pred.iter().map(|s| s.index()).collect();
    let g: Vec<usize> = gold.iter().map(|s| s.index()).collect();
    macro_f1(&p, &g, &[0, 1, 2])
}

/// Macro-F1 over favour and against only.
pub fn macro_f1_favour_against(pred: &[Stance], gold: &[Stance]) -> Result<f64> {
    let p: Vec<usize> = pred.iter().map(|s| s.index()).collect();
    let g: Vec<usize> = gold.iter().map(|s| s.index()).collect();
    macro_f1(&p, &g, &[Stance::Favour.index(), Stance::Against.index()])
}

/// Argmax stance of every example, ties toward favour.
pub fn predict_corpus(model: &DanModel, corpus: &Corpus) -> Result<Vec<Stance>> {
    let seqs: Vec<&[usize]> = corpus.examples.iter().map(|e| e.token_ids.as_slice()).collect();
    let probs = model.predict_batch(&seqs)?;
    Ok(probs.iter().map(|p| Stance::from_index(argmax(p)).unwrap()).collect())
}

/// Three-class macro-F1 against the corpus's own stance labels.
pub fn evaluate(model: &DanModel, corpus: &Corpus) -> Result<f64> {
    let gold: Vec<Stance> = corpus
        .examples
        .iter()
        .map(|e| {
            e.stance
                .ok_or_else(|| Error::Data(format!("example {} has no stance label", e.id)))
        })
        .collect::<Result<_>>()?;
    evaluate_against(model, corpus, &gold)
}

/// Three-class macro-F1 against separately held gold labels.
pub fn evaluate_against(model: &DanModel, corpus: &Corpus, gold: &[Stance]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty corpus".into()));
    }
    let pred = predict_corpus(model, corpus)?;
    macro_f1_stance(&pred, gold)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub id: String,
    pub domain: Domain,
    pub label: Option<Stance>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDump {
    pub view: FeatureView,
    pub width: usize,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDump {
    pub fn new(view: FeatureView, width: usize) -> Self {
        Self {
            view,
            width,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: FeatureRow) -> Result<()> {
        if row.values.len() != self.width {
            return Err(Error::Data(format!(
                "feature row {} has width {} (expected {})",
                row.id,
                row.values.len(),
                self.width
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn of_domain(&self, domain: Domain) -> FeatureDump {
        FeatureDump {
            view: self.view,
            width: self.width,
            rows: self.rows.iter().filter(|r| r.domain == domain).cloned().collect(),
        }
    }
}

/// Features of every example in `corpus` for the given view.
pub fn collect_features(model: &DanModel, corpus: &Corpus, view: FeatureView) -> Result<FeatureDump> {
    let seqs: Vec<&[usize]> = corpus.examples.iter().map(|e| e.token_ids.as_slice()).collect();
    let feats = model.features(&seqs, view)?;
    let mut dump = FeatureDump::new(view, model.hidden());
    for (e, values) in corpus.examples.iter().zip(feats) {
        dump.push(FeatureRow {
            id: e.id.clone(),
            domain: e.domain,
            label: e.stance,
            values,
        })?;
    }
    Ok(dump)
}

/// Linear hinge-loss probe used for the proxy A-distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 penalty of the max-margin objective.
    pub l2: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            l2: 1e-4,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PadEstimate {
    /// Held-out domain-classification error.
    pub epsilon: f64,
    pub pad: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub probe: String,
}

/// `2(1 − 2ε)`.
pub fn pad_from_error(epsilon: f64) -> f64 {
    2.0 * (1.0 - 2.0 * epsilon)
}

/// Smallest per-domain sample the probe accepts.
pub const PAD_MIN_PER_DOMAIN: usize = 5;

pub fn proxy_a_distance(source: &[Vec<f64>], target: &[Vec<f64>], cfg: &ProbeConfig) -> Result<PadEstimate> {
    if source.len() < PAD_MIN_PER_DOMAIN || target.len() < PAD_MIN_PER_DOMAIN {
        return Err(Error::Data(format!(
            "PAD needs at least {PAD_MIN_PER_DOMAIN} examples per domain (got {} and {})",
            source.len(),
            target.len()
        )));
    }
    let width = source[0].len();
    if width == 0 || source.iter().chain(target).any(|r| r.len() != width) {
        return Err(Error::Data("PAD inputs must share one positive width".into()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) || cfg.epochs == 0 {
        return Err(Error::Config("probe needs 0 < train_fraction < 1 and epochs ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut train: Vec<(&[f64], f64)> = Vec::new();
    let mut test: Vec<(&[f64], f64)> = Vec::new();
    // One permutation of row positions serves both domains, so rows at the
    // same position (e.g. the same example under two encoders) never straddle
    // the split.
    let mut positions: Vec<usize> = (0..source.len().max(target.len())).collect();
    positions.shuffle(&mut rng);
    for (rows, y) in [(source, 1.0), (target, -1.0)] {
        let idx: Vec<usize> = positions.iter().copied().filter(|&i| i < rows.len()).collect();
        let n_train = (libm::round(cfg.train_fraction * rows.len() as f64) as usize).clamp(1, rows.len() - 1);
        for (k, &i) in idx.iter().enumerate() {
            let item = (rows[i].as_slice(), y);
            if k < n_train {
                train.push(item);
            } else {
                test.push(item);
            }
        }
    }
    // Standardise with training statistics.
    let n = train.len() as f64;
    let mut mean = vec![0.0; width];
    for (x, _) in &train {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / n;
        }
    }
    let mut sd = vec![0.0; width];
    for (x, _) in &train {
        for j in 0..width {
            sd[j] += (x[j] - mean[j]) * (x[j] - mean[j]) / n;
        }
    }
    for s in &mut sd {
        *s = libm::sqrt(*s);
        if *s < 1e-12 {
            *s = 1.0;
        }
    }
    let scale = |x: &[f64]| -> Vec<f64> { (0..width).map(|j| (x[j] - mean[j]) / sd[j]).collect() };
    let train: Vec<(Vec<f64>, f64)> = train.iter().map(|(x, y)| (scale(x), *y)).collect();
    let test: Vec<(Vec<f64>, f64)> = test.iter().map(|(x, y)| (scale(x), *y)).collect();

    let mut w = vec![0.0; width];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = &train[i];
            let margin = y * (dot(&w, x) + b);
            for j in 0..width {
                let mut g = cfg.l2 * w[j];
                if margin < 1.0 {
                    g -= y * x[j];
                }
                w[j] -= cfg.learning_rate * g;
            }
            if margin < 1.0 {
                b += cfg.learning_rate * y;
            }
        }
    }
    let errors = test
        .iter()
        .filter(|(x, y)| {
            let s = dot(&w, x) + b;
            // score 0 counts as a target prediction
            (s > 0.0) != (*y > 0.0)
        })
        .count();
    let epsilon = errors as f64 / test.len() as f64;
    Ok(PadEstimate {
        epsilon,
        pad: pad_from_error(epsilon),
        n_source: source.len(),
        n_target: target.len(),
        probe: format!(
            "linear hinge probe, {} epochs, lr {}, l2 {}, {}/{} stratified split",
            cfg.epochs,
            cfg.learning_rate,
            cfg.l2,
            libm::round(cfg.train_fraction * 100.0),
            libm::round((1.0 - cfg.train_fraction) * 100.0)
        ),
    })
}

/// PAD between the two domains of dumps that share one view.
pub fn proxy_a_distance_dumps(source: &FeatureDump, target: &FeatureDump, cfg: &ProbeConfig) -> Result<PadEstimate> {
    if source.width != target.width {
        return Err(Error::Data(format!(
            "feature widths differ: {} vs {}",
            source.width, target.width
        )));
    }
    let s: Vec<Vec<f64>> = source.rows.iter().map(|r| r.values.clone()).collect();
    let t: Vec<Vec<f64>> = target.rows.iter().map(|r| r.values.clone()).collect();
    proxy_a_distance(&s, &t, cfg)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

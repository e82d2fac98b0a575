//! Turns a run config into indexed corpora, an embedding table and a model.

use std::collections::BTreeSet;

use dan_core::data::{split_validation, Corpus, Domain, Stance};
use dan_core::model::{DanModel, ViewMode};
use dan_core::nn::EmbeddingTable;
use dan_core::silver::{assign_silver_labels, train_silver_labeler, LabelerConfig, SubjectivityLabel};
use dan_core::synthetic::{gen_synthetic, SynthCorpus};
use dan_core::vocab::Vocabulary;

use crate::config::{DataMode, RunConfig};
use crate::error::{DanError, Result};
use crate::formats;

/// Everything a training run consumes.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub table: EmbeddingTable,
    pub train: Corpus,
    pub validation: Corpus,
    /// Unlabeled, indexed.
    pub target: Corpus,
    /// Target stance labels when the input carried them.
    pub target_gold: Option<Vec<Stance>>,
    /// Vocabulary words with no vector (their rows are zero).
    pub oov: usize,
}

fn vocab_of(a: &Corpus, b: &Corpus) -> Vocabulary {
    Vocabulary::from_tokens(a.tokens().chain(b.tokens()), |_| true)
}

fn finish(
    cfg: &RunConfig,
    table: EmbeddingTable,
    mut source: Corpus,
    mut target: Corpus,
    target_gold: Option<Vec<Stance>>,
    oov: usize,
) -> Result<Prepared> {
    source.index(table.vocab());
    target.index(table.vocab());
    let (train, validation) = split_validation(&source, cfg.train.validation_fraction, cfg.train.seed)?;
    Ok(Prepared {
        table,
        train,
        validation,
        target,
        target_gold,
        oov,
    })
}

/// Vocabulary over both generated corpora and its embedding table.
pub fn synthetic_table(data: &SynthCorpus) -> Result<EmbeddingTable> {
    let vocab = vocab_of(&data.source, &data.target);
    let map = data.embedding_map();
    let dim = data.embeddings.first().map_or(0, |(_, v)| v.len());
    Ok(EmbeddingTable::from_lookup(vocab, dim, 0, |w| map.get(w).copied())?)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    match cfg.data {
        DataMode::Synthetic => {
            let data = gen_synthetic(&cfg.synth)?;
            let table = synthetic_table(&data)?;
            finish(cfg, table, data.source, data.target, Some(data.target_gold), 0)
        }
        DataMode::Files => prepare_files(cfg),
    }
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, name: &str) -> Result<&'a std::path::Path> {
    p.as_deref()
        .ok_or_else(|| DanError::Config(format!("{name} path is required")))
}

fn prepare_files(cfg: &RunConfig) -> Result<Prepared> {
    let p = &cfg.paths;
    let mut source = formats::read_corpus(required(&p.source, "source")?, Domain::Source)?;
    let target_labeled = formats::read_corpus(required(&p.target, "target")?, Domain::Target)?;
    if source.examples.iter().any(|e| e.stance.is_none()) {
        return Err(DanError::Data("every source example needs a stance label".into()));
    }
    let target_gold = target_labeled.examples.iter().map(|e| e.stance).collect::<Option<Vec<_>>>();
    let mut target = target_labeled.without_labels();

    match (&p.source_silver, &p.target_silver, &p.subjectivity) {
        (Some(s), Some(t), _) => {
            formats::apply_silver(&mut source, &formats::read_silver(s)?)?;
            formats::apply_silver(&mut target, &formats::read_silver(t)?)?;
        }
        (_, _, Some(subj)) => {
            let sentences = formats::read_subjectivity(subj)?;
            let lc = LabelerConfig::default();
            let subj = train_silver_labeler(&sentences, SubjectivityLabel::Subjective, &lc)?;
            let obj = train_silver_labeler(&sentences, SubjectivityLabel::Objective, &lc)?;
            assign_silver_labels(&mut source, &subj, &obj);
            assign_silver_labels(&mut target, &subj, &obj);
        }
        _ if cfg.train.view_mode != ViewMode::Single => {
            return Err(DanError::Config("dual-view runs need silver labels".into()));
        }
        _ => {}
    }

    let vocab = vocab_of(&source, &target);
    let keep: BTreeSet<String> = vocab.words().iter().cloned().collect();
    let vectors = formats::read_embeddings(required(&p.embeddings, "embeddings")?, Some(&keep))?;
    let oov = vocab.words().iter().skip(1).filter(|w| !vectors.vectors.contains_key(*w)).count();
    let table = EmbeddingTable::from_lookup(vocab, vectors.dim, 0, |w| vectors.vectors.get(w).map(Vec::as_slice))?;
    finish(cfg, table, source, target, target_gold, oov)
}

pub fn build_model(cfg: &RunConfig, table: EmbeddingTable) -> Result<DanModel> {
    Ok(DanModel::new(cfg.train.model_config(), table, cfg.train.seed)?)
}

/// Indexes a corpus read for evaluation or export against a model's vocabulary.
pub fn index_for(model: &DanModel, corpus: &mut Corpus) {
    corpus.index(model.embeddings.vocab());
}

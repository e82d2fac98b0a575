//! Alternating min-max training and its gradient-reversal shortcut.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{sample_batches, Corpus, Domain, Example};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights, MinComponents};
use crate::metrics::evaluate;
use crate::model::{AlignerKind, DanModel, ModelConfig, ViewMode};
use crate::nn::{DropoutSpec, Graph, InitScheme, Pooling, TrainMask, ViewRole};
use crate::optim::{clip_weights, lr_at, Adam};
use crate::tape::Var;
use crate::tensor::Tensor;

/// How examiners and encoders take turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coupling {
    /// `n` examiner ascent steps, then one minimisation step.
    Alternating,
    /// One combined pass through a gradient-reversal layer.
    Reversal,
}

impl Coupling {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "alternating" => Ok(Self::Alternating),
            "reversal" => Ok(Self::Reversal),
            other => Err(Error::Config(format!("coupling must be alternating or reversal, got {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Alternating => "alternating",
            Self::Reversal => "reversal",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Examiner learning-rate multiplier.
    pub lambda1: f64,
    /// Learning-rate multiplier for everything else.
    pub lambda2: f64,
    /// Examples per domain per batch.
    pub batch_size: usize,
    /// Examiner steps per outer iteration.
    pub critic_steps: usize,
    pub warmup: u64,
    pub max_iterations: u64,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: u64,
    pub seed: u64,
    pub view_mode: ViewMode,
    pub aligner: AlignerKind,
    /// `None` picks reversal for the H-variant and alternating otherwise.
    pub coupling: Option<Coupling>,
    pub clip: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub pooling: Pooling,
    pub init: InitScheme,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lambda1: 1.0,
            lambda2: 1.0,
            batch_size: 8,
            critic_steps: 5,
            warmup: 100,
            max_iterations: 2000,
            patience: 10,
            eval_every: 50,
            seed: 0,
            view_mode: ViewMode::Dual,
            aligner: AlignerKind::HAdversarial,
            coupling: None,
            clip: 0.01,
            dropout: 0.1,
            hidden: 128,
            ffn_hidden: 128,
            pooling: Pooling::Mean,
            init: InitScheme::default(),
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch size m must be at least 1".into());
        }
        if self.aligner.is_adversarial() && self.critic_steps == 0 {
            return bad(format!("aligner {} needs n ≥ 1 examiner steps", self.aligner.as_str()));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("clip", self.clip)] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.warmup == 0 || self.eval_every == 0 || self.patience == 0 {
            return bad("warmup, eval_every and patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.validation_fraction));
        }
        if self.hidden == 0 || self.ffn_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if self.coupling == Some(Coupling::Reversal) && self.aligner != AlignerKind::HAdversarial {
            return bad("gradient reversal applies only to the h-adversarial aligner".into());
        }
        Ok(())
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling.unwrap_or(match self.aligner {
            AlignerKind::HAdversarial => Coupling::Reversal,
            _ => Coupling::Alternating,
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            ffn_hidden: self.ffn_hidden,
            view_mode: self.view_mode,
            aligner: self.aligner,
            pooling: self.pooling,
            init: self.init,
        }
    }
}

/// Loss values of one step. Absent terms are `None`; a single-view model
/// reports its confusion under `conf_subj`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub stance: f64,
    pub subj: Option<f64>,
    pub obj: Option<f64>,
    pub conf_subj: Option<f64>,
    pub conf_obj: Option<f64>,
}

impl StepLosses {
    pub fn all_finite(&self) -> bool {
        core::iter::once(Some(self.stance))
            .chain([self.subj, self.obj, self.conf_subj, self.conf_obj])
            .flatten()
            .all(f64::is_finite)
    }
}

fn conf_slot(role: ViewRole) -> usize {
    match role {
        ViewRole::Obj => 1,
        _ => 0,
    }
}

fn domains_of(n_source: usize, n_target: usize) -> Vec<Domain> {
    let mut d = Vec::with_capacity(n_source + n_target);
    d.resize(n_source, Domain::Source);
    d.resize(n_source + n_target, Domain::Target);
    d
}

fn confusion(g: &mut Graph, kind: AlignerKind, out: Var, domains: &[Domain]) -> Result<Var> {
    match kind {
        AlignerKind::HAdversarial => losses::confusion_h(&mut g.tape, out, domains),
        AlignerKind::Wasserstein => losses::confusion_w(&mut g.tape, out, domains),
        _ => Err(Error::Config(format!("aligner {} has no confusion loss", kind.as_str()))),
    }
}

fn stance_labels(src: &[&Example]) -> Result<Vec<usize>> {
    src.iter()
        .map(|e| {
            e.stance
                .map(|s| s.index())
                .ok_or_else(|| Error::Data(format!("source example {} has no stance label", e.id)))
        })
        .collect()
}

fn silver_labels(src: &[&Example], role: ViewRole) -> Result<Vec<usize>> {
    src.iter()
        .map(|e| {
            let l = match role {
                ViewRole::Subj => e.silver_subj,
                ViewRole::Obj => e.silver_obj,
                ViewRole::Shared => None,
            };
            l.map(usize::from).ok_or_else(|| {
                Error::Data(format!("source example {} has no silver {} label", e.id, role.name()))
            })
        })
        .collect()
}

/// The minimisation graph of one batch.
pub struct MinGraph {
    pub graph: Graph,
    /// `L_stance + α·L_subj + β·L_obj`, plus `γ·Σ L_conf` unless reversed.
    pub loss: Var,
    pub losses: StepLosses,
}

/// Builds the minimisation objective.
///
/// With `reversal`, confusion terms pass through a gradient-reversal layer of
/// strength γ and are subtracted, so one backward pass trains the encoders
/// against the examiners and the examiners toward the confusion maximum.
pub fn min_graph(
    model: &DanModel,
    src: &[&Example],
    tgt: &[&Example],
    cfg: &TrainConfig,
    mask: TrainMask,
    reversal: bool,
    rng: &mut ChaCha8Rng,
) -> Result<MinGraph> {
    if src.is_empty() {
        return Err(Error::InvalidArgument("empty source batch".into()));
    }
    let aligner = model.config.aligner;
    if aligner != AlignerKind::None && tgt.is_empty() {
        return Err(Error::InvalidArgument("empty target batch".into()));
    }
    let labels = stance_labels(src)?;
    let mut g = Graph::new(mask);
    let mut seqs: Vec<&[usize]> = src.iter().map(|e| e.token_ids.as_slice()).collect();
    if aligner != AlignerKind::None {
        seqs.extend(tgt.iter().map(|e| e.token_ids.as_slice()));
    }
    let ns = src.len();
    let src_rows: Vec<usize> = (0..ns).collect();
    let tgt_rows: Vec<usize> = (ns..seqs.len()).collect();
    let domains = domains_of(ns, seqs.len() - ns);
    let dropout = if cfg.dropout > 0.0 {
        DropoutSpec::training(cfg.dropout)
    } else {
        DropoutSpec::inactive()
    };

    let all = model.encode_branches(&mut g, &seqs)?;
    let mut src_views = Vec::with_capacity(all.len());
    let mut comps = MinComponents::default();
    let mut out = StepLosses::default();
    let mut reversed: Vec<Var> = Vec::new();
    for (i, &f_all) in all.iter().enumerate() {
        let branch = &model.branches[i];
        let f_all = dropout.apply(&mut g, f_all, rng)?;
        let f_src = if seqs.len() == ns {
            f_all
        } else {
            g.tape.gather_rows(f_all, &src_rows)?
        };
        src_views.push(f_src);

        if branch.aux_head.is_some() {
            let y = silver_labels(src, branch.role)?;
            let p = model.aux_probs(&mut g, i, f_src)?;
            let l = losses::nll(&mut g.tape, p, &y)?;
            let v = g.value(l).item();
            match branch.role {
                ViewRole::Obj => {
                    comps.obj = Some(l);
                    out.obj = Some(v);
                }
                _ => {
                    comps.subj = Some(l);
                    out.subj = Some(v);
                }
            }
        }

        let align = match aligner {
            AlignerKind::None => None,
            AlignerKind::Coral => {
                let f_tgt = g.tape.gather_rows(f_all, &tgt_rows)?;
                Some(losses::coral(&mut g.tape, f_src, f_tgt)?)
            }
            kind => {
                let input = if reversal {
                    g.tape.reverse_gradient(f_all, cfg.weights.gamma)?
                } else {
                    f_all
                };
                let d = model.examine_batch(&mut g, i, input)?;
                Some(confusion(&mut g, kind, d, &domains)?)
            }
        };
        if let Some(a) = align {
            let v = g.value(a).item();
            if conf_slot(branch.role) == 1 {
                out.conf_obj = Some(v);
            } else {
                out.conf_subj = Some(v);
            }
            if reversal {
                reversed.push(a);
            } else if conf_slot(branch.role) == 1 {
                comps.align_obj = Some(a);
            } else {
                comps.align_subj = Some(a);
            }
        }
    }

    let (_, f_stance) = model.stance_feature(&mut g, &src_views)?;
    let p = model.stance_probs(&mut g, f_stance)?;
    let l_stance = losses::nll(&mut g.tape, p, &labels)?;
    out.stance = g.value(l_stance).item();
    comps.stance = Some(l_stance);
    let mut loss = losses::min_objective(&mut g.tape, &comps, &cfg.weights)?;
    for r in reversed {
        loss = g.tape.sub(loss, r)?;
    }
    Ok(MinGraph {
        graph: g,
        loss,
        losses: out,
    })
}

/// Descends every non-examiner parameter on the minimisation objective at
/// `λ₂ · lr`.
pub fn min_step(
    model: &mut DanModel,
    src: &[&Example],
    tgt: &[&Example],
    cfg: &TrainConfig,
    lr: f64,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    let mg = min_graph(model, src, tgt, cfg, TrainMask::AllButExaminers, false, rng)?;
    check_finite(&mg.losses)?;
    let grads = mg.graph.tape.backward(mg.loss)?;
    opt.step(model, &grads, cfg.lambda2 * lr, |grp| !grp.is_examiner())?;
    Ok(mg.losses)
}

/// One combined pass: encoders, gate and heads descend the main objective
/// while examiners ascend the confusion through the reversal layer.
#[allow(clippy::too_many_arguments)]
pub fn joint_step(
    model: &mut DanModel,
    src: &[&Example],
    tgt: &[&Example],
    cfg: &TrainConfig,
    lr: f64,
    main_opt: &mut Adam,
    examiner_opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<StepLosses> {
    if model.config.aligner != AlignerKind::HAdversarial {
        return Err(Error::Config("gradient reversal applies only to the h-adversarial aligner".into()));
    }
    let mg = min_graph(model, src, tgt, cfg, TrainMask::Everything, true, rng)?;
    check_finite(&mg.losses)?;
    let grads = mg.graph.tape.backward(mg.loss)?;
    main_opt.step(model, &grads, cfg.lambda2 * lr, |grp| !grp.is_examiner())?;
    examiner_opt.step(model, &grads, cfg.lambda1 * lr, |grp| grp.is_examiner())?;
    Ok(mg.losses)
}

fn check_finite(l: &StepLosses) -> Result<()> {
    if l.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss components {l:?}")))
    }
}

/// View features of a batch, frozen for one examiner phase.
#[derive(Clone, Debug, PartialEq)]
pub struct ExaminerInputs {
    /// One `(source + target) × d_h` matrix per branch.
    pub features: Vec<Tensor>,
    pub domains: Vec<Domain>,
}

pub fn examiner_inputs(model: &DanModel, src: &[&Example], tgt: &[&Example]) -> Result<ExaminerInputs> {
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::InvalidArgument("examiner batches need both domains".into()));
    }
    let seqs: Vec<&[usize]> = src.iter().chain(tgt).map(|e| e.token_ids.as_slice()).collect();
    let mut g = Graph::inference();
    let all = model.encode_branches(&mut g, &seqs)?;
    Ok(ExaminerInputs {
        features: all.iter().map(|&v| g.value(v).clone()).collect(),
        domains: domains_of(src.len(), tgt.len()),
    })
}

/// The summed confusion over frozen features, with per-branch values.
pub fn max_graph(model: &DanModel, inputs: &ExaminerInputs) -> Result<(Graph, Var, Vec<f64>)> {
    let kind = model.config.aligner;
    if !kind.is_adversarial() {
        return Err(Error::Config(format!(
            "max step needs an adversarial aligner, not {}",
            kind.as_str()
        )));
    }
    let mut g = Graph::new(TrainMask::ExaminersOnly);
    let mut confs = Vec::new();
    let mut values = Vec::new();
    for (i, f) in inputs.features.iter().enumerate() {
        let x = g.tape.constant(f.clone());
        let d = model.examine_batch(&mut g, i, x)?;
        let c = confusion(&mut g, kind, d, &inputs.domains)?;
        values.push(g.value(c).item());
        confs.push(c);
    }
    let total = losses::max_objective(&mut g.tape, &confs, true)?;
    Ok((g, total, values))
}

/// One ascent step of every examiner at `λ₁ · lr`; returns the confusions
/// before it.
pub fn max_step(
    model: &mut DanModel,
    inputs: &ExaminerInputs,
    cfg: &TrainConfig,
    lr: f64,
    opt: &mut Adam,
) -> Result<Vec<f64>> {
    let (mut g, total, values) = max_graph(model, inputs)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("confusion losses {values:?}")));
    }
    // Ascent on Σ L_conf is descent on its negation.
    let neg = g.tape.scale(total, -1.0)?;
    let grads = g.tape.backward(neg)?;
    opt.step(model, &grads, cfg.lambda1 * lr, |grp| grp.is_examiner())?;
    if model.config.aligner == AlignerKind::Wasserstein {
        clip_weights(model, cfg.clip, |grp| grp.is_examiner());
    }
    Ok(values)
}

/// Hooks for logging and wall-clock timing, which the core cannot do itself.
pub trait TrainObserver {
    /// Seconds on some monotonic clock, if one is available.
    fn now(&mut self) -> Option<f64> {
        None
    }

    fn iteration(&mut self, _record: &IterationRecord) {}

    fn notice(&mut self, _message: &str) {}
}

/// Observer that ignores everything.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: u64,
    pub lr: f64,
    pub losses: StepLosses,
    pub val_macro_f1: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    /// Iteration whose parameters were kept.
    pub best_iteration: Option<u64>,
    pub best_val_macro_f1: Option<f64>,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn loss_trace(&self) -> Vec<StepLosses> {
        self.records.iter().map(|r| r.losses).collect()
    }

    pub fn val_trace(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.val_macro_f1).collect()
    }
}

fn check_corpus(model: &DanModel, corpus: &Corpus, what: &str, need_stance: bool, need_silver: bool) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Data(format!("{what} corpus is empty")));
    }
    let vocab = model.embeddings.len();
    for e in &corpus.examples {
        if e.token_ids.len() != e.tokens.len() {
            return Err(Error::Data(format!("{what} example {} is not indexed against the vocabulary", e.id)));
        }
        if e.token_ids.is_empty() {
            return Err(Error::Data(format!("{what} example {} has no tokens", e.id)));
        }
        if let Some(&t) = e.token_ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::Data(format!(
                "{what} example {} uses token id {t} but the embedding table has {vocab} rows",
                e.id
            )));
        }
        if need_stance && e.stance.is_none() {
            return Err(Error::Data(format!("{what} example {} has no stance label", e.id)));
        }
        if need_silver && (e.silver_subj.is_none() || e.silver_obj.is_none()) {
            return Err(Error::Data(format!("{what} example {} lacks silver labels", e.id)));
        }
    }
    Ok(())
}

/// Runs the full loop and leaves `model` at the best validation checkpoint.
pub fn train(
    model: &mut DanModel,
    source: &Corpus,
    target: &Corpus,
    validation: &Corpus,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.config.view_mode != cfg.view_mode || model.config.aligner != cfg.aligner {
        return Err(Error::Config(format!(
            "model is {}/{} but the config asks for {}/{}",
            model.config.view_mode.as_str(),
            model.config.aligner.as_str(),
            cfg.view_mode.as_str(),
            cfg.aligner.as_str()
        )));
    }
    let needs_silver = model.branches.iter().any(|b| b.aux_head.is_some());
    check_corpus(model, source, "source", true, needs_silver)?;
    check_corpus(model, target, "target", false, false)?;
    check_corpus(model, validation, "validation", true, false)?;

    let mut report = TrainReport::default();
    if cfg.max_iterations == 0 {
        return Ok(report);
    }
    let coupling = cfg.coupling();
    let mut main_opt = Adam::new();
    let mut exam_opt = Adam::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0xD5);
    let mut best: Option<(f64, DanModel)> = None;
    let mut stale = 0usize;
    let mut warned = false;

    for it in 1..=cfg.max_iterations {
        let start = observer.now();
        let b = sample_batches(source.len(), target.len(), cfg.batch_size, cfg.seed, it)?;
        if b.with_replacement && !warned {
            observer.notice(&format!(
                "batch size {} exceeds a corpus ({} source, {} target); sampling with replacement",
                cfg.batch_size,
                source.len(),
                target.len()
            ));
            warned = true;
        }
        let src: Vec<&Example> = b.source.iter().map(|&i| &source.examples[i]).collect();
        let tgt: Vec<&Example> = b.target.iter().map(|&i| &target.examples[i]).collect();
        let lr = lr_at(it, cfg.warmup)?;

        let losses = if cfg.aligner.is_adversarial() && coupling == Coupling::Reversal {
            joint_step(model, &src, &tgt, cfg, lr, &mut main_opt, &mut exam_opt, &mut rng)?
        } else {
            if cfg.aligner.is_adversarial() {
                let inputs = examiner_inputs(model, &src, &tgt)?;
                for _ in 0..cfg.critic_steps {
                    max_step(model, &inputs, cfg, lr, &mut exam_opt)?;
                }
            }
            min_step(model, &src, &tgt, cfg, lr, &mut main_opt, &mut rng)?
        };

        let mut val = None;
        if it % cfg.eval_every == 0 || it == cfg.max_iterations {
            let f1 = evaluate(model, validation)?;
            val = Some(f1);
            if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
                best = Some((f1, model.clone()));
                report.best_iteration = Some(it);
                report.best_val_macro_f1 = Some(f1);
                stale = 0;
            } else {
                stale += 1;
            }
        }
        let seconds = match (start, observer.now()) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        let record = IterationRecord {
            iteration: it,
            lr,
            losses,
            val_macro_f1: val,
            seconds,
        };
        observer.iteration(&record);
        report.records.push(record);
        if stale >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, m)) = best {
        *model = m;
    }
    Ok(report)
}

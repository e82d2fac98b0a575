//! The dual-view network and its single-view baselines.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    BiLstmEncoder, EmbeddingTable, Ffn, FusionGate, Graph, HeadOutput, InitScheme, Module, Param, ParamBuilder,
    ParamGroup, Pooling, ViewRole,
};
use crate::tensor::Tensor;
use crate::tape::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ViewMode {
    Single,
    #[default]
    Dual,
    DualSubjOnly,
    DualObjOnly,
}

impl ViewMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "dual" => Ok(Self::Dual),
            "dual-subj-only" => Ok(Self::DualSubjOnly),
            "dual-obj-only" => Ok(Self::DualObjOnly),
            other => Err(Error::Config(format!(
                "view mode must be single, dual, dual-subj-only or dual-obj-only, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Dual => "dual",
            Self::DualSubjOnly => "dual-subj-only",
            Self::DualObjOnly => "dual-obj-only",
        }
    }

    pub fn roles(self) -> &'static [ViewRole] {
        match self {
            Self::Single => &[ViewRole::Shared],
            Self::Dual => &[ViewRole::Subj, ViewRole::Obj],
            Self::DualSubjOnly => &[ViewRole::Subj],
            Self::DualObjOnly => &[ViewRole::Obj],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlignerKind {
    None,
    Coral,
    #[default]
    HAdversarial,
    Wasserstein,
}

impl AlignerKind {
    /// Accepts the canonical names and the baseline names (`so`, `dann`, `wdgrl`).
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" | "so" => Ok(Self::None),
            "coral" => Ok(Self::Coral),
            "h-adversarial" | "dann" => Ok(Self::HAdversarial),
            "wasserstein" | "wdgrl" => Ok(Self::Wasserstein),
            other => Err(Error::Config(format!(
                "aligner must be none, coral, h-adversarial or wasserstein, got {other:?}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Coral => "coral",
            Self::HAdversarial => "h-adversarial",
            Self::Wasserstein => "wasserstein",
        }
    }

    pub fn is_adversarial(self) -> bool {
        matches!(self, Self::HAdversarial | Self::Wasserstein)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Encoder hidden size, shared by both views and the gate.
    pub hidden: usize,
    /// Hidden width of every feed-forward head and examiner.
    pub ffn_hidden: usize,
    pub view_mode: ViewMode,
    pub aligner: AlignerKind,
    pub pooling: Pooling,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            ffn_hidden: 128,
            view_mode: ViewMode::Dual,
            aligner: AlignerKind::HAdversarial,
            pooling: Pooling::Mean,
            init: InitScheme::default(),
        }
    }
}

/// Which feature an export or probe reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureView {
    Subj,
    Obj,
    /// The feature consumed by the stance head (the lone view in single-view models).
    Dual,
}

impl FeatureView {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "subj" => Ok(Self::Subj),
            "obj" => Ok(Self::Obj),
            "dual" => Ok(Self::Dual),
            other => Err(Error::Config(format!("view must be subj, obj or dual, got {other:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Subj => "subj",
            Self::Obj => "obj",
            Self::Dual => "dual",
        }
    }
}

/// One encoder with the heads that read its feature.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBranch {
    pub role: ViewRole,
    pub encoder: BiLstmEncoder,
    pub aux_head: Option<Ffn>,
    pub examiner: Option<Ffn>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DanModel {
    pub config: ModelConfig,
    /// Shared by every encoder.
    pub embeddings: EmbeddingTable,
    pub branches: Vec<ViewBranch>,
    pub gate: Option<FusionGate>,
    pub stance_head: Ffn,
}

/// Rows processed per graph by the inference helpers.
const INFERENCE_CHUNK: usize = 256;

impl DanModel {
    pub fn new(config: ModelConfig, mut embeddings: EmbeddingTable, seed: u64) -> Result<Self> {
        if config.hidden == 0 || config.ffn_hidden == 0 {
            return Err(Error::Config("hidden sizes must be positive".into()));
        }
        let mut b = ParamBuilder::new(ChaCha8Rng::seed_from_u64(seed), config.init);
        embeddings.param_mut().id = b.fresh_id();
        let d_e = embeddings.dim();
        let (h, df) = (config.hidden, config.ffn_hidden);
        let mut branches = Vec::new();
        for &role in config.view_mode.roles() {
            let name = role.name();
            let encoder = BiLstmEncoder::new(
                &mut b,
                &format!("{name}.enc"),
                ParamGroup::Encoder(role),
                d_e,
                h,
                config.pooling,
            );
            let aux_head = (role != ViewRole::Shared).then(|| {
                Ffn::new(&mut b, &format!("{name}.aux"), ParamGroup::AuxHead(role), h, df, 2, HeadOutput::Probabilities)
            });
            let examiner = match config.aligner {
                AlignerKind::HAdversarial => Some(HeadOutput::Probabilities),
                AlignerKind::Wasserstein => Some(HeadOutput::Scalar),
                _ => None,
            }
            .map(|out| Ffn::new(&mut b, &format!("{name}.exam"), ParamGroup::Examiner(role), h, df, 2, out));
            branches.push(ViewBranch {
                role,
                encoder,
                aux_head,
                examiner,
            });
        }
        let gate = (branches.len() == 2).then(|| FusionGate::new(&mut b, h));
        let stance_head = Ffn::new(&mut b, "stance", ParamGroup::StanceHead, h, df, 3, HeadOutput::Probabilities);
        Ok(Self {
            config,
            embeddings,
            branches,
            gate,
            stance_head,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn branch_index(&self, role: ViewRole) -> Option<usize> {
        self.branches.iter().position(|b| b.role == role)
    }

    fn branch_for(&self, role: ViewRole) -> Result<&ViewBranch> {
        self.branch_index(role).map(|i| &self.branches[i]).ok_or_else(|| {
            Error::Config(format!(
                "a {} model has no {} view",
                self.config.view_mode.as_str(),
                role.name()
            ))
        })
    }

    /// One `batch × d_h` feature matrix per branch, in branch order.
    pub fn encode_branches(&self, g: &mut Graph, seqs: &[&[usize]]) -> Result<Vec<Var>> {
        self.branches
            .iter()
            .map(|b| b.encoder.encode_batch(g, &self.embeddings, seqs))
            .collect()
    }

    /// The stance head input: fused when a gate exists, else the lone view.
    /// Returns the gate activations alongside when fusing.
    pub fn stance_feature(&self, g: &mut Graph, views: &[Var]) -> Result<(Option<Var>, Var)> {
        if views.len() != self.branches.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} view features, got {}",
                self.branches.len(),
                views.len()
            )));
        }
        match &self.gate {
            Some(gate) => {
                let (gv, fused) = gate.fuse(g, views[0], views[1])?;
                Ok((Some(gv), fused))
            }
            None => Ok((None, views[0])),
        }
    }

    pub fn stance_probs(&self, g: &mut Graph, feature: Var) -> Result<Var> {
        self.stance_head.forward(g, feature)
    }

    /// `batch × 2` probabilities; column 1 is "carries this view's content".
    pub fn aux_probs(&self, g: &mut Graph, branch: usize, feature: Var) -> Result<Var> {
        let head = self.branches[branch].aux_head.as_ref().ok_or_else(|| {
            Error::Config(format!("the {} view has no auxiliary head", self.branches[branch].role.name()))
        })?;
        head.forward(g, feature)
    }

    /// H-variant: `batch × 2` with column 0 the source probability.
    /// W-variant: `batch × 1` critic values.
    pub fn examine_batch(&self, g: &mut Graph, branch: usize, feature: Var) -> Result<Var> {
        let exam = self.branches[branch].examiner.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "aligner {} has no domain examiner",
                self.config.aligner.as_str()
            ))
        })?;
        exam.forward(g, feature)
    }

    /// Single-utterance `(f_subj, f_obj)` of a dual model.
    pub fn encode_views(&self, tokens: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let subj = self.branch_for(ViewRole::Subj)?;
        let obj = self.branch_for(ViewRole::Obj)?;
        Ok((
            subj.encoder.encode(&self.embeddings, tokens)?,
            obj.encoder.encode(&self.embeddings, tokens)?,
        ))
    }

    /// Single-vector gate and fused feature.
    pub fn fuse(&self, f_subj: &[f64], f_obj: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let gate = self
            .gate
            .as_ref()
            .ok_or_else(|| Error::Config("only dual models have a fusion gate".into()))?;
        let mut g = Graph::inference();
        let a = row_const(&mut g, f_subj);
        let b = row_const(&mut g, f_obj);
        let (gv, fused) = gate.fuse(&mut g, a, b)?;
        Ok((g.value(gv).data().to_vec(), g.value(fused).data().to_vec()))
    }

    pub fn auxiliary_predict(&self, feature: &[f64], role: ViewRole) -> Result<[f64; 2]> {
        let branch = self.branch_for(role)?;
        let head = branch
            .aux_head
            .as_ref()
            .ok_or_else(|| Error::Config(format!("the {} view has no auxiliary head", role.name())))?;
        let p = head.forward_vec(feature)?;
        Ok([p[0], p[1]])
    }

    /// Source probability (H-variant) or critic value (W-variant).
    pub fn examine(&self, feature: &[f64], role: ViewRole) -> Result<f64> {
        if !self.config.aligner.is_adversarial() {
            return Err(Error::Config(format!(
                "aligner {} has no domain examiner",
                self.config.aligner.as_str()
            )));
        }
        let i = self
            .branch_index(role)
            .ok_or_else(|| Error::Config(format!("no {} view", role.name())))?;
        let mut g = Graph::inference();
        let x = row_const(&mut g, feature);
        let out = self.examine_batch(&mut g, i, x)?;
        Ok(g.value(out).data()[0])
    }

    pub fn predict_stance(&self, tokens: &[usize]) -> Result<[f64; 3]> {
        Ok(self.predict_batch(&[tokens])?[0])
    }

    pub fn predict_batch(&self, seqs: &[&[usize]]) -> Result<Vec<[f64; 3]>> {
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::inference();
            let views = self.encode_branches(&mut g, chunk)?;
            let (_, f) = self.stance_feature(&mut g, &views)?;
            let p = self.stance_probs(&mut g, f)?;
            for r in g.value(p).data().chunks(3) {
                out.push([r[0], r[1], r[2]]);
            }
        }
        Ok(out)
    }

    /// One feature row per sequence for the requested view.
    pub fn features(&self, seqs: &[&[usize]], view: FeatureView) -> Result<Vec<Vec<f64>>> {
        let branch = match view {
            FeatureView::Subj => Some(self.branch_index(ViewRole::Subj)),
            FeatureView::Obj => Some(self.branch_index(ViewRole::Obj)),
            FeatureView::Dual => None,
        };
        if let Some(None) = branch {
            return Err(Error::Config(format!(
                "a {} model has no {} view",
                self.config.view_mode.as_str(),
                view.as_str()
            )));
        }
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(INFERENCE_CHUNK) {
            let mut g = Graph::inference();
            let f = match branch {
                Some(Some(i)) => self.branches[i].encoder.encode_batch(&mut g, &self.embeddings, chunk)?,
                _ => {
                    let views = self.encode_branches(&mut g, chunk)?;
                    self.stance_feature(&mut g, &views)?.1
                }
            };
            out.extend(g.value(f).data().chunks(self.hidden()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        self.visit(&mut |p| v.push(p.name.clone()));
        v
    }

    /// Replaces the named parameter's value, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let mut outcome = Err(Error::Data(format!("model has no parameter {name:?}")));
        self.visit_mut(&mut |p| {
            if p.name == name {
                outcome = if p.value.shape() == value.shape() {
                    p.value = value.clone();
                    Ok(())
                } else {
                    Err(Error::ShapeMismatch {
                        op: "set_param",
                        left: p.value.shape().to_vec(),
                        right: value.shape().to_vec(),
                    })
                };
            }
        });
        outcome
    }

    /// Sum of all parameters in `group`, for cheap change detection.
    pub fn group_checksum(&self, select: impl Fn(ParamGroup) -> bool) -> Vec<f64> {
        let mut v = Vec::new();
        self.visit(&mut |p| {
            if select(p.group) {
                v.extend_from_slice(p.value.data());
            }
        });
        v
    }
}

fn row_const(g: &mut Graph, v: &[f64]) -> Var {
    g.tape.constant(Tensor::matrix(1, v.len(), v.to_vec()))
}

impl Module for DanModel {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.embeddings.visit(f);
        for b in &self.branches {
            b.encoder.visit(f);
            if let Some(h) = &b.aux_head {
                h.visit(f);
            }
            if let Some(e) = &b.examiner {
                e.visit(f);
            }
        }
        if let Some(gate) = &self.gate {
            gate.visit(f);
        }
        self.stance_head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self.embeddings.param_mut());
        for b in &mut self.branches {
            b.encoder.visit_mut(f);
            if let Some(h) = &mut b.aux_head {
                h.visit_mut(f);
            }
            if let Some(e) = &mut b.examiner {
                e.visit_mut(f);
            }
        }
        if let Some(gate) = &mut self.gate {
            gate.visit_mut(f);
        }
        self.stance_head.visit_mut(f);
    }
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

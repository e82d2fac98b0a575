//! Parameterized layers: embeddings, the bidirectional LSTM view encoder,
//! two-layer feed-forward heads, the fusion gate and dropout.
//!
//! Weights are stored input-major (`in × out`) so every layer computes
//! `x · W + b` on row-batched inputs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{ParamId, Tape, Var};
use crate::tensor::Tensor;
use crate::vocab::{Vocabulary, UNK};

/// Which view a branch of the model serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ViewRole {
    /// The lone encoder of a single-view model.
    Shared,
    Subj,
    Obj,
}

impl ViewRole {
    pub fn name(self) -> &'static str {
        match self {
            ViewRole::Shared => "shared",
            ViewRole::Subj => "subj",
            ViewRole::Obj => "obj",
        }
    }
}

/// Parameter groups as updated by the two phases of training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Embedding,
    Encoder(ViewRole),
    AuxHead(ViewRole),
    Examiner(ViewRole),
    Gate,
    StanceHead,
}

impl ParamGroup {
    pub fn is_examiner(self) -> bool {
        matches!(self, ParamGroup::Examiner(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub id: ParamId,
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

/// Walks parameters in a fixed order.
pub trait Module {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }
}

/// Which parameter groups a graph tracks for differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMask {
    Nothing,
    Everything,
    ExaminersOnly,
    AllButExaminers,
}

impl TrainMask {
    pub fn tracks(self, group: ParamGroup) -> bool {
        match self {
            TrainMask::Nothing => false,
            TrainMask::Everything => true,
            TrainMask::ExaminersOnly => group.is_examiner(),
            TrainMask::AllButExaminers => !group.is_examiner(),
        }
    }
}

/// A tape plus the rule deciding which parameters it differentiates.
pub struct Graph {
    pub tape: Tape,
    mask: TrainMask,
}

impl Graph {
    pub fn new(mask: TrainMask) -> Self {
        let tape = if mask == TrainMask::Nothing {
            Tape::no_grad()
        } else {
            Tape::new()
        };
        Self { tape, mask }
    }

    pub fn inference() -> Self {
        Self::new(TrainMask::Nothing)
    }

    pub fn mask(&self) -> TrainMask {
        self.mask
    }

    pub fn bind(&mut self, p: &Param) -> Var {
        let track = self.mask.tracks(p.group);
        self.tape.param(p.id, &p.value, track)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Weights uniform in `(-a, a)`, biases zero.
    Uniform(f64),
    /// Everything zero.
    Zero,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Uniform(0.08)
    }
}

/// Hands out parameter ids and initial values.
pub struct ParamBuilder {
    next_id: ParamId,
    rng: ChaCha8Rng,
    init: InitScheme,
}

impl ParamBuilder {
    pub fn new(rng: ChaCha8Rng, init: InitScheme) -> Self {
        Self {
            next_id: 0,
            rng,
            init,
        }
    }

    /// Reserves an id for a parameter created elsewhere.
    pub fn fresh_id(&mut self) -> ParamId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn id(&mut self) -> ParamId {
        self.fresh_id()
    }

    pub fn raw(&mut self, name: String, group: ParamGroup, value: Tensor) -> Param {
        Param {
            id: self.id(),
            name,
            group,
            value,
        }
    }

    pub fn weight(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize) -> Param {
        let data = match self.init {
            InitScheme::Uniform(a) => (0..rows * cols)
                .map(|_| self.rng.random_range(-a..a))
                .collect(),
            InitScheme::Zero => vec![0.0; rows * cols],
        };
        self.raw(name, group, Tensor::matrix(rows, cols, data))
    }

    pub fn bias(&mut self, name: String, group: ParamGroup, cols: usize) -> Param {
        self.raw(name, group, Tensor::zeros(&[1, cols]))
    }
}

/// Fixed (by default) word vectors, one row per vocabulary entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: Param,
    trainable: bool,
}

impl EmbeddingTable {
    /// `vectors` must be `vocab.len() × d_e`; the UNK row is forced to zero.
    pub fn new(vocab: Vocabulary, mut vectors: Tensor, id: ParamId) -> Result<Self> {
        let (rows, dim) = vectors.dims2().ok_or_else(|| Error::InvalidShape {
            op: "embedding table",
            shape: vectors.shape().to_vec(),
        })?;
        if rows != vocab.len() {
            return Err(Error::Data(format!(
                "embedding table has {rows} rows but the vocabulary has {} entries",
                vocab.len()
            )));
        }
        if !vectors.all_finite() {
            return Err(Error::Data("embedding table contains non-finite values".into()));
        }
        for v in &mut vectors.data_mut()[UNK * dim..(UNK + 1) * dim] {
            *v = 0.0;
        }
        Ok(Self {
            vocab,
            vectors: Param {
                id,
                name: "embeddings".into(),
                group: ParamGroup::Embedding,
                value: vectors,
            },
            trainable: false,
        })
    }

    /// Builds the table by looking up each vocabulary word; UNK stays zero.
    pub fn from_lookup<'a>(
        vocab: Vocabulary,
        dim: usize,
        id: ParamId,
        mut lookup: impl FnMut(&str) -> Option<&'a [f64]>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding width must be positive".into()));
        }
        let mut data = vec![0.0; vocab.len() * dim];
        for (i, w) in vocab.words().iter().enumerate().skip(1) {
            if let Some(v) = lookup(w) {
                if v.len() != dim {
                    return Err(Error::Data(format!(
                        "vector for {w:?} has width {} (expected {dim})",
                        v.len()
                    )));
                }
                data[i * dim..(i + 1) * dim].copy_from_slice(v);
            }
        }
        let rows = vocab.len();
        Self::new(vocab, Tensor::matrix(rows, dim, data), id)
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.vectors.value.dims2().unwrap().1
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn param(&self) -> &Param {
        &self.vectors
    }

    pub fn param_mut(&mut self) -> &mut Param {
        &mut self.vectors
    }

    fn check(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(Error::Data(format!(
                "token id {id} outside the vocabulary of {} entries",
                self.len()
            )));
        }
        Ok(())
    }

    /// One vector per token, in order.
    pub fn embed(&self, tokens: &[usize]) -> Result<Vec<&[f64]>> {
        tokens
            .iter()
            .map(|&t| {
                self.check(t)?;
                Ok(self.vectors.value.row(t))
            })
            .collect()
    }

    /// Row-batched inputs for one time step (`ids.len() × d_e`).
    fn step_input(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if self.trainable && g.mask().tracks(ParamGroup::Embedding) {
            let table = g.bind(&self.vectors);
            return g.tape.gather_rows(table, ids);
        }
        let dim = self.dim();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(self.vectors.value.row(id));
        }
        Ok(g.tape.constant(Tensor::matrix(ids.len(), dim, data)))
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.vectors);
    }
}

/// One LSTM direction. Gates are packed as `[input, forget, output, candidate]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_input: Param,
    pub w_hidden: Param,
    pub bias: Param,
    hidden: usize,
}

impl LstmCell {
    pub fn new(b: &mut ParamBuilder, prefix: &str, group: ParamGroup, input: usize, hidden: usize) -> Self {
        Self {
            w_input: b.weight(format!("{prefix}.w_input"), group, input, 4 * hidden),
            w_hidden: b.weight(format!("{prefix}.w_hidden"), group, hidden, 4 * hidden),
            bias: b.bias(format!("{prefix}.bias"), group, 4 * hidden),
            hidden,
        }
    }

    /// One step. `state == None` stands for zero hidden and cell states.
    pub fn step(&self, g: &mut Graph, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
        let h = self.hidden;
        let wi = g.bind(&self.w_input);
        let bias = g.bind(&self.bias);
        let mut z = g.tape.matmul(x, wi)?;
        if let Some((hp, _)) = state {
            let wh = g.bind(&self.w_hidden);
            let zh = g.tape.matmul(hp, wh)?;
            z = g.tape.add(z, zh)?;
        }
        let z = g.tape.add_row(z, bias)?;
        let zi = g.tape.slice_cols(z, 0, h)?;
        let zf = g.tape.slice_cols(z, h, h)?;
        let zo = g.tape.slice_cols(z, 2 * h, h)?;
        let zg = g.tape.slice_cols(z, 3 * h, h)?;
        let i = g.tape.sigmoid(zi)?;
        let o = g.tape.sigmoid(zo)?;
        let cand = g.tape.tanh(zg)?;
        let ig = g.tape.mul(i, cand)?;
        let c = match state {
            Some((_, cp)) => {
                let f = g.tape.sigmoid(zf)?;
                let fc = g.tape.mul(f, cp)?;
                g.tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = g.tape.tanh(c)?;
        let hn = g.tape.mul(o, tc)?;
        Ok((hn, c))
    }
}

impl Module for LstmCell {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w_input);
        f(&self.w_hidden);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}

/// How per-step encoder outputs become one utterance feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    Last,
}

/// Bidirectional LSTM followed by a linear projection `2·d_h → d_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmEncoder {
    pub forward: LstmCell,
    pub backward: LstmCell,
    pub proj_w: Param,
    pub proj_b: Param,
    pub pooling: Pooling,
    hidden: usize,
}

impl BiLstmEncoder {
    pub fn new(
        b: &mut ParamBuilder,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        pooling: Pooling,
    ) -> Self {
        Self {
            forward: LstmCell::new(b, &format!("{prefix}.fwd"), group, input, hidden),
            backward: LstmCell::new(b, &format!("{prefix}.bwd"), group, input, hidden),
            proj_w: b.weight(format!("{prefix}.proj_w"), group, 2 * hidden, hidden),
            proj_b: b.bias(format!("{prefix}.proj_b"), group, hidden),
            pooling,
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Encodes a batch of token sequences into a `batch × d_h` feature matrix.
    ///
    /// Shorter sequences are padded; a mask freezes their states past the end
    /// so every row is bit-identical to encoding that sequence alone.
    pub fn encode_batch(&self, g: &mut Graph, table: &EmbeddingTable, seqs: &[&[usize]]) -> Result<Var> {
        if seqs.is_empty() {
            return Err(Error::InvalidArgument("encode of an empty batch".into()));
        }
        if table.dim() != self.forward.w_input.value.dims2().unwrap().0 {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: vec![table.dim()],
                right: self.forward.w_input.value.shape().to_vec(),
            });
        }
        for (row, s) in seqs.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Data(format!("cannot encode an empty token sequence (batch row {row})")));
            }
            for &t in s.iter() {
                table.check(t)?;
            }
        }
        let b = seqs.len();
        let h = self.hidden;
        let steps = seqs.iter().map(|s| s.len()).max().unwrap();
        let mut inputs = Vec::with_capacity(steps);
        let mut masks: Vec<Option<(Var, Var)>> = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(UNK)).collect();
            inputs.push(table.step_input(g, &ids)?);
            if seqs.iter().all(|s| s.len() > t) {
                masks.push(None);
            } else {
                let mut on = Vec::with_capacity(b * h);
                let mut off = Vec::with_capacity(b * h);
                for s in seqs {
                    let live = if s.len() > t { 1.0 } else { 0.0 };
                    on.extend(core::iter::repeat_n(live, h));
                    off.extend(core::iter::repeat_n(1.0 - live, h));
                }
                let m = g.tape.constant(Tensor::matrix(b, h, on));
                let om = g.tape.constant(Tensor::matrix(b, h, off));
                masks.push(Some((m, om)));
            }
        }

        let fwd = run_direction(g, &self.forward, &inputs, &masks, (0..steps).collect())?;
        let bwd = run_direction(g, &self.backward, &inputs, &masks, (0..steps).rev().collect())?;

        let pooled = match self.pooling {
            Pooling::Mean => {
                let sum_f = masked_sum(g, &fwd, &masks)?;
                let sum_b = masked_sum(g, &bwd, &masks)?;
                let cat = g.tape.concat(&[sum_f, sum_b])?;
                let mut inv = Vec::with_capacity(b * 2 * h);
                for s in seqs {
                    inv.extend(core::iter::repeat_n(1.0 / s.len() as f64, 2 * h));
                }
                let inv = g.tape.constant(Tensor::matrix(b, 2 * h, inv));
                g.tape.mul(cat, inv)?
            }
            Pooling::Last => {
                let mut pick_f: Option<Var> = None;
                let mut pick_b: Option<Var> = None;
                for t in 0..steps {
                    let mut sel = Vec::with_capacity(b * h);
                    for s in seqs {
                        let hit = if s.len() == t + 1 { 1.0 } else { 0.0 };
                        sel.extend(core::iter::repeat_n(hit, h));
                    }
                    if sel.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let m = g.tape.constant(Tensor::matrix(b, h, sel));
                    let pf = g.tape.mul(m, fwd[t])?;
                    let pb = g.tape.mul(m, bwd[t])?;
                    pick_f = Some(match pick_f {
                        Some(acc) => g.tape.add(acc, pf)?,
                        None => pf,
                    });
                    pick_b = Some(match pick_b {
                        Some(acc) => g.tape.add(acc, pb)?,
                        None => pb,
                    });
                }
                g.tape.concat(&[pick_f.unwrap(), pick_b.unwrap()])?
            }
        };
        let w = g.bind(&self.proj_w);
        let bias = g.bind(&self.proj_b);
        let proj = g.tape.matmul(pooled, w)?;
        g.tape.add_row(proj, bias)
    }

    /// Feature of a single sequence as a length-`d_h` vector.
    pub fn encode(&self, table: &EmbeddingTable, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let f = self.encode_batch(&mut g, table, &[tokens])?;
        Ok(g.value(f).data().to_vec())
    }
}

impl Module for BiLstmEncoder {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.forward.visit(f);
        self.backward.visit(f);
        f(&self.proj_w);
        f(&self.proj_b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
        f(&mut self.proj_w);
        f(&mut self.proj_b);
    }
}

fn run_direction(
    g: &mut Graph,
    cell: &LstmCell,
    inputs: &[Var],
    masks: &[Option<(Var, Var)>],
    order: Vec<usize>,
) -> Result<Vec<Var>> {
    let mut outs: Vec<Option<Var>> = vec![None; inputs.len()];
    let mut state: Option<(Var, Var)> = None;
    for t in order {
        let (hn, cn) = cell.step(g, inputs[t], state)?;
        let next = match (masks[t], state) {
            (None, _) => (hn, cn),
            (Some((m, _)), None) => (g.tape.mul(m, hn)?, g.tape.mul(m, cn)?),
            (Some((m, om)), Some((hp, cp))) => {
                let a = g.tape.mul(m, hn)?;
                let b = g.tape.mul(om, hp)?;
                let h = g.tape.add(a, b)?;
                let a = g.tape.mul(m, cn)?;
                let b = g.tape.mul(om, cp)?;
                (h, g.tape.add(a, b)?)
            }
        };
        state = Some(next);
        outs[t] = Some(next.0);
    }
    Ok(outs.into_iter().map(Option::unwrap).collect())
}

fn masked_sum(g: &mut Graph, outs: &[Var], masks: &[Option<(Var, Var)>]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (t, &o) in outs.iter().enumerate() {
        let term = match masks[t] {
            None => o,
            Some((m, _)) => g.tape.mul(m, o)?,
        };
        acc = Some(match acc {
            Some(a) => g.tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.unwrap())
}

/// Output transform of a feed-forward head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadOutput {
    Probabilities,
    Logits,
    /// One unsquashed real per row (Wasserstein critic).
    Scalar,
}

/// Two-layer feed-forward network with ReLU hidden activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Ffn {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub output: HeadOutput,
}

impl Ffn {
    pub fn new(
        b: &mut ParamBuilder,
        prefix: &str,
        group: ParamGroup,
        input: usize,
        hidden: usize,
        classes: usize,
        output: HeadOutput,
    ) -> Self {
        let classes = if output == HeadOutput::Scalar { 1 } else { classes };
        Self {
            w1: b.weight(format!("{prefix}.w1"), group, input, hidden),
            b1: b.bias(format!("{prefix}.b1"), group, hidden),
            w2: b.weight(format!("{prefix}.w2"), group, hidden, classes),
            b2: b.bias(format!("{prefix}.b2"), group, classes),
            output,
        }
    }

    pub fn input_width(&self) -> usize {
        self.w1.value.dims2().unwrap().0
    }

    pub fn output_width(&self) -> usize {
        self.w2.value.dims2().unwrap().1
    }

    /// `x` is `batch × input`; returns `batch × classes` (or `batch × 1`).
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (_, cols) = g.value(x).dims2().ok_or_else(|| Error::InvalidShape {
            op: "ffn",
            shape: g.value(x).shape().to_vec(),
        })?;
        if cols != self.input_width() {
            return Err(Error::ShapeMismatch {
                op: "ffn",
                left: g.value(x).shape().to_vec(),
                right: self.w1.value.shape().to_vec(),
            });
        }
        let w1 = g.bind(&self.w1);
        let b1 = g.bind(&self.b1);
        let w2 = g.bind(&self.w2);
        let b2 = g.bind(&self.b2);
        let hdn = g.tape.matmul(x, w1)?;
        let hdn = g.tape.add_row(hdn, b1)?;
        let hdn = g.tape.relu(hdn)?;
        let out = g.tape.matmul(hdn, w2)?;
        let out = g.tape.add_row(out, b2)?;
        match self.output {
            HeadOutput::Probabilities => g.tape.softmax(out),
            HeadOutput::Logits | HeadOutput::Scalar => Ok(out),
        }
    }

    /// Single-vector convenience wrapper.
    pub fn forward_vec(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let x = g.tape.constant(Tensor::matrix(1, f.len(), f.to_vec()));
        let y = self.forward(&mut g, x)?;
        Ok(g.value(y).data().to_vec())
    }
}

impl Module for Ffn {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w1);
        f(&self.b1);
        f(&self.w2);
        f(&self.b2);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w1);
        f(&mut self.b1);
        f(&mut self.w2);
        f(&mut self.b2);
    }
}

/// `g = sigmoid([f_subj; f_obj] · W_u + b_u)`, `f_dual = g ⊙ f_subj + (1 − g) ⊙ f_obj`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGate {
    pub w: Param,
    pub b: Param,
}

impl FusionGate {
    pub fn new(b: &mut ParamBuilder, hidden: usize) -> Self {
        Self {
            w: b.weight("gate.w".into(), ParamGroup::Gate, 2 * hidden, hidden),
            b: b.bias("gate.b".into(), ParamGroup::Gate, hidden),
        }
    }

    pub fn width(&self) -> usize {
        self.b.value.len()
    }

    /// Returns `(gate, fused)`, both `batch × d_h`.
    pub fn fuse(&self, g: &mut Graph, f_subj: Var, f_obj: Var) -> Result<(Var, Var)> {
        let d = self.width();
        for v in [f_subj, f_obj] {
            if g.value(v).dims2().map(|(_, c)| c) != Some(d) {
                return Err(Error::ShapeMismatch {
                    op: "fuse",
                    left: g.value(v).shape().to_vec(),
                    right: vec![d],
                });
            }
        }
        let cat = g.tape.concat(&[f_subj, f_obj])?;
        let w = g.bind(&self.w);
        let b = g.bind(&self.b);
        let z = g.tape.matmul(cat, w)?;
        let z = g.tape.add_row(z, b)?;
        let gate = g.tape.open_sigmoid(z)?;
        let fused = g.tape.blend(gate, f_subj, f_obj)?;
        Ok((gate, fused))
    }
}

impl Module for FusionGate {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.w);
        f(&self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

/// Inverted dropout; the identity when inactive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
    pub active: bool,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        Self {
            rate: 0.1,
            active: false,
        }
    }
}

impl DropoutSpec {
    pub fn inactive() -> Self {
        Self::default()
    }

    pub fn training(rate: f64) -> Self {
        Self { rate, active: true }
    }

    pub fn apply(&self, g: &mut Graph, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !self.active || self.rate == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.rate)));
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let m = g.tape.constant(Tensor::new(shape, mask)?);
        g.tape.mul(x, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn builder(init: InitScheme) -> ParamBuilder {
        ParamBuilder::new(ChaCha8Rng::seed_from_u64(3), init)
    }

    fn table() -> EmbeddingTable {
        let vocab = Vocabulary::from_words(["a", "b", "c", "d"]);
        let data: Vec<f64> = (0..5 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        EmbeddingTable::new(vocab, Tensor::matrix(5, 3, data), 999).unwrap()
    }

    #[test]
    fn unk_row_is_zero() {
        let t = table();
        assert_eq!(t.embed(&[UNK]).unwrap()[0], &[0.0, 0.0, 0.0]);
        assert!(!t.trainable());
    }

    #[test]
    fn repeated_tokens_embed_identically() {
        let t = table();
        let e = t.embed(&[3, 3]).unwrap();
        assert_eq!(e[0], e[1]);
        assert!(t.embed(&[]).unwrap().is_empty());
        assert!(t.embed(&[5]).is_err());
    }

    #[test]
    fn zero_encoder_returns_projection_bias() {
        let t = table();
        let mut b = builder(InitScheme::Zero);
        let mut enc = BiLstmEncoder::new(&mut b, "e", ParamGroup::Encoder(ViewRole::Shared), 3, 4, Pooling::Mean);
        enc.proj_b.value = Tensor::matrix(1, 4, vec![0.5, -1.0, 2.0, 0.25]);
        let f = enc.encode(&t, &[1, 2, 3]).unwrap();
        assert_eq!(f, vec![0.5, -1.0, 2.0, 0.25]);
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let t = table();
        let mut b = builder(InitScheme::default());
        let enc = BiLstmEncoder::new(&mut b, "e", ParamGroup::Encoder(ViewRole::Shared), 3, 2, Pooling::Mean);
        assert!(matches!(enc.encode(&t, &[]), Err(Error::Data(_))));
    }

    #[test]
    fn encode_width_independent_of_length() {
        let t = table();
        let mut b = builder(InitScheme::default());
        let enc = BiLstmEncoder::new(&mut b, "e", ParamGroup::Encoder(ViewRole::Shared), 3, 5, Pooling::Mean);
        for len in 1..7 {
            let toks: Vec<usize> = (0..len).map(|i| 1 + i % 4).collect();
            assert_eq!(enc.encode(&t, &toks).unwrap().len(), 5);
        }
    }

    #[test]
    fn batching_matches_single_encoding_exactly() {
        let t = table();
        for pooling in [Pooling::Mean, Pooling::Last] {
            let mut b = builder(InitScheme::Uniform(0.5));
            let enc = BiLstmEncoder::new(&mut b, "e", ParamGroup::Encoder(ViewRole::Shared), 3, 3, pooling);
            let seqs: [&[usize]; 3] = [&[1, 2, 3, 4], &[2], &[4, 4, 1]];
            let mut g = Graph::inference();
            let out = enc.encode_batch(&mut g, &t, &seqs).unwrap();
            for (row, s) in seqs.iter().enumerate() {
                assert_eq!(g.value(out).row(row), enc.encode(&t, s).unwrap().as_slice());
            }
            // permuting the batch permutes the rows
            let perm: [&[usize]; 3] = [seqs[2], seqs[0], seqs[1]];
            let mut g2 = Graph::inference();
            let out2 = enc.encode_batch(&mut g2, &t, &perm).unwrap();
            assert_eq!(g2.value(out2).row(0), g.value(out).row(2));
            assert_eq!(g2.value(out2).row(1), g.value(out).row(0));
        }
    }

    #[test]
    fn zero_ffn_outputs() {
        let mut b = builder(InitScheme::Zero);
        let probs = Ffn::new(&mut b, "c", ParamGroup::StanceHead, 4, 6, 3, HeadOutput::Probabilities);
        let p = probs.forward_vec(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let critic = Ffn::new(&mut b, "d", ParamGroup::Examiner(ViewRole::Subj), 4, 6, 2, HeadOutput::Scalar);
        assert_eq!(critic.output_width(), 1);
        assert_eq!(critic.forward_vec(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![0.0]);
        assert!(probs.forward_vec(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dropout_is_identity_when_inactive() {
        let mut g = Graph::inference();
        let x = g.tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = DropoutSpec::inactive().apply(&mut g, x, &mut rng).unwrap();
        assert_eq!(x, y);
        let z = DropoutSpec::training(0.5).apply(&mut g, x, &mut rng).unwrap();
        for (&o, &i) in g.value(z).data().iter().zip(&[1.0, 2.0, 3.0]) {
            assert!(o == 0.0 || o == 2.0 * i);
        }
    }

    #[test]
    fn zero_gate_averages() {
        let mut b = builder(InitScheme::Zero);
        let gate = FusionGate::new(&mut b, 2);
        let mut g = Graph::inference();
        let s = g.tape.constant(Tensor::matrix(1, 2, vec![1.0, 4.0]));
        let o = g.tape.constant(Tensor::matrix(1, 2, vec![3.0, -2.0]));
        let (gv, f) = gate.fuse(&mut g, s, o).unwrap();
        assert_eq!(g.value(gv).data(), &[0.5, 0.5]);
        assert_eq!(g.value(f).data(), &[2.0, 1.0]);
    }
}

//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced while it is alive. Operations append
//! nodes in evaluation order, so the node list is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameters enter a tape through [`Tape::param`], keyed by a stable
//! [`ParamId`]; repeated lookups of the same id reuse one leaf so gradients
//! accumulate in one place. Leaves registered with `track = false` behave as
//! constants and always receive a zero gradient.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt_acc, matmul_raw, matmul_tn_acc, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Stable identifier of a model parameter across tapes.
pub type ParamId = usize;

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Concat(Vec<usize>),
    SliceCols { src: usize, start: usize },
    Gather { src: usize, rows: Vec<usize> },
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Ln(usize),
    ClampMin(usize, f64),
    Softmax(usize),
    Mean(usize),
    Sum(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Reverse(usize, f64),
    Blend { gate: usize, a: usize, b: usize },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Kind tag for [`Tape::apply`], mirroring the recorded primitive set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Primitive {
    Matmul,
    Add,
    Mul,
    Concat,
    Sigmoid,
    Tanh,
    Relu,
    Ln,
    Softmax,
    Mean,
    Sum,
    ScalarMul(f64),
}

pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, usize>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients from one backward sweep.
pub struct Gradients {
    tape: u32,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<f64>>>,
    params: BTreeMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Result<Tensor> {
        if v.tape != self.tape {
            return Err(Error::ForeignVar);
        }
        let i = v.index();
        Ok(self.tensor_at(i))
    }

    fn tensor_at(&self, i: usize) -> Tensor {
        match &self.grads[i] {
            Some(g) => Tensor::new(self.shapes[i].clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&self.shapes[i]),
        }
    }

    /// Gradient of a tracked parameter, `None` if it never entered the tape.
    pub fn param(&self, id: ParamId) -> Option<Tensor> {
        self.params.get(&id).map(|&i| self.tensor_at(i))
    }

    /// Iterates `(param id, gradient)` over every parameter registered on the tape.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Tensor)> + '_ {
        self.params.iter().map(|(&id, &i)| (id, self.tensor_at(i)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: BTreeMap::new(),
            recording: true,
        }
    }

    /// A tape that evaluates values only; every leaf is untracked.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(v.index())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.recording,
        });
        Var { tape: self.id, index }
    }

    fn grad_of(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index()].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf that is not a model parameter (inputs under test).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf keyed by `id`. The first registration fixes the
    /// tracked/untracked status for the lifetime of the tape.
    pub fn param(&mut self, id: ParamId, value: &Tensor, track: bool) -> Var {
        if let Some(&i) = self.params.get(&id) {
            return Var {
                tape: self.id,
                index: i as u32,
            };
        }
        let v = self.push(value.clone(), Op::Leaf, track);
        self.params.insert(id, v.index());
        v
    }

    /// Applies one primitive by kind. Unary kinds read `inputs[0]`.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::InvalidArgument(alloc::format!(
                    "{kind:?} takes {n} inputs, got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match kind {
            Primitive::Matmul => arity(2).and_then(|_| self.matmul(inputs[0], inputs[1])),
            Primitive::Add => arity(2).and_then(|_| self.add(inputs[0], inputs[1])),
            Primitive::Mul => arity(2).and_then(|_| self.mul(inputs[0], inputs[1])),
            Primitive::Concat => self.concat(inputs),
            Primitive::Sigmoid => arity(1).and_then(|_| self.sigmoid(inputs[0])),
            Primitive::Tanh => arity(1).and_then(|_| self.tanh(inputs[0])),
            Primitive::Relu => arity(1).and_then(|_| self.relu(inputs[0])),
            Primitive::Ln => arity(1).and_then(|_| self.ln(inputs[0])),
            Primitive::Softmax => arity(1).and_then(|_| self.softmax(inputs[0])),
            Primitive::Mean => arity(1).and_then(|_| self.mean(inputs[0])),
            Primitive::Sum => arity(1).and_then(|_| self.sum(inputs[0])),
            Primitive::ScalarMul(s) => arity(1).and_then(|_| self.scale(inputs[0], s)),
        }
    }

    fn dims2(&self, i: usize, op: &'static str) -> Result<(usize, usize)> {
        let t = &self.nodes[i].value;
        t.dims2().ok_or_else(|| Error::InvalidShape {
            op,
            shape: t.shape().to_vec(),
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (r, k) = self.dims2(ia, "matmul")?;
        let (k2, c) = self.dims2(ib, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", ia, ib));
        }
        let mut out = vec![0.0; r * c];
        matmul_raw(
            self.nodes[ia].value.data(),
            self.nodes[ib].value.data(),
            &mut out,
            r,
            k,
            c,
        );
        let g = self.grad_of(&[ia, ib]);
        Ok(self.push(Tensor::matrix(r, c, out), Op::Matmul(ia, ib), g))
    }

    fn mismatch(&self, op: &'static str, a: usize, b: usize) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.nodes[a].value.shape().to_vec(),
            right: self.nodes[b].value.shape().to_vec(),
        }
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        if self.nodes[ia].value.shape() != self.nodes[ib].value.shape() {
            return Err(self.mismatch(op, ia, ib));
        }
        let va = &self.nodes[ia].value;
        let vb = &self.nodes[ib].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let g = self.grad_of(&[ia, ib]);
        Ok(self.push(t, make(ia, ib), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(row)?);
        let (r, c) = self.dims2(ia, "add_row")?;
        let (r2, c2) = self.dims2(ib, "add_row")?;
        if r2 != 1 || c2 != c {
            return Err(self.mismatch("add_row", ia, ib));
        }
        let bias = self.nodes[ib].value.data();
        let mut out = self.nodes[ia].value.data().to_vec();
        for i in 0..r {
            for (o, &b) in out[i * c..(i + 1) * c].iter_mut().zip(bias) {
                *o += b;
            }
        }
        let shape = self.nodes[ia].value.shape().to_vec();
        let g = self.grad_of(&[ia, ib]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(ia, ib), g))
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of nothing".into()));
        }
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        let rank = first.len();
        if rank > 2 {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: first,
            });
        }
        let rows = if rank == 2 { first[0] } else { 1 };
        let mut cols = 0;
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.len() != rank || (rank == 2 && s[0] != rows) {
                return Err(self.mismatch("concat", idx[0], i));
            }
            cols += s[rank - 1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                out.extend_from_slice(self.nodes[i].value.row(r));
            }
        }
        let shape = if rank == 2 { vec![rows, cols] } else { vec![cols] };
        let g = self.grad_of(&idx);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(idx), g))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = self.dims2(ia, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::InvalidArgument(alloc::format!(
                "slice {start}..{} of {c} columns",
                start + len
            )));
        }
        let src = self.nodes[ia].value.data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rank1 = self.nodes[ia].value.shape().len() == 1;
        let t = if rank1 {
            Tensor::vector(out)
        } else {
            Tensor::matrix(r, len, out)
        };
        let g = self.grad_of(&[ia]);
        Ok(self.push(t, Op::SliceCols { src: ia, start }, g))
    }

    /// Selects rows by index; repeated indices are allowed (gradients add up).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = self.dims2(ia, "gather_rows")?;
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gather of no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::InvalidArgument(alloc::format!(
                "row {bad} out of range for {r} rows"
            )));
        }
        let src = &self.nodes[ia].value;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(src.row(i));
        }
        let g = self.grad_of(&[ia]);
        Ok(self.push(
            Tensor::matrix(rows.len(), c, out),
            Op::Gather {
                src: ia,
                rows: rows.to_vec(),
            },
            g,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = self.dims2(ia, "transpose")?;
        let src = self.nodes[ia].value.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let g = self.grad_of(&[ia]);
        Ok(self.push(Tensor::matrix(c, r, out), Op::Transpose(ia), g))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, make: impl Fn(usize) -> Op) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = self.nodes[ia].value.map(f);
        let g = self.grad_of(&[ia]);
        Ok(self.push(t, make(ia), g))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    /// Sigmoid held strictly inside `(0, 1)` where it would saturate in f64.
    pub fn open_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0), Op::Sigmoid)
    }

    /// `b + g ⊙ (a − b)`, snapped into `[min(a, b), max(a, b)]` against rounding.
    pub fn blend(&mut self, gate: Var, a: Var, b: Var) -> Result<Var> {
        let (ig, ia, ib) = (self.idx(gate)?, self.idx(a)?, self.idx(b)?);
        for (x, y) in [(ig, ia), (ia, ib)] {
            if self.nodes[x].value.shape() != self.nodes[y].value.shape() {
                return Err(self.mismatch("blend", x, y));
            }
        }
        let (gv, av, bv) = (&self.nodes[ig].value, &self.nodes[ia].value, &self.nodes[ib].value);
        let data = gv
            .data()
            .iter()
            .zip(av.data().iter().zip(bv.data()))
            .map(|(&g, (&x, &y))| (y + g * (x - y)).clamp(x.min(y), x.max(y)))
            .collect();
        let t = Tensor::new(gv.shape().to_vec(), data)?;
        let g = self.grad_of(&[ig, ia, ib]);
        Ok(self.push(t, Op::Blend { gate: ig, a: ia, b: ib }, g))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, libm::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu)
    }

    /// Natural log; every input must be strictly positive.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        if let Some(&bad) = self.nodes[ia].value.data().iter().find(|&&x| x.is_nan() || x <= 0.0) {
            return Err(Error::Domain { op: "ln", value: bad });
        }
        self.unary(a, libm::log, Op::Ln)
    }

    /// `max(x, lo)`; the gradient is zero wherever the bound is active.
    pub fn clamp_min(&mut self, a: Var, lo: f64) -> Result<Var> {
        self.unary(a, |x| if x > lo { x } else { lo }, |i| Op::ClampMin(i, lo))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let (r, c) = self.dims2(ia, "softmax")?;
        let src = &self.nodes[ia].value;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = src.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = libm::exp(x - max);
                z += *o;
            }
            for o in &mut out[i * c..(i + 1) * c] {
                *o /= z;
            }
        }
        let t = Tensor::new(src.shape().to_vec(), out)?;
        let g = self.grad_of(&[ia]);
        Ok(self.push(t, Op::Softmax(ia), g))
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        let g = self.grad_of(&[ia]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(ia), g))
    }

    /// Sum of all elements.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = self.nodes[ia].value.data().iter().sum::<f64>();
        let g = self.grad_of(&[ia]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), g))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, |x| x + s, Op::AddScalar)
    }

    /// Identity forward; the backward pass multiplies incoming gradients by `-lambda`.
    pub fn reverse_gradient(&mut self, a: Var, lambda: f64) -> Result<Var> {
        self.unary(a, |x| x, |i| Op::Reverse(i, lambda))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::NotRecording);
        }
        let il = self.idx(loss)?;
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::NotScalar(self.nodes[il].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[il] = Some(vec![1.0]);

        for i in (0..=il).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(up) = grads[i].take() else { continue };
            self.propagate(i, &up, &mut grads);
        }
        // Only leaves keep their gradients; untracked leaves read as zero.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let nodes = &self.nodes;
        let mut acc = |j: usize, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[j].requires_grad {
                return;
            }
            let g = grads[j].get_or_insert_with(|| vec![0.0; nodes[j].value.len()]);
            f(g);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (r, k) = nodes[*a].value.dims2().unwrap();
                let (_, c) = nodes[*b].value.dims2().unwrap();
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                acc(*a, &mut |g| matmul_nt_acc(up, bv, g, r, c, k));
                acc(*b, &mut |g| matmul_tn_acc(av, up, g, r, k, c));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| add_into(g, up));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                acc(*b, &mut |g| {
                    for (x, u) in g.iter_mut().zip(up) {
                        *x -= u;
                    }
                });
            }
            Op::AddRow(a, b) => {
                acc(*a, &mut |g| add_into(g, up));
                let c = nodes[*b].value.len();
                acc(*b, &mut |g| {
                    for chunk in up.chunks(c) {
                        add_into(g, chunk);
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                acc(*a, &mut |g| {
                    for ((x, u), y) in g.iter_mut().zip(up).zip(bv) {
                        *x += u * y;
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, u), y) in g.iter_mut().zip(up).zip(av) {
                        *x += u * y;
                    }
                });
            }
            Op::Concat(parts) => {
                let (rows, cols) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let (_, pc) = nodes[p].value.dims2().unwrap();
                    acc(p, &mut |g| {
                        for r in 0..rows {
                            let src = &up[r * cols + offset..r * cols + offset + pc];
                            add_into(&mut g[r * pc..(r + 1) * pc], src);
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceCols { src, start } => {
                let (r, c) = nodes[*src].value.dims2().unwrap();
                let (_, len) = node.value.dims2().unwrap();
                acc(*src, &mut |g| {
                    for row in 0..r {
                        let dst = &mut g[row * c + start..row * c + start + len];
                        add_into(dst, &up[row * len..(row + 1) * len]);
                    }
                });
            }
            Op::Gather { src, rows } => {
                let (_, c) = nodes[*src].value.dims2().unwrap();
                acc(*src, &mut |g| {
                    for (k, &r) in rows.iter().enumerate() {
                        add_into(&mut g[r * c..(r + 1) * c], &up[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = nodes[*a].value.dims2().unwrap();
                acc(*a, &mut |g| {
                    for x in 0..r {
                        for y in 0..c {
                            g[x * c + y] += up[y * r + x];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => acc(*a, &mut |g| {
                for ((x, u), s) in g.iter_mut().zip(up).zip(out) {
                    *x += u * s * (1.0 - s);
                }
            }),
            Op::Tanh(a) => acc(*a, &mut |g| {
                for ((x, u), t) in g.iter_mut().zip(up).zip(out) {
                    *x += u * (1.0 - t * t);
                }
            }),
            Op::Relu(a) => {
                let inp = nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for ((x, u), &v) in g.iter_mut().zip(up).zip(inp) {
                        if v > 0.0 {
                            *x += u;
                        }
                    }
                })
            }
            Op::Ln(a) => {
                let inp = nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for ((x, u), &v) in g.iter_mut().zip(up).zip(inp) {
                        *x += u / v;
                    }
                })
            }
            Op::ClampMin(a, lo) => {
                let inp = nodes[*a].value.data();
                acc(*a, &mut |g| {
                    for ((x, u), &v) in g.iter_mut().zip(up).zip(inp) {
                        if v > *lo {
                            *x += u;
                        }
                    }
                })
            }
            Op::Softmax(a) => {
                let (r, c) = node.value.dims2().unwrap();
                acc(*a, &mut |g| {
                    for row in 0..r {
                        let s = &out[row * c..(row + 1) * c];
                        let u = &up[row * c..(row + 1) * c];
                        let dot: f64 = s.iter().zip(u).map(|(a, b)| a * b).sum();
                        for k in 0..c {
                            g[row * c + k] += s[k] * (u[k] - dot);
                        }
                    }
                })
            }
            Op::Mean(a) => {
                let n = nodes[*a].value.len() as f64;
                acc(*a, &mut |g| {
                    for x in g.iter_mut() {
                        *x += up[0] / n;
                    }
                })
            }
            Op::Sum(a) => acc(*a, &mut |g| {
                for x in g.iter_mut() {
                    *x += up[0];
                }
            }),
            Op::Scale(a, s) => acc(*a, &mut |g| {
                for (x, u) in g.iter_mut().zip(up) {
                    *x += u * s;
                }
            }),
            Op::AddScalar(a) => acc(*a, &mut |g| add_into(g, up)),
            Op::Reverse(a, lambda) => acc(*a, &mut |g| {
                for (x, u) in g.iter_mut().zip(up) {
                    *x -= lambda * u;
                }
            }),
            Op::Blend { gate, a, b } => {
                let gv = nodes[*gate].value.data();
                let av = nodes[*a].value.data();
                let bv = nodes[*b].value.data();
                acc(*gate, &mut |g| {
                    for (((x, u), p), q) in g.iter_mut().zip(up).zip(av).zip(bv) {
                        *x += u * (p - q);
                    }
                });
                acc(*a, &mut |g| {
                    for ((x, u), w) in g.iter_mut().zip(up).zip(gv) {
                        *x += u * w;
                    }
                });
                acc(*b, &mut |g| {
                    for ((x, u), w) in g.iter_mut().zip(up).zip(gv) {
                        *x += u * (1.0 - w);
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

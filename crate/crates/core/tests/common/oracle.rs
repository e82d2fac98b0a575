//! Central-difference gradient oracle shared by the gradient tests and the acceptance run.

#![allow(dead_code)]

use dan_core::data::Domain;
use dan_core::losses;
use dan_core::nn::{
    BiLstmEncoder, EmbeddingTable, Ffn, FusionGate, Graph, HeadOutput, InitScheme, LstmCell, Module, ParamBuilder,
    ParamGroup, Pooling, TrainMask, ViewRole,
};
use dan_core::vocab::Vocabulary;
use dan_core::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Magnitudes below this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Worst relative error of d(f)/d(inputs) against central differences.
pub fn check_inputs(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();
    let eval = |xs: &[Tensor]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = f(&mut t, &vs).unwrap();
        t.value(o).item()
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).unwrap();
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// Worst relative error over every parameter element of a module.
pub fn check_params<M: Module + Clone>(module: &M, loss: &dyn Fn(&M, &mut Graph) -> Result<Var>) -> f64 {
    let mut g = Graph::new(TrainMask::Everything);
    let out = loss(module, &mut g).unwrap();
    let grads = g.tape.backward(out).unwrap();
    let mut ids = Vec::new();
    module.visit(&mut |p| ids.push((p.id, p.value.len())));
    let value = |m: &M| {
        let mut g = Graph::inference();
        let o = loss(m, &mut g).unwrap();
        g.value(o).item()
    };
    let mut worst: f64 = 0.0;
    for (slot, &(id, len)) in ids.iter().enumerate() {
        let analytic = grads.param(id).unwrap_or_else(|| panic!("no gradient for parameter {slot}"));
        for j in 0..len {
            let nudge = |delta: f64| {
                let mut m = module.clone();
                let mut i = 0;
                m.visit_mut(&mut |p| {
                    if i == slot {
                        p.value.data_mut()[j] += delta;
                    }
                    i += 1;
                });
                value(&m)
            };
            let numeric = (nudge(STEP) - nudge(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output element matters.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.shape(out).to_vec();
    let r = tape.constant(random(&mut rng, &shape, -1.0, 1.0));
    let m = tape.mul(out, r)?;
    tape.sum(m)
}

type Case = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>);

/// Every differentiable primitive, each composed with a random projection.
pub fn primitive_cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut r = |shape: &[usize], lo: f64, hi: f64| random(&mut rng, shape, lo, hi);
    let away_from_zero = {
        let mut t = r(&[3, 4], 0.2, 1.5);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            if i % 3 == 0 {
                *v = -*v;
            }
        }
        t
    };
    vec![
        ("matmul", vec![r(&[3, 4], -1.0, 1.0), r(&[4, 2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y, 1)
        })),
        ("add", vec![r(&[2, 3], -1.0, 1.0), r(&[2, 3], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 2)
        })),
        ("sub", vec![r(&[2, 3], -1.0, 1.0), r(&[2, 3], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 3)
        })),
        ("mul", vec![r(&[2, 3], -1.0, 1.0), r(&[2, 3], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 4)
        })),
        ("add_row", vec![r(&[3, 2], -1.0, 1.0), r(&[2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.add_row(v[0], v[1])?;
            project(t, y, 5)
        })),
        ("concat", vec![r(&[2, 3], -1.0, 1.0), r(&[2, 1], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            project(t, y, 6)
        })),
        ("slice_cols", vec![r(&[2, 5], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.slice_cols(v[0], 1, 3)?;
            project(t, y, 7)
        })),
        ("gather_rows", vec![r(&[3, 2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1])?;
            project(t, y, 8)
        })),
        ("transpose", vec![r(&[2, 3], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.transpose(v[0])?;
            project(t, y, 9)
        })),
        ("sigmoid", vec![r(&[2, 3], -3.0, 3.0)], Box::new(|t, v| {
            let y = t.sigmoid(v[0])?;
            project(t, y, 10)
        })),
        ("open_sigmoid", vec![r(&[2, 3], -3.0, 3.0)], Box::new(|t, v| {
            let y = t.open_sigmoid(v[0])?;
            project(t, y, 30)
        })),
        ("blend", vec![r(&[2, 3], 0.1, 0.9), r(&[2, 3], -1.0, 1.0), r(&[2, 3], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.blend(v[0], v[1], v[2])?;
            project(t, y, 31)
        })),
        ("tanh", vec![r(&[2, 3], -2.0, 2.0)], Box::new(|t, v| {
            let y = t.tanh(v[0])?;
            project(t, y, 11)
        })),
        ("relu", vec![away_from_zero.clone()], Box::new(|t, v| {
            let y = t.relu(v[0])?;
            project(t, y, 12)
        })),
        ("ln", vec![r(&[2, 3], 0.1, 2.0)], Box::new(|t, v| {
            let y = t.ln(v[0])?;
            project(t, y, 13)
        })),
        ("clamp_min", vec![away_from_zero], Box::new(|t, v| {
            let y = t.clamp_min(v[0], 0.0)?;
            project(t, y, 14)
        })),
        ("softmax", vec![r(&[3, 4], -2.0, 2.0)], Box::new(|t, v| {
            let y = t.softmax(v[0])?;
            project(t, y, 15)
        })),
        ("mean", vec![r(&[3, 2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.mean(v[0])?;
            t.scale(y, 2.5)
        })),
        ("sum", vec![r(&[3, 2], -1.0, 1.0)], Box::new(|t, v| {
            let s = t.mul(v[0], v[0])?;
            t.sum(s)
        })),
        ("scale", vec![r(&[2, 2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7)?;
            project(t, y, 16)
        })),
        ("add_scalar", vec![r(&[2, 2], -1.0, 1.0)], Box::new(|t, v| {
            let y = t.add_scalar(v[0], 0.3)?;
            let y = t.mul(y, y)?;
            project(t, y, 17)
        })),
    ]
}

/// Gradient reversal: identity forward, `−λ` times the upstream gradient backward.
pub fn reversal_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let x = random(&mut rng, &[2, 3], -1.0, 1.0);
    let lambda = 0.7;
    let mut t = Tape::new();
    let v = t.leaf(x.clone());
    let rv = t.reverse_gradient(v, lambda).unwrap();
    let out = project(&mut t, rv, 3).unwrap();
    let g = t.backward(out).unwrap().wrt(v).unwrap();
    // The identity's numeric gradient, negated and scaled.
    let plain = check_like_identity(&x);
    g.data()
        .iter()
        .zip(&plain)
        .map(|(a, n)| rel_err(*a, -lambda * n))
        .fold(0.0, f64::max)
}

fn check_like_identity(x: &Tensor) -> Vec<f64> {
    let eval = |x: &Tensor| {
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let o = project(&mut t, v, 3).unwrap();
        t.value(o).item()
    };
    (0..x.len())
        .map(|j| {
            let mut p = x.clone();
            p.data_mut()[j] += STEP;
            let mut m = x.clone();
            m.data_mut()[j] -= STEP;
            (eval(&p) - eval(&m)) / (2.0 * STEP)
        })
        .collect()
}

pub fn builder(seed: u64) -> ParamBuilder {
    ParamBuilder::new(ChaCha8Rng::seed_from_u64(seed), InitScheme::Uniform(0.5))
}

fn table(dim: usize) -> EmbeddingTable {
    let vocab = Vocabulary::from_words(["a", "b", "c"]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = random(&mut rng, &[vocab.len(), dim], -1.0, 1.0);
    let mut table = EmbeddingTable::new(vocab, t, 900).unwrap();
    table.set_trainable(true);
    table
}

/// Encoder plus its embedding table, differentiated together.
#[derive(Clone)]
pub struct EncoderRig {
    pub table: EmbeddingTable,
    pub encoder: BiLstmEncoder,
}

impl Module for EncoderRig {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a dan_core::nn::Param)) {
        self.table.visit(f);
        self.encoder.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut dan_core::nn::Param)) {
        f(self.table.param_mut());
        self.encoder.visit_mut(f);
    }
}

/// Composite layers: LSTM cell, encoder (d_h = 2, length 3) under both poolings, heads and the gate.
pub fn layer_errors() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut b = builder(31);
    let cell = LstmCell::new(&mut b, "cell", ParamGroup::Encoder(ViewRole::Shared), 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = random(&mut rng, &[2, 3], -1.0, 1.0);
    out.push((
        "lstm cell (two steps)",
        check_params(&cell, &|c, g| {
            let xv = g.tape.constant(x.clone());
            let (h, cs) = c.step(g, xv, None)?;
            let (h2, c2) = c.step(g, xv, Some((h, cs)))?;
            let both = g.tape.concat(&[h2, c2])?;
            project(&mut g.tape, both, 1)
        }),
    ));

    for (name, pooling, seqs) in [
        ("encoder d_h=2 len 3, mean", Pooling::Mean, vec![vec![1usize, 2, 3]]),
        ("encoder d_h=2 len 3, last", Pooling::Last, vec![vec![3usize, 1, 2]]),
        ("encoder, padded batch", Pooling::Mean, vec![vec![1usize, 2, 3], vec![2usize]]),
    ] {
        let mut b = builder(7);
        let rig = EncoderRig {
            table: table(3),
            encoder: BiLstmEncoder::new(&mut b, "enc", ParamGroup::Encoder(ViewRole::Subj), 3, 2, pooling),
        };
        out.push((
            name,
            check_params(&rig, &|r, g| {
                let s: Vec<&[usize]> = seqs.iter().map(Vec::as_slice).collect();
                let f = r.encoder.encode_batch(g, &r.table, &s)?;
                project(&mut g.tape, f, 2)
            }),
        ));
    }

    for (name, output) in [
        ("ffn probabilities", HeadOutput::Probabilities),
        ("ffn scalar", HeadOutput::Scalar),
    ] {
        let mut b = builder(9);
        let ffn = Ffn::new(&mut b, "h", ParamGroup::StanceHead, 3, 4, 3, output);
        let x = random(&mut rng, &[3, 3], -1.0, 1.0);
        out.push((
            name,
            check_params(&ffn, &|m, g| {
                let xv = g.tape.constant(x.clone());
                let y = m.forward(g, xv)?;
                project(&mut g.tape, y, 3)
            }),
        ));
    }

    let mut b = builder(13);
    let gate = FusionGate::new(&mut b, 3);
    let fs = random(&mut rng, &[2, 3], -1.0, 1.0);
    let fo = random(&mut rng, &[2, 3], -1.0, 1.0);
    out.push((
        "fusion gate (parameters)",
        check_params(&gate, &|m, g| {
            let a = g.tape.constant(fs.clone());
            let o = g.tape.constant(fo.clone());
            let (_, fused) = m.fuse(g, a, o)?;
            project(&mut g.tape, fused, 4)
        }),
    ));
    let gate_in = gate.clone();
    out.push((
        "fusion gate (inputs)",
        check_inputs(&[fs, fo], &move |t, v| {
            let mut g = Graph::new(TrainMask::Everything);
            std::mem::swap(&mut g.tape, t);
            let (_, fused) = gate_in.fuse(&mut g, v[0], v[1])?;
            let r = project(&mut g.tape, fused, 4);
            std::mem::swap(&mut g.tape, t);
            r
        }),
    ));
    out
}

fn domains(ns: usize, nt: usize) -> Vec<Domain> {
    (0..ns).map(|_| Domain::Source).chain((0..nt).map(|_| Domain::Target)).collect()
}

/// Each loss differentiated with respect to its inputs.
pub fn loss_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut r = |shape: &[usize], lo: f64, hi: f64| random(&mut rng, shape, lo, hi);
    vec![
        (
            "nll over softmax",
            check_inputs(&[r(&[4, 3], -2.0, 2.0)], &|t, v| {
                let p = t.softmax(v[0])?;
                losses::nll(t, p, &[0, 2, 1, 2])
            }),
        ),
        (
            "confusion_h over softmax",
            check_inputs(&[r(&[5, 2], -2.0, 2.0)], &|t, v| {
                let p = t.softmax(v[0])?;
                losses::confusion_h(t, p, &domains(2, 3))
            }),
        ),
        (
            "confusion_w",
            check_inputs(&[r(&[5, 1], -2.0, 2.0)], &|t, v| losses::confusion_w(t, v[0], &domains(3, 2))),
        ),
        (
            "coral",
            check_inputs(&[r(&[4, 3], -1.0, 1.0), r(&[5, 3], -1.0, 1.0)], &|t, v| losses::coral(t, v[0], v[1])),
        ),
    ]
}

//! Scalar training objectives built on the tape.
//!
//! Classification and confusion losses sum over the batch rather than
//! averaging, so their magnitudes grow with batch size.

use alloc::format;
use alloc::vec::Vec;

use crate::data::Domain;
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Lower bound applied before every logarithm taken by a loss.
pub const LN_CLAMP: f64 = 1e-12;

/// Balancing coefficients of the auxiliary and alignment terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.1,
            gamma: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

fn rows_cols(tape: &Tape, v: Var, op: &'static str) -> Result<(usize, usize)> {
    let t = tape.value(v);
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::InvalidShape { op, shape: s.to_vec() }),
    }
}

fn clamped_ln(tape: &mut Tape, v: Var) -> Result<Var> {
    let c = tape.clamp_min(v, LN_CLAMP)?;
    tape.ln(c)
}

/// `−Σᵢ ln p̂ᵢ[yᵢ]` for a `batch × classes` probability matrix.
pub fn nll(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<Var> {
    let (rows, cols) = rows_cols(tape, probs, "nll")?;
    if rows != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "nll",
            left: tape.shape(probs).to_vec(),
            right: alloc::vec![labels.len()],
        });
    }
    let mut onehot = alloc::vec![0.0; rows * cols];
    for (r, &y) in labels.iter().enumerate() {
        if y >= cols {
            return Err(Error::InvalidArgument(format!("label {y} with only {cols} classes")));
        }
        onehot[r * cols + y] = 1.0;
    }
    let y = tape.constant(Tensor::matrix(rows, cols, onehot));
    let logp = clamped_ln(tape, probs)?;
    let picked = tape.mul(y, logp)?;
    let s = tape.sum(picked)?;
    tape.scale(s, -1.0)
}

fn require_both(domains: &[Domain], op: &str) -> Result<(usize, usize)> {
    if domains.is_empty() {
        return Err(Error::InvalidArgument(format!("{op} of an empty batch")));
    }
    let ns = domains.iter().filter(|&&d| d == Domain::Source).count();
    let nt = domains.len() - ns;
    if ns == 0 || nt == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op} needs both source and target examples (got {ns} source, {nt} target)"
        )));
    }
    Ok((ns, nt))
}

/// `Σ 1[x∈S]·ln D(f) + 1[x∈T]·ln(1 − D(f))` over `batch × 2` examiner
/// probabilities, where column 0 is the source probability `D(f)`.
pub fn confusion_h(tape: &mut Tape, domain_probs: Var, domains: &[Domain]) -> Result<Var> {
    let (rows, cols) = rows_cols(tape, domain_probs, "confusion_h")?;
    if cols != 2 || rows != domains.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_h",
            left: tape.shape(domain_probs).to_vec(),
            right: alloc::vec![domains.len(), 2],
        });
    }
    require_both(domains, "confusion_h")?;
    let mut sel = alloc::vec![0.0; rows * 2];
    for (r, d) in domains.iter().enumerate() {
        sel[r * 2 + if *d == Domain::Source { 0 } else { 1 }] = 1.0;
    }
    let sel = tape.constant(Tensor::matrix(rows, 2, sel));
    let logp = clamped_ln(tape, domain_probs)?;
    let picked = tape.mul(sel, logp)?;
    tape.sum(picked)
}

/// Mean critic value over source rows minus mean over target rows.
pub fn confusion_w(tape: &mut Tape, critic: Var, domains: &[Domain]) -> Result<Var> {
    let n = tape.value(critic).len();
    if n != domains.len() {
        return Err(Error::ShapeMismatch {
            op: "confusion_w",
            left: tape.shape(critic).to_vec(),
            right: alloc::vec![domains.len()],
        });
    }
    let (ns, nt) = require_both(domains, "confusion_w")?;
    let w: Vec<f64> = domains
        .iter()
        .map(|d| match d {
            Domain::Source => 1.0 / ns as f64,
            Domain::Target => -1.0 / nt as f64,
        })
        .collect();
    let w = tape.constant(Tensor::new(tape.shape(critic).to_vec(), w)?);
    let prod = tape.mul(w, critic)?;
    tape.sum(prod)
}

/// Unbiased covariance of the rows of an `n × d` matrix.
fn covariance(tape: &mut Tape, x: Var) -> Result<Var> {
    let (n, _) = rows_cols(tape, x, "coral")?;
    let avg = tape.constant(Tensor::filled(&[1, n], 1.0 / n as f64));
    let mean = tape.matmul(avg, x)?;
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let spread = tape.matmul(ones, mean)?;
    let centered = tape.sub(x, spread)?;
    let ct = tape.transpose(centered)?;
    let cov = tape.matmul(ct, centered)?;
    tape.scale(cov, 1.0 / (n as f64 - 1.0))
}

/// `‖C_S − C_T‖²_F / (4d²)` with unbiased covariances.
pub fn coral(tape: &mut Tape, source: Var, target: Var) -> Result<Var> {
    let (ns, d) = rows_cols(tape, source, "coral")?;
    let (nt, d2) = rows_cols(tape, target, "coral")?;
    if d != d2 {
        return Err(Error::ShapeMismatch {
            op: "coral",
            left: tape.shape(source).to_vec(),
            right: tape.shape(target).to_vec(),
        });
    }
    if ns < 2 || nt < 2 {
        return Err(Error::InvalidArgument(format!(
            "coral needs at least 2 examples per domain (got {ns} and {nt})"
        )));
    }
    let cs = covariance(tape, source)?;
    let ct = covariance(tape, target)?;
    let diff = tape.sub(cs, ct)?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 1.0 / (4.0 * (d * d) as f64))
}

/// Loss terms of one minimisation step. Absent terms are `None`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MinComponents {
    pub stance: Option<Var>,
    pub subj: Option<Var>,
    pub obj: Option<Var>,
    /// Confusion or CORAL terms, one per aligned view.
    pub align_subj: Option<Var>,
    pub align_obj: Option<Var>,
}

/// `L_stance + α·L_subj + β·L_obj + γ·(align_subj + align_obj)`.
pub fn min_objective(tape: &mut Tape, c: &MinComponents, w: &LossWeights) -> Result<Var> {
    let stance = c
        .stance
        .ok_or_else(|| Error::InvalidArgument("min objective without a stance loss".into()))?;
    let mut total = stance;
    for (term, weight) in [
        (c.subj, w.alpha),
        (c.obj, w.beta),
        (c.align_subj, w.gamma),
        (c.align_obj, w.gamma),
    ] {
        if let Some(v) = term {
            let s = tape.scale(v, weight)?;
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// Sum of the confusion losses the examiners maximise.
pub fn max_objective(tape: &mut Tape, confusions: &[Var], adversarial: bool) -> Result<Var> {
    if !adversarial {
        return Err(Error::Config(
            "the max objective exists only for adversarial aligners".into(),
        ));
    }
    let (&first, rest) = confusions
        .split_first()
        .ok_or_else(|| Error::InvalidArgument("max objective without confusion losses".into()))?;
    let mut total = first;
    for &v in rest {
        total = tape.add(total, v)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    fn mat(t: &mut Tape, rows: usize, cols: usize, v: &[f64]) -> Var {
        t.constant(Tensor::matrix(rows, cols, v.to_vec()))
    }

    #[test]
    fn nll_examples() {
        let mut t = Tape::new();
        let p = mat(&mut t, 1, 3, &[1.0, 0.0, 0.0]);
        let l = nll(&mut t, p, &[0]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let p = mat(&mut t, 1, 3, &[0.2, 0.2, 0.6]);
        let l = nll(&mut t, p, &[2]).unwrap();
        assert!(close(t.value(l).item(), -libm::log(0.6)));
        assert!(close(t.value(l).item(), 0.5108256237659907));

        let p = mat(&mut t, 2, 3, &[0.2, 0.2, 0.6, 0.5, 0.25, 0.25]);
        let l = nll(&mut t, p, &[2, 1]).unwrap();
        assert!(close(t.value(l).item(), -libm::log(0.6) - libm::log(0.25)));
    }

    #[test]
    fn nll_zero_probability_is_finite() {
        let mut t = Tape::new();
        let p = t.leaf(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        let l = nll(&mut t, p, &[1]).unwrap();
        assert!(t.value(l).item().is_finite());
        let g = t.backward(l).unwrap();
        assert!(g.wrt(p).unwrap().all_finite());
    }

    #[test]
    fn confusion_h_examples() {
        let mut t = Tape::new();
        let d = mat(&mut t, 2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let l = confusion_h(&mut t, d, &[Domain::Source, Domain::Target]).unwrap();
        assert!(close(t.value(l).item(), 2.0 * libm::log(0.5)));
        assert!(close(t.value(l).item(), -1.3862943611198906));

        let d = mat(&mut t, 2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let l = confusion_h(&mut t, d, &[Domain::Source, Domain::Target]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let d = mat(&mut t, 1, 2, &[0.9, 0.1]);
        assert!(confusion_h(&mut t, d, &[Domain::Source]).is_err());
    }

    #[test]
    fn confusion_w_examples() {
        use Domain::*;
        let mut t = Tape::new();
        let v = mat(&mut t, 4, 1, &[1.0, 0.0, 3.0, 2.0]);
        let l = confusion_w(&mut t, v, &[Source, Target, Source, Target]).unwrap();
        assert!(close(t.value(l).item(), 1.0));

        let v = mat(&mut t, 2, 1, &[5.0, 5.0]);
        let l = confusion_w(&mut t, v, &[Source, Target]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let v = mat(&mut t, 4, 1, &[1.0, 2.0, 2.0, 1.0]);
        let l = confusion_w(&mut t, v, &[Source, Source, Target, Target]).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let v = mat(&mut t, 2, 1, &[1.0, 2.0]);
        assert!(confusion_w(&mut t, v, &[Source, Source]).is_err());
    }

    #[test]
    fn coral_examples() {
        let mut t = Tape::new();
        let s = mat(&mut t, 2, 1, &[0.0, 2.0]);
        let z = mat(&mut t, 2, 1, &[0.0, 0.0]);
        let l = coral(&mut t, s, z).unwrap();
        assert!(close(t.value(l).item(), 1.0));

        let a = mat(&mut t, 3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let b = mat(&mut t, 3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 3.0]);
        let l = coral(&mut t, a, b).unwrap();
        assert_eq!(t.value(l).item(), 0.0);

        let one = mat(&mut t, 1, 2, &[1.0, 2.0]);
        assert!(coral(&mut t, one, b).is_err());
    }

    #[test]
    fn min_objective_examples() {
        let mut t = Tape::new();
        let s = t.constant(Tensor::scalar(1.0));
        let a = t.constant(Tensor::scalar(2.0));
        let b = t.constant(Tensor::scalar(3.0));
        let z = t.constant(Tensor::scalar(0.0));
        let c = MinComponents {
            stance: Some(s),
            subj: Some(a),
            obj: Some(b),
            align_subj: Some(z),
            align_obj: Some(z),
        };
        let l = min_objective(&mut t, &c, &LossWeights::default()).unwrap();
        assert!(close(t.value(l).item(), 1.5));
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
        };
        let l = min_objective(&mut t, &c, &zero).unwrap();
        assert_eq!(t.value(l).item(), 1.0);
        let all_zero = MinComponents {
            stance: Some(z),
            subj: Some(z),
            obj: Some(z),
            align_subj: None,
            align_obj: None,
        };
        let l = min_objective(&mut t, &all_zero, &LossWeights::default()).unwrap();
        assert_eq!(t.value(l).item(), 0.0);
    }

    #[test]
    fn max_objective_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::scalar(-1.3863));
        let l = max_objective(&mut t, &[a, a], true).unwrap();
        assert!(close(t.value(l).item(), -2.7726));
        let l = max_objective(&mut t, &[a], true).unwrap();
        assert_eq!(t.value(l).item(), -1.3863);
        assert!(max_objective(&mut t, &[a], false).is_err());
    }
}

//! Learning-rate schedule and Adam.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Module, ParamGroup};
use crate::tape::{Gradients, ParamId};
use crate::tensor::Tensor;

/// Peak scale of the schedule.
pub const BASE_LR: f64 = 1e-3;

/// `10⁻³ · min(1/√step, step/warmup)`.
pub fn lr_at(step: u64, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::InvalidArgument("learning-rate steps are numbered from 1".into()));
    }
    if warmup == 0 {
        return Err(Error::Config("warmup must be at least 1".into()));
    }
    let s = step as f64;
    let decay = 1.0 / libm::sqrt(s);
    let ramp = s / warmup as f64;
    Ok(BASE_LR * decay.min(ramp))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    state: BTreeMap<ParamId, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            state: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> Option<&Moments> {
        self.state.get(&id)
    }

    /// Bias-corrected update of one tensor at step `t` (1-based).
    pub fn update_tensor(&self, value: &mut Tensor, grad: &Tensor, m: &mut Moments, t: u64, lr: f64) -> Result<()> {
        if value.shape() != grad.shape() || m.first.len() != value.len() {
            return Err(Error::ShapeMismatch {
                op: "adam",
                left: value.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        let g = grad.data();
        for (i, th) in value.data_mut().iter_mut().enumerate() {
            let mi = self.beta1 * m.first[i] + (1.0 - self.beta1) * g[i];
            let vi = self.beta2 * m.second[i] + (1.0 - self.beta2) * g[i] * g[i];
            m.first[i] = mi;
            m.second[i] = vi;
            *th -= lr * (mi / c1) / (libm::sqrt(vi / c2) + self.eps);
        }
        Ok(())
    }

    /// Descends every parameter of `model` in a selected group that has a
    /// gradient. Nothing changes when any selected gradient is non-finite.
    pub fn step<M: Module + ?Sized>(
        &mut self,
        model: &mut M,
        grads: &Gradients,
        lr: f64,
        select: impl Fn(ParamGroup) -> bool,
    ) -> Result<()> {
        if !lr.is_finite() || lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        let mut bad = None;
        model.visit(&mut |p| {
            if bad.is_none() && select(p.group) {
                if let Some(g) = grads.param(p.id) {
                    if !g.all_finite() {
                        bad = Some(p.name.clone());
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        self.step += 1;
        let t = self.step;
        let mut outcome = Ok(());
        let mut state = core::mem::take(&mut self.state);
        model.visit_mut(&mut |p| {
            if outcome.is_err() || !select(p.group) {
                return;
            }
            if let Some(g) = grads.param(p.id) {
                let m = state.entry(p.id).or_insert_with(|| Moments::zeros(p.value.len()));
                outcome = self.update_tensor(&mut p.value, &g, m, t, lr);
            }
        });
        self.state = state;
        outcome
    }
}

/// Clamps every selected parameter into `[-c, c]`.
pub fn clip_weights<M: Module + ?Sized>(model: &mut M, c: f64, select: impl Fn(ParamGroup) -> bool) {
    model.visit_mut(&mut |p| {
        if select(p.group) {
            for v in p.value.data_mut() {
                *v = v.clamp(-c, c);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Param;

    #[test]
    fn schedule_examples() {
        assert!((lr_at(1, 100).unwrap() - 1e-5).abs() < 1e-18);
        assert!((lr_at(100, 100).unwrap() - 1e-4).abs() < 1e-18);
        assert!((lr_at(10000, 100).unwrap() - 1e-5).abs() < 1e-18);
        assert!(lr_at(0, 100).is_err());
        assert!(lr_at(1, 0).is_err());
    }

    #[test]
    fn schedule_branches_meet_where_ramp_equals_decay() {
        // s/w = 1/√s at s = w^(2/3); w = 1000 gives s = 100.
        let w = 1000;
        let at = lr_at(100, w).unwrap();
        assert!((at - 1e-4).abs() < 1e-18);
        let below = lr_at(99, w).unwrap();
        let above = lr_at(101, w).unwrap();
        assert!((below - at).abs() < 2e-6 && (above - at).abs() < 2e-6);
        assert!(below < at && above < at);
    }

    struct One(Param);

    impl Module for One {
        fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
            f(&self.0);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
        }
    }

    fn one(values: &[f64]) -> One {
        One(Param {
            id: 3,
            name: "p".into(),
            group: ParamGroup::StanceHead,
            value: Tensor::vector(values.to_vec()),
        })
    }

    fn grads_for(values: &[f64]) -> Gradients {
        let mut t = crate::tape::Tape::new();
        let p = t.param(3, &Tensor::vector(values.to_vec()), true);
        let c = t.constant(Tensor::vector(values.to_vec()));
        // d/dp Σ p·c = c
        let prod = t.mul(p, c).unwrap();
        let s = t.sum(prod).unwrap();
        t.backward(s).unwrap()
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut m = one(&[0.0]);
        let mut adam = Adam::new();
        adam.step(&mut m, &grads_for(&[0.5]), 1e-3, |_| true).unwrap();
        let expect = -1e-3 * (0.5 / (0.5 + 1e-8));
        assert!((m.0.value.data()[0] - expect).abs() < 1e-15);
        // the commonly quoted −9.99998e-4 agrees to the digits it prints
        assert!((m.0.value.data()[0] + 9.99998e-4).abs() < 5e-9);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut m = one(&[1.0, 2.0]);
        let mut adam = Adam::new();
        adam.step(&mut m, &grads_for(&[0.5, -0.5]), 1e-3, |_| true).unwrap();
        let before = m.0.value.clone();
        let mom = adam.moments(3).unwrap().clone();
        adam.step(&mut m, &grads_for(&[0.0, 0.0]), 1e-3, |_| true).unwrap();
        let after = adam.moments(3).unwrap();
        for i in 0..2 {
            assert!((after.first[i] - 0.9 * mom.first[i]).abs() < 1e-18);
            assert!((after.second[i] - 0.999 * mom.second[i]).abs() < 1e-18);
        }
        // the decayed first moment still moves the parameter, so compare the fresh case
        let mut fresh = one(&[1.0, 2.0]);
        let mut a2 = Adam::new();
        a2.step(&mut fresh, &grads_for(&[0.0, 0.0]), 1e-3, |_| true).unwrap();
        assert_eq!(fresh.0.value.data(), &[1.0, 2.0]);
        assert_ne!(before, m.0.value);
    }

    #[test]
    fn opposite_gradients_move_symmetrically() {
        let mut m = one(&[0.0, 0.0]);
        let mut adam = Adam::new();
        for _ in 0..3 {
            adam.step(&mut m, &grads_for(&[0.7, -0.7]), 1e-2, |_| true).unwrap();
        }
        let v = m.0.value.data();
        assert_eq!(v[0], -v[1]);
        assert!(v[0] < 0.0);
    }

    #[test]
    fn non_finite_gradient_aborts_without_change() {
        let mut m = one(&[1.0]);
        let mut adam = Adam::new();
        assert!(matches!(
            adam.step(&mut m, &grads_for(&[f64::NAN]), 1e-3, |_| true),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(m.0.value.data(), &[1.0]);
        assert_eq!(adam.steps(), 0);
        assert!(adam.step(&mut m, &grads_for(&[1.0]), 0.0, |_| true).is_err());
    }

    #[test]
    fn unselected_groups_are_untouched() {
        let mut m = one(&[1.0]);
        let mut adam = Adam::new();
        adam.step(&mut m, &grads_for(&[1.0]), 1e-3, |g| g.is_examiner()).unwrap();
        assert_eq!(m.0.value.data(), &[1.0]);
    }

    #[test]
    fn clipping_bounds_values() {
        let mut m = one(&[0.5, -0.02, 0.003]);
        clip_weights(&mut m, 0.01, |_| true);
        assert_eq!(m.0.value.data(), &[0.01, -0.01, 0.003]);
    }
}

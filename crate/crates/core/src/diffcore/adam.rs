use serde::{Deserialize, Serialize};

use super::nn::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdamReport {
    pub applied: bool,
    pub non_finite: bool,
}

impl AdamState {
    pub fn new(lr: f64, like: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = like.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn for_params(lr: f64, params: &ParameterSet) -> Self {
        Self::new(lr, params.tensors())
    }

    /// One Adam update in place. A non-finite gradient leaves parameters,
    /// moments and the step counter untouched and is reported.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<AdamReport> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::Shape(format!("adam: {:?} vs {:?}", p.shape(), g.shape())));
            }
        }
        if !grads.iter().all(Tensor::is_finite) {
            return Ok(AdamReport { applied: false, non_finite: true });
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(AdamReport { applied: true, non_finite: false })
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut ParameterSet, grads: &[Tensor]) -> Result<AdamReport> {
    state.step(params.tensors_mut(), grads)
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn polyak_update(target: &mut ParameterSet, online: &ParameterSet, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
    }
    if !target.same_layout(online) {
        return Err(Error::Config("polyak update between different layouts".into()));
    }
    for (t, o) in target.tensors_mut().iter_mut().zip(online.tensors()) {
        for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
            *a = if tau == 1.0 { b } else { (1.0 - tau) * *a + tau * b };
        }
    }
    Ok(())
}

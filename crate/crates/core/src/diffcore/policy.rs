use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian squashed by `bound * tanh(.)`, with tape handles for
/// the mean and the clamped log standard deviation (both `[rows, dim]`).
#[derive(Clone, Debug)]
pub struct SquashedGaussianHead {
    pub mean: Var,
    pub log_std: Var,
    pub bound: Vec<f64>,
}

impl SquashedGaussianHead {
    /// Splits a network output `[rows, 2 * dim]` into mean and log-std.
    pub fn from_output(tape: &Tape, out: Var, bound: &[f64]) -> Result<Self> {
        let dim = bound.len();
        let [_, cols] = tape.shape(out);
        if cols != 2 * dim {
            return Err(Error::Shape(format!("policy head needs {} columns, got {cols}", 2 * dim)));
        }
        let mean = tape.slice_cols(out, 0, dim);
        let log_std = tape.clamp(tape.slice_cols(out, dim, dim), LOG_STD_MIN, LOG_STD_MAX);
        Ok(Self { mean, log_std, bound: bound.to_vec() })
    }

    pub fn dim(&self) -> usize {
        self.bound.len()
    }

    /// `bound * tanh(mean)`.
    pub fn deterministic(&self, tape: &Tape) -> Var {
        let b = tape.constant(Tensor::row(&self.bound));
        tape.mul(tape.tanh(self.mean), b)
    }
}

/// Reparametrized sample `bound * tanh(mean + std * noise)` with its log
/// density, shaped `[rows, dim]` and `[rows, 1]`.
pub fn sample_squashed_gaussian(tape: &Tape, head: &SquashedGaussianHead, noise: &Tensor) -> Result<(Var, Var)> {
    let shape = tape.shape(head.mean);
    if noise.shape() != shape {
        return Err(Error::Shape(format!("noise {:?} vs head {shape:?}", noise.shape())));
    }
    let eps = tape.constant(noise.clone());
    let std = tape.exp(head.log_std);
    let u = tape.add(head.mean, tape.mul(std, eps));
    let b = tape.constant(Tensor::row(&head.bound));
    let action = tape.mul(tape.tanh(u), b);

    let log_bound: f64 = head.bound.iter().map(|b| b.ln()).sum();
    let sq = tape.constant(noise.map(|e| -0.5 * e * e));
    let per_dim = tape.sub(tape.sub(sq, head.log_std), tape.log_one_minus_tanh_sq(u));
    let lp = tape.add_scalar(tape.row_sum(per_dim), -(head.dim() as f64) * HALF_LN_2PI - log_bound);
    Ok((action, lp))
}

/// Log density of given actions `[rows, dim]`; gradients reach the head.
/// Actions on the bound are pulled inside by a relative `1e-9` so the
/// inverse squashing stays finite.
pub fn squashed_log_prob(tape: &Tape, head: &SquashedGaussianHead, actions: &Tensor) -> Result<Var> {
    let shape = tape.shape(head.mean);
    if actions.shape() != shape {
        return Err(Error::Shape(format!("actions {:?} vs head {shape:?}", actions.shape())));
    }
    let dim = head.dim();
    let mut pre = actions.clone();
    for r in 0..pre.rows() {
        for (j, v) in pre.row_slice_mut(r).iter_mut().enumerate() {
            let y = (*v / head.bound[j]).clamp(-1.0 + 1e-9, 1.0 - 1e-9);
            *v = y.atanh();
        }
    }
    let u = tape.constant(pre);
    let z = tape.div(tape.sub(u, head.mean), tape.exp(head.log_std));
    let per_dim = tape.sub(
        tape.sub(tape.scale(tape.square(z), -0.5), head.log_std),
        tape.log_one_minus_tanh_sq(u),
    );
    let log_bound: f64 = head.bound.iter().map(|b| b.ln()).sum();
    Ok(tape.add_scalar(tape.row_sum(per_dim), -(dim as f64) * HALF_LN_2PI - log_bound))
}

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{kernels, Activation, AdamState, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::expansion::{NoiseSource, Purpose};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;
const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub holdout: f64,
    /// Upper bound on gradient steps per member and training call.
    pub max_grad_steps: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden: 256,
            layers: 4,
            lr: 1e-3,
            batch: 256,
            max_epochs: 200,
            patience: 5,
            holdout: 0.1,
            max_grad_steps: usize::MAX,
        }
    }
}

/// `(s, a) -> s'` samples used to fit the ensemble.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub inputs: Vec<f64>,
    pub deltas: Vec<f64>,
    pub capacity: usize,
    cursor: usize,
}

impl ModelDataset {
    pub fn new(state_dim: usize, action_dim: usize, capacity: usize) -> Self {
        Self { state_dim, action_dim, inputs: Vec::new(), deltas: Vec::new(), capacity, cursor: 0 }
    }

    pub fn len(&self) -> usize {
        self.deltas.len() / self.state_dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&mut self, state: &[f64], action: &[f64], next: &[f64]) {
        let (s, a) = (self.state_dim, self.action_dim);
        debug_assert_eq!((state.len(), action.len(), next.len()), (s, a, s));
        let delta: Vec<f64> = next.iter().zip(state).map(|(n, x)| n - x).collect();
        if self.len() < self.capacity {
            self.inputs.extend_from_slice(state);
            self.inputs.extend_from_slice(action);
            self.deltas.extend_from_slice(&delta);
        } else {
            let i = self.cursor;
            self.inputs[i * (s + a)..i * (s + a) + s].copy_from_slice(state);
            self.inputs[i * (s + a) + s..(i + 1) * (s + a)].copy_from_slice(action);
            self.deltas[i * s..(i + 1) * s].copy_from_slice(&delta);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
    }

    fn rows(&self, idx: &[usize]) -> (Tensor, Tensor) {
        let (s, a) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(idx.len() * (s + a));
        let mut y = Vec::with_capacity(idx.len() * s);
        for &i in idx {
            x.extend_from_slice(&self.inputs[i * (s + a)..(i + 1) * (s + a)]);
            y.extend_from_slice(&self.deltas[i * s..(i + 1) * s]);
        }
        (Tensor::new(idx.len(), s + a, x).unwrap(), Tensor::new(idx.len(), s, y).unwrap())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// Column statistics of a row-major buffer; returns whether any column
    /// needed the standard deviation floor.
    fn fit(data: &[f64], cols: usize) -> (Self, bool) {
        let n = (data.len() / cols).max(1) as f64;
        let mut mean = vec![0.0; cols];
        for row in data.chunks(cols) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; cols];
        for row in data.chunks(cols) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut floored = false;
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s < STD_FLOOR {
                    floored = true;
                    1.0
                } else {
                    s
                }
            })
            .collect();
        (Self { mean, std }, floored)
    }

    fn apply(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelTrainReport {
    pub train_nll: Vec<f64>,
    pub holdout_nll: Vec<f64>,
    /// Holdout NLL of each member before this training call.
    pub initial_holdout_nll: Vec<f64>,
    pub epochs: Vec<usize>,
    pub grad_steps: usize,
    pub warnings: Vec<String>,
}

/// Gaussian ensemble over state deltas with normalized inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub state_dim: usize,
    pub action_dim: usize,
    pub members: Vec<ParameterSet>,
    pub input_norm: Option<Normalizer>,
    pub target_norm: Option<Normalizer>,
}

/// Smooth squashing of a raw log-variance into `[LOGVAR_MIN, LOGVAR_MAX]`
/// via a logistic written as `exp(-softplus(-x))`.
fn soft_clamp(tape: &Tape, raw: Var) -> Var {
    let unit = tape.exp(tape.neg(tape.softplus(tape.neg(raw))));
    tape.add_scalar(tape.scale(unit, LOGVAR_MAX - LOGVAR_MIN), LOGVAR_MIN)
}

impl EnsembleModel {
    pub fn new(state_dim: usize, action_dim: usize, config: EnsembleConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.members == 0 || config.layers == 0 {
            return Err(Error::Config("ensemble needs members and hidden layers".into()));
        }
        let mut sizes = vec![state_dim + action_dim];
        sizes.extend(std::iter::repeat_n(config.hidden, config.layers));
        sizes.push(2 * state_dim);
        let members = (0..config.members)
            .map(|_| ParameterSet::mlp(&sizes, Activation::Relu, Activation::Identity, rng))
            .collect::<Result<_>>()?;
        Ok(Self { config, state_dim, action_dim, members, input_norm: None, target_norm: None })
    }

    pub fn is_trained(&self) -> bool {
        self.input_norm.is_some() && self.target_norm.is_some()
    }

    fn norms(&self) -> Result<(&Normalizer, &Normalizer)> {
        match (&self.input_norm, &self.target_norm) {
            (Some(i), Some(t)) => Ok((i, t)),
            _ => Err(Error::Contract("ensemble used before its normalizer was fitted".into())),
        }
    }

    /// Normalized mean and log-variance of member `m` on normalized inputs.
    fn member_out(&self, tape: &Tape, m: usize, x: Var, trainable: bool) -> Result<(Var, Var, Vec<Var>)> {
        let bound = self.members[m].bind(tape, trainable);
        let out = bound.forward(tape, x)?;
        let mean = tape.slice_cols(out, 0, self.state_dim);
        let lv = soft_clamp(tape, tape.slice_cols(out, self.state_dim, self.state_dim));
        Ok((mean, lv, bound.vars().to_vec()))
    }

    /// Uniform member choice per row for the draw addressed by `key`.
    pub fn member_choice(&self, noise: &NoiseSource, key: u64, rows: usize) -> Vec<usize> {
        noise.indices(Purpose::Member, key, rows, self.members.len())
    }

    /// Sampled next state `s + delta` on the tape; one member per row.
    pub fn predict_tape(&self, tape: &Tape, states: Var, actions: Var, noise: &NoiseSource, key: u64) -> Result<Var> {
        let (inorm, tnorm) = self.norms()?;
        let rows = tape.shape(states)[0];
        let sa = tape.concat_cols(&[states, actions]);
        let mean_in = tape.constant(Tensor::row(&inorm.mean));
        let std_in = tape.constant(Tensor::row(&inorm.std));
        let x = tape.div(tape.sub(sa, mean_in), std_in);
        let choice = self.member_choice(noise, key, rows);
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(rows);
        for m in 0..self.members.len() {
            let idx: Vec<usize> = (0..rows).filter(|&r| choice[r] == m).collect();
            if idx.is_empty() {
                continue;
            }
            let xm = tape.gather_rows(x, &idx);
            let (mean, lv, _) = self.member_out(tape, m, xm, false)?;
            let eps = tape.constant(noise.normal(Purpose::Model, key, rows, self.state_dim).select_rows(&idx));
            let z = tape.add(mean, tape.mul(tape.exp(tape.scale(lv, 0.5)), eps));
            parts.push(z);
            order.extend(idx);
        }
        let stacked = tape.concat_rows(&parts);
        let mut inverse = vec![0; rows];
        for (pos, &r) in order.iter().enumerate() {
            inverse[r] = pos;
        }
        let z = tape.gather_rows(stacked, &inverse);
        let delta = tape.add(
            tape.mul(z, tape.constant(Tensor::row(&tnorm.std))),
            tape.constant(Tensor::row(&tnorm.mean)),
        );
        Ok(tape.add(states, delta))
    }

    /// Plain sampled next states for a batch.
    pub fn predict(&self, states: &Tensor, actions: &Tensor, noise: &NoiseSource, key: u64) -> Result<Tensor> {
        let tape = Tape::new();
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        Ok(tape.value(self.predict_tape(&tape, s, a, noise, key)?))
    }

    /// Mean prediction of member `m`, denormalized: `s + E[delta]`.
    pub fn predict_mean(&self, m: usize, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let (inorm, tnorm) = self.norms()?;
        let tape = Tape::new();
        let x = tape.constant(inorm.apply(&Tensor::hcat(&[states, actions])?));
        let (mean, _, _) = self.member_out(&tape, m, x, false)?;
        let mut out = tape.value(mean);
        for r in 0..out.rows() {
            for (j, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v = *v * tnorm.std[j] + tnorm.mean[j] + states.get(r, j);
            }
        }
        Ok(out)
    }

    fn nll(&self, tape: &Tape, m: usize, x: &Tensor, y: &Tensor, trainable: bool) -> Result<(Var, Vec<Var>)> {
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let (mean, lv, vars) = self.member_out(tape, m, xv, trainable)?;
        let err = tape.square(tape.sub(yv, mean));
        let inv = tape.exp(tape.neg(lv));
        let per = tape.add(tape.mul(err, inv), lv);
        Ok((tape.scale(tape.mean(per), 0.5), vars))
    }

    fn eval_nll(&self, m: usize, x: &Tensor, y: &Tensor) -> Result<f64> {
        let tnorm = self.target_norm.as_ref().expect("fitted");
        let mut total = 0.0;
        let n = x.rows();
        let chunk = 1024;
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let tape = Tape::new();
            let (l, _) = self.nll(&tape, m, &x.select_rows(&idx), &tnorm.apply(&y.select_rows(&idx)), false)?;
            total += tape.value(l).item() * (end - start) as f64;
            start = end;
        }
        Ok(total / n.max(1) as f64)
    }

    /// Refits the normalizers, then trains each member on its own bootstrap
    /// resample with early stopping on a shared holdout split.
    pub fn train(&mut self, data: &ModelDataset, rng: &mut impl Rng) -> Result<ModelTrainReport> {
        let n = data.len();
        if n == 0 {
            return Err(Error::NotReady("model dataset is empty".into()));
        }
        let cfg = self.config.clone();
        let mut report = ModelTrainReport::default();
        let (inorm, f1) = Normalizer::fit(&data.inputs, self.state_dim + self.action_dim);
        let (tnorm, f2) = Normalizer::fit(&data.deltas, self.state_dim);
        if f1 || f2 {
            report.warnings.push("degenerate columns in model data; standard deviation floor applied".into());
        }
        self.input_norm = Some(inorm);
        self.target_norm = Some(tnorm);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let n_hold = ((n as f64) * cfg.holdout).floor() as usize;
        let (hold, train): (Vec<usize>, Vec<usize>) = if n_hold == 0 || n - n_hold == 0 {
            (perm.clone(), perm.clone())
        } else {
            (perm[..n_hold].to_vec(), perm[n_hold..].to_vec())
        };
        let (hx_raw, hy) = data.rows(&hold);
        let hx = self.input_norm.as_ref().unwrap().apply(&hx_raw);

        for m in 0..self.members.len() {
            let boot: Vec<usize> = (0..train.len()).map(|_| train[rng.random_range(0..train.len())]).collect();
            let mut adam = AdamState::for_params(cfg.lr, &self.members[m]);
            let initial = self.eval_nll(m, &hx, &hy)?;
            report.initial_holdout_nll.push(initial);
            let mut best = (initial, self.members[m].clone());
            let mut since_best = 0;
            let mut epochs = 0;
            let mut steps = 0;
            let mut last_train = f64::NAN;
            'epochs: for _ in 0..cfg.max_epochs {
                epochs += 1;
                let mut order = boot.clone();
                order.shuffle(rng);
                let mut sum = 0.0;
                let mut count = 0;
                for batch in order.chunks(cfg.batch.max(1)) {
                    let (x, y) = data.rows(batch);
                    let x = self.input_norm.as_ref().unwrap().apply(&x);
                    let y = self.target_norm.as_ref().unwrap().apply(&y);
                    let tape = Tape::new();
                    let (loss, vars) = self.nll(&tape, m, &x, &y, true)?;
                    let g = tape.backward(loss)?;
                    let grads: Vec<Tensor> = vars.iter().map(|&v| g.wrt(v)).collect();
                    adam.step(self.members[m].tensors_mut(), &grads)?;
                    sum += tape.value(loss).item() * batch.len() as f64;
                    count += batch.len();
                    steps += 1;
                    if steps >= cfg.max_grad_steps {
                        last_train = sum / count as f64;
                        let h = self.eval_nll(m, &hx, &hy)?;
                        if h < best.0 {
                            best = (h, self.members[m].clone());
                        }
                        break 'epochs;
                    }
                }
                last_train = sum / count.max(1) as f64;
                let h = self.eval_nll(m, &hx, &hy)?;
                if h < best.0 {
                    best = (h, self.members[m].clone());
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
            self.members[m] = best.1;
            report.holdout_nll.push(best.0);
            report.train_nll.push(last_train);
            report.epochs.push(epochs);
            report.grad_steps += steps;
        }
        if report.holdout_nll.iter().chain(&report.train_nll).any(|v| !v.is_finite()) {
            report.warnings.push("non-finite model loss".into());
        }
        Ok(report)
    }
}

/// Soft clamp applied to plain values; matches the tape version.
pub fn soft_clamp_value(raw: f64) -> f64 {
    let unit = (-kernels::softplus(-raw)).exp();
    unit * (LOGVAR_MAX - LOGVAR_MIN) + LOGVAR_MIN
}

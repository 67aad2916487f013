//! H-step value expansion targets.
//!
//! Time indexing of noise keys: the action sampled at rollout time `t`
//! uses policy key `key0 + t`, and model noise at time `t` uses model key
//! `key0 + t`. Estimators that visit the same relative time step therefore
//! draw the same random numbers.

pub mod noise;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
pub use noise::{NoiseSource, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    None,
    Ce,
    Ae,
    Retrace,
}

impl std::str::FromStr for ExpansionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "ce" => Ok(Self::Ce),
            "ae" => Ok(Self::Ae),
            "retrace" => Ok(Self::Retrace),
            other => Err(Error::Config(format!("unknown expansion mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub mode: ExpansionMode,
    pub horizon: usize,
    pub lambda: f64,
    pub particles: usize,
    pub gamma: f64,
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if self.particles == 0 {
            return Err(Error::Config("particles must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// A policy usable inside rollouts. Rows of `states` are independent.
pub trait PolicyFn {
    /// Columns of standard-normal noise consumed per row by `sample`.
    fn noise_dim(&self) -> usize;
    /// Reparametrized actions and their log-probabilities `[rows, 1]`.
    fn sample(&self, tape: &Tape, states: Var, noise: &Tensor) -> Result<(Var, Var)>;
    /// Log-probability `[rows, 1]` of given actions.
    fn log_prob(&self, tape: &Tape, states: Var, actions: &Tensor) -> Result<Var>;
}

/// Minimum over the critic ensemble, `[rows, 1]`.
pub trait CriticFn {
    fn q_min(&self, tape: &Tape, states: Var, actions: Var) -> Result<Var>;
}

pub struct ModelStep {
    pub next: Var,
    /// True reward accumulated over the step, `[rows, 1]`.
    pub reward: Var,
    pub terminal: Vec<bool>,
}

/// One agent step of a dynamics model on a batch.
pub trait Model {
    fn step(&self, tape: &Tape, states: Var, actions: Var, noise: &NoiseSource, key: u64) -> Result<ModelStep>;
}

/// A batch either recorded on the caller's tape or held as plain values.
#[derive(Clone, Debug)]
pub enum Slot {
    Val(Tensor),
    Var(Var),
}

impl Slot {
    pub fn on(&self, tape: &Tape) -> Var {
        match self {
            Slot::Val(t) => tape.constant(t.clone()),
            Slot::Var(v) => *v,
        }
    }

    pub fn value(&self, tape: Option<&Tape>) -> Tensor {
        match self {
            Slot::Val(t) => t.clone(),
            Slot::Var(v) => tape.expect("slot lives on a tape").value(*v),
        }
    }

    fn rows(&self, tape: Option<&Tape>) -> usize {
        match self {
            Slot::Val(t) => t.rows(),
            Slot::Var(v) => tape.expect("slot lives on a tape").shape(*v)[0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bootstrap {
    /// `gamma^H V(s_H)` with a single-sample soft value.
    SoftValue,
    /// No bootstrap: a truncated Monte Carlo return.
    Zero,
}

/// Everything an estimator reads. The critic here is whatever the caller
/// wants bootstrapped: target parameters for critic targets.
pub struct Estimator<'a> {
    pub model: Option<&'a dyn Model>,
    pub policy: &'a dyn PolicyFn,
    pub critic: &'a dyn CriticFn,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub noise: NoiseSource,
    pub key0: u64,
}

fn entropy_term(tape: &Tape, q: Var, logp: Var, alpha: f64) -> Var {
    if alpha == 0.0 {
        q
    } else {
        tape.sub(q, tape.scale(logp, alpha))
    }
}

impl Estimator<'_> {
    fn policy_noise(&self, t: u64, rows: usize) -> Tensor {
        self.noise.normal(Purpose::Policy, self.key0 + t, rows, self.policy.noise_dim())
    }

    /// `V(s) = Q_min(s, a') - alpha log pi(a'|s)` with `a'` drawn from key `t`.
    pub fn soft_value(&self, tape: &Tape, states: Var, t: u64) -> Result<Var> {
        let rows = tape.shape(states)[0];
        let (a, logp) = self.policy.sample(tape, states, &self.policy_noise(t, rows))?;
        let q = self.critic.q_min(tape, states, a)?;
        Ok(entropy_term(tape, q, logp, self.alpha))
    }

    /// Q^H(s, a): roll the model `horizon` steps from `(s0, a0)`.
    ///
    /// With `tape = Some(..)` the whole rollout is recorded there and the
    /// result is differentiable in the anchor and the policy. With `None`
    /// every step runs on its own short-lived tape and only values are kept,
    /// which keeps memory flat for long horizons.
    pub fn q_h(&self, tape: Option<&Tape>, horizon: usize, boot: Bootstrap, s0: Slot, a0: Slot) -> Result<Slot> {
        let rows = s0.rows(tape);
        let carry = |tp: &Tape, v: Var| match tape {
            Some(_) => Slot::Var(v),
            None => Slot::Val(tp.value(v)),
        };
        if horizon == 0 {
            let local = Tape::new();
            let tp = tape.unwrap_or(&local);
            let q = match boot {
                Bootstrap::SoftValue => self.critic.q_min(tp, s0.on(tp), a0.on(tp))?,
                Bootstrap::Zero => tp.constant(Tensor::zeros(rows, 1)),
            };
            return Ok(carry(tp, q));
        }
        let model = self
            .model
            .ok_or_else(|| Error::Config("value expansion with H > 0 needs a model".into()))?;
        let mut alive = vec![1.0; rows];
        let mut discount = 1.0;
        let mut ret: Option<Slot> = None;
        let (mut s, mut a, mut logp) = (s0, a0, None::<Slot>);
        for t in 0..horizon as u64 {
            let local = Tape::new();
            let tp = tape.unwrap_or(&local);
            let (sv, av) = (s.on(tp), a.on(tp));
            let step = model.step(tp, sv, av, &self.noise, self.key0 + t)?;
            let term = match &logp {
                Some(lp) if self.alpha != 0.0 => tp.sub(step.reward, tp.scale(lp.on(tp), self.alpha)),
                _ => step.reward,
            };
            let w = tp.constant(Tensor::column(&alive.iter().map(|m| m * discount).collect::<Vec<_>>()));
            let contrib = tp.mul(term, w);
            let acc = match &ret {
                Some(r) => tp.add(r.on(tp), contrib),
                None => contrib,
            };
            for (m, &d) in alive.iter_mut().zip(&step.terminal) {
                if d {
                    *m = 0.0;
                }
            }
            discount *= self.gamma;
            let (na, nlp) = self.policy.sample(tp, step.next, &self.policy_noise(t + 1, rows))?;
            ret = Some(carry(tp, acc));
            s = carry(tp, step.next);
            a = carry(tp, na);
            logp = Some(carry(tp, nlp));
        }
        let ret = ret.expect("horizon > 0");
        match boot {
            Bootstrap::Zero => Ok(ret),
            Bootstrap::SoftValue => {
                let local = Tape::new();
                let tp = tape.unwrap_or(&local);
                let q = self.critic.q_min(tp, s.on(tp), a.on(tp))?;
                let v = entropy_term(tp, q, logp.expect("horizon > 0").on(tp), self.alpha);
                let w = tp.constant(Tensor::column(&alive.iter().map(|m| m * discount).collect::<Vec<_>>()));
                let total = tp.add(ret.on(tp), tp.mul(v, w));
                Ok(carry(tp, total))
            }
        }
    }

    /// Plain-valued Q^H for a batch of anchors, with `particles` independent
    /// samples per anchor. Rows are processed in chunks of `chunk` rollouts.
    pub fn q_h_particles(
        &self,
        horizon: usize,
        boot: Bootstrap,
        states: &Tensor,
        actions: &Tensor,
        particles: usize,
        chunk: usize,
    ) -> Result<Vec<ParticleTargets>> {
        let s = states.repeat_rows(particles);
        let a = actions.repeat_rows(particles);
        let total = s.rows();
        let chunk = chunk.max(particles);
        let chunk = chunk - chunk % particles;
        let mut values = Vec::with_capacity(total);
        let mut start = 0;
        let mut part = 0u64;
        while start < total {
            let end = (start + chunk).min(total);
            let idx: Vec<usize> = (start..end).collect();
            let est = Estimator { noise: NoiseSource::new(self.noise.seed ^ part.wrapping_mul(0x9e37_79b9_7f4a_7c15)), ..*self };
            let out = est.q_h(None, horizon, boot, Slot::Val(s.select_rows(&idx)), Slot::Val(a.select_rows(&idx)))?;
            values.extend(out.value(None).into_data());
            start = end;
            part += 1;
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTarget { particle: bad % particles });
        }
        Ok((0..states.rows())
            .map(|i| ParticleTargets::new(states.row_slice(i), actions.row_slice(i), values[i * particles..(i + 1) * particles].to_vec()))
            .collect())
    }

    /// Retrace value Q^L_RT for each window; see [`Segment`].
    pub fn retrace(&self, seg: &Segment) -> Result<Vec<f64>> {
        seg.validate()?;
        let rows = seg.lengths.len();
        let lmax = seg.max_len();
        // V(s_t), Q(s_t, a_t) and log pi(a_t|s_t) for every t >= 1
        let mut v = Vec::with_capacity(lmax);
        let mut q = Vec::with_capacity(lmax);
        let mut logpi = Vec::with_capacity(lmax);
        for t in 1..=lmax {
            let tp = Tape::new();
            let st = tp.constant(seg.states[t].clone());
            v.push(tp.value(self.soft_value(&tp, st, t as u64)?).into_data());
            if t < lmax {
                let at = tp.constant(seg.actions[t].clone());
                q.push(tp.value(self.critic.q_min(&tp, st, at)?).into_data());
                logpi.push(tp.value(self.policy.log_prob(&tp, st, &seg.actions[t])?).into_data());
            }
        }
        let mut out = Vec::with_capacity(rows);
        for b in 0..rows {
            let len = seg.lengths[b];
            let mut total = seg.rewards[0][b];
            let mut c = 1.0;
            let mut disc = 1.0;
            for t in 1..len {
                disc *= self.gamma;
                let mu = seg.behavior_logp[t][b];
                if !mu.is_finite() {
                    return Err(Error::Data(format!("window {b}: missing behavior log-prob at step {t}")));
                }
                let c_prev = c;
                let ratio = (logpi[t - 1][b] - mu).exp();
                c *= self.lambda * ratio.min(1.0);
                total += disc * (c * seg.rewards[t][b] + c_prev * v[t - 1][b] - c * q[t - 1][b]);
            }
            disc *= self.gamma;
            if !seg.terminal[b] {
                total += disc * c * v[len - 1][b];
            }
            out.push(total);
        }
        Ok(out)
    }
}

/// Batched windows of real transitions, stored time-major. Row `b` uses
/// transitions `0..lengths[b]`; entries past that are padding. `terminal[b]`
/// marks that the last used transition ended its episode.
#[derive(Clone, Debug)]
pub struct Segment {
    /// `max_len + 1` tensors `[rows, state_dim]`.
    pub states: Vec<Tensor>,
    /// `max_len` tensors `[rows, action_dim]`.
    pub actions: Vec<Tensor>,
    pub rewards: Vec<Vec<f64>>,
    /// Behavior log-probabilities; non-finite means missing.
    pub behavior_logp: Vec<Vec<f64>>,
    pub lengths: Vec<usize>,
    pub terminal: Vec<bool>,
}

impl Segment {
    pub fn max_len(&self) -> usize {
        self.lengths.iter().copied().max().unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        let l = self.max_len();
        if l == 0 || self.lengths.contains(&0) {
            return Err(Error::Data("retrace windows need at least one transition".into()));
        }
        if self.states.len() < l + 1 || self.actions.len() < l || self.rewards.len() < l || self.behavior_logp.len() < l {
            return Err(Error::Shape("segment shorter than its longest window".into()));
        }
        Ok(())
    }
}

/// Sampled target values for one anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleTargets {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population variance of `values`.
    pub variance: f64,
}

impl ParticleTargets {
    pub fn new(state: &[f64], action: &[f64], values: Vec<f64>) -> Self {
        let mean = particle_average(&values);
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
        Self { state: state.to_vec(), action: action.to_vec(), values, mean, variance }
    }
}

pub fn particle_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

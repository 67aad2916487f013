//! Adapters exposing parameter sets as expansion policies and critics.
//!
//! Each adapter binds its parameters at most once per tape, so every use
//! within one tape shares the same leaves and their gradients accumulate.

use std::cell::RefCell;

use crate::diffcore::{
    sample_squashed_gaussian, policy::squashed_log_prob, BoundParams, ParameterSet, SquashedGaussianHead, Tape,
    Tensor, Var,
};
use crate::error::Result;
use crate::expansion::{CriticFn, PolicyFn};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

pub struct Binding<'p> {
    pub params: &'p ParameterSet,
    pub trainable: bool,
    cache: RefCell<Option<(u32, BoundParams)>>,
}

impl<'p> Binding<'p> {
    pub fn new(params: &'p ParameterSet, trainable: bool) -> Self {
        Self { params, trainable, cache: RefCell::new(None) }
    }

    pub fn on(&self, tape: &Tape) -> BoundParams {
        let mut cache = self.cache.borrow_mut();
        match &*cache {
            Some((id, b)) if *id == tape.id() => b.clone(),
            _ => {
                let b = self.params.bind(tape, self.trainable);
                *cache = Some((tape.id(), b.clone()));
                b
            }
        }
    }

    pub fn forward(&self, tape: &Tape, x: Var) -> Result<Var> {
        self.on(tape).forward(tape, x)
    }
}

/// Squashed-Gaussian stochastic policy.
pub struct SacPolicy<'p> {
    pub net: Binding<'p>,
    pub bound: Vec<f64>,
}

impl<'p> SacPolicy<'p> {
    pub fn new(params: &'p ParameterSet, bound: &[f64], trainable: bool) -> Self {
        Self { net: Binding::new(params, trainable), bound: bound.to_vec() }
    }

    pub fn head(&self, tape: &Tape, states: Var) -> Result<SquashedGaussianHead> {
        let out = self.net.forward(tape, states)?;
        SquashedGaussianHead::from_output(tape, out, &self.bound)
    }
}

impl PolicyFn for SacPolicy<'_> {
    fn noise_dim(&self) -> usize {
        self.bound.len()
    }

    fn sample(&self, tape: &Tape, states: Var, noise: &Tensor) -> Result<(Var, Var)> {
        let head = self.head(tape, states)?;
        sample_squashed_gaussian(tape, &head, noise)
    }

    fn log_prob(&self, tape: &Tape, states: Var, actions: &Tensor) -> Result<Var> {
        let head = self.head(tape, states)?;
        squashed_log_prob(tape, &head, actions)
    }
}

/// Deterministic `bound * tanh(net(s))` policy. Its density for importance
/// weights is the Gaussian exploration distribution around that action.
pub struct DdpgPolicy<'p> {
    pub net: Binding<'p>,
    pub bound: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl<'p> DdpgPolicy<'p> {
    pub fn new(params: &'p ParameterSet, bound: &[f64], noise_scale: f64, trainable: bool) -> Self {
        Self {
            net: Binding::new(params, trainable),
            bound: bound.to_vec(),
            sigma: bound.iter().map(|b| noise_scale * b).collect(),
        }
    }

    pub fn action(&self, tape: &Tape, states: Var) -> Result<Var> {
        let out = self.net.forward(tape, states)?;
        Ok(tape.mul(tape.tanh(out), tape.constant(Tensor::row(&self.bound))))
    }
}

/// Log density of `a` under `N(mu, diag(sigma^2))`.
pub fn gaussian_log_prob(a: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    a.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((a, m), s)| -0.5 * ((a - m) / s).powi(2) - s.ln() - HALF_LN_2PI)
        .sum()
}

impl PolicyFn for DdpgPolicy<'_> {
    fn noise_dim(&self) -> usize {
        0
    }

    fn sample(&self, tape: &Tape, states: Var, _noise: &Tensor) -> Result<(Var, Var)> {
        let a = self.action(tape, states)?;
        let rows = tape.shape(states)[0];
        Ok((a, tape.constant(Tensor::zeros(rows, 1))))
    }

    fn log_prob(&self, tape: &Tape, states: Var, actions: &Tensor) -> Result<Var> {
        let mu = tape.value(self.action(tape, states)?);
        let lp: Vec<f64> = (0..actions.rows())
            .map(|r| gaussian_log_prob(actions.row_slice(r), mu.row_slice(r), &self.sigma))
            .collect();
        Ok(tape.constant(Tensor::column(&lp)))
    }
}

/// Two Q networks over `[s, a]`; the estimate is their minimum.
pub struct DoubleCritic<'p> {
    pub q1: Binding<'p>,
    pub q2: Binding<'p>,
}

impl<'p> DoubleCritic<'p> {
    pub fn new(pair: &'p [ParameterSet; 2], trainable: bool) -> Self {
        Self { q1: Binding::new(&pair[0], trainable), q2: Binding::new(&pair[1], trainable) }
    }

    pub fn both(&self, tape: &Tape, states: Var, actions: Var) -> Result<(Var, Var)> {
        let x = tape.concat_cols(&[states, actions]);
        Ok((self.q1.forward(tape, x)?, self.q2.forward(tape, x)?))
    }
}

impl CriticFn for DoubleCritic<'_> {
    fn q_min(&self, tape: &Tape, states: Var, actions: Var) -> Result<Var> {
        let (a, b) = self.both(tape, states, actions)?;
        Ok(tape.min(a, b))
    }
}

/// Q network over discrete actions, used both as the greedy policy and as
/// the critic `Q(s, a)` for index-valued actions `[rows, 1]`.
pub struct QNetwork<'p> {
    pub net: Binding<'p>,
}

impl<'p> QNetwork<'p> {
    pub fn new(params: &'p ParameterSet, trainable: bool) -> Self {
        Self { net: Binding::new(params, trainable) }
    }

    pub fn values(&self, tape: &Tape, states: Var) -> Result<Var> {
        self.net.forward(tape, states)
    }

    pub fn greedy(&self, tape: &Tape, states: Var) -> Result<Vec<usize>> {
        let q = tape.value(self.values(tape, states)?);
        Ok((0..q.rows()).map(|r| argmax(q.row_slice(r))).collect())
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn indices(t: &Tensor) -> Vec<usize> {
    t.data().iter().map(|&a| a as usize).collect()
}

impl PolicyFn for QNetwork<'_> {
    fn noise_dim(&self) -> usize {
        0
    }

    fn sample(&self, tape: &Tape, states: Var, _noise: &Tensor) -> Result<(Var, Var)> {
        let g = self.greedy(tape, states)?;
        let a: Vec<f64> = g.iter().map(|&i| i as f64).collect();
        Ok((tape.constant(Tensor::column(&a)), tape.constant(Tensor::zeros(g.len(), 1))))
    }

    fn log_prob(&self, tape: &Tape, states: Var, actions: &Tensor) -> Result<Var> {
        let g = self.greedy(tape, states)?;
        let lp: Vec<f64> = indices(actions)
            .iter()
            .zip(&g)
            .map(|(a, b)| if a == b { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Ok(tape.constant(Tensor::column(&lp)))
    }
}

impl CriticFn for QNetwork<'_> {
    fn q_min(&self, tape: &Tape, states: Var, actions: Var) -> Result<Var> {
        let q = self.values(tape, states)?;
        let idx = tape.with_value(actions, indices);
        Ok(tape.pick(q, &idx))
    }
}

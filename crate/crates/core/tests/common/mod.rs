//! Shared fixtures: random tabular MDPs exposed through the estimator
//! traits, and finite-difference helpers.
#![allow(dead_code)]

use rand::Rng;
use vexlab::agents::{ReplayBuffer, Transition};
use vexlab::envs::Env;
use vexlab::diffcore::{Tape, Tensor, Var};
use vexlab::expansion::{CriticFn, Model, ModelStep, NoiseSource, PolicyFn, Purpose, Segment};
use vexlab::Result;

/// Standard normal CDF (Numerical Recipes `erfcc`, relative error < 1.2e-7).
/// Only used to turn policy noise into a categorical draw, so the
/// approximation does not affect any identity under test.
pub fn phi(z: f64) -> f64 {
    let x = -z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.5 * x.abs());
    let ans = t
        * (-x * x - 1.265_512_23
            + t * (1.000_023_68
                + t * (0.374_091_96
                    + t * (0.096_784_18
                        + t * (-0.186_288_06
                            + t * (0.278_868_07
                                + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
            .exp();
    let erfc = if x >= 0.0 { ans } else { 2.0 - ans };
    0.5 * erfc
}

fn draw(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Finite MDP with a fixed stochastic policy and an arbitrary Q table.
/// States and actions travel as `[rows, 1]` index columns.
#[derive(Clone, Debug)]
pub struct Tabular {
    pub n_states: usize,
    pub n_actions: usize,
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    pub terminal: Vec<bool>,
    pub pi: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl Tabular {
    pub fn random(rng: &mut impl Rng, with_terminals: bool) -> Self {
        let n_states = rng.random_range(2..7);
        let n_actions = rng.random_range(2..5);
        let p = (0..n_states).map(|_| (0..n_actions).map(|_| random_simplex(n_states, rng)).collect()).collect();
        let r = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let mut terminal: Vec<bool> = (0..n_states).map(|_| with_terminals && rng.random::<f64>() < 0.25).collect();
        terminal[0] = false;
        let pi = (0..n_states).map(|_| random_simplex(n_actions, rng)).collect();
        let q = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        Self { n_states, n_actions, p, r, terminal, pi, q }
    }

    /// Deterministic transitions and a deterministic policy.
    pub fn deterministic(mut self) -> Self {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let k = (s + 2 * a + 1) % self.n_states;
                self.p[s][a] = (0..self.n_states).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
            }
            let k = s % self.n_actions;
            self.pi[s] = (0..self.n_actions).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
        }
        self
    }

    pub fn next_state(&self, s: usize, a: usize, u: f64) -> usize {
        draw(&self.p[s][a], u)
    }

    pub fn action(&self, s: usize, z: f64) -> usize {
        draw(&self.pi[s], phi(z))
    }
}

fn idx(t: &Tensor) -> Vec<usize> {
    t.data().iter().map(|&v| v as usize).collect()
}

fn col(v: impl IntoIterator<Item = f64>) -> Tensor {
    Tensor::column(&v.into_iter().collect::<Vec<_>>())
}

impl Model for Tabular {
    fn step(&self, tape: &Tape, states: Var, actions: Var, noise: &NoiseSource, key: u64) -> Result<ModelStep> {
        let s = idx(&tape.value(states));
        let a = idx(&tape.value(actions));
        let u = noise.uniform(Purpose::Model, key, s.len());
        let next: Vec<usize> = (0..s.len()).map(|i| self.next_state(s[i], a[i], u[i])).collect();
        Ok(ModelStep {
            next: tape.constant(col(next.iter().map(|&x| x as f64))),
            reward: tape.constant(col((0..s.len()).map(|i| self.r[s[i]][a[i]]))),
            terminal: next.iter().map(|&x| self.terminal[x]).collect(),
        })
    }
}

impl PolicyFn for Tabular {
    fn noise_dim(&self) -> usize {
        1
    }

    fn sample(&self, tape: &Tape, states: Var, noise: &Tensor) -> Result<(Var, Var)> {
        let s = idx(&tape.value(states));
        let a: Vec<usize> = s.iter().enumerate().map(|(i, &x)| self.action(x, noise.get(i, 0))).collect();
        let lp = col(s.iter().zip(&a).map(|(&x, &y)| self.pi[x][y].ln()));
        Ok((tape.constant(col(a.iter().map(|&x| x as f64))), tape.constant(lp)))
    }

    fn log_prob(&self, tape: &Tape, states: Var, actions: &Tensor) -> Result<Var> {
        let s = idx(&tape.value(states));
        let a = idx(actions);
        Ok(tape.constant(col(s.iter().zip(&a).map(|(&x, &y)| self.pi[x][y].ln()))))
    }
}

impl CriticFn for Tabular {
    fn q_min(&self, tape: &Tape, states: Var, actions: Var) -> Result<Var> {
        let s = idx(&tape.value(states));
        let a = idx(&tape.value(actions));
        Ok(tape.constant(col(s.iter().zip(&a).map(|(&x, &y)| self.q[x][y]))))
    }
}

/// Records the trajectory an estimator with `key0 = 0` would realize from
/// `(s0, a0)`: model key `t` for step `t`, policy key `t` for `a_t`, `t >= 1`.
/// Behavior log-probabilities are the policy's own (on-policy).
pub fn on_policy_segment(m: &Tabular, noise: &NoiseSource, s0: &[usize], a0: &[usize], len: usize) -> Segment {
    let rows = s0.len();
    let mut s = s0.to_vec();
    let mut a = a0.to_vec();
    let mut lengths = vec![len; rows];
    let mut terminal = vec![false; rows];
    let mut done = vec![false; rows];
    let mut states = vec![col(s.iter().map(|&x| x as f64))];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut blogp = Vec::new();
    for t in 0..len {
        actions.push(col(a.iter().map(|&x| x as f64)));
        rewards.push((0..rows).map(|i| m.r[s[i]][a[i]]).collect::<Vec<_>>());
        blogp.push((0..rows).map(|i| m.pi[s[i]][a[i]].ln()).collect::<Vec<_>>());
        let u = noise.uniform(Purpose::Model, t as u64, rows);
        let z = noise.normal(Purpose::Policy, t as u64 + 1, rows, 1);
        for i in 0..rows {
            let n = m.next_state(s[i], a[i], u[i]);
            if !done[i] && m.terminal[n] {
                done[i] = true;
                terminal[i] = true;
                lengths[i] = t + 1;
            }
            s[i] = n;
            a[i] = m.action(n, z.get(i, 0));
        }
        states.push(col(s.iter().map(|&x| x as f64)));
    }
    Segment { states, actions, rewards, behavior_logp: blogp, lengths, terminal }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|b|, floor)` on vector norms.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(floor)
}

/// Replay filled with uniformly random actions; episodes are cut at
/// `episode_len` steps (or the environment's own terminal states).
pub fn random_replay(env: &Env, n: usize, episode_len: usize, rng: &mut impl Rng) -> ReplayBuffer {
    let spec = env.spec();
    let mut replay = ReplayBuffer::new(n, 1);
    let mut s = env.reset(rng);
    let (mut episode, mut step) = (0u64, 0usize);
    for _ in 0..n {
        let (action, logp) = if spec.is_discrete() {
            (vec![rng.random_range(0..spec.num_actions) as f64], -(spec.num_actions as f64).ln())
        } else {
            let a: Vec<f64> = spec.action_bound.iter().map(|b| rng.random_range(-b..*b)).collect();
            let lp = -spec.action_bound.iter().map(|b| (2.0 * b).ln()).sum::<f64>();
            (a, lp)
        };
        let r = env.step(&s, &action).unwrap();
        let truncated = !r.terminal && (r.truncated || step + 1 >= episode_len);
        replay.push(Transition {
            state: s.obs.clone(),
            action,
            reward: r.reward,
            next_state: r.next_state.obs.clone(),
            terminal: r.terminal,
            truncated,
            behavior_logp: logp,
            episode,
            step,
        });
        if r.terminal || truncated {
            s = env.reset(rng);
            episode += 1;
            step = 0;
        } else {
            s = r.next_state;
            step += 1;
        }
    }
    replay
}

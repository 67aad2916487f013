//! Two analytic continuous-control tasks and one grid game.
//!
//! Episode lengths count agent steps (each continuous agent step applies
//! the action for `action_repeat` integration sub-steps and sums their
//! rewards). Reaching the limit sets `truncated`, never `terminal`.

pub mod breakout;
pub mod cartpole;
pub mod pendulum;
pub mod scalar;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};
pub use breakout::{BreakoutState, MiniBreakout};
pub use cartpole::CartpoleSwingup;
pub use pendulum::Pendulum;
pub use scalar::{Lane, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Pendulum,
    CartpoleSwingup,
    MiniBreakout,
}

impl EnvId {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvId::Pendulum => "pendulum",
            EnvId::CartpoleSwingup => "cartpole_swingup",
            EnvId::MiniBreakout => "mini_breakout",
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvId::Pendulum),
            "cartpole_swingup" => Ok(EnvId::CartpoleSwingup),
            "mini_breakout" => Ok(EnvId::MiniBreakout),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub state_dim: usize,
    /// Continuous action dimension, or 1 for the discrete game.
    pub action_dim: usize,
    /// Number of discrete actions; 0 for continuous tasks.
    pub num_actions: usize,
    pub action_bound: Vec<f64>,
    pub dt: f64,
    pub action_repeat: usize,
    pub episode_length: usize,
    pub gamma: f64,
}

impl EnvSpec {
    pub fn is_discrete(&self) -> bool {
        self.num_actions > 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub obs: Vec<f64>,
    pub elapsed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Time-free transition of an observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub next: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Env {
    Pendulum(Pendulum),
    Cartpole(CartpoleSwingup),
    Breakout(MiniBreakout),
}

impl Env {
    pub fn new(id: EnvId) -> Self {
        match id {
            EnvId::Pendulum => Env::Pendulum(Pendulum),
            EnvId::CartpoleSwingup => Env::Cartpole(CartpoleSwingup),
            EnvId::MiniBreakout => Env::Breakout(MiniBreakout),
        }
    }

    pub fn id(&self) -> EnvId {
        match self {
            Env::Pendulum(_) => EnvId::Pendulum,
            Env::Cartpole(_) => EnvId::CartpoleSwingup,
            Env::Breakout(_) => EnvId::MiniBreakout,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        match self {
            Env::Pendulum(_) => EnvSpec {
                id: EnvId::Pendulum,
                state_dim: 3,
                action_dim: 1,
                num_actions: 0,
                action_bound: vec![pendulum::MAX_TORQUE],
                dt: pendulum::DT,
                action_repeat: 4,
                episode_length: 200,
                gamma: 0.95,
            },
            Env::Cartpole(_) => EnvSpec {
                id: EnvId::CartpoleSwingup,
                state_dim: 5,
                action_dim: 1,
                num_actions: 0,
                action_bound: vec![cartpole::MAX_FORCE],
                dt: cartpole::DT,
                action_repeat: 2,
                episode_length: 500,
                gamma: 0.99,
            },
            Env::Breakout(_) => EnvSpec {
                id: EnvId::MiniBreakout,
                state_dim: breakout::OBS_DIM,
                action_dim: 1,
                num_actions: breakout::NUM_ACTIONS,
                action_bound: vec![],
                dt: 1.0,
                action_repeat: 1,
                episode_length: 1000,
                gamma: 0.99,
            },
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, Env::Breakout(_))
    }

    pub fn reset(&self, rng: &mut impl Rng) -> EnvState {
        let obs = match self {
            Env::Pendulum(p) => p.reset(rng),
            Env::Cartpole(c) => c.reset(rng),
            Env::Breakout(b) => b.reset(rng),
        };
        EnvState { obs, elapsed: 0 }
    }

    fn check_action(&self, action: &[f64]) -> Result<()> {
        if action.len() != 1 {
            return Err(Error::Contract(format!("expected one action value, got {}", action.len())));
        }
        if !action[0].is_finite() {
            return Err(Error::Contract(format!("non-finite action {}", action[0])));
        }
        if self.is_discrete() {
            let a = action[0];
            if a != a.trunc() || a < 0.0 || a >= breakout::NUM_ACTIONS as f64 {
                return Err(Error::Contract(format!("invalid discrete action {a}")));
            }
        }
        Ok(())
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        let d = self.spec().state_dim;
        if obs.len() != d {
            return Err(Error::Shape(format!("state needs {d} values, got {}", obs.len())));
        }
        Ok(())
    }

    /// Applies one agent step to an observation, ignoring time limits.
    pub fn transition(&self, obs: &[f64], action: &[f64]) -> Result<Outcome> {
        self.check_obs(obs)?;
        self.check_action(action)?;
        match self {
            Env::Breakout(b) => {
                let s = BreakoutState::decode(obs)?;
                let (n, reward, terminal) = b.advance(&s, action[0] as usize);
                Ok(Outcome { next: n.encode(), reward, terminal })
            }
            _ => {
                let (next, reward) = self.continuous_step(obs, action);
                Ok(Outcome { next, reward, terminal: false })
            }
        }
    }

    pub fn step(&self, state: &EnvState, action: &[f64]) -> Result<StepResult> {
        let out = self.transition(&state.obs, action)?;
        let elapsed = state.elapsed + 1;
        let truncated = !out.terminal && elapsed >= self.spec().episode_length;
        Ok(StepResult {
            next_state: EnvState { obs: out.next, elapsed },
            reward: out.reward,
            terminal: out.terminal,
            truncated,
        })
    }

    /// Reward of a single integration sub-step from `x`.
    pub fn substep_reward<S: Scalar>(&self, x: &[S], a: &[S]) -> S {
        match self {
            Env::Pendulum(p) => p.reward(x, a),
            Env::Cartpole(c) => c.reward(x, a),
            Env::Breakout(_) => unreachable!("grid game has no sub-steps"),
        }
    }

    /// One integration sub-step.
    pub fn substep<S: Scalar>(&self, x: &[S], a: &[S]) -> Vec<S> {
        match self {
            Env::Pendulum(p) => p.dynamics(x, a),
            Env::Cartpole(c) => c.dynamics(x, a),
            Env::Breakout(_) => unreachable!("grid game has no sub-steps"),
        }
    }

    /// Full agent step: `action_repeat` sub-steps, rewards summed.
    pub fn continuous_step<S: Scalar>(&self, x: &[S], a: &[S]) -> (Vec<S>, S) {
        let repeat = self.spec().action_repeat;
        let mut state = x.to_vec();
        let mut reward = self.substep_reward(&state, a);
        state = self.substep(&state, a);
        for _ in 1..repeat {
            reward = reward.add(&self.substep_reward(&state, a));
            state = self.substep(&state, a);
        }
        (state, reward)
    }

    /// The sub-step states visited during one agent step, starting with `x`
    /// and ending with the next observation.
    pub fn substep_trajectory(&self, x: &[f64], a: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.is_discrete() {
            return Err(Error::Unsupported("grid game has no sub-steps".into()));
        }
        self.check_obs(x)?;
        self.check_action(a)?;
        let mut out = vec![x.to_vec()];
        for _ in 0..self.spec().action_repeat {
            let next = self.substep(out.last().unwrap(), a);
            out.push(next);
        }
        Ok(out)
    }

    /// Reward of the first sub-step alone.
    pub fn true_reward(&self, obs: &[f64], action: &[f64]) -> f64 {
        match self {
            Env::Breakout(b) => match BreakoutState::decode(obs) {
                Ok(s) => b.advance(&s, action[0] as usize).1,
                Err(_) => f64::NAN,
            },
            _ => self.substep_reward(obs, action),
        }
    }

    /// Batched agent step on the tape: `state [B, S]`, `action [B, A]` to
    /// `(next [B, S], reward [B, 1])`.
    pub fn step_differentiable(&self, tape: &Tape, state: Var, action: Var) -> Result<(Var, Var)> {
        if self.is_discrete() {
            return Err(Error::Unsupported("the grid game is not differentiable".into()));
        }
        let spec = self.spec();
        let [b, s] = tape.shape(state);
        let [ba, a] = tape.shape(action);
        if s != spec.state_dim || a != spec.action_dim || b != ba {
            return Err(Error::Shape(format!(
                "differentiable step got state [{b}, {s}] and action [{ba}, {a}]"
            )));
        }
        let xs: Vec<Lane> = (0..s).map(|j| Lane::new(tape, tape.slice_cols(state, j, 1))).collect();
        let us: Vec<Lane> = (0..a).map(|j| Lane::new(tape, tape.slice_cols(action, j, 1))).collect();
        let (next, reward) = self.continuous_step(&xs, &us);
        let cols: Vec<Var> = next.iter().map(|l| l.var).collect();
        Ok((tape.concat_cols(&cols), reward.var))
    }

    /// Row-wise [`Env::transition`] over a batch.
    pub fn transition_batch(&self, states: &Tensor, actions: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<bool>)> {
        let mut next = Vec::with_capacity(states.len());
        let mut rewards = Vec::with_capacity(states.rows());
        let mut terms = Vec::with_capacity(states.rows());
        for r in 0..states.rows() {
            let o = self.transition(states.row_slice(r), actions.row_slice(r))?;
            next.extend_from_slice(&o.next);
            rewards.push(o.reward);
            terms.push(o.terminal);
        }
        Ok((Tensor::new(states.rows(), states.cols(), next)?, rewards, terms))
    }

    /// Indices of the `(cos, sin)` pair in continuous observations.
    pub fn angle_indices(&self) -> Option<(usize, usize)> {
        match self {
            Env::Pendulum(_) => Some((0, 1)),
            Env::Cartpole(_) => Some((2, 3)),
            Env::Breakout(_) => None,
        }
    }
}

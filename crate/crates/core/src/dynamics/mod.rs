//! Dynamics models for value expansion: the simulator itself, and a learned
//! probabilistic ensemble. Both report rewards from the true reward function.

pub mod ensemble;

use crate::diffcore::{Tape, Var};
use crate::envs::{Env, Lane, Scalar};
use crate::error::{Error, Result};
use crate::expansion::{Model, ModelStep, NoiseSource};
pub use ensemble::{EnsembleConfig, EnsembleModel, ModelDataset, ModelTrainReport};

/// The environment's own transition function.
#[derive(Clone, Copy, Debug)]
pub struct OracleModel {
    pub env: Env,
}

impl OracleModel {
    pub fn new(env: Env) -> Self {
        Self { env }
    }
}

/// Plain next state of one agent step.
pub fn oracle_predict(env: &Env, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
    Ok(env.transition(state, action)?.next)
}

impl Model for OracleModel {
    fn step(&self, tape: &Tape, states: Var, actions: Var, _noise: &NoiseSource, _key: u64) -> Result<ModelStep> {
        if self.env.is_discrete() {
            let (next, rewards, terminal) = tape.with_value(states, |s| {
                tape.with_value(actions, |a| self.env.transition_batch(s, a))
            })?;
            let rows = next.rows();
            return Ok(ModelStep {
                next: tape.constant(next),
                reward: tape.constant(crate::diffcore::Tensor::new(rows, 1, rewards)?),
                terminal,
            });
        }
        let rows = tape.shape(states)[0];
        let (next, reward) = self.env.step_differentiable(tape, states, actions)?;
        Ok(ModelStep { next, reward, terminal: vec![false; rows] })
    }
}

/// Learned ensemble predicting integration sub-steps; one agent step runs
/// `action_repeat` predicted sub-steps and sums the true sub-step rewards.
#[derive(Clone, Debug)]
pub struct LearnedModel {
    pub env: Env,
    pub ensemble: EnsembleModel,
}

impl Model for LearnedModel {
    fn step(&self, tape: &Tape, states: Var, actions: Var, noise: &NoiseSource, key: u64) -> Result<ModelStep> {
        if self.env.is_discrete() {
            return Err(Error::Unsupported("learned models are only used for continuous tasks".into()));
        }
        let spec = self.env.spec();
        let rows = tape.shape(states)[0];
        let us: Vec<Lane> = (0..spec.action_dim).map(|j| Lane::new(tape, tape.slice_cols(actions, j, 1))).collect();
        let mut s = states;
        let mut reward: Option<Lane> = None;
        for k in 0..spec.action_repeat as u64 {
            let xs: Vec<Lane> = (0..spec.state_dim).map(|j| Lane::new(tape, tape.slice_cols(s, j, 1))).collect();
            let r = self.env.substep_reward(&xs, &us);
            reward = Some(match reward {
                Some(acc) => acc.add(&r),
                None => r,
            });
            let next = self.ensemble.predict_tape(tape, s, actions, noise, key * 16 + k)?;
            s = match self.env.angle_indices() {
                Some((ci, si)) => project_angle(tape, next, ci, si, spec.state_dim),
                None => next,
            };
        }
        Ok(ModelStep { next: s, reward: reward.expect("repeat >= 1").var, terminal: vec![false; rows] })
    }
}

/// Renormalizes the `(cos, sin)` columns of a predicted state.
fn project_angle(tape: &Tape, x: Var, ci: usize, si: usize, dim: usize) -> Var {
    let c = Lane::new(tape, tape.slice_cols(x, ci, 1));
    let s = Lane::new(tape, tape.slice_cols(x, si, 1));
    let (c, s) = crate::envs::scalar::normalize(&c, &s);
    let cols: Vec<Var> = (0..dim)
        .map(|j| {
            if j == ci {
                c.var
            } else if j == si {
                s.var
            } else {
                tape.slice_cols(x, j, 1)
            }
        })
        .collect();
    tape.concat_cols(&cols)
}

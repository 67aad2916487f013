use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{argmax, QNetwork};
use super::replay::{Batch, ReplayBuffer};
use super::{mix, AgentConfig, UpdateReport};
use crate::diagnostics::gradstats::gradient_stats;
use crate::diffcore::{Activation, AdamState, ParameterSet, Tape, Tensor};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::expansion::{Bootstrap, Estimator, ExpansionConfig, ExpansionMode, Model, NoiseSource, PolicyFn, Slot};

const BATCH_STREAM: u64 = 0x5a5a_5a5a;

/// Linear epsilon schedule: from `start` to `end` over the first `fraction`
/// of the run, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self { start: 1.0, end: 0.1, fraction: 0.2 }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let span = (self.fraction * total as f64).max(1.0);
        let k = (step as f64 / span).min(1.0);
        self.start + k * (self.end - self.start)
    }
}

/// Deep Q-learning with a hard-synchronised target network. Expansion and
/// Retrace treat the greedy policy on the target network as the target
/// policy, so its log-probability is 0 for the greedy action and `-inf`
/// otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnAgent {
    pub config: AgentConfig,
    pub spec: EnvSpec,
    pub expansion: ExpansionConfig,
    pub online: ParameterSet,
    pub target: ParameterSet,
    pub adam: AdamState,
    pub seed: u64,
    pub updates: u64,
}

impl DqnAgent {
    pub fn new(spec: &EnvSpec, config: AgentConfig, expansion: ExpansionConfig, seed: u64) -> Result<Self> {
        if !spec.is_discrete() {
            return Err(Error::Config("dqn needs a discrete environment".into()));
        }
        if expansion.mode == ExpansionMode::Ae {
            return Err(Error::Unsupported("actor expansion has no actor in dqn".into()));
        }
        expansion.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![spec.state_dim];
        sizes.extend(vec![config.hidden; config.layers]);
        sizes.push(spec.num_actions);
        let online = ParameterSet::mlp(&sizes, Activation::Relu, Activation::Identity, &mut rng)?;
        Ok(Self {
            adam: AdamState::for_params(config.lr_critic, &online),
            target: online.clone(),
            online,
            spec: spec.clone(),
            expansion,
            config,
            seed,
            updates: 0,
        })
    }

    pub fn window(&self) -> usize {
        match self.expansion.mode {
            ExpansionMode::Retrace => self.expansion.horizon + 1,
            _ => 1,
        }
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let net = QNetwork::new(&self.online, false);
        let q = net.values(&tape, tape.constant(Tensor::row(state)))?;
        Ok(tape.value(q).into_data())
    }

    /// Epsilon-greedy action on the online network and its behavior
    /// log-probability.
    pub fn act(&self, state: &[f64], epsilon: f64, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let n = self.spec.num_actions;
        let greedy = argmax(&self.q_values(state)?);
        let a = if rng.random::<f64>() < epsilon { rng.random_range(0..n) } else { greedy };
        let p = if a == greedy { 1.0 - epsilon + epsilon / n as f64 } else { epsilon / n as f64 };
        Ok((vec![a as f64], p.ln()))
    }

    pub fn update(&mut self, replay: &ReplayBuffer, model: Option<&dyn Model>) -> Result<UpdateReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ BATCH_STREAM, self.updates));
        let batch = replay.sample_batch(self.config.batch, self.window(), &mut rng)?;
        self.update_on(&batch, model)
    }

    pub fn critic_targets(&self, batch: &Batch, model: Option<&dyn Model>) -> Result<Vec<f64>> {
        let gamma = self.expansion.gamma;
        let target = QNetwork::new(&self.target, false);
        let est = Estimator {
            model,
            policy: &target,
            critic: &target,
            alpha: 0.0,
            gamma,
            lambda: self.expansion.lambda,
            noise: NoiseSource::new(mix(self.seed, self.updates)),
            key0: 1,
        };
        let values: Vec<f64> = match self.expansion.mode {
            ExpansionMode::Retrace => return Estimator { key0: 0, ..est }.retrace(&batch.segment),
            ExpansionMode::Ce if self.expansion.horizon > 0 => {
                if model.is_none() {
                    return Err(Error::Config("expansion with H > 0 needs a model".into()));
                }
                let p = self.expansion.particles;
                let s = batch.next_states.repeat_rows(p);
                let tape = Tape::new();
                let (a, _) = target.sample(&tape, tape.constant(s.clone()), &Tensor::zeros(s.rows(), 0))?;
                let qh = est.q_h(None, self.expansion.horizon, Bootstrap::SoftValue, Slot::Val(s), Slot::Val(tape.value(a)))?;
                qh.value(None).data().chunks(p).map(|c| c.iter().sum::<f64>() / p as f64).collect()
            }
            _ => {
                let tape = Tape::new();
                let sv = tape.constant(batch.next_states.clone());
                tape.value(est.soft_value(&tape, sv, 0)?).into_data()
            }
        };
        Ok(batch
            .rewards
            .iter()
            .zip(&batch.terminal)
            .zip(&values)
            .map(|((r, &d), v)| r + gamma * if d { 0.0 } else { 1.0 } * v)
            .collect())
    }

    pub fn update_on(&mut self, batch: &Batch, model: Option<&dyn Model>) -> Result<UpdateReport> {
        let mut report = UpdateReport::default();
        let y = self.critic_targets(batch, model)?;
        report.target_mean = y.iter().sum::<f64>() / y.len() as f64;
        self.updates += 1;
        if y.iter().any(|v| !v.is_finite()) {
            report.critic_skipped = true;
            report.critic_nan = true;
            return Ok(report);
        }
        let tape = Tape::new();
        let net = QNetwork::new(&self.online, true);
        let q = {
            use crate::expansion::CriticFn;
            net.q_min(&tape, tape.constant(batch.states.clone()), tape.constant(batch.actions.clone()))?
        };
        let loss = tape.mean(tape.square(tape.sub(q, tape.constant(Tensor::column(&y)))));
        let g = tape.backward(loss)?;
        let grads = net.net.on(&tape).grads(&g);
        report.critic_loss = tape.value(loss).item();
        report.critic_grad = gradient_stats(&grads);
        if !report.critic_grad.finite {
            report.critic_skipped = true;
            report.critic_nan = true;
            return Ok(report);
        }
        self.adam.step(self.online.tensors_mut(), &grads)?;
        if self.updates.is_multiple_of(self.config.dqn_target_period.max(1) as u64) {
            self.target = self.online.clone();
        }
        Ok(report)
    }
}

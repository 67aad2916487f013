use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nets::{gaussian_log_prob, DdpgPolicy, DoubleCritic, SacPolicy};
use super::replay::{Batch, ReplayBuffer};
use super::{mix, AgentConfig, AgentKind, UpdateReport};
use crate::diagnostics::gradstats::gradient_stats;
use crate::diffcore::{polyak_update, Activation, AdamState, ParameterSet, Tape, Tensor, Var};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::expansion::{
    Bootstrap, CriticFn, Estimator, ExpansionConfig, ExpansionMode, Model, NoiseSource, PolicyFn, Slot,
};

const ACTOR_STREAM: u64 = 0xa5a5_a5a5;
const BATCH_STREAM: u64 = 0x5a5a_5a5a;

/// SAC (stochastic, learned temperature) or DDPG (deterministic) agent
/// with a double critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic {
    pub kind: AgentKind,
    pub config: AgentConfig,
    pub spec: EnvSpec,
    pub expansion: ExpansionConfig,
    pub policy: ParameterSet,
    pub critics: [ParameterSet; 2],
    pub targets: [ParameterSet; 2],
    pub log_alpha: f64,
    pub policy_adam: AdamState,
    pub critic_adam: [AdamState; 2],
    pub alpha_adam: AdamState,
    pub seed: u64,
    pub updates: u64,
}

enum PolicyAdapter<'p> {
    Sac(SacPolicy<'p>),
    Ddpg(DdpgPolicy<'p>),
}

impl PolicyAdapter<'_> {
    fn as_dyn(&self) -> &dyn PolicyFn {
        match self {
            PolicyAdapter::Sac(p) => p,
            PolicyAdapter::Ddpg(p) => p,
        }
    }
}

impl ActorCritic {
    pub fn new(kind: AgentKind, spec: &EnvSpec, config: AgentConfig, expansion: ExpansionConfig, seed: u64) -> Result<Self> {
        if spec.is_discrete() {
            return Err(Error::Config(format!("{kind:?} needs a continuous environment")));
        }
        if kind == AgentKind::Dqn {
            return Err(Error::Config("use the DQN agent for dqn".into()));
        }
        expansion.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, a) = (spec.state_dim, spec.action_dim);
        let hidden = vec![config.hidden; config.layers];
        let sizes = |inp: usize, out: usize| {
            let mut v = vec![inp];
            v.extend(&hidden);
            v.push(out);
            v
        };
        let pout = if kind == AgentKind::Sac { 2 * a } else { a };
        let policy = ParameterSet::mlp(&sizes(s, pout), Activation::Relu, Activation::Identity, &mut rng)?;
        let c1 = ParameterSet::mlp(&sizes(s + a, 1), Activation::Relu, Activation::Identity, &mut rng)?;
        let c2 = ParameterSet::mlp(&sizes(s + a, 1), Activation::Relu, Activation::Identity, &mut rng)?;
        let critics = [c1, c2];
        // DDPG keeps 0 here; `alpha()` reports 0 for it regardless
        let log_alpha = if kind == AgentKind::Sac { config.init_alpha.ln() } else { 0.0 };
        Ok(Self {
            kind,
            spec: spec.clone(),
            expansion,
            policy_adam: AdamState::for_params(config.lr_actor, &policy),
            critic_adam: [
                AdamState::for_params(config.lr_critic, &critics[0]),
                AdamState::for_params(config.lr_critic, &critics[1]),
            ],
            alpha_adam: AdamState::new(config.lr_alpha, &[Tensor::scalar(0.0)]),
            targets: critics.clone(),
            critics,
            policy,
            log_alpha,
            config,
            seed,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.kind {
            AgentKind::Sac => self.log_alpha.exp(),
            _ => 0.0,
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.target_entropy.unwrap_or(-(self.spec.action_dim as f64))
    }

    fn policy_adapter(&self, trainable: bool) -> PolicyAdapter<'_> {
        match self.kind {
            AgentKind::Sac => PolicyAdapter::Sac(SacPolicy::new(&self.policy, &self.spec.action_bound, trainable)),
            _ => PolicyAdapter::Ddpg(DdpgPolicy::new(
                &self.policy,
                &self.spec.action_bound,
                self.config.ddpg_noise,
                trainable,
            )),
        }
    }

    /// Window length the replay sampler must provide for this agent.
    pub fn window(&self) -> usize {
        match self.expansion.mode {
            ExpansionMode::Retrace => self.expansion.horizon + 1,
            _ => 1,
        }
    }

    /// Action for one state and its log-probability under the acting
    /// distribution (0 in evaluation mode).
    pub fn act(&self, state: &[f64], explore: bool, rng: &mut impl Rng) -> Result<(Vec<f64>, f64)> {
        let tape = Tape::new();
        let s = tape.constant(Tensor::row(state));
        let dim = self.spec.action_dim;
        match self.policy_adapter(false) {
            PolicyAdapter::Sac(p) => {
                let head = p.head(&tape, s)?;
                if explore {
                    let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                    let (a, lp) = p.sample(&tape, s, &Tensor::row(&noise))?;
                    Ok((tape.value(a).into_data(), tape.value(lp).item()))
                } else {
                    Ok((tape.value(head.deterministic(&tape)).into_data(), 0.0))
                }
            }
            PolicyAdapter::Ddpg(p) => {
                let mu = tape.value(p.action(&tape, s)?).into_data();
                if !explore {
                    return Ok((mu, 0.0));
                }
                let raw: Vec<f64> = mu
                    .iter()
                    .zip(&p.sigma)
                    .map(|(m, sd)| m + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let lp = gaussian_log_prob(&raw, &mu, &p.sigma);
                let a = raw.iter().zip(&p.bound).map(|(x, b)| x.clamp(-b, *b)).collect();
                Ok((a, lp))
            }
        }
    }

    fn noise(&self, stream: u64) -> NoiseSource {
        NoiseSource::new(mix(self.seed ^ stream, self.updates))
    }

    /// One critic, actor and temperature update from a fresh replay batch.
    pub fn update(&mut self, replay: &ReplayBuffer, model: Option<&dyn Model>) -> Result<UpdateReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed ^ BATCH_STREAM, self.updates));
        let batch = replay.sample_batch(self.config.batch, self.window(), &mut rng)?;
        self.update_on(&batch, model)
    }

    pub fn update_on(&mut self, batch: &Batch, model: Option<&dyn Model>) -> Result<UpdateReport> {
        let mut report = UpdateReport { alpha: self.alpha(), ..Default::default() };
        self.critic_update(batch, model, &mut report)?;
        self.actor_update(batch, model, &mut report)?;
        self.updates += 1;
        Ok(report)
    }

    fn needs_model(&self) -> bool {
        matches!(self.expansion.mode, ExpansionMode::Ce | ExpansionMode::Ae) && self.expansion.horizon > 0
    }

    /// Critic regression targets `y` for a batch (no gradient).
    pub fn critic_targets(&self, batch: &Batch, model: Option<&dyn Model>) -> Result<Vec<f64>> {
        if self.needs_model() && model.is_none() {
            return Err(Error::Config("expansion with H > 0 needs a model".into()));
        }
        let alpha = self.alpha();
        let gamma = self.expansion.gamma;
        let policy = self.policy_adapter(false);
        let target = DoubleCritic::new(&self.targets, false);
        let est = Estimator {
            model,
            policy: policy.as_dyn(),
            critic: &target,
            alpha,
            gamma,
            lambda: self.expansion.lambda,
            noise: self.noise(0),
            key0: 1,
        };
        let values: Vec<f64> = match self.expansion.mode {
            ExpansionMode::Retrace => {
                let est = Estimator { key0: 0, ..est };
                return est.retrace(&batch.segment);
            }
            ExpansionMode::Ce if self.expansion.horizon > 0 => {
                let p = self.expansion.particles;
                let rows = batch.len();
                let s = batch.next_states.repeat_rows(p);
                let tape = Tape::new();
                let sv = tape.constant(s.clone());
                let noise = est.noise.normal(crate::expansion::Purpose::Policy, 1, rows * p, est.policy.noise_dim());
                let (a, lp) = est.policy.sample(&tape, sv, &noise)?;
                let qh = est.q_h(None, self.expansion.horizon, Bootstrap::SoftValue, Slot::Val(s), Slot::Val(tape.value(a)))?;
                let qh = tape.constant(qh.value(None));
                let v = entropy(&tape, qh, lp, alpha);
                average_rows(&tape.value(v), p)
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

    fn critic_update(&mut self, batch: &Batch, model: Option<&dyn Model>, report: &mut UpdateReport) -> Result<()> {
        let y = self.critic_targets(batch, model)?;
        report.target_mean = y.iter().sum::<f64>() / y.len() as f64;
        if y.iter().any(|v| !v.is_finite()) {
            report.critic_skipped = true;
            report.critic_nan = true;
            return Ok(());
        }
        let tape = Tape::new();
        let critic = DoubleCritic::new(&self.critics, true);
        let s = tape.constant(batch.states.clone());
        let a = tape.constant(batch.actions.clone());
        let yv = tape.constant(Tensor::column(&y));
        let (q1, q2) = critic.both(&tape, s, a)?;
        let l1 = tape.mean(tape.square(tape.sub(q1, yv)));
        let l2 = tape.mean(tape.square(tape.sub(q2, yv)));
        let loss = tape.add(l1, l2);
        let g = tape.backward(loss)?;
        let g1 = critic.q1.on(&tape).grads(&g);
        let g2 = critic.q2.on(&tape).grads(&g);
        report.critic_loss = 0.5 * tape.value(loss).item();
        report.critic_grad = gradient_stats(&[g1.clone(), g2.clone()].concat());
        if !report.critic_grad.finite {
            report.critic_skipped = true;
            report.critic_nan = true;
            return Ok(());
        }
        let [c1, c2] = &mut self.critics;
        let [a1, a2] = &mut self.critic_adam;
        a1.step(c1.tensors_mut(), &g1)?;
        a2.step(c2.tensors_mut(), &g2)?;
        for i in 0..2 {
            polyak_update(&mut self.targets[i], &self.critics[i], self.config.tau)?;
        }
        Ok(())
    }

    /// Actor loss on the tape together with the policy leaves and the
    /// sampled log-probabilities.
    pub fn actor_loss(
        &self,
        tape: &Tape,
        states: &Tensor,
        model: Option<&dyn Model>,
        noise: &NoiseSource,
    ) -> Result<(Var, Vec<Var>, Tensor)> {
        let alpha = self.alpha();
        let expand = self.expansion.mode == ExpansionMode::Ae && self.expansion.horizon > 0;
        let p = if expand { self.expansion.particles } else { 1 };
        let s_rows = states.repeat_rows(p);
        let policy = self.policy_adapter(true);
        let pol = policy.as_dyn();
        let s = tape.constant(s_rows.clone());
        let eps = noise.normal(crate::expansion::Purpose::Policy, 0, s_rows.rows(), pol.noise_dim());
        let (a, lp) = pol.sample(tape, s, &eps)?;
        let q = if expand {
            let model = model.ok_or_else(|| Error::Config("actor expansion needs a model".into()))?;
            let target = DoubleCritic::new(&self.targets, false);
            let est = Estimator {
                model: Some(model),
                policy: pol,
                critic: &target,
                alpha,
                gamma: self.expansion.gamma,
                lambda: self.expansion.lambda,
                noise: *noise,
                key0: 0,
            };
            match est.q_h(Some(tape), self.expansion.horizon, Bootstrap::SoftValue, Slot::Var(s), Slot::Var(a))? {
                Slot::Var(v) => v,
                Slot::Val(_) => unreachable!("tape rollouts stay on the tape"),
            }
        } else {
            DoubleCritic::new(&self.critics, false).q_min(tape, s, a)?
        };
        let per = if alpha == 0.0 { tape.neg(q) } else { tape.sub(tape.scale(lp, alpha), q) };
        let loss = tape.mean(per);
        let vars = match &policy {
            PolicyAdapter::Sac(p) => p.net.on(tape).vars().to_vec(),
            PolicyAdapter::Ddpg(p) => p.net.on(tape).vars().to_vec(),
        };
        let lpv = tape.value(lp);
        Ok((loss, vars, lpv))
    }

    /// Policy gradient for the current actor loss, one tensor per parameter.
    pub fn actor_gradient(&self, states: &Tensor, model: Option<&dyn Model>, noise: &NoiseSource) -> Result<(f64, Vec<Tensor>, Tensor)> {
        let tape = Tape::new();
        let (loss, vars, lp) = self.actor_loss(&tape, states, model, noise)?;
        let g = tape.backward(loss)?;
        Ok((tape.value(loss).item(), vars.iter().map(|&v| g.wrt(v)).collect(), lp))
    }

    fn actor_update(&mut self, batch: &Batch, model: Option<&dyn Model>, report: &mut UpdateReport) -> Result<()> {
        let noise = self.noise(ACTOR_STREAM);
        let (loss, mut grads, lp) = self.actor_gradient(&batch.states, model, &noise)?;
        report.actor_loss = loss;
        let stats = gradient_stats(&grads);
        report.actor_grad = stats;
        if !stats.finite || stats.norm > self.config.explode_threshold {
            report.actor_skipped = true;
            report.actor_nan = !stats.finite;
            return Ok(());
        }
        if let Some(clip) = self.config.grad_clip {
            if stats.norm > clip {
                let k = clip / stats.norm;
                for g in &mut grads {
                    g.data_mut().iter_mut().for_each(|v| *v *= k);
                }
            }
        }
        self.policy_adam.step(self.policy.tensors_mut(), &grads)?;
        if self.kind == AgentKind::Sac {
            let grad = alpha_gradient(lp.data(), self.target_entropy());
            let mut la = [Tensor::scalar(self.log_alpha)];
            self.alpha_adam.step(&mut la, &[Tensor::scalar(grad)])?;
            self.log_alpha = la[0].item();
        }
        Ok(())
    }

    /// Evaluation-mode policy for plain rollouts.
    pub fn eval_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.act(state, false, &mut unused)?.0)
    }

    /// Estimator bound to this agent's current policy and target critics.
    pub fn with_estimator<R>(&self, model: Option<&dyn Model>, seed: u64, f: impl FnOnce(&Estimator) -> R) -> R {
        let policy = self.policy_adapter(false);
        let target = DoubleCritic::new(&self.targets, false);
        let est = Estimator {
            model,
            policy: policy.as_dyn(),
            critic: &target,
            alpha: self.alpha(),
            gamma: self.expansion.gamma,
            lambda: self.expansion.lambda,
            noise: NoiseSource::new(seed),
            key0: 0,
        };
        f(&est)
    }
}

/// Gradient of `-mean(log_alpha * (log_pi + target_entropy))` in `log_alpha`.
pub fn alpha_gradient(logp: &[f64], target_entropy: f64) -> f64 {
    -logp.iter().map(|l| l + target_entropy).sum::<f64>() / logp.len() as f64
}

fn entropy(tape: &Tape, q: Var, logp: Var, alpha: f64) -> Var {
    if alpha == 0.0 {
        q
    } else {
        tape.sub(q, tape.scale(logp, alpha))
    }
}

/// Means over consecutive groups of `p` rows of a column.
fn average_rows(t: &Tensor, p: usize) -> Vec<f64> {
    t.data().chunks(p).map(|c| c.iter().sum::<f64>() / p as f64).collect()
}

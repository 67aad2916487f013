use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agents::{AgentConfig, AgentKind};
use crate::dynamics::EnsembleConfig;
use crate::envs::{Env, EnvId};
use crate::error::{Error, Result};
use crate::expansion::{ExpansionConfig, ExpansionMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Oracle,
    Learned,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "learned" => Ok(Self::Learned),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Flat run description. Every key can be set from a JSON file or with
/// `key=value` overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvId,
    pub agent: AgentKind,
    pub expansion: ExpansionMode,
    pub model: ModelKind,
    pub horizon: usize,
    pub particles: usize,
    pub lambda: f64,
    pub seed: u64,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    /// Overrides the environment's discount.
    pub gamma: Option<f64>,
    pub hidden: usize,
    pub layers: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub tau: f64,
    pub batch: usize,
    pub init_alpha: f64,
    pub target_entropy: Option<f64>,
    pub grad_clip: Option<f64>,
    pub explode_threshold: f64,
    pub ddpg_noise: f64,
    pub dqn_target_period: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_fraction: f64,
    pub replay_capacity: usize,
    pub min_replay: usize,
    /// Gradient updates per environment step once the buffer is warm.
    pub updates_per_step: usize,
    pub model_members: usize,
    pub model_hidden: usize,
    pub model_layers: usize,
    pub model_lr: f64,
    pub model_batch: usize,
    pub model_epochs: usize,
    pub model_patience: usize,
    pub model_max_grad_steps: usize,
    /// Environment steps between ensemble refits.
    pub model_train_interval: usize,
    pub checkpoints: usize,
    /// Store the replay buffer inside checkpoints.
    pub checkpoint_replay: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let a = AgentConfig::default();
        let m = EnsembleConfig::default();
        Self {
            env: EnvId::Pendulum,
            agent: AgentKind::Sac,
            expansion: ExpansionMode::None,
            model: ModelKind::Oracle,
            horizon: 0,
            particles: 1,
            lambda: 1.0,
            seed: 0,
            total_steps: 100_000,
            eval_interval: 5_000,
            eval_episodes: 10,
            gamma: None,
            hidden: a.hidden,
            layers: a.layers,
            lr_actor: a.lr_actor,
            lr_critic: a.lr_critic,
            lr_alpha: a.lr_alpha,
            tau: a.tau,
            batch: a.batch,
            init_alpha: a.init_alpha,
            target_entropy: a.target_entropy,
            grad_clip: a.grad_clip,
            explode_threshold: a.explode_threshold,
            ddpg_noise: a.ddpg_noise,
            dqn_target_period: a.dqn_target_period,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_fraction: 0.2,
            replay_capacity: 1_000_000,
            min_replay: 5_000,
            updates_per_step: 1,
            model_members: m.members,
            model_hidden: m.hidden,
            model_layers: m.layers,
            model_lr: m.lr,
            model_batch: m.batch,
            model_epochs: m.max_epochs,
            model_patience: m.patience,
            model_max_grad_steps: m.max_grad_steps,
            model_train_interval: 250,
            checkpoints: 25,
            checkpoint_replay: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides. Values parse as JSON first, then as a
    /// bare string, so `env=pendulum` and `horizon=3` both work.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("config is an object");
        for o in overrides {
            let (k, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            if !obj.contains_key(k) {
                return Err(Error::Config(format!("unknown config key `{k}`")));
            }
            let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            obj.insert(k.to_string(), val);
        }
        let cfg: Self = serde_json::from_value(v).map_err(|e| Error::Config(format!("bad override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| Env::new(self.env).spec().gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let env = Env::new(self.env);
        let discrete = env.is_discrete();
        match (self.agent, discrete) {
            (AgentKind::Dqn, false) => return Err(Error::Config("dqn needs the discrete environment".into())),
            (AgentKind::Sac | AgentKind::Ddpg, true) => {
                return Err(Error::Config(format!("{:?} needs a continuous environment", self.agent)))
            }
            _ => {}
        }
        if self.agent == AgentKind::Dqn && self.expansion == ExpansionMode::Ae {
            return Err(Error::Config("actor expansion needs an actor".into()));
        }
        if discrete && self.model == ModelKind::Learned && self.uses_model() {
            return Err(Error::Config("learned models are only available for continuous tasks".into()));
        }
        let positive = [
            ("total_steps", self.total_steps),
            ("eval_interval", self.eval_interval),
            ("hidden", self.hidden),
            ("batch", self.batch),
            ("replay_capacity", self.replay_capacity),
            ("updates_per_step", self.updates_per_step),
            ("model_members", self.model_members),
            ("model_batch", self.model_batch),
            ("model_train_interval", self.model_train_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.checkpoints > self.total_steps {
            return Err(Error::Config("more checkpoints than steps".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) || self.init_alpha <= 0.0 || self.ddpg_noise <= 0.0 {
            return Err(Error::Config("tau must lie in [0, 1]; init_alpha and ddpg_noise must be positive".into()));
        }
        if [self.lr_actor, self.lr_critic, self.lr_alpha, self.model_lr].iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eps_end) || !(0.0..=1.0).contains(&self.eps_start) {
            return Err(Error::Config("epsilon values must lie in [0, 1]".into()));
        }
        self.expansion_config().validate()
    }

    /// Whether any estimator rolls a model forward.
    pub fn uses_model(&self) -> bool {
        matches!(self.expansion, ExpansionMode::Ce | ExpansionMode::Ae) && self.horizon > 0
    }

    pub fn expansion_config(&self) -> ExpansionConfig {
        ExpansionConfig {
            mode: self.expansion,
            horizon: self.horizon,
            lambda: self.lambda,
            particles: self.particles,
            gamma: self.gamma(),
        }
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.hidden,
            layers: self.layers,
            lr_actor: self.lr_actor,
            lr_critic: self.lr_critic,
            lr_alpha: self.lr_alpha,
            tau: self.tau,
            batch: self.batch,
            init_alpha: self.init_alpha,
            target_entropy: self.target_entropy,
            grad_clip: self.grad_clip,
            explode_threshold: self.explode_threshold,
            ddpg_noise: self.ddpg_noise,
            dqn_target_period: self.dqn_target_period,
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            members: self.model_members,
            hidden: self.model_hidden,
            layers: self.model_layers,
            lr: self.model_lr,
            batch: self.model_batch,
            max_epochs: self.model_epochs,
            patience: self.model_patience,
            max_grad_steps: self.model_max_grad_steps,
            ..EnsembleConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Evaluation grid: every `eval_interval` steps plus the final step.
    pub fn eval_steps(&self) -> Vec<usize> {
        let mut g: Vec<usize> = (1..=self.total_steps / self.eval_interval).map(|k| k * self.eval_interval).collect();
        if g.last() != Some(&self.total_steps) {
            g.push(self.total_steps);
        }
        g
    }

    /// Environment steps at which checkpoints are written, evenly spaced.
    pub fn checkpoint_steps(&self) -> Vec<usize> {
        let n = self.checkpoints;
        (1..=n).map(|k| k * self.total_steps / n).collect()
    }
}

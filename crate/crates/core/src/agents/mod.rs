//! SAC, DDPG and DQN agents whose targets and actor losses can be expanded
//! through a dynamics model or corrected with Retrace windows.

pub mod actor_critic;
pub mod dqn;
pub mod nets;
pub mod replay;

use serde::{Deserialize, Serialize};

use crate::diagnostics::gradstats::GradStats;
use crate::error::{Error, Result};
pub use actor_critic::ActorCritic;
pub use dqn::DqnAgent;
pub use replay::{Batch, ReplayBuffer, Transition};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Sac,
    Ddpg,
    Dqn,
}

impl std::str::FromStr for AgentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sac" => Ok(Self::Sac),
            "ddpg" => Ok(Self::Ddpg),
            "dqn" => Ok(Self::Dqn),
            other => Err(Error::Config(format!("unknown agent `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub hidden: usize,
    pub layers: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub tau: f64,
    pub batch: usize,
    pub init_alpha: f64,
    /// Defaults to `-dim(A)` when absent.
    pub target_entropy: Option<f64>,
    /// Gradient-norm clipping for the actor; off by default.
    pub grad_clip: Option<f64>,
    /// Actor updates with a larger gradient norm are skipped and flagged.
    pub explode_threshold: f64,
    /// DDPG exploration noise as a fraction of the action bound.
    pub ddpg_noise: f64,
    /// DQN target synchronisation period in updates.
    pub dqn_target_period: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            layers: 2,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 5e-5,
            tau: 0.005,
            batch: 256,
            init_alpha: 1.0,
            target_entropy: None,
            grad_clip: None,
            explode_threshold: 1e6,
            ddpg_noise: 0.1,
            dqn_target_period: 500,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub target_mean: f64,
    pub critic_grad: GradStats,
    pub actor_grad: GradStats,
    /// Non-finite target: the critic step was skipped.
    pub critic_skipped: bool,
    /// Non-finite or exploding actor gradient: the actor step was skipped.
    pub actor_skipped: bool,
    pub critic_nan: bool,
    pub actor_nan: bool,
}

/// splitmix64 finalizer; derives per-update seeds from `(seed, counter)`.
pub fn mix(seed: u64, counter: u64) -> u64 {
    let mut z = seed ^ counter.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

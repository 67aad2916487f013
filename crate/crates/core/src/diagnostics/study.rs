//! Distribution of H-step targets against long Monte Carlo returns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wasserstein::wasserstein_1d;
use crate::agents::{ActorCritic, ReplayBuffer};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::expansion::{Bootstrap, Estimator, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub horizons: Vec<usize>,
    pub anchors: usize,
    pub particles: usize,
    /// Length of the "true" return rollout, with no bootstrap at its end.
    pub mc_horizon: usize,
    /// Rollouts evaluated together per batch.
    pub chunk: usize,
    pub seed: u64,
    /// Reuse the target noise for the Monte Carlo particles (sanity mode).
    pub shared_noise: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { horizons: vec![1, 3, 5, 10, 30], anchors: 1000, particles: 100, mc_horizon: 300, chunk: 4096, seed: 0, shared_noise: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub checkpoint_step: u64,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub dw_mean: f64,
    pub target_mean: f64,
    pub target_var: f64,
    pub n_anchors: usize,
    /// Particle variance per anchor, in anchor order.
    #[serde(skip)]
    pub anchor_var: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetStudyResult {
    pub rows: Vec<StudyRow>,
}

impl TargetStudyResult {
    pub fn get(&self, step: u64, horizon: usize) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.checkpoint_step == step && r.horizon == horizon)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Uniform `(s, a)` anchors from a replay buffer.
pub fn sample_anchors(replay: &ReplayBuffer, n: usize, rng: &mut impl Rng) -> Result<(Tensor, Tensor)> {
    if replay.is_empty() {
        return Err(Error::Data("study needs a non-empty replay buffer".into()));
    }
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..replay.len())).collect();
    let s: Vec<&[f64]> = idx.iter().map(|&i| replay.get(i).state.as_slice()).collect();
    let a: Vec<&[f64]> = idx.iter().map(|&i| replay.get(i).action.as_slice()).collect();
    Ok((Tensor::from_rows(&s)?, Tensor::from_rows(&a)?))
}

/// Rows for one estimator over fixed anchors, one per horizon.
pub fn study_anchors(
    est: &Estimator,
    mc: &Estimator,
    step: u64,
    states: &Tensor,
    actions: &Tensor,
    cfg: &StudyConfig,
) -> Result<Vec<StudyRow>> {
    let truth = mc.q_h_particles(cfg.mc_horizon, Bootstrap::Zero, states, actions, cfg.particles, cfg.chunk)?;
    let mut rows = Vec::with_capacity(cfg.horizons.len());
    for &h in &cfg.horizons {
        let boot = if h == cfg.mc_horizon && cfg.shared_noise { Bootstrap::Zero } else { Bootstrap::SoftValue };
        let targets = est.q_h_particles(h, boot, states, actions, cfg.particles, cfg.chunk)?;
        let mut dw = 0.0;
        for (t, m) in targets.iter().zip(&truth) {
            dw += wasserstein_1d(&t.values, &m.values)?;
        }
        let n = targets.len();
        rows.push(StudyRow {
            checkpoint_step: step,
            horizon: h,
            dw_mean: dw / n as f64,
            target_mean: targets.iter().map(|t| t.mean).sum::<f64>() / n as f64,
            target_var: targets.iter().map(|t| t.variance).sum::<f64>() / n as f64,
            n_anchors: n,
            anchor_var: targets.iter().map(|t| t.variance).collect(),
        });
    }
    Ok(rows)
}

/// For every `(env step, agent, replay)` checkpoint: anchors from its own
/// buffer, oracle-model targets for each horizon, and their Wasserstein
/// distance to the Monte Carlo return distribution.
pub fn target_distribution_study(
    checkpoints: &[(u64, &ActorCritic, &ReplayBuffer)],
    model: &dyn Model,
    cfg: &StudyConfig,
) -> Result<TargetStudyResult> {
    if cfg.anchors == 0 || cfg.particles == 0 {
        return Err(Error::Config("study needs anchors and particles".into()));
    }
    let mut result = TargetStudyResult::default();
    for (i, &(step, agent, replay)) in checkpoints.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (s, a) = sample_anchors(replay, cfg.anchors, &mut rng)?;
        let target_seed = rng.random::<u64>();
        let mc_seed = if cfg.shared_noise { target_seed } else { rng.random::<u64>() };
        let rows = agent.with_estimator(Some(model), target_seed, |est| {
            agent.with_estimator(Some(model), mc_seed, |mc| study_anchors(est, mc, step, &s, &a, cfg))
        })?;
        result.rows.extend(rows);
    }
    Ok(result)
}

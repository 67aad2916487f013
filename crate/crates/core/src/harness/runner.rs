use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use crate::agents::dqn::EpsilonSchedule;
use crate::agents::{mix, ActorCritic, AgentKind, DqnAgent, ReplayBuffer, Transition, UpdateReport};
use crate::diagnostics::{save_checkpoint, Checkpoint};
use crate::dynamics::{EnsembleModel, LearnedModel, ModelDataset, OracleModel};
use crate::envs::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::expansion::Model;

const EVAL_STREAM: u64 = 0xe7a1_0000;
const MODEL_STREAM: u64 = 0x30de_1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Agent {
    ActorCritic(ActorCritic),
    Dqn(DqnAgent),
}

impl Agent {
    pub fn new(cfg: &ExperimentConfig, spec: &EnvSpec) -> Result<Self> {
        let (a, e) = (cfg.agent_config(), cfg.expansion_config());
        Ok(match cfg.agent {
            AgentKind::Dqn => Agent::Dqn(DqnAgent::new(spec, a, e, cfg.seed)?),
            k => Agent::ActorCritic(ActorCritic::new(k, spec, a, e, cfg.seed)?),
        })
    }

    pub fn update(&mut self, replay: &ReplayBuffer, model: Option<&dyn Model>) -> Result<UpdateReport> {
        match self {
            Agent::ActorCritic(a) => a.update(replay, model),
            Agent::Dqn(d) => d.update(replay, model),
        }
    }

    pub fn eval_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        match self {
            Agent::ActorCritic(a) => a.eval_action(state),
            Agent::Dqn(d) => Ok(d.act(state, 0.0, &mut ChaCha8Rng::seed_from_u64(0))?.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Done,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusFile {
    pub status: RunStatus,
    pub env_step: usize,
    pub skipped_actor_updates: usize,
    pub skipped_critic_updates: usize,
}

/// One evaluation point together with a summary of the updates since the
/// previous one. Non-finite values are stored as `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub env_step: usize,
    pub eval_return: f64,
    pub train_episodes: u64,
    pub updates: usize,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub target_mean: Option<f64>,
    pub critic_grad_mean: Option<f64>,
    pub critic_grad_std: Option<f64>,
    pub actor_grad_mean: Option<f64>,
    pub actor_grad_std: Option<f64>,
    /// Largest per-update actor gradient std in the group.
    pub actor_grad_std_max: Option<f64>,
    pub actor_skipped: usize,
    pub critic_skipped: usize,
    pub model_holdout_nll: Option<f64>,
}

/// Wall-clock measurements, kept apart from metrics so metrics stay
/// reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub env_step: usize,
    pub wall_clock_s: f64,
    pub update_s: f64,
    pub model_train_s: f64,
    pub updates: usize,
    pub per_update_s: f64,
}

/// Everything a checkpoint stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config: ExperimentConfig,
    pub env_step: usize,
    pub episode: u64,
    pub agent: Agent,
    pub replay: Option<ReplayBuffer>,
    pub ensemble: Option<EnsembleModel>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub metrics: Vec<MetricRecord>,
    pub timing: Vec<TimingRecord>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Default)]
struct Group {
    n: usize,
    critic_loss: Vec<f64>,
    actor_loss: Vec<f64>,
    target: Vec<f64>,
    cg_mean: Vec<f64>,
    cg_std: Vec<f64>,
    ag_mean: Vec<f64>,
    ag_std: Vec<f64>,
    alpha: f64,
    actor_skipped: usize,
    critic_skipped: usize,
    update_s: f64,
    model_s: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
}

impl Group {
    fn add(&mut self, r: &UpdateReport, actor: bool) {
        self.n += 1;
        self.alpha = r.alpha;
        self.target.push(r.target_mean);
        if r.critic_skipped {
            self.critic_skipped += 1;
        } else {
            self.critic_loss.push(r.critic_loss);
            self.cg_mean.push(r.critic_grad.mean);
            self.cg_std.push(r.critic_grad.std);
        }
        if actor {
            self.actor_loss.push(r.actor_loss);
            if r.actor_grad.finite {
                self.ag_mean.push(r.actor_grad.mean);
                self.ag_std.push(r.actor_grad.std);
            }
            if r.actor_skipped {
                self.actor_skipped += 1;
            }
        }
    }

    fn record(&self, env_step: usize, eval_return: f64, episodes: u64, nll: Option<f64>) -> MetricRecord {
        MetricRecord {
            env_step,
            eval_return,
            train_episodes: episodes,
            updates: self.n,
            critic_loss: mean(&self.critic_loss),
            actor_loss: mean(&self.actor_loss),
            alpha: if self.n > 0 { finite(self.alpha) } else { None },
            target_mean: mean(&self.target),
            critic_grad_mean: mean(&self.cg_mean),
            critic_grad_std: mean(&self.cg_std),
            actor_grad_mean: mean(&self.ag_mean),
            actor_grad_std: mean(&self.ag_std),
            actor_grad_std_max: self.ag_std.iter().copied().filter(|x| x.is_finite()).reduce(f64::max),
            actor_skipped: self.actor_skipped,
            critic_skipped: self.critic_skipped,
            model_holdout_nll: nll,
        }
    }
}

/// Mean undiscounted return of deterministic episodes, each reset from its
/// own evaluation stream.
pub fn evaluate(env: &Env, agent: &Agent, episodes: usize, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, e as u64));
        let mut s = env.reset(&mut rng);
        loop {
            let a = agent.eval_action(&s.obs)?;
            let r = env.step(&s, &a)?;
            total += r.reward;
            if r.terminal || r.truncated {
                break;
            }
            s = r.next_state;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Uniform random action with its log density.
fn random_action(spec: &EnvSpec, rng: &mut impl Rng) -> (Vec<f64>, f64) {
    if spec.is_discrete() {
        let n = spec.num_actions;
        (vec![rng.random_range(0..n) as f64], -(n as f64).ln())
    } else {
        let a = spec.action_bound.iter().map(|b| rng.random_range(-b..*b)).collect();
        (a, -spec.action_bound.iter().map(|b| (2.0 * b).ln()).sum::<f64>())
    }
}

fn write_jsonl<T: Serialize>(w: &mut impl Write, rec: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, rec)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_status(dir: &Path, s: &StatusFile) -> Result<()> {
    fs::write(dir.join("status.json"), serde_json::to_vec_pretty(s)?)?;
    Ok(())
}

/// Runs the collect/update loop and writes `config.json`, `metrics.jsonl`,
/// `timing.jsonl`, `status.json` and `checkpoints/` into `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let env = Env::new(cfg.env);
    let spec = env.spec();
    let mut agent = Agent::new(cfg, &spec)?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(cfg)?)?;
    let mut metrics_file = BufWriter::new(File::create(dir.join("metrics.jsonl"))?);
    let mut timing_file = BufWriter::new(File::create(dir.join("timing.jsonl"))?);
    let mut status = StatusFile { status: RunStatus::Running, env_step: 0, skipped_actor_updates: 0, skipped_critic_updates: 0 };
    write_status(dir, &status)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, MODEL_STREAM));
    let learned = cfg.uses_model() && cfg.model == ModelKind::Learned;
    let mut learned_model = if learned {
        Some(LearnedModel {
            env,
            ensemble: EnsembleModel::new(spec.state_dim, spec.action_dim, cfg.ensemble_config(), &mut model_rng)?,
        })
    } else {
        None
    };
    let mut dataset = learned.then(|| ModelDataset::new(spec.state_dim, spec.action_dim, cfg.replay_capacity));
    let oracle = OracleModel::new(env);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, cfg.min_replay.max(1).min(cfg.replay_capacity));
    let eps = EpsilonSchedule { start: cfg.eps_start, end: cfg.eps_end, fraction: cfg.eps_fraction };
    let evals = cfg.eval_steps();
    let ckpts = if cfg.checkpoints > 0 { cfg.checkpoint_steps() } else { Vec::new() };
    let eval_seed = mix(cfg.seed, EVAL_STREAM);
    let hash = cfg.hash();

    let start = Instant::now();
    let mut state = env.reset(&mut rng);
    let mut episode = 0u64;
    let mut group = Group::default();
    let mut last_nll = None;
    let mut since_train = 0usize;
    let mut metrics = Vec::new();
    let mut timing = Vec::new();
    let mut eval_idx = 0usize;

    for step in 1..=cfg.total_steps {
        let (action, logp) = if !replay.is_ready() {
            random_action(&spec, &mut rng)
        } else {
            match &agent {
                Agent::ActorCritic(a) => a.act(&state.obs, true, &mut rng)?,
                Agent::Dqn(d) => d.act(&state.obs, eps.at(step - 1, cfg.total_steps), &mut rng)?,
            }
        };
        let res = env.step(&state, &action)?;
        if let Some(data) = dataset.as_mut() {
            let traj = env.substep_trajectory(&state.obs, &action)?;
            for w in traj.windows(2) {
                data.push(&w[0], &action, &w[1]);
            }
        }
        replay.push(Transition {
            state: state.obs.clone(),
            action,
            reward: res.reward,
            next_state: res.next_state.obs.clone(),
            terminal: res.terminal,
            truncated: res.truncated,
            behavior_logp: logp,
            episode,
            step: state.elapsed,
        });
        if res.terminal || res.truncated {
            state = env.reset(&mut rng);
            episode += 1;
        } else {
            state = res.next_state;
        }

        if replay.is_ready() {
            if let (Some(lm), Some(data)) = (learned_model.as_mut(), dataset.as_ref()) {
                if !lm.ensemble.is_trained() || since_train >= cfg.model_train_interval {
                    let t0 = Instant::now();
                    let report = lm.ensemble.train(data, &mut model_rng)?;
                    group.model_s += t0.elapsed().as_secs_f64();
                    last_nll = mean(&report.holdout_nll);
                    since_train = 0;
                }
                since_train += 1;
            }
            let model: Option<&dyn Model> = if !cfg.uses_model() {
                None
            } else {
                match &learned_model {
                    Some(lm) => Some(lm),
                    None => Some(&oracle),
                }
            };
            for _ in 0..cfg.updates_per_step {
                let t0 = Instant::now();
                let report = agent.update(&replay, model)?;
                group.update_s += t0.elapsed().as_secs_f64();
                group.add(&report, matches!(agent, Agent::ActorCritic(_)));
            }
        }

        if evals.get(eval_idx) == Some(&step) {
            eval_idx += 1;
            let ret = evaluate(&env, &agent, cfg.eval_episodes, mix(eval_seed, step as u64))?;
            let rec = group.record(step, ret, episode, last_nll);
            status.skipped_actor_updates += group.actor_skipped;
            status.skipped_critic_updates += group.critic_skipped;
            let t = TimingRecord {
                env_step: step,
                wall_clock_s: start.elapsed().as_secs_f64(),
                update_s: group.update_s,
                model_train_s: group.model_s,
                updates: group.n,
                per_update_s: if group.n > 0 { group.update_s / group.n as f64 } else { 0.0 },
            };
            write_jsonl(&mut metrics_file, &rec)?;
            write_jsonl(&mut timing_file, &t)?;
            metrics.push(rec);
            timing.push(t);
            group = Group::default();
            status.env_step = step;
            write_status(dir, &status)?;
        }
        if ckpts.contains(&step) {
            let rs = RunState {
                config: cfg.clone(),
                env_step: step,
                episode,
                agent: agent.clone(),
                replay: cfg.checkpoint_replay.then(|| replay.clone()),
                ensemble: learned_model.as_ref().map(|m| m.ensemble.clone()),
            };
            let ck = Checkpoint::pack(&hash, step as u64, &rng, &rs)?;
            save_checkpoint(&dir.join("checkpoints").join(format!("step_{step}.ckpt")), &ck)?;
        }
    }
    status.status = if status.skipped_actor_updates + status.skipped_critic_updates > 0 {
        RunStatus::Diverged
    } else {
        RunStatus::Done
    };
    status.env_step = cfg.total_steps;
    write_status(dir, &status)?;
    Ok(RunOutcome { dir: dir.to_path_buf(), status: status.status, metrics, timing })
}

/// Reads `metrics.jsonl` of a run directory.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(dir.join("metrics.jsonl"))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join("metrics.jsonl").display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Data(format!("{}: {e}", dir.display()))))
        .collect()
}

pub fn read_config(dir: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(dir.join("config.json"))
        .map_err(|e| Error::Data(format!("{}: {e}", dir.join("config.json").display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

pub fn read_timing(dir: &Path) -> Result<Vec<TimingRecord>> {
    let text = fs::read_to_string(dir.join("timing.jsonl"))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Checkpoints of a run directory sorted by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let ck = if dir.join("checkpoints").is_dir() { dir.join("checkpoints") } else { dir.to_path_buf() };
    let mut out = Vec::new();
    for entry in fs::read_dir(&ck)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(step) = name.strip_prefix("step_").and_then(|n| n.strip_suffix(".ckpt")) {
            if let Ok(s) = step.parse() {
                out.push((s, p));
            }
        }
    }
    out.sort();
    Ok(out)
}

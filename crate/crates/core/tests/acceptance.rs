//! End-to-end acceptance checks, one `PASS`/`FAIL` line per criterion.
//!
//! `VEXLAB_ACCEPT=1,2,11` runs a subset. Run directories go to a temporary
//! directory unless `VEXLAB_ACCEPT_DIR` names one; finished runs found there
//! are reused, so an interrupted session can be resumed.

mod common;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use common::{on_policy_segment, Tabular};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vexlab::agents::{ActorCritic, AgentConfig, AgentKind};
use vexlab::diagnostics::{load_checkpoint, target_distribution_study, StudyConfig};
use vexlab::diffcore::{Tape, Tensor, Var};
use vexlab::dynamics::OracleModel;
use vexlab::envs::{Env, EnvId};
use vexlab::expansion::{Bootstrap, Estimator, ExpansionConfig, ExpansionMode, Model, NoiseSource, Slot};
use vexlab::harness::aggregate::{aggregate_with_baseline, bootstrap_ci, ipr, percentile, AggregateCurve};
use vexlab::harness::runner::{list_checkpoints, read_metrics, read_timing, RunStatus, StatusFile, TimingRecord};
use vexlab::harness::sweep::run_name;
use vexlab::harness::{final_performance, iqm, learning_speed, run_experiment, Agent, ExperimentConfig, MetricRecord, ModelKind, RunState, SeedCurves};
use vexlab::{Error, Result};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

struct Run {
    dir: PathBuf,
    status: RunStatus,
    metrics: Vec<MetricRecord>,
    timing: Vec<TimingRecord>,
}

impl Run {
    fn per_update_s(&self) -> f64 {
        let (t, n) = self.timing.iter().fold((0.0, 0), |(t, n), r| (t + r.update_s, n + r.updates));
        t / n.max(1) as f64
    }

    fn curve(&self) -> Vec<(usize, f64)> {
        self.metrics.iter().map(|m| (m.env_step, m.eval_return)).collect()
    }
}

struct Lab {
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    runs: HashMap<String, Run>,
}

impl Lab {
    fn new() -> Result<Self> {
        match std::env::var_os("VEXLAB_ACCEPT_DIR") {
            Some(d) => {
                std::fs::create_dir_all(&d)?;
                Ok(Self { root: PathBuf::from(d), _tmp: None, runs: HashMap::new() })
            }
            None => {
                let t = tempfile::tempdir()?;
                Ok(Self { root: t.path().to_path_buf(), _tmp: Some(t), runs: HashMap::new() })
            }
        }
    }

    fn finished(dir: &Path, cfg: &ExperimentConfig) -> Option<Run> {
        let status: StatusFile = serde_json::from_slice(&std::fs::read(dir.join("status.json")).ok()?).ok()?;
        let stored = vexlab::harness::runner::read_config(dir).ok()?;
        if status.status == RunStatus::Running || stored != *cfg {
            return None;
        }
        Some(Run { dir: dir.to_path_buf(), status: status.status, metrics: read_metrics(dir).ok()?, timing: read_timing(dir).ok()? })
    }

    fn run(&mut self, cfg: &ExperimentConfig) -> Result<&Run> {
        let key = format!("{}_{}", run_name(cfg), &cfg.hash()[..12]);
        if !self.runs.contains_key(&key) {
            let dir = self.root.join(&key);
            let run = match Self::finished(&dir, cfg) {
                Some(r) => r,
                None => {
                    let o = run_experiment(cfg, &dir)?;
                    Run { dir, status: o.status, metrics: o.metrics, timing: o.timing }
                }
            };
            self.runs.insert(key.clone(), run);
        }
        Ok(&self.runs[&key])
    }

    fn curves(&mut self, cfg: &ExperimentConfig) -> Result<SeedCurves> {
        let mut runs = Vec::new();
        for s in SEEDS {
            runs.push(self.run(&ExperimentConfig { seed: s, ..cfg.clone() })?.curve());
        }
        SeedCurves::from_runs(&runs)
    }

    /// Aggregates for `others` normalized by the baseline configuration.
    fn compare(&mut self, baseline: &ExperimentConfig, others: &[(&str, ExperimentConfig)]) -> Result<Vec<AggregateCurve>> {
        let base = self.curves(baseline)?;
        let mut rest = Vec::new();
        for (label, c) in others {
            rest.push((label.to_string(), self.curves(c)?));
        }
        aggregate_with_baseline(&base, &rest)
    }
}

fn pendulum() -> ExperimentConfig {
    ExperimentConfig {
        env: EnvId::Pendulum,
        total_steps: 15_000,
        eval_interval: 1_000,
        eval_episodes: 10,
        hidden: 64,
        batch: 64,
        min_replay: 1_000,
        checkpoints: 0,
        model_hidden: 64,
        model_layers: 2,
        model_max_grad_steps: 400,
        model_train_interval: 1_000,
        ..Default::default()
    }
}

fn ce(base: &ExperimentConfig, horizon: usize, model: ModelKind) -> ExperimentConfig {
    ExperimentConfig { expansion: ExpansionMode::Ce, horizon, model, ..base.clone() }
}

fn baseline_with_checkpoints() -> ExperimentConfig {
    ExperimentConfig { seed: SEEDS[0], checkpoints: 25, checkpoint_replay: true, ..ce(&pendulum(), 0, ModelKind::Oracle) }
}

fn col(v: &[usize]) -> Tensor {
    Tensor::column(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
}

fn c1_retrace_reduction(_: &mut Lab) -> Result<Verdict> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let trials = 1000;
    for trial in 0..trials {
        let m = Tabular::random(&mut rng, true);
        let alpha = rng.random_range(0.0..0.5);
        let gamma = rng.random_range(0.5..0.99);
        let est = Estimator { model: Some(&m), policy: &m, critic: &m, alpha, gamma, lambda: 1.0, noise: NoiseSource::new(trial), key0: 0 };
        let s0: Vec<usize> = (0..4).map(|_| rng.random_range(0..m.n_states)).collect();
        let a0: Vec<usize> = (0..4).map(|_| rng.random_range(0..m.n_actions)).collect();
        for h in 0..=5 {
            let seg = on_policy_segment(&m, &est.noise, &s0, &a0, h + 1);
            let rt = est.retrace(&seg)?;
            let qh = est.q_h(None, h + 1, Bootstrap::SoftValue, Slot::Val(col(&s0)), Slot::Val(col(&a0)))?;
            for (x, y) in rt.iter().zip(qh.value(None).data()) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(worst < 1e-6 && secs < 60.0, format!("{trials} MDPs, H 0..5, max |delta| {worst:.2e}, {secs:.1}s"))
}

fn same_params(a: &ActorCritic, b: &ActorCritic) -> bool {
    a.policy == b.policy && a.critics == b.critics && a.targets == b.targets && a.log_alpha.to_bits() == b.log_alpha.to_bits()
}

fn c2_horizon_zero(_: &mut Lab) -> Result<Verdict> {
    let t0 = Instant::now();
    let env = Env::new(EnvId::Pendulum);
    let oracle = OracleModel::new(env);
    let replay = common::random_replay(&env, 2_000, 50, &mut ChaCha8Rng::seed_from_u64(2));
    let cfg = AgentConfig { hidden: 32, batch: 64, ..Default::default() };
    let exp = |mode| ExpansionConfig { mode, horizon: 0, lambda: 1.0, particles: 1, gamma: 0.95 };
    let mut plain = ActorCritic::new(AgentKind::Sac, &env.spec(), cfg.clone(), exp(ExpansionMode::None), 9)?;
    let mut others = Vec::new();
    for m in [ExpansionMode::Ce, ExpansionMode::Ae, ExpansionMode::Retrace] {
        others.push(ActorCritic::new(AgentKind::Sac, &env.spec(), cfg.clone(), exp(m), 9)?);
    }
    let mut first_mismatch = None;
    for k in 0..100 {
        plain.update(&replay, None)?;
        for o in &mut others {
            o.update(&replay, Some(&oracle as &dyn Model))?;
            if first_mismatch.is_none() && !same_params(&plain, o) {
                first_mismatch = Some(format!("{:?} at update {}", o.expansion.mode, k + 1));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let detail = match &first_mismatch {
        None => format!("CE, AE and Retrace identical to SAC over 100 updates, {secs:.1}s"),
        Some(m) => format!("mismatch: {m}"),
    };
    verdict(first_mismatch.is_none() && secs < 60.0, detail)
}

struct OpCase {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    apply: fn(&Tape, &[Var]) -> Var,
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

fn filled(rng: &mut ChaCha8Rng, r: usize, c: usize, f: impl Fn(&mut ChaCha8Rng) -> f64) -> Tensor {
    let data = (0..r * c).map(|_| f(rng)).collect();
    Tensor::new(r, c, data).unwrap()
}

fn any(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-2.0..2.0)
}

/// Bounded away from zero, for kinks and poles.
fn away(rng: &mut ChaCha8Rng) -> f64 {
    let m = rng.random_range(0.1..2.0);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

fn one(f: fn(&mut ChaCha8Rng) -> f64) -> impl Fn(&mut ChaCha8Rng) -> Vec<Tensor> {
    move |rng| {
        let (r, c) = dims(rng);
        vec![filled(rng, r, c, f)]
    }
}

fn op_cases() -> Vec<OpCase> {
    macro_rules! unary {
        ($name:literal, $gen:expr, $f:expr) => {
            OpCase { name: $name, inputs: |rng| one($gen)(rng), apply: $f }
        };
    }
    macro_rules! binary {
        ($name:literal, $gen:expr, $f:expr) => {
            OpCase {
                name: $name,
                inputs: |rng| {
                    let (r, c) = dims(rng);
                    vec![filled(rng, r, c, any), filled(rng, r, c, $gen)]
                },
                apply: $f,
            }
        };
    }
    vec![
        binary!("add", any, |t, x| t.add(x[0], x[1])),
        binary!("sub", any, |t, x| t.sub(x[0], x[1])),
        binary!("mul", any, |t, x| t.mul(x[0], x[1])),
        binary!("div", away, |t, x| t.div(x[0], x[1])),
        OpCase {
            name: "min",
            inputs: |rng| {
                let (r, c) = dims(rng);
                let a = filled(rng, r, c, any);
                let b = Tensor::new(r, c, a.data().iter().map(|v| v + away(rng)).collect()).unwrap();
                vec![a, b]
            },
            apply: |t, x| t.min(x[0], x[1]),
        },
        OpCase {
            name: "atan2",
            inputs: |rng| {
                let (r, c) = dims(rng);
                let th = filled(rng, r, c, |g| g.random_range(-3.1..3.1));
                let rad = filled(rng, r, c, |g| g.random_range(0.3..2.0));
                let y = Tensor::new(r, c, th.data().iter().zip(rad.data()).map(|(a, m)| m * a.sin()).collect()).unwrap();
                let x = Tensor::new(r, c, th.data().iter().zip(rad.data()).map(|(a, m)| m * a.cos()).collect()).unwrap();
                vec![y, x]
            },
            apply: |t, x| t.atan2(x[0], x[1]),
        },
        OpCase {
            name: "add_row_broadcast",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![filled(rng, r, c, any), filled(rng, 1, c, any)]
            },
            apply: |t, x| t.add(x[0], x[1]),
        },
        unary!("neg", any, |t, x| t.neg(x[0])),
        unary!("scale", any, |t, x| t.scale(x[0], -1.7)),
        unary!("add_scalar", any, |t, x| t.add_scalar(x[0], 0.3)),
        unary!("relu", away, |t, x| t.relu(x[0])),
        unary!("tanh", any, |t, x| t.tanh(x[0])),
        unary!("exp", any, |t, x| t.exp(x[0])),
        unary!("ln", |g| g.random_range(0.2..3.0), |t, x| t.ln(x[0])),
        unary!("sin", any, |t, x| t.sin(x[0])),
        unary!("cos", any, |t, x| t.cos(x[0])),
        unary!("square", any, |t, x| t.square(x[0])),
        unary!("sqrt", |g| g.random_range(0.2..3.0), |t, x| t.sqrt(x[0])),
        unary!("softplus", any, |t, x| t.softplus(x[0])),
        unary!("log_one_minus_tanh_sq", any, |t, x| t.log_one_minus_tanh_sq(x[0])),
        unary!(
            "clamp",
            |g| {
                let v: f64 = g.random_range(-1.5..1.5);
                if (v.abs() - 0.5).abs() < 0.05 {
                    0.0
                } else {
                    v
                }
            },
            |t, x| t.clamp(x[0], -0.5, 0.5)
        ),
        unary!("sum", any, |t, x| t.sum(x[0])),
        unary!("mean", any, |t, x| t.mean(x[0])),
        unary!("row_sum", any, |t, x| t.row_sum(x[0])),
        OpCase {
            name: "matmul",
            inputs: |rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..5);
                vec![filled(rng, r, k, any), filled(rng, k, c, any)]
            },
            apply: |t, x| t.matmul(x[0], x[1]),
        },
        OpCase {
            name: "affine",
            inputs: |rng| {
                let (r, k) = dims(rng);
                let c = rng.random_range(1..5);
                vec![filled(rng, r, k, any), filled(rng, k, c, any), filled(rng, 1, c, any)]
            },
            apply: |t, x| t.affine(x[0], x[1], x[2]),
        },
        OpCase {
            name: "slice_concat_cols",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![filled(rng, r, c + 2, any), filled(rng, r, c, any)]
            },
            apply: |t, x| {
                let [_, c] = t.shape(x[1]);
                let s = t.slice_cols(x[0], 1, c);
                t.concat_cols(&[s, x[1], t.slice_cols(x[0], 0, 1)])
            },
        },
        OpCase {
            name: "gather_concat_rows",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![filled(rng, r, c, any), filled(rng, 2, c, any)]
            },
            apply: |t, x| {
                let [r, _] = t.shape(x[0]);
                let idx: Vec<usize> = (0..r + 2).map(|i| (i * 7 + 3) % r).collect();
                let g = t.gather_rows(x[0], &idx);
                t.concat_rows(&[g, x[1]])
            },
        },
        OpCase {
            name: "pick",
            inputs: |rng| {
                let (r, c) = dims(rng);
                vec![filled(rng, r, c, any)]
            },
            apply: |t, x| {
                let [r, c] = t.shape(x[0]);
                let idx: Vec<usize> = (0..r).map(|i| (i * 5 + 1) % c).collect();
                t.pick(x[0], &idx)
            },
        },
    ]
}

/// Analytic and central-difference gradients of `<w, op(x)>` w.r.t. all inputs.
fn op_trial(case: &OpCase, rng: &mut ChaCha8Rng) -> f64 {
    let inputs = (case.inputs)(rng);
    let probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| probe.constant(x.clone())).collect();
    let [r, c] = probe.shape((case.apply)(&probe, &vars));
    let w = filled(rng, r, c, any);
    let objective = |xs: &[Tensor]| {
        let t = Tape::new();
        let v: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = (case.apply)(&t, &v);
        t.value(t.sum(t.mul(out, t.constant(w.clone())))).item()
    };
    let tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = (case.apply)(&tape, &leaves);
    let g = tape.backward(tape.sum(tape.mul(out, tape.constant(w.clone())))).unwrap();
    let analytic: Vec<f64> = leaves.iter().flat_map(|&l| g.wrt(l).into_data()).collect();
    let mut numeric = Vec::new();
    let h = 1e-6;
    for i in 0..inputs.len() {
        for k in 0..inputs[i].len() {
            let mut xs = inputs.clone();
            xs[i].data_mut()[k] += h;
            let up = objective(&xs);
            xs[i].data_mut()[k] -= 2.0 * h;
            let down = objective(&xs);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    common::rel_error(&analytic, &numeric, 1e-8)
}

/// Actor loss through an H-step oracle rollout: tape gradient against
/// finite differences over a random subset of policy parameters.
fn ae_trial(env: Env, kind: AgentKind, seed: u64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let exp = ExpansionConfig { mode: ExpansionMode::Ae, horizon: 5, lambda: 1.0, particles: 1, gamma: env.spec().gamma };
    let mut agent = ActorCritic::new(kind, &env.spec(), AgentConfig { hidden: 8, ..Default::default() }, exp, seed)?;
    agent.log_alpha = rng.random_range(-3.0..0.0);
    let oracle = OracleModel::new(env);
    let model: Option<&dyn Model> = Some(&oracle);
    let states = Tensor::from_rows(&(0..6).map(|_| env.reset(rng).obs).collect::<Vec<_>>())?;
    let noise = NoiseSource::new(rng.random());
    let (_, grads, _) = agent.actor_gradient(&states, model, &noise)?;
    let picks: Vec<(usize, usize)> = (0..24)
        .map(|_| {
            let t = rng.random_range(0..grads.len());
            (t, rng.random_range(0..grads[t].len()))
        })
        .collect();
    let analytic: Vec<f64> = picks.iter().map(|&(t, i)| grads[t].data()[i]).collect();
    let h = 1e-6;
    let mut numeric = Vec::new();
    for &(t, i) in &picks {
        let mut a = agent.clone();
        a.policy.tensors_mut()[t].data_mut()[i] += h;
        let up = a.actor_gradient(&states, model, &noise)?.0;
        a.policy.tensors_mut()[t].data_mut()[i] -= 2.0 * h;
        let down = a.actor_gradient(&states, model, &noise)?.0;
        numeric.push((up - down) / (2.0 * h));
    }
    Ok(common::rel_error(&analytic, &numeric, 1e-8))
}

fn c3_autodiff(_: &mut Lab) -> Result<Verdict> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_op = (0.0f64, "");
    for case in op_cases() {
        for _ in 0..100 {
            let e = op_trial(&case, &mut rng);
            if !(e <= worst_op.0) {
                worst_op = (e, case.name);
            }
        }
    }
    let mut worst_ae = 0.0f64;
    for trial in 0..100u64 {
        let env = Env::new(if trial % 2 == 0 { EnvId::Pendulum } else { EnvId::CartpoleSwingup });
        let kind = if trial % 4 < 2 { AgentKind::Sac } else { AgentKind::Ddpg };
        let e = ae_trial(env, kind, trial, &mut rng)?;
        if !(e <= worst_ae) {
            worst_ae = e;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        worst_op.0 < 1e-4 && worst_ae < 1e-3 && secs < 300.0,
        format!(
            "{} ops x 100 trials, worst {:.2e} ({}); AE H=5 x 100 trials, worst {worst_ae:.2e}; {secs:.1}s",
            op_cases().len(),
            worst_op.0,
            worst_op.1
        ),
    )
}

fn load_states(dir: &Path) -> Result<Vec<(u64, RunState)>> {
    list_checkpoints(dir)?.into_iter().map(|(step, p)| Ok((step, load_checkpoint(&p, None)?.unpack()?))).collect()
}

fn actor_critic(rs: &RunState) -> Result<&ActorCritic> {
    match &rs.agent {
        Agent::ActorCritic(a) => Ok(a),
        Agent::Dqn(_) => Err(Error::Unsupported("expected an actor-critic checkpoint".into())),
    }
}

fn c4_variance_growth(lab: &mut Lab) -> Result<Verdict> {
    let t0 = Instant::now();
    let dir = lab.run(&baseline_with_checkpoints())?.dir.clone();
    let states = load_states(&dir)?;
    let (step, rs) = &states[states.len() / 2];
    let replay = rs.replay.as_ref().ok_or_else(|| Error::Data("checkpoint without replay".into()))?;
    let horizons = vec![1, 3, 5, 10, 30];
    let cfg = StudyConfig { horizons: horizons.clone(), anchors: 200, particles: 100, mc_horizon: 300, seed: 4, ..Default::default() };
    let oracle = OracleModel::new(Env::new(EnvId::Pendulum));
    let res = target_distribution_study(&[(*step, actor_critic(rs)?, replay)], &oracle, &cfg)?;
    let rows: Vec<_> = horizons.iter().map(|&h| res.get(*step, h).unwrap()).collect();
    let ratio = rows[rows.len() - 1].target_var / rows[0].target_var;
    let monotone = (0..cfg.anchors).filter(|&i| rows.windows(2).all(|w| w[1].anchor_var[i] >= w[0].anchor_var[i])).count();
    let frac = monotone as f64 / cfg.anchors as f64;
    let secs = t0.elapsed().as_secs_f64();
    let vars: Vec<String> = rows.iter().map(|r| format!("H{}={:.3e}", r.horizon, r.target_var)).collect();
    let drops: Vec<String> = rows
        .windows(2)
        .map(|w| {
            let n = (0..cfg.anchors).filter(|&i| w[1].anchor_var[i] < w[0].anchor_var[i]).count();
            format!("H{}>H{} {n}", w[0].horizon, w[1].horizon)
        })
        .collect();
    verdict(
        ratio >= 10.0 && frac >= 0.8,
        format!(
            "checkpoint {step}: var {} ratio {ratio:.1}, monotone on {:.0}% of anchors (drops {}), {secs:.0}s",
            vars.join(" "),
            100.0 * frac,
            drops.join(", ")
        ),
    )
}

fn c5_wasserstein(lab: &mut Lab) -> Result<Verdict> {
    let t0 = Instant::now();
    let dir = lab.run(&baseline_with_checkpoints())?.dir.clone();
    let states = load_states(&dir)?;
    let mut refs = Vec::new();
    for (step, rs) in &states {
        let replay = rs.replay.as_ref().ok_or_else(|| Error::Data("checkpoint without replay".into()))?;
        refs.push((*step, actor_critic(rs)?, replay));
    }
    let cfg = StudyConfig { horizons: vec![1, 30], anchors: 50, particles: 100, mc_horizon: 300, seed: 5, ..Default::default() };
    let res = target_distribution_study(&refs, &OracleModel::new(Env::new(EnvId::Pendulum)), &cfg)?;
    let better = refs.iter().filter(|(s, _, _)| res.get(*s, 30).unwrap().dw_mean < res.get(*s, 1).unwrap().dw_mean).count();
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        refs.len() == 25 && better >= 20 && secs < 1800.0,
        format!("D_W(30) < D_W(1) on {better} of {} checkpoints, {secs:.0}s", refs.len()),
    )
}

fn overlap(a: &AggregateCurve, b: &AggregateCurve) -> Result<bool> {
    let (x, y) = (final_performance(a)?, final_performance(b)?);
    Ok(x.ci_lo <= y.ci_hi && y.ci_lo <= x.ci_hi)
}

fn c6_diminishing_horizon(lab: &mut Lab) -> Result<Verdict> {
    let base = pendulum();
    let cs = lab.compare(
        &ce(&base, 0, ModelKind::Oracle),
        &[
            ("H3", ce(&base, 3, ModelKind::Oracle)),
            ("H5", ce(&base, 5, ModelKind::Oracle)),
            ("H10", ce(&base, 10, ModelKind::Oracle)),
        ],
    )?;
    let fp: Vec<f64> = cs.iter().map(|c| final_performance(c).map(|f| f.iqm)).collect::<Result<_>>()?;
    let (early, late) = (fp[1] - fp[0], fp[3] - fp[2]);
    let speed = learning_speed(&cs[1], &cs[0])?;
    let pass = late < early && speed.percent.is_some_and(|p| p <= 100.0);
    verdict(
        pass,
        format!(
            "final H0 {:.3} H3 {:.3} H5 {:.3} H10 {:.3}; gain H0->H3 {early:+.3}, H5->H10 {late:+.3}; H3 speed {}; CI overlap H0/H3 {}, H5/H10 {}",
            fp[0],
            fp[1],
            fp[2],
            fp[3],
            speed.display(),
            overlap(&cs[0], &cs[1])?,
            overlap(&cs[2], &cs[3])?
        ),
    )
}

fn c7_oracle_vs_learned(lab: &mut Lab) -> Result<Verdict> {
    let base = pendulum();
    let cs = lab.compare(
        &ce(&base, 0, ModelKind::Oracle),
        &[("oracle", ce(&base, 3, ModelKind::Oracle)), ("learned", ce(&base, 3, ModelKind::Learned))],
    )?;
    let (o, l) = (final_performance(&cs[1])?.iqm, final_performance(&cs[2])?.iqm);
    verdict((o - l).abs() < 0.15, format!("final oracle {o:.3} learned {l:.3}, |diff| {:.3}", (o - l).abs()))
}

fn c8_retrace(lab: &mut Lab) -> Result<Verdict> {
    let base = pendulum();
    let retrace = |h| ExperimentConfig { expansion: ExpansionMode::Retrace, horizon: h, ..base.clone() };
    let cs = lab.compare(&ce(&base, 0, ModelKind::Oracle), &[("retrace", retrace(3)), ("learned", ce(&base, 3, ModelKind::Learned))])?;
    let (r, l) = (final_performance(&cs[1])?.iqm, final_performance(&cs[2])?.iqm);
    let short = |c: ExperimentConfig| ExperimentConfig { seed: SEEDS[0], total_steps: 4_000, ..c };
    let rt = lab.run(&short(retrace(5)))?.per_update_s();
    // update time excludes model fitting, so the timing run keeps the
    // default ensemble shape and only caps its training
    let d = ExperimentConfig::default();
    let sized = ExperimentConfig { model_hidden: d.model_hidden, model_layers: d.model_layers, model_max_grad_steps: 50, ..ce(&base, 5, ModelKind::Learned) };
    let ct = lab.run(&short(sized))?.per_update_s();
    verdict(
        (r - l).abs() < 0.15 && rt <= ct / 3.0,
        format!(
            "final retrace {r:.3} CE(learned) {l:.3}, |diff| {:.3}; per update at H=5: retrace {:.2}ms CE(learned) {:.2}ms ({:.1}x)",
            (r - l).abs(),
            1e3 * rt,
            1e3 * ct,
            ct / rt
        ),
    )
}

fn c9_actor_gradients(lab: &mut Lab) -> Result<Verdict> {
    let cfg = |h| ExperimentConfig {
        env: EnvId::CartpoleSwingup,
        expansion: ExpansionMode::Ae,
        horizon: h,
        seed: SEEDS[0],
        total_steps: 30_000,
        eval_interval: 2_000,
        eval_episodes: 2,
        hidden: 64,
        batch: 64,
        min_replay: 1_000,
        checkpoints: 0,
        ..Default::default()
    };
    let horizons = [1, 5, 10, 20];
    let mut std = Vec::new();
    let mut status = Vec::new();
    for h in horizons {
        let r = lab.run(&cfg(h))?;
        std.push(r.metrics.iter().map(|m| m.actor_grad_std).collect::<Vec<_>>());
        status.push(r.status);
    }
    let top = horizons.len() - 1;
    let ratio = std[top]
        .iter()
        .zip(&std[0])
        .filter_map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) if *b > 0.0 => Some(a / b),
            _ => None,
        })
        .fold(0.0f64, f64::max);
    let diverged = status[top] == RunStatus::Diverged;
    let peaks: Vec<String> = horizons
        .iter()
        .zip(&std)
        .map(|(h, s)| format!("H{h}={:.2e}", s.iter().flatten().copied().fold(0.0f64, f64::max)))
        .collect();
    verdict(
        ratio >= 100.0 || diverged,
        format!("peak actor-grad std {}; max ratio H20/H1 {ratio:.1}; H20 status {:?}", peaks.join(" "), status[top]),
    )
}

fn c10_discrete(lab: &mut Lab) -> Result<Verdict> {
    let base = ExperimentConfig {
        env: EnvId::MiniBreakout,
        agent: AgentKind::Dqn,
        total_steps: 100_000,
        eval_interval: 5_000,
        eval_episodes: 10,
        hidden: 64,
        batch: 64,
        min_replay: 1_000,
        checkpoints: 0,
        ..Default::default()
    };
    let cs = lab.compare(&ce(&base, 0, ModelKind::Oracle), &[("H1", ce(&base, 1, ModelKind::Oracle)), ("H3", ce(&base, 3, ModelKind::Oracle))])?;
    let fp: Vec<f64> = cs.iter().map(|c| final_performance(c).map(|f| f.iqm)).collect::<Result<_>>()?;
    verdict((fp[2] - fp[0]).abs() <= 0.2, format!("final H0 {:.3} H1 {:.3} H3 {:.3}", fp[0], fp[1], fp[2]))
}

fn iqm_by_replication(v: &[f64]) -> f64 {
    let mut r: Vec<f64> = v.iter().flat_map(|&x| [x; 4]).collect();
    r.sort_by(f64::total_cmp);
    let n = v.len();
    r[n..3 * n].iter().sum::<f64>() / (2 * n) as f64
}

fn percentile_by_definition(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

fn c11_aggregation(_: &mut Lab) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(3..25);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
        worst = worst.max((iqm(&v) - iqm_by_replication(&v)).abs());
        let (lo, hi) = ipr(&v);
        worst = worst.max((lo - percentile_by_definition(&v, 5.0)).abs());
        worst = worst.max((hi - percentile_by_definition(&v, 95.0)).abs());
        worst = worst.max((percentile(&v, 37.0) - percentile_by_definition(&v, 37.0)).abs());
    }
    let v: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..10.0)).collect();
    let (lo, hi) = bootstrap_ci(&v, 2000, 0.95, 77);
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let mut brng = ChaCha8Rng::seed_from_u64(77);
    let stats: Vec<f64> = (0..2000)
        .map(|_| iqm_by_replication(&(0..9).map(|_| sorted[brng.random_range(0..9)]).collect::<Vec<_>>()))
        .collect();
    worst = worst.max((lo - percentile_by_definition(&stats, 2.5)).abs());
    worst = worst.max((hi - percentile_by_definition(&stats, 97.5)).abs());
    let mut unit = true;
    for shift in [0.0, -500.0] {
        let runs: Vec<Vec<(usize, f64)>> = (0..5)
            .map(|_| (1..=8).map(|k| (k * 10, shift + k as f64 + rng.random_range(-2.0..2.0))).collect())
            .collect();
        let a = aggregate_with_baseline(&SeedCurves::from_runs(&runs)?, &[])?;
        unit &= final_performance(&a[0])?.iqm == 1.0;
    }
    verdict(worst < 1e-12 && unit, format!("max deviation from definitional oracles {worst:.2e}; baseline final is 1.0: {unit}"))
}

type Criterion = fn(&mut Lab) -> Result<Verdict>;

fn main() -> ExitCode {
    let criteria: [(usize, &str, Criterion); 11] = [
        (1, "retrace reduces to the H-step target", c1_retrace_reduction),
        (2, "H=0 variants match plain SAC", c2_horizon_zero),
        (3, "autodiff matches finite differences", c3_autodiff),
        (4, "target variance grows with H", c4_variance_growth),
        (5, "long horizons track the return distribution", c5_wasserstein),
        (6, "diminishing returns of the horizon", c6_diminishing_horizon),
        (7, "oracle and learned models agree", c7_oracle_vs_learned),
        (8, "retrace matches CE at a fraction of the cost", c8_retrace),
        (9, "actor expansion gradients blow up", c9_actor_gradients),
        (10, "no large gain on the discrete task", c10_discrete),
        (11, "aggregation matches definitions", c11_aggregation),
    ];
    let selected: Option<Vec<usize>> =
        std::env::var("VEXLAB_ACCEPT").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut lab = match Lab::new() {
        Ok(l) => l,
        Err(e) => {
            println!("FAIL setup: {e}");
            return ExitCode::FAILURE;
        }
    };
    let mut failed = 0;
    for (n, name, f) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&n)) {
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = match f(&mut lab) {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{} {n:>2} {name}: {detail} [{:.0}s]", if pass { "PASS" } else { "FAIL" }, t0.elapsed().as_secs_f64());
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vexlab::diagnostics::{load_checkpoint, target_distribution_study, StudyConfig};
use vexlab::dynamics::OracleModel;
use vexlab::envs::Env;
use vexlab::harness::aggregate::{aggregate_with_baseline, group_runs, learning_speed, SeedCurves};
use vexlab::harness::plot::emit_plots;
use vexlab::harness::runner::list_checkpoints;
use vexlab::harness::sweep::run_name;
use vexlab::harness::{final_performance, run_experiment, run_sweep, Agent, AggregateCurve, ExperimentConfig, RunState, SweepGrid};
use vexlab::{Error, Result};

#[derive(Parser)]
#[command(name = "vexlab", about = "Value expansion experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one configuration.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// `key=value`, repeatable.
        #[arg(long = "override")]
        overrides: Vec<String>,
        /// Run directory; defaults to runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cross product described by a grid file.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// IQM curves normalized by the baseline runs.
    Aggregate {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        baseline: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analysis studies over saved checkpoints.
    Study {
        #[command(subcommand)]
        which: StudyCmd,
    },
    /// SVG charts from an aggregate directory.
    Plot {
        #[arg(long)]
        aggregate: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum StudyCmd {
    /// H-step target distributions against Monte Carlo returns.
    Targets {
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10,30")]
        horizons: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        anchors: usize,
        #[arg(long, default_value_t = 100)]
        particles: usize,
        #[arg(long, default_value_t = 300)]
        mc_horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSONL; defaults to study_targets.jsonl next to the checkpoints.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run { config, seed, overrides, out } => {
            let base = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            let mut cfg = base.with_overrides(&overrides)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| Path::new("runs").join(run_name(&cfg)));
            let o = run_experiment(&cfg, &dir)?;
            let last = o.metrics.last().map_or(f64::NAN, |m| m.eval_return);
            println!("{}: {:?}, final eval return {last:.3}", dir.display(), o.status);
        }
        Cmd::Sweep { grid, out } => {
            let g = SweepGrid::load(&grid)?;
            let dirs = run_sweep(&g, &out, |m| eprintln!("{m}"))?;
            println!("{} runs under {}", dirs.len(), out.display());
        }
        Cmd::Aggregate { runs, baseline, out } => {
            let base = SeedCurves::load(&baseline)?;
            let groups = group_runs(&runs)?
                .into_iter()
                .map(|(label, dirs)| Ok((label, SeedCurves::load(&dirs)?)))
                .collect::<Result<Vec<_>>>()?;
            let curves = aggregate_with_baseline(&base, &groups)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("aggregate.json"), serde_json::to_vec_pretty(&curves)?)?;
            let mut summary = Vec::new();
            for c in &curves {
                let fp = final_performance(c)?;
                let ls = learning_speed(c, &curves[0])?;
                println!("{:<40} final {:.3} [{:.3}, {:.3}]  speed {}", c.label, fp.iqm, fp.ci_lo, fp.ci_hi, ls.display());
                summary.push(serde_json::json!({
                    "label": c.label,
                    "final": fp,
                    "learning_speed": ls,
                    "learning_speed_display": ls.display(),
                }));
            }
            std::fs::write(out.join("summary.json"), serde_json::to_vec_pretty(&summary)?)?;
        }
        Cmd::Study { which: StudyCmd::Targets { checkpoints, horizons, anchors, particles, mc_horizon, seed, out } } => {
            let cfg = StudyConfig { horizons, anchors, particles, mc_horizon, seed, ..StudyConfig::default() };
            let mut states = Vec::new();
            for (step, path) in list_checkpoints(&checkpoints)? {
                let rs: RunState = load_checkpoint(&path, None)?.unpack()?;
                states.push((step, rs));
            }
            if states.is_empty() {
                return Err(Error::Data(format!("no checkpoints under {}", checkpoints.display())));
            }
            let env = Env::new(states[0].1.config.env);
            let mut refs = Vec::new();
            for (step, rs) in &states {
                let Agent::ActorCritic(agent) = &rs.agent else {
                    return Err(Error::Unsupported("the target study needs an actor-critic checkpoint".into()));
                };
                let replay = rs
                    .replay
                    .as_ref()
                    .ok_or_else(|| Error::Data(format!("checkpoint at step {step} has no replay buffer")))?;
                refs.push((*step, agent, replay));
            }
            let result = target_distribution_study(&refs, &OracleModel::new(env), &cfg)?;
            let path = out.unwrap_or_else(|| checkpoints.join("study_targets.jsonl"));
            std::fs::write(&path, result.to_jsonl()?)?;
            println!("{} rows written to {}", result.rows.len(), path.display());
        }
        Cmd::Plot { aggregate, out } => {
            let text = std::fs::read_to_string(aggregate.join("aggregate.json"))
                .map_err(|e| Error::Data(format!("{}: {e}", aggregate.display())))?;
            let curves: Vec<AggregateCurve> = serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))?;
            let (files, warnings) = emit_plots(&curves, &out.unwrap_or_else(|| aggregate.join("plots")))?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

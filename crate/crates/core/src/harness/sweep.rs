use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind};
use super::runner::{run_experiment, RunStatus, StatusFile};
use crate::error::{Error, Result};
use crate::expansion::ExpansionMode;

/// Cross product of horizons, modes, models and seeds over a base config.
/// Empty lists keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub horizons: Vec<usize>,
    pub expansions: Vec<ExpansionMode>,
    pub models: Vec<ModelKind>,
    pub seeds: Vec<u64>,
    pub gammas: Vec<f64>,
}

fn or_base<T: Clone>(v: &[T], base: T) -> Vec<T> {
    if v.is_empty() {
        vec![base]
    } else {
        v.to_vec()
    }
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad sweep grid: {e}")))
    }

    /// Every configuration; horizon-0 runs are emitted once per mode-free
    /// combination rather than once per model.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let base = &self.base;
        let mut out: Vec<ExperimentConfig> = Vec::new();
        for &g in &or_base(&self.gammas.iter().map(|&g| Some(g)).collect::<Vec<_>>(), base.gamma) {
            for &mode in &or_base(&self.expansions, base.expansion) {
                for &h in &or_base(&self.horizons, base.horizon) {
                    for &model in &or_base(&self.models, base.model) {
                        for &seed in &or_base(&self.seeds, base.seed) {
                            let mut c = base.clone();
                            c.gamma = g;
                            c.expansion = mode;
                            c.horizon = h;
                            c.model = model;
                            c.seed = seed;
                            if h == 0 {
                                c.model = base.model;
                            }
                            c.validate()?;
                            if !out.contains(&c) {
                                out.push(c);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn run_name(c: &ExperimentConfig) -> String {
    let s = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    let mut name = format!(
        "{}_{}_{}_{}_H{}",
        c.env.as_str(),
        s(serde_json::json!(c.agent)),
        s(serde_json::json!(c.expansion)),
        s(serde_json::json!(c.model)),
        c.horizon
    );
    if let Some(g) = c.gamma {
        name.push_str(&format!("_g{g}"));
    }
    name.push_str(&format!("_s{}", c.seed));
    name
}

/// Runs every configuration serially under `root`, skipping runs whose
/// status file already says done or diverged.
pub fn run_sweep(grid: &SweepGrid, root: &Path, mut log: impl FnMut(&str)) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for c in grid.expand()? {
        let dir = root.join(run_name(&c));
        let finished = std::fs::read(dir.join("status.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<StatusFile>(&b).ok())
            .is_some_and(|s| s.status != RunStatus::Running);
        if finished {
            log(&format!("skip {} (finished)", dir.display()));
        } else {
            log(&format!("run {}", dir.display()));
            run_experiment(&c, &dir)?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

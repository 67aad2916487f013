//! Cross-seed summaries: interquartile mean, inter-percentile range and
//! percentile-bootstrap confidence intervals, plus baseline normalization.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::runner::{read_config, read_metrics};
use crate::error::{Error, Result};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const BOOTSTRAP_SEED: u64 = 0x0b00_75ea;

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean of the middle half of the empirical distribution. Each sorted value
/// owns the interval `[i, i + 1)` of the rank axis and is weighted by its
/// overlap with `[n/4, 3n/4]`, so `n` need not be a multiple of 4.
pub fn iqm(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        if w > 0.0 {
            acc += w * x;
        }
    }
    acc / (hi - lo)
}

/// Percentile `q` in `[0, 100]` with linear interpolation between order
/// statistics at rank `q/100 * (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let v = sorted(values);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[i] + frac * (v[i + 1] - v[i])
    }
}

/// `[5th, 95th]` percentiles.
pub fn ipr(values: &[f64]) -> (f64, f64) {
    (percentile(values, 5.0), percentile(values, 95.0))
}

/// Percentile bootstrap of the IQM over seeds. Values are sorted first so
/// the interval does not depend on seed order.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let v = sorted(values);
    let n = v.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; n];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = v[rng.random_range(0..n)];
        }
        stats.push(iqm(&buf));
    }
    let tail = (1.0 - level) / 2.0 * 100.0;
    (percentile(&stats, tail), percentile(&stats, 100.0 - tail))
}

/// `x -> (x - floor) / (max - floor)`. The floor is 0 for non-negative
/// baselines, which reduces to dividing by the baseline maximum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub floor: f64,
    pub max: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { floor: 0.0, max: 1.0 }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.floor) / (self.max - self.floor)
    }

    /// From a baseline's raw IQM curve: its maximum over training, and a
    /// floor at its minimum when returns go negative.
    pub fn from_baseline(iqm_curve: &[f64]) -> Result<Self> {
        let max = iqm_curve.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = iqm_curve.iter().copied().fold(f64::INFINITY, f64::min);
        if !max.is_finite() {
            return Err(Error::Data("baseline curve is empty or non-finite".into()));
        }
        let floor = if min >= 0.0 { 0.0 } else { min };
        if max == floor {
            return Err(Error::Data("baseline curve is flat; cannot normalize".into()));
        }
        Ok(Self { floor, max })
    }
}

/// Per-seed evaluation returns on a shared grid: `values[point][seed]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCurves {
    pub grid: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

impl SeedCurves {
    /// Aligns `(step, return)` series from several seeds.
    pub fn from_runs(runs: &[Vec<(usize, f64)>]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::Data("no runs to aggregate".into()))?;
        let grid: Vec<usize> = first.iter().map(|p| p.0).collect();
        for (k, r) in runs.iter().enumerate() {
            if r.iter().map(|p| p.0).ne(grid.iter().copied()) {
                return Err(Error::Data(format!("run {k} has a different evaluation grid")));
            }
        }
        let values = (0..grid.len()).map(|i| runs.iter().map(|r| r[i].1).collect()).collect();
        Ok(Self { grid, values })
    }

    pub fn seeds(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn load(dirs: &[PathBuf]) -> Result<Self> {
        let runs = dirs
            .iter()
            .map(|d| Ok(read_metrics(d)?.into_iter().map(|m| (m.env_step, m.eval_return)).collect()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_runs(&runs)
    }

    pub fn raw_iqm(&self) -> Vec<f64> {
        self.values.iter().map(|v| iqm(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateCurve {
    pub label: String,
    pub grid: Vec<usize>,
    pub seeds: usize,
    pub normalization: Normalization,
    /// Normalized statistics per grid point.
    pub iqm: Vec<f64>,
    pub ipr_lo: Vec<f64>,
    pub ipr_hi: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    /// IQM of the raw returns.
    pub raw_iqm: Vec<f64>,
}

/// Statistics are computed on raw returns and then mapped through the
/// (monotone, affine) normalization, so the baseline's own maximum maps to
/// exactly 1.
pub fn aggregate(label: &str, curves: &SeedCurves, norm: Normalization) -> Result<AggregateCurve> {
    if curves.seeds() < 3 {
        return Err(Error::Data(format!("{label}: need at least 3 seeds, got {}", curves.seeds())));
    }
    let mut out = AggregateCurve {
        label: label.to_string(),
        grid: curves.grid.clone(),
        seeds: curves.seeds(),
        normalization: norm,
        iqm: Vec::new(),
        ipr_lo: Vec::new(),
        ipr_hi: Vec::new(),
        ci_lo: Vec::new(),
        ci_hi: Vec::new(),
        raw_iqm: Vec::new(),
    };
    for (i, v) in curves.values.iter().enumerate() {
        let m = iqm(v);
        let (lo, hi) = ipr(v);
        let (cl, ch) = bootstrap_ci(v, BOOTSTRAP_RESAMPLES, 0.95, BOOTSTRAP_SEED ^ i as u64);
        out.raw_iqm.push(m);
        out.iqm.push(norm.apply(m));
        out.ipr_lo.push(norm.apply(lo));
        out.ipr_hi.push(norm.apply(hi));
        // the percentile interval can miss the point estimate for tiny samples
        out.ci_lo.push(norm.apply(cl.min(m)));
        out.ci_hi.push(norm.apply(ch.max(m)));
    }
    Ok(out)
}

/// Normalization from the baseline, then aggregate curves for the baseline
/// and every other labelled set of runs.
pub fn aggregate_with_baseline(baseline: &SeedCurves, others: &[(String, SeedCurves)]) -> Result<Vec<AggregateCurve>> {
    let norm = Normalization::from_baseline(&baseline.raw_iqm())?;
    let mut out = vec![aggregate("baseline", baseline, norm)?];
    for (label, c) in others {
        if c.grid != baseline.grid {
            return Err(Error::Data(format!("{label}: evaluation grid differs from the baseline")));
        }
        out.push(aggregate(label, c, norm)?);
    }
    Ok(out)
}

/// Pools normalized seed scores across environments point by point; every
/// environment is normalized by its own baseline first.
pub fn pooled(label: &str, per_env: &[(SeedCurves, Normalization)]) -> Result<AggregateCurve> {
    let (first, _) = per_env.first().ok_or_else(|| Error::Data("nothing to pool".into()))?;
    let len = first.grid.len();
    if per_env.iter().any(|(c, _)| c.grid.len() != len) {
        return Err(Error::Data("pooled environments need grids of equal length".into()));
    }
    let values = (0..len)
        .map(|i| per_env.iter().flat_map(|(c, n)| c.values[i].iter().map(move |x| n.apply(*x))).collect())
        .collect();
    let grid = (0..len).collect();
    aggregate(label, &SeedCurves { grid, values }, Normalization::identity())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningSpeed {
    /// First grid step at which the normalized IQM reaches 1.
    pub step: Option<usize>,
    /// `step` relative to the baseline's own; `None` means the curve never
    /// reached the baseline maximum (reported as "> 100%").
    pub percent: Option<f64>,
}

impl LearningSpeed {
    pub fn display(&self) -> String {
        match self.percent {
            Some(p) => format!("{p:.1}%"),
            None => ">100%".into(),
        }
    }
}

fn first_crossing(curve: &AggregateCurve) -> Option<usize> {
    curve.iqm.iter().position(|&v| v >= 1.0).map(|i| curve.grid[i])
}

pub fn learning_speed(curve: &AggregateCurve, baseline: &AggregateCurve) -> Result<LearningSpeed> {
    let base = first_crossing(baseline).ok_or_else(|| Error::Data("baseline never reaches its own maximum".into()))?;
    let step = first_crossing(curve);
    Ok(LearningSpeed { step, percent: step.map(|s| 100.0 * s as f64 / base as f64) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalPerformance {
    pub step: usize,
    pub iqm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Maximum normalized IQM over the grid (first argmax) with its CI.
pub fn final_performance(curve: &AggregateCurve) -> Result<FinalPerformance> {
    let mut best = None::<usize>;
    for (i, v) in curve.iqm.iter().enumerate() {
        if best.is_none_or(|b| *v > curve.iqm[b]) {
            best = Some(i);
        }
    }
    let i = best.ok_or_else(|| Error::Data(format!("{}: empty curve", curve.label)))?;
    Ok(FinalPerformance { step: curve.grid[i], iqm: curve.iqm[i], ci_lo: curve.ci_lo[i], ci_hi: curve.ci_hi[i] })
}

/// Groups run directories by their configuration with the seed removed.
pub fn group_runs(dirs: &[PathBuf]) -> Result<Vec<(String, Vec<PathBuf>)>> {
    let mut groups: Vec<(String, Vec<PathBuf>)> = Vec::new();
    for d in dirs {
        let mut cfg = read_config(d)?;
        cfg.seed = 0;
        let label = format!(
            "{}_{}_{}_{}_H{}",
            cfg.env.as_str(),
            serde_json::to_value(cfg.agent)?.as_str().unwrap_or("agent"),
            serde_json::to_value(cfg.expansion)?.as_str().unwrap_or("mode"),
            serde_json::to_value(cfg.model)?.as_str().unwrap_or("model"),
            cfg.horizon
        );
        let key = format!("{label}#{}", cfg.hash());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(d.clone()),
            None => groups.push((key, vec![d.clone()])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(k, v)| (k.split('#').next().unwrap_or_default().to_string(), v))
        .collect())
}

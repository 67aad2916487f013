use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;

/// Mean and population standard deviation over every gradient entry.
/// Non-finite input produces the sentinel record `finite = false` with
/// NaN statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradStats {
    pub mean: f64,
    pub std: f64,
    pub norm: f64,
    pub count: usize,
    pub finite: bool,
}

impl Default for GradStats {
    fn default() -> Self {
        Self { mean: 0.0, std: 0.0, norm: 0.0, count: 0, finite: true }
    }
}

pub fn gradient_stats(grads: &[Tensor]) -> GradStats {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut sq = 0.0;
    for g in grads {
        for &x in g.data() {
            if !x.is_finite() {
                return GradStats { mean: f64::NAN, std: f64::NAN, norm: f64::NAN, count: 0, finite: false };
            }
            n += 1;
            let d = x - mean;
            mean += d / n as f64;
            m2 += d * (x - mean);
            sq += x * x;
        }
    }
    if n == 0 {
        return GradStats::default();
    }
    GradStats { mean, std: (m2 / n as f64).max(0.0).sqrt(), norm: sq.sqrt(), count: n, finite: true }
}

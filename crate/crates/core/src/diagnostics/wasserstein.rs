use crate::error::{Error, Result};

/// 1-Wasserstein distance between two equal-size empirical measures on the
/// line: mean absolute difference of matched order statistics. Inputs need
/// not be sorted.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Contract(format!("sample sizes differ: {} vs {}", p.len(), q.len())));
    }
    if p.is_empty() {
        return Err(Error::Contract("empty samples".into()));
    }
    let mut a = p.to_vec();
    let mut b = q.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

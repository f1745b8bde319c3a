use crate::{Error, Result};

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::Argument("samples contain NaN".into()));
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    Ok(s)
}

fn sorted_pair(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "1-D Wasserstein needs equal sample counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("1-D Wasserstein needs at least one sample".into()));
    }
    Ok((sorted(a)?, sorted(b)?))
}

/// W1 between two equal-size empirical measures on the line: the mean
/// absolute difference of order statistics.
pub fn w1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    let (sa, sb) = sorted_pair(a, b)?;
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64)
}

/// Wp between two equal-size empirical measures on the line.
pub fn wp_1d(a: &[f64], b: &[f64], p: f64) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::Argument(format!("Wasserstein order must be >= 1, got {p}")));
    }
    let (sa, sb) = sorted_pair(a, b)?;
    let mean = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs().powf(p)).sum::<f64>() / sa.len() as f64;
    Ok(mean.powf(1.0 / p))
}

use crate::error::{Error, Result};

fn shifted(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    scores.iter().map(|s| s - min).collect()
}

/// `−Σ pᵢ log pᵢ / log N` for a probability vector, with `0 log 0 = 0`.
pub fn normalized_entropy(p: &[f64]) -> Result<f64> {
    if p.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "entropy needs at least 2 entries, got {}",
            p.len()
        )));
    }
    let h: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
    Ok(h / (p.len() as f64).ln())
}

/// Normalized entropy of the min-shifted map; a map with no mass left after
/// the shift counts as uniform (1.0).
pub fn entropy_norm(scores: &[f64]) -> Result<f64> {
    let a = shifted(scores);
    let total: f64 = a.iter().sum();
    if total == 0.0 {
        if scores.len() < 2 {
            return normalized_entropy(scores);
        }
        return Ok(1.0);
    }
    let p: Vec<f64> = a.iter().map(|x| x / total).collect();
    normalized_entropy(&p)
}

/// `Σ(2i − N − 1)·a₍ᵢ₎ / (N Σa)` over ascending-sorted nonnegative `a`,
/// `i` 1-based.
pub fn gini_index(a: &[f64]) -> Result<f64> {
    // Negated so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if let Some(x) = a.iter().find(|&&x| !(x >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "gini needs nonnegative values, got {x}"
        )));
    }
    let total: f64 = a.iter().sum();
    if a.is_empty() || total == 0.0 {
        return Err(Error::Undefined("gini of an all-zero vector".into()));
    }
    let mut sorted = a.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let num: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i + 1) as f64 - n - 1.0) * x)
        .sum();
    Ok(num / (n * total))
}

/// Gini of the min-shifted map; a constant map is perfectly equal (0).
pub fn gini(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Undefined("gini of an empty map".into()));
    }
    let a = shifted(scores);
    if a.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    gini_index(&a)
}

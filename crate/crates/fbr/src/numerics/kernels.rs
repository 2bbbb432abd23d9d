//! Scalar math kernels shared across modules.

use crate::error::{FbrError, Result};

/// Numerically stabilized softmax over a non-empty vector.
///
/// The maximum is subtracted before exponentiation, so the output is
/// invariant to adding a constant to every input.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(FbrError::InvalidArgument("softmax of empty vector".into()));
    }
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(FbrError::InvalidArgument(format!(
            "softmax input contains non-finite value {bad}"
        )));
    }
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale a vector to unit Euclidean norm.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n <= 0.0 || !n.is_finite() {
        return Err(FbrError::DegenerateInput("cannot normalize zero vector".into()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Cosine similarity between two non-zero vectors of equal dimension.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FbrError::InvalidArgument(format!(
            "cosine_sim dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(FbrError::DegenerateInput("cosine_sim of zero vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

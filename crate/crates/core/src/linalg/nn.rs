//! Elementwise and row-wise neural-network math.

use super::Matrix;
use crate::error::{shape_err, Result};

/// Numerically stable softmax of each row (max-subtracted).
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Layer normalization with population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(shape_err(
            "layer_norm",
            format!("gamma/beta of length {}", x.len()),
            format!("{}/{}", gamma.len(), beta.len()),
        ));
    }
    let mut out = x.to_vec();
    normalize_into(&mut out, gamma, beta, eps);
    Ok(out)
}

/// Applies [`layer_norm`] to every row of `a`.
pub fn layer_norm_rows(a: &Matrix, gamma: &[f64], beta: &[f64], eps: f64) -> Result<Matrix> {
    if gamma.len() != a.cols() || beta.len() != a.cols() {
        return Err(shape_err(
            "layer_norm_rows",
            format!("gamma/beta of length {}", a.cols()),
            format!("{}/{}", gamma.len(), beta.len()),
        ));
    }
    let mut out = a.clone();
    for i in 0..out.rows() {
        normalize_into(out.row_mut(i), gamma, beta, eps);
    }
    Ok(out)
}

fn normalize_into(x: &mut [f64], gamma: &[f64], beta: &[f64], eps: f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for ((v, g), b) in x.iter_mut().zip(gamma).zip(beta) {
        *v = (*v - mean) * inv * g + b;
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

//! One-sided (Hestenes) Jacobi singular value decomposition.

use super::Matrix;
use crate::error::{EetError, Result};

pub const SVD_MAX_SWEEPS: usize = 60;
/// A column pair counts as orthogonal once |⟨a_p, a_q⟩| ≤ SVD_TOL·‖a_p‖‖a_q‖.
pub const SVD_TOL: f64 = 1e-12;

/// Thin SVD `a = u · diag(sigma) · vt` with `r = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub vt: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (x, s) in us.row_mut(i).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        us.matmul(&self.vt).expect("svd factors are conformable")
    }
}

pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(EetError::Numeric("svd input contains non-finite entries".into()));
    }
    if a.rows() < a.cols() {
        let t = svd_tall(&a.transpose())?;
        return Ok(Svd {
            u: t.vt.transpose(),
            sigma: t.sigma,
            vt: t.u.transpose(),
        });
    }
    svd_tall(a)
}

/// Requires rows ≥ cols.
fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = a.shape();
    // Columns of `a` stored as rows for contiguous access.
    let mut w = a.transpose();
    let mut v = Matrix::identity(n);

    // Columns below this squared norm are numerically zero; rotating them
    // only shuffles rounding noise and never settles.
    let total: f64 = a.as_slice().iter().map(|x| x * x).sum();
    let floor = (f64::EPSILON * m as f64).powi(2) * total;

    let mut converged = n < 2;
    for _sweep in 0..SVD_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let wp = w.row(p);
                    let wq = w.row(q);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for i in 0..m {
                        alpha += wp[i] * wp[i];
                        beta += wq[i] * wq[i];
                        gamma += wp[i] * wq[i];
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0 || alpha <= floor || beta <= floor {
                    continue;
                }
                if gamma.abs() <= SVD_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(EetError::NotConverged {
            sweeps: SVD_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n).map(|j| w.row(j).iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let negligible = floor.sqrt();

    // u columns as rows of `ut` while we orthonormalize.
    let mut ut = Matrix::zeros(n, m);
    let mut sigma = Vec::with_capacity(n);
    let mut vt = Matrix::zeros(n, n);
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        let keep = s > negligible && s > 0.0;
        sigma.push(if keep { s } else { 0.0 });
        vt.row_mut(slot).copy_from_slice(v.row(j));
        let mut col: Vec<f64> = if keep {
            w.row(j).iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        if !keep || !orthonormalize(&ut, slot, &mut col) {
            col = completion_vector(&ut, slot, m);
        }
        ut.row_mut(slot).copy_from_slice(&col);
    }

    Ok(Svd {
        u: ut.transpose(),
        sigma,
        vt,
    })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * cols);
    let rp = &mut head[p * cols..(p + 1) * cols];
    let rq = &mut tail[..cols];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Two passes of modified Gram–Schmidt against the first `count` rows of
/// `basis`. Returns false when the vector collapses.
fn orthonormalize(basis: &Matrix, count: usize, v: &mut [f64]) -> bool {
    let before: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if before == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for r in 0..count {
            let b = basis.row(r);
            let d: f64 = b.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
    }
    let after: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if after < 0.5 * before {
        return false;
    }
    for x in v.iter_mut() {
        *x /= after;
    }
    true
}

/// Unit vector orthogonal to the first `count` rows of `basis`, built from
/// the standard basis vector with the largest residual.
fn completion_vector(basis: &Matrix, count: usize, m: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for e in 0..m {
        let mut v = vec![0.0; m];
        v[e] = 1.0;
        for _ in 0..2 {
            for r in 0..count {
                let b = basis.row(r);
                let d: f64 = b.iter().zip(&v).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if best.as_ref().is_none_or(|(bn, _)| norm > *bn) {
            best = Some((norm, v));
        }
    }
    let (norm, mut v) = best.expect("m > count");
    for x in &mut v {
        *x /= norm;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn orthonormal_cols_err(m: &Matrix) -> f64 {
        let g = m.t_matmul(m).unwrap();
        g.sub(&Matrix::identity(g.rows())).unwrap().frobenius_norm()
    }

    #[test]
    fn identity() {
        let s = svd(&Matrix::identity(4)).unwrap();
        assert_eq!(s.sigma, vec![1.0; 4]);
    }

    #[test]
    fn diagonal_sorted() {
        let s = svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        let s = svd(&Matrix::diag(&[3.0, 2.0, 1.0])).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_reconstruction_and_gram() {
        let mut rng = Rng::new(3);
        for &(r, c) in &[(6, 4), (4, 6), (1, 5), (5, 1), (17, 17), (64, 64), (40, 9)] {
            let a = Matrix::from_fn(r, c, |_, _| rng.normal());
            let s = svd(&a).unwrap();
            let rel = s.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
            assert!(rel < 1e-6, "{r}x{c}: {rel}");
            assert!(orthonormal_cols_err(&s.u) < 1e-8);
            assert!(orthonormal_cols_err(&s.vt.transpose()) < 1e-8);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            assert!(s.sigma.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_factors() {
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(6, 2, |_, _| rng.normal());
        let y = Matrix::from_fn(2, 5, |_, _| rng.normal());
        let a = x.matmul(&y).unwrap();
        let s = svd(&a).unwrap();
        assert!(s.sigma[2..].iter().all(|&v| v < 1e-10));
        assert!(orthonormal_cols_err(&s.u) < 1e-8);
        let rel = s.reconstruct().sub(&a).unwrap().frobenius_norm() / a.frobenius_norm();
        assert!(rel < 1e-6);

        let z = svd(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(z.sigma, vec![0.0; 3]);
        assert!(orthonormal_cols_err(&z.u) < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = Matrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(svd(&a).is_err());
    }
}

use super::Matrix;
use crate::error::{shape_err, EetError, Result};

/// Lower-triangular Cholesky factor `l` with `a = l·lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(shape_err("cholesky", "square matrix", format!("{}x{}", n, a.cols())));
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-10 * scale.max(1.0) {
                return Err(EetError::Numeric(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(EetError::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `a · x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if b.rows() != a.rows() {
        return Err(shape_err(
            "solve_spd",
            format!("rhs with {} rows", a.rows()),
            format!("{}", b.rows()),
        ));
    }
    let l = cholesky(a)?;
    let n = a.rows();
    let mut x = b.clone();
    for c in 0..b.cols() {
        // forward: l·y = b
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
        // backward: lᵀ·x = y
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in i + 1..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_returns_rhs() {
        let b = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25], [7.0, 1.0]]);
        assert_eq!(solve_spd(&Matrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn scaled_identity() {
        let x = solve_spd(&Matrix::identity(4).scale(2.0), &Matrix::identity(4)).unwrap();
        let err = x.sub(&Matrix::identity(4).scale(0.5)).unwrap().frobenius_norm();
        assert!(err < 1e-15, "{err}");
    }

    #[test]
    fn random_spd_residual() {
        let mut rng = Rng::new(11);
        for n in [1, 3, 8, 20] {
            let g = Matrix::from_fn(n + 2, n, |_, _| rng.normal());
            let a = g.t_matmul(&g).unwrap().add(&Matrix::identity(n)).unwrap();
            let b = Matrix::from_fn(n, 3, |_, _| rng.normal());
            let x = solve_spd(&a, &b).unwrap();
            let res = a.matmul(&x).unwrap().sub(&b).unwrap().frobenius_norm();
            assert!(res < 1e-8 * b.frobenius_norm(), "n={n} residual {res}");
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]);
        assert!(matches!(
            solve_spd(&a, &Matrix::identity(2)),
            Err(EetError::NotPositiveDefinite { .. })
        ));
        assert!(solve_spd(&Matrix::zeros(2, 2), &Matrix::identity(2)).is_err());
    }
}

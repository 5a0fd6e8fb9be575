//! Factorizations and solves for small dense systems.

use super::Matrix;
use crate::error::{Error, Result};

/// LU factorization with partial pivoting, `P A = L U` packed in one matrix.
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("LU of a non-square matrix".into()));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= scale * f64::EPSILON * n as f64 {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.lu.rows();
        if b.rows() != n {
            return Err(Error::DimensionMismatch("LU solve right-hand side".into()));
        }
        let mut x = Matrix::from_fn(n, b.cols(), |i, j| b[(self.perm[i], j)]);
        for c in 0..b.cols() {
            for i in 0..n {
                let mut s = x[(i, c)];
                for k in 0..i {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s;
            }
            for i in (0..n).rev() {
                let mut s = x[(i, c)];
                for k in i + 1..n {
                    s -= self.lu[(i, k)] * x[(k, c)];
                }
                x[(i, c)] = s / self.lu[(i, i)];
            }
        }
        Ok(x)
    }
}

pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(b)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    Lu::factor(a)?.solve(&Matrix::identity(a.rows()))
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("Cholesky of a non-square matrix".into()));
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Singular(format!("matrix not positive definite at pivot {j}")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `A X = B` with `A` symmetric positive definite.
pub fn cholesky_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let l = cholesky(a)?;
    let n = a.rows();
    if b.rows() != n {
        return Err(Error::DimensionMismatch("Cholesky solve right-hand side".into()));
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let mut s = x[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
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

/// Reciprocal 1-norm condition number, `1 / (‖A‖₁ ‖A⁻¹‖₁)`. Zero when singular.
pub fn rcond(a: &Matrix) -> f64 {
    let norm = a.norm_1();
    if norm == 0.0 {
        return 0.0;
    }
    match inverse(a) {
        Ok(inv) if inv.is_finite() => 1.0 / (norm * inv.norm_1()),
        _ => 0.0,
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn symmetric_eigenvalues(a: &Matrix, max_sweeps: usize) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("symmetric eigenvalues of a non-square matrix".into()));
    }
    let n = a.rows();
    let mut m = a.symmetrize();
    let total = m.frobenius_norm();
    for _ in 0..max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * total || off == 0.0 {
            return Ok(sorted_diagonal(&m));
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                // Negligible against the diagonal pair or the whole matrix.
                if apq.abs() <= 0.5 * f64::EPSILON * (m[(p, p)].abs() + m[(q, q)].abs())
                    || apq.abs() <= f64::EPSILON * f64::EPSILON * total
                {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
        if !rotated {
            return Ok(sorted_diagonal(&m));
        }
    }
    Err(Error::NonConvergence { what: "Jacobi eigenvalue sweep", iters: max_sweeps })
}

fn sorted_diagonal(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = (0..m.rows()).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Right pseudo-inverse `Cᵀ (C Cᵀ)⁻¹` of a full-row-rank matrix.
pub fn right_pseudo_inverse(c: &Matrix) -> Result<Matrix> {
    let cct = c * &c.transpose();
    if rcond(&cct) < 1e-12 {
        return Err(Error::RankDeficientC);
    }
    let inv = inverse(&cct).map_err(|_| Error::RankDeficientC)?;
    Ok(&c.transpose() * &inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn lu_solves_permuted_system() {
        let a = m(&[&[0.0, 2.0, 1.0], &[1.0, 1.0, 0.0], &[3.0, 0.0, 1.0]]);
        let x = m(&[&[1.0], &[-2.0], &[0.5]]);
        let b = &a * &x;
        let got = solve(&a, &b).unwrap();
        assert!((&got - &x).max_abs() < 1e-14);
    }

    #[test]
    fn singular_is_reported() {
        let a = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(inverse(&a), Err(Error::Singular(_))));
        assert_eq!(rcond(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn cholesky_matches_lu() {
        let a = m(&[&[4.0, 1.0], &[1.0, 3.0]]);
        let b = m(&[&[1.0, 0.0], &[2.0, 1.0]]);
        let x1 = cholesky_solve(&a, &b).unwrap();
        let x2 = solve(&a, &b).unwrap();
        assert!((&x1 - &x2).max_abs() < 1e-14);
        assert!(cholesky(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).is_err());
    }

    #[test]
    fn jacobi_eigenvalues() {
        let a = m(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let ev = symmetric_eigenvalues(&a, 50).unwrap();
        assert!((ev[0] - 3.0).abs() < 1e-14 && (ev[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pseudo_inverse_of_wide_matrix() {
        let c = m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 1.0]]);
        let pinv = right_pseudo_inverse(&c).unwrap();
        assert!((&(&c * &pinv) - &Matrix::identity(2)).max_abs() < 1e-14);
        let deficient = m(&[&[1.0, 1.0], &[2.0, 2.0]]);
        assert_eq!(right_pseudo_inverse(&deficient).unwrap_err(), Error::RankDeficientC);
    }
}

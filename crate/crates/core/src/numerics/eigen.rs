//! Real nonsymmetric eigenvalues: Householder reduction to upper Hessenberg
//! form followed by Francis double-shift QR. Complex pairs come back as
//! `(re, im)` tuples and never leave this module as a matrix type.

use super::{Matrix, SolverTolerances};
use crate::error::{Error, Result};

/// Reduces a square matrix to upper Hessenberg form by Householder similarity.
pub fn hessenberg(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;
        for j in m..n {
            let f = (m..=high).rev().map(|i| ort[i] * h[(i, j)]).sum::<f64>() / hh;
            for i in m..=high {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..=high {
            let f = (m..=high).rev().map(|j| ort[j] * h[(i, j)]).sum::<f64>() / hh;
            for j in m..=high {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
    }
    for i in 2..n {
        for j in 0..i - 1 {
            h[(i, j)] = 0.0;
        }
    }
    h
}

/// All eigenvalues of a real square matrix as `(re, im)` pairs.
pub fn eigenvalues(a: &Matrix, tol: &SolverTolerances) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
    }
    if !a.is_finite() {
        return Err(Error::InvalidMatrix("non-finite entries".into()));
    }
    let nn = a.rows();
    let mut h = hessenberg(a);
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let eps = f64::EPSILON;

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    if norm == 0.0 {
        return Ok(vec![(0.0, 0.0); nn]);
    }

    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0usize;
    let mut total_iters = 0usize;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
    let (mut w, mut x, mut y);

    while n >= 0 {
        let nu = n as usize;
        // Find a small subdiagonal element.
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() <= eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root.
            h[(nu, nu)] += exshift;
            re[nu] = h[(nu, nu)];
            im[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // Two roots.
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[nu - 1] = x + z;
                re[nu] = re[nu - 1];
                if z != 0.0 {
                    re[nu] = x - w / z;
                }
                im[nu - 1] = 0.0;
                im[nu] = 0.0;
            } else {
                re[nu - 1] = x + p;
                re[nu] = x + p;
                im[nu - 1] = z;
                im[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            // Francis double-shift step on the active block l..=nu.
            x = h[(nu, nu)];
            y = 0.0;
            w = 0.0;
            if l < nu {
                y = h[(nu - 1, nu - 1)];
                w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            }
            if iter == 10 {
                // Exceptional shift.
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            total_iters += 1;
            if total_iters > tol.max_iters {
                return Err(Error::NonConvergence { what: "Francis QR iteration", iters: tol.max_iters });
            }

            // Look for two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if h[(m, m - 1)].abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            for k in m..nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h[(k, k - 1)] = -s * x;
                    } else if l != m {
                        h[(k, k - 1)] = -h[(k, k - 1)];
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = h[(k, j)] + q * h[(k + 1, j)];
                        if notlast {
                            p += r * h[(k + 2, j)];
                            h[(k + 2, j)] -= p * z;
                        }
                        h[(k, j)] -= p * x;
                        h[(k + 1, j)] -= p * y;
                    }
                    for i in 0..=nu.min(k + 3) {
                        p = x * h[(i, k)] + y * h[(i, k + 1)];
                        if notlast {
                            p += z * h[(i, k + 2)];
                            h[(i, k + 2)] -= p * r;
                        }
                        h[(i, k)] -= p;
                        h[(i, k + 1)] -= p * q;
                    }
                }
            }
        }
    }
    Ok(re.into_iter().zip(im).collect())
}

/// `max |λᵢ|` over the eigenvalues of a square matrix.
pub fn spectral_radius(m: &Matrix, tol: &SolverTolerances) -> Result<f64> {
    Ok(eigenvalues(m, tol)?.into_iter().map(|(re, im)| re.hypot(im)).fold(0.0, f64::max))
}

/// Largest singular value, from the largest eigenvalue of `mᵀm`.
pub fn spectral_norm(m: &Matrix, tol: &SolverTolerances) -> Result<f64> {
    let gram = if m.rows() >= m.cols() { &m.transpose() * m } else { m * &m.transpose() };
    if gram.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let sweeps = tol.max_iters.min(10_000);
    let ev = super::linalg::symmetric_eigenvalues(&gram, sweeps)?;
    Ok(ev[0].max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> SolverTolerances {
        SolverTolerances::default()
    }

    fn tridiag(d: f64, e: f64) -> Matrix {
        Matrix::from_rows(&[vec![d, e, 0.0], vec![e, d, e], vec![0.0, e, d]]).unwrap()
    }

    #[test]
    fn identity_radius_is_one() {
        assert!((spectral_radius(&Matrix::identity(3), &tol()).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn toeplitz_closed_form() {
        let expected = 0.9 + 0.02 * (std::f64::consts::PI / 4.0).cos();
        let got = spectral_radius(&tridiag(0.9, 0.01), &tol()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        let expected = 1.01 + 0.02 * (std::f64::consts::PI / 4.0).cos();
        let got = spectral_radius(&tridiag(1.01, 0.01), &tol()).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((expected - 1.024142).abs() < 1e-6);
    }

    #[test]
    fn complex_pair_from_rotation() {
        let (c, s) = (0.3f64.cos() * 0.8, 0.3f64.sin() * 0.8);
        let rot = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
        let ev = eigenvalues(&rot, &tol()).unwrap();
        assert!(ev.iter().all(|(re, im)| (re.hypot(*im) - 0.8).abs() < 1e-14));
        assert!(ev.iter().any(|(_, im)| *im > 0.0));
    }

    #[test]
    fn larger_matrix_matches_trace_and_companion_roots() {
        // Companion matrix of (x-1)(x-2)(x-3)(x+0.5)(x-0.25).
        let roots = [1.0, 2.0, 3.0, -0.5, 0.25];
        let mut coeffs = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (i, c) in coeffs.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * r;
            }
            coeffs = next;
        }
        let n = roots.len();
        let comp = Matrix::from_fn(n, n, |i, j| {
            if i == 0 {
                -coeffs[j + 1]
            } else if i == j + 1 {
                1.0
            } else {
                0.0
            }
        });
        let mut ev: Vec<f64> = eigenvalues(&comp, &tol()).unwrap().into_iter().map(|e| e.0).collect();
        ev.sort_by(f64::total_cmp);
        let mut want = roots.to_vec();
        want.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{ev:?}");
        }
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&Matrix::zeros(2, 2), &tol()).unwrap(), 0.0);
        let d = Matrix::from_diag(&[3.0, 1.0]);
        assert!((spectral_norm(&d, &tol()).unwrap() - 3.0).abs() < 1e-14);
        let j = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((spectral_norm(&j, &tol()).unwrap() - 1.0).abs() < 1e-14);
        let col = Matrix::column(&[3.0, 4.0]);
        assert!((spectral_norm(&col, &tol()).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(spectral_radius(&Matrix::zeros(2, 3), &tol()).is_err());
    }
}

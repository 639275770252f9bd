//! Small dense/iterative kernels shared by the mesh and flow code.

use crate::error::{Error, Result};

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradients for a symmetric positive definite operator.
///
/// Stops when the Euclidean residual norm drops below `tol * max(1, |b|)`.
/// `x` holds the initial guess on entry and the solution on exit.
pub(crate) fn conjugate_gradient<F>(mut apply: F, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    let target = tol * dot(b, b).sqrt().max(1.0);
    let mut rr = dot(&r, &r);
    if rr.sqrt() <= target {
        return Ok(0);
    }
    let mut p = r.clone();
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::NoConvergence { what: "conjugate gradient", iterations: it });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(it);
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence { what: "conjugate gradient", iterations: max_iter })
}

/// Thomas algorithm for a tridiagonal system.
/// `lower[i]` multiplies x[i-1], `upper[i]` multiplies x[i+1].
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Eigenvalues of a real symmetric 2x2 or 3x3 matrix, ascending.
pub(crate) fn symmetric_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    match m.len() {
        1 => vec![m[0][0]],
        2 => {
            let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mean - rad, mean + rad]
        }
        _ => jacobi_eigenvalues(m),
    }
}

/// Cyclic Jacobi sweeps; adequate for the tiny frames used here.
fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]];
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        conjugate_gradient(
            |v, out| {
                for i in 0..3 {
                    out[i] = (0..3).map(|j| a[i][j] * v[j]).sum();
                }
            },
            &b,
            &mut x,
            1e-14,
            50,
        )
        .unwrap();
        let m = nalgebra::Matrix3::from_fn(|i, j| a[i][j]);
        let exact = m.lu().solve(&nalgebra::Vector3::from(b)).unwrap();
        for i in 0..3 {
            assert!((x[i] - exact[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn thomas_matches_dense_solve() {
        let n = 6;
        let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -1.0 }).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i + 1 == n { 0.0 } else { -1.0 }).collect();
        let diag = vec![2.5; n];
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 + 0.5).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs);
        let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.5
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let exact = m.lu().solve(&nalgebra::DVector::from(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - exact[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn small_eigenvalues_match_dense() {
        let m = vec![vec![2.0, 0.5, -0.3], vec![0.5, 1.0, 0.2], vec![-0.3, 0.2, -1.0]];
        let ev = symmetric_eigenvalues(&m);
        let d = nalgebra::Matrix3::from_fn(|i, j| m[i][j]);
        let mut exact: Vec<f64> = d.symmetric_eigenvalues().iter().copied().collect();
        exact.sort_by(f64::total_cmp);
        for i in 0..3 {
            assert!((ev[i] - exact[i]).abs() < 1e-12);
        }
        let ev2 = symmetric_eigenvalues(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!((ev2[0] + 1.0).abs() < 1e-14 && (ev2[1] - 3.0).abs() < 1e-14);
    }
}

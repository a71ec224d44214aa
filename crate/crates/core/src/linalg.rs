//! Small dense and Krylov linear algebra on complex vectors.

use num_complex::Complex64 as C64;

use crate::error::{LabError, Result};

pub fn zeros(n: usize) -> Vec<C64> {
    vec![C64::new(0.0, 0.0); n]
}

pub fn real_vec(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&x| C64::new(x, 0.0)).collect()
}

/// Hermitian Euclidean norm.
pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(v: &[C64]) -> f64 {
    v.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn hdot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

pub fn mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct GmresStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Restarted GMRES with right preconditioning.
///
/// Solves `A x = b` where `apply` computes `A v` and `precond` applies an
/// approximate inverse. Convergence is declared when `|b - A x| <= tol * |b|`.
pub fn gmres<A, P>(
    apply: A,
    precond: P,
    b: &[C64],
    x0: Option<&[C64]>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<(Vec<C64>, GmresStats)>
where
    A: Fn(&[C64]) -> Vec<C64>,
    P: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = match x0 {
        Some(v) => v.to_vec(),
        None => zeros(n),
    };
    if bnorm == 0.0 {
        return Ok((zeros(n), GmresStats { iterations: 0, residual: 0.0 }));
    }
    let target = tol * bnorm;
    let mut total = 0usize;
    let m = restart.max(1);
    loop {
        let ax = apply(&x);
        let r = sub(b, &ax);
        let beta = norm2(&r);
        if beta <= target {
            return Ok((x, GmresStats { iterations: total, residual: beta / bnorm }));
        }
        if total >= max_iter {
            return Err(LabError::Convergence(format!(
                "gmres stalled at relative residual {:.3e} after {} iterations",
                beta / bnorm,
                total
            )));
        }
        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut zvecs: Vec<Vec<C64>> = Vec::with_capacity(m);
        basis.push(scale(&r, C64::new(1.0 / beta, 0.0)));
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            let z = precond(&basis[j]);
            let mut w = apply(&z);
            zvecs.push(z);
            for i in 0..=j {
                let hij = hdot(&basis[i], &w);
                h[i][j] = hij;
                axpy(&mut w, -hij, &basis[i]);
            }
            // second pass for orthogonality
            for i in 0..=j {
                let corr = hdot(&basis[i], &w);
                h[i][j] += corr;
                axpy(&mut w, -corr, &basis[i]);
            }
            let hn = norm2(&w);
            h[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let a = h[j][j];
            let bb = h[j + 1][j];
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = C64::new(0.0, 0.0);
            } else {
                cs[j] = a / den;
                sn[j] = bb / den;
            }
            h[j][j] = cs[j].conj() * a + sn[j].conj() * bb;
            h[j + 1][j] = C64::new(0.0, 0.0);
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            total += 1;
            k_used = j + 1;
            if g[j + 1].norm() <= target || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(scale(&w, C64::new(1.0 / hn, 0.0)));
        }
        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for l in (i + 1)..k_used {
                s -= h[i][l] * y[l];
            }
            y[i] = if h[i][i].norm() > 0.0 { s / h[i][i] } else { C64::new(0.0, 0.0) };
        }
        for (i, yi) in y.iter().enumerate() {
            axpy(&mut x, *yi, &zvecs[i]);
        }
    }
}

/// Thomas algorithm for a complex tridiagonal system; `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[C64], diag: &[C64], upper: &[C64], rhs: &[C64]) -> Vec<C64> {
    let n = diag.len();
    let mut c = vec![C64::new(0.0, 0.0); n];
    let mut d = vec![C64::new(0.0, 0.0); n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { C64::new(0.0, 0.0) };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        if i + 1 < n {
            c[i] = upper[i] / m;
        }
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n.saturating_sub(1)).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// Solves the 2x2 system and returns the solution with the determinant.
pub fn solve2(a: [[C64; 2]; 2], b: [C64; 2]) -> (Option<[C64; 2]>, C64) {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.norm() == 0.0 {
        return (None, det);
    }
    let x0 = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
    let x1 = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
    (Some([x0, x1]), det)
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Slope of log(y) against log(x).
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    linear_fit(&lx, &ly).0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gmres_solves_small_nonsymmetric_system() {
        let a = [[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 1.0, 3.0]];
        let apply = |v: &[C64]| -> Vec<C64> {
            (0..3).map(|i| (0..3).map(|j| v[j] * a[i][j]).sum()).collect()
        };
        let b = vec![C64::new(1.0, 0.5), C64::new(2.0, 0.0), C64::new(0.0, -1.0)];
        let (x, st) = gmres(apply, |v: &[C64]| v.to_vec(), &b, None, 1e-14, 10, 50).unwrap();
        let r = sub(&b, &apply(&x));
        assert!(norm2(&r) < 1e-12, "{st:?}");
    }

    #[test]
    fn tridiagonal_matches_dense() {
        let l = real_vec(&[0.0, 1.0, 1.0, 1.0]);
        let d = real_vec(&[-2.0, -2.0, -2.0, -2.0]);
        let u = real_vec(&[2.0, 1.0, 1.0, 0.0]);
        let rhs = real_vec(&[1.0, 0.0, 2.0, -1.0]);
        let x = solve_tridiagonal(&l, &d, &u, &rhs);
        let back = [
            d[0] * x[0] + u[0] * x[1],
            l[1] * x[0] + d[1] * x[1] + u[1] * x[2],
            l[2] * x[1] + d[2] * x[2] + u[2] * x[3],
            l[3] * x[2] + d[3] * x[3],
        ];
        for i in 0..4 {
            assert!((back[i] - rhs[i]).norm() < 1e-13);
        }
    }

    #[test]
    fn fit_recovers_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.0)).collect();
        assert!((loglog_slope(&x, &y) + 2.0).abs() < 1e-12);
    }
}

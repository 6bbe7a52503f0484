//! Dense reference solve of the discrete capacity problem (1D).
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Dense `(A1, A2)` with `N1² = v·A1 v`, `N2² = v·A2 v` (1D, level-major).
fn dense_forms(nx: usize, nt: usize, t_final: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let h = 1.0 / (nx + 1) as f64;
    let dt = t_final / nt as f64;
    let lap = DMatrix::from_fn(nx, nx, |i, j| {
        if i == j {
            2.0 / (h * h)
        } else if i.abs_diff(j) == 1 {
            -1.0 / (h * h)
        } else {
            0.0
        }
    });
    let inv = lap.clone().try_inverse().unwrap();
    let n = (nt + 1) * nx;
    let mut a1 = DMatrix::zeros(n, n);
    for j in 0..=nt {
        let c = if j == 0 || j == nt { 0.5 } else { 1.0 } * dt * h;
        a1.view_mut((j * nx, j * nx), (nx, nx))
            .copy_from(&(&lap * c));
    }
    // difference operator: rows k, columns level-major nodes
    let mut d = DMatrix::zeros(nt * nx, n);
    for k in 0..nt {
        for i in 0..nx {
            d[(k * nx + i, (k + 1) * nx + i)] = 1.0;
            d[(k * nx + i, k * nx + i)] = -1.0;
        }
    }
    let mut block = DMatrix::zeros(nt * nx, nt * nx);
    for k in 0..nt {
        block
            .view_mut((k * nx, k * nx), (nx, nx))
            .copy_from(&(&inv * (h / dt)));
    }
    let a2 = d.transpose() * block * d;
    (a1, a2)
}

/// Lawson-Hanson: `min ‖A x - b‖` subject to `x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..(10 * n) {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        match cand {
            Some(j) if w[j] > 1e-13 => passive[j] = true,
            _ => break,
        }
        loop {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
            let z_sub = sub.clone().svd(true, true).solve(b, 1e-14).unwrap();
            let mut z = DVector::zeros(n);
            for (c, &j) in idx.iter().enumerate() {
                z[j] = z_sub[c];
            }
            if idx.iter().all(|&j| z[j] > 0.0) {
                x = z;
                break;
            }
            let alpha = idx
                .iter()
                .filter(|&&j| z[j] <= 0.0)
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (&z - &x) * alpha;
            for &j in &idx {
                if x[j] <= 1e-15 {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    x
}

/// `N1 + N2 = min_s sqrt(min_v N1²/s + N2²/(1-s))`, golden section over `s`.
pub fn dense_capacity(nx: usize, nt: usize, t_final: f64, lower: &[f64]) -> f64 {
    let (a1, a2) = dense_forms(nx, nt, t_final);
    let e = DVector::from_column_slice(lower);
    let inner = |s: f64| {
        let h = &a1 / s + &a2 / (1.0 - s);
        let r = h.cholesky().unwrap().l().transpose();
        let w = nnls(&r, &(-(&r * &e)));
        let v = w + &e;
        (v.dot(&(&a1 * &v)) / s + v.dot(&(&a2 * &v)) / (1.0 - s)).sqrt()
    };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (1e-6, 1.0 - 1e-6);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (inner(c), inner(d));
    while b - a > 1e-7 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = inner(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = inner(d);
        }
    }
    fc.min(fd)
}

pub fn lower_bound(nx: usize, nt: usize, cells: &[(usize, usize)]) -> Vec<f64> {
    let mut lo = vec![0.0; (nt + 1) * nx];
    for &(k, i) in cells {
        lo[k * nx + i] = 1.0;
        lo[(k + 1) * nx + i] = 1.0;
    }
    lo
}

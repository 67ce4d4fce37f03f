//! Dense weighted least squares oracle, independent of the library's
//! factorization and column scaling.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rdcov_core::{EstimatorKind, Kernel};

pub fn kernel(kernel: Kernel, u: f64) -> f64 {
    let a = u.abs();
    if a > 1.0 {
        return 0.0;
    }
    match kernel {
        Kernel::Triangular => 1.0 - a,
        Kernel::Uniform => 1.0,
        Kernel::Epanechnikov => 0.75 * (1.0 - a * a),
    }
}

/// `(X' W X)^{-1} X' W` via the SVD of `sqrt(W) X`.
pub fn wls_operator(rows: &[Vec<f64>], w: &[f64]) -> DMatrix<f64> {
    let k = rows[0].len();
    let sw: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let a = DMatrix::from_fn(rows.len(), k, |i, j| sw[i] * rows[i][j]);
    let pinv = a.pseudo_inverse(1e-13).expect("svd");
    pinv * DMatrix::from_diagonal(&DVector::from_vec(sw))
}

pub fn wls(rows: &[Vec<f64>], w: &[f64], y: &[f64]) -> Vec<f64> {
    let op = wls_operator(rows, w);
    (op * DVector::from_column_slice(y)).iter().copied().collect()
}

fn mean(vals: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = vals.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    s / c as f64
}

/// Coefficients `(α, τ, β₋1, β₊1, ..., extras)` of the pooled RD regression,
/// with unscaled polynomial coefficients.
pub fn rd_coefficients(
    x: &[f64],
    y: &[f64],
    z: &[Vec<f64>],
    kind: EstimatorKind,
    k: Kernel,
    p: usize,
    h: f64,
) -> Vec<f64> {
    let d = z.len();
    let in_window = |i: usize, side: Option<bool>| x[i].abs() <= h && side.is_none_or(|s| (x[i] >= 0.0) == s);
    let window_mean = |c: usize, side: Option<bool>| mean((0..x.len()).filter(|&i| in_window(i, side)).map(|i| z[c][i]));
    let all: Vec<f64> = (0..d).map(|c| window_mean(c, None)).collect();
    let minus: Vec<f64> = (0..d).map(|c| window_mean(c, Some(false))).collect();
    let plus: Vec<f64> = (0..d).map(|c| window_mean(c, Some(true))).collect();

    let mut rows = Vec::new();
    let mut w = Vec::new();
    let mut ys = Vec::new();
    for i in 0..x.len() {
        let kw = kernel(k, x[i] / h);
        if kw <= 0.0 {
            continue;
        }
        let t = if x[i] >= 0.0 { 1.0 } else { 0.0 };
        let mut row = vec![1.0, t];
        for j in 1..=p {
            let xp = x[i].powi(j as i32);
            row.push(xp);
            row.push(t * xp);
        }
        match kind {
            EstimatorKind::Standard => {}
            EstimatorKind::CovAdj => row.extend(z.iter().map(|c| c[i])),
            EstimatorKind::DemeanedCommon => row.extend((0..d).map(|c| z[c][i] - all[c])),
            EstimatorKind::Interacted => {
                row.extend((0..d).map(|c| (1.0 - t) * z[c][i]));
                row.extend((0..d).map(|c| t * z[c][i]));
            }
            EstimatorKind::DemeanedCommonInteracted => {
                row.extend((0..d).map(|c| (1.0 - t) * (z[c][i] - all[c])));
                row.extend((0..d).map(|c| t * (z[c][i] - all[c])));
            }
            EstimatorKind::DemeanedGroupInteracted => {
                row.extend((0..d).map(|c| (1.0 - t) * (z[c][i] - minus[c])));
                row.extend((0..d).map(|c| t * (z[c][i] - plus[c])));
            }
        }
        rows.push(row);
        w.push(kw);
        ys.push(y[i]);
    }
    wls(&rows, &w, &ys)
}

/// Weights of the `der`-th derivative at zero from a one-sided order-`p`
/// fit, as a length-`n` vector.
pub fn side_weights(x: &[f64], right: bool, k: Kernel, p: usize, h: f64, der: usize) -> Vec<f64> {
    let idx: Vec<usize> = (0..x.len())
        .filter(|&i| (x[i] >= 0.0) == right && kernel(k, x[i] / h) > 0.0)
        .collect();
    // columns (x/h)^j keep the SVD well conditioned for larger p
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| (0..=p).map(|j| (x[i] / h).powi(j as i32)).collect()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| kernel(k, x[i] / h)).collect();
    let op = wls_operator(&rows, &w);
    let fact: f64 = (1..=der).map(|v| v as f64).product::<f64>() / h.powi(der as i32);
    let mut out = vec![0.0; x.len()];
    for (c, &i) in idx.iter().enumerate() {
        out[i] = fact * op[(der, c)];
    }
    out
}

/// One-sided order-`p` polynomial fit at `h`, evaluated at every `x_i`.
pub fn side_fitted(x: &[f64], v: &[f64], right: bool, k: Kernel, p: usize, h: f64) -> Vec<f64> {
    let idx: Vec<usize> = (0..x.len())
        .filter(|&i| (x[i] >= 0.0) == right && kernel(k, x[i] / h) > 0.0)
        .collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| (0..=p).map(|j| x[i].powi(j as i32)).collect()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| kernel(k, x[i] / h)).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
    let beta = wls(&rows, &w, &ys);
    x.iter().map(|xi| beta.iter().enumerate().map(|(j, b)| b * xi.powi(j as i32)).sum()).collect()
}

/// Bias-corrected estimate and HC0 variance sum `Σ P_i² e_i²` of the
/// order-`p` estimator applied to `v`, with an order-`p+1` bias fit at `b`.
pub fn robust_hc0(x: &[f64], v: &[f64], k: Kernel, p: usize, h: f64, b: f64) -> (f64, f64) {
    let q = p + 1;
    let qf: f64 = (1..=q).map(|v| v as f64).product();
    let window = h.max(b);
    let mut tau = 0.0;
    let mut var = 0.0;
    for (right, sign) in [(true, 1.0), (false, -1.0)] {
        let wh = side_weights(x, right, k, p, h, 0);
        let wb = side_weights(x, right, k, q, b, q);
        let c: f64 = wh.iter().zip(x).map(|(w, xi)| w * xi.powi(q as i32)).sum();
        let pw: Vec<f64> = wh.iter().zip(&wb).map(|(a, m)| a - c * m / qf).collect();
        tau += sign * pw.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let fitted = side_fitted(x, v, right, k, q, b);
        for i in 0..x.len() {
            if (x[i] >= 0.0) == right && x[i].abs() <= window {
                let e = v[i] - fitted[i];
                var += pw[i] * pw[i] * e * e;
            }
        }
    }
    (tau, var)
}

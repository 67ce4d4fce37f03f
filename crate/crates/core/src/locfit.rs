//! One-sided and joint local polynomial weighted least squares.
//!
//! Every fit is a linear smoother: coefficients are `Σ_i w_i y_i` for weight
//! vectors that depend only on the score, the kernel and the bandwidth.
//! Polynomial columns are built from `u = x / h` and unscaled afterwards.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{PivotedCholesky, SymMatrix};

/// Largest polynomial order accepted for user-facing fits.
pub const MAX_ORDER: usize = 4;
/// Largest order used internally (pilot fits for bandwidth selection).
pub(crate) const MAX_INTERNAL_ORDER: usize = MAX_ORDER + 3;

/// Which observations a fit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum FitSide {
    /// `x < 0` (control).
    Left,
    /// `x >= 0` (treated).
    Right,
    /// Both sides, one polynomial.
    Pooled,
}

impl FitSide {
    #[inline]
    pub fn contains(self, x: f64) -> bool {
        match self {
            FitSide::Left => x < 0.0,
            FitSide::Right => x >= 0.0,
            FitSide::Pooled => true,
        }
    }
}

impl fmt::Display for FitSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitSide::Left => "left",
            FitSide::Right => "right",
            FitSide::Pooled => "pooled",
        })
    }
}

/// Kernel, order, bandwidth and side of a weighted polynomial fit.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalFitSpec {
    pub kernel: Kernel,
    pub p: usize,
    pub h: f64,
    pub side: FitSide,
}

impl LocalFitSpec {
    pub fn new(kernel: Kernel, p: usize, h: f64, side: FitSide) -> Result<Self> {
        if p > MAX_ORDER {
            return Err(Error::Domain(format!("polynomial order {p} exceeds the maximum of {MAX_ORDER}")));
        }
        Self::internal(kernel, p, h, side)
    }

    pub(crate) fn internal(kernel: Kernel, p: usize, h: f64, side: FitSide) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Domain(format!("bandwidth must be finite and positive, got {h}")));
        }
        if p > MAX_INTERNAL_ORDER {
            return Err(Error::Domain(format!("polynomial order {p} is too large")));
        }
        Ok(Self { kernel, p, h, side })
    }

    /// Same fit on a different side.
    pub fn on_side(self, side: FitSide) -> Self {
        Self { side, ..self }
    }

    /// Same fit with a different order and bandwidth.
    pub(crate) fn with(self, p: usize, h: f64) -> Result<Self> {
        Self::internal(self.kernel, p, h, self.side)
    }
}

/// An estimator written as `Σ_i w_i y_i`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LinearWeights {
    pub w: Vec<f64>,
    /// What the weights estimate, e.g. "intercept, right side, p=1".
    pub target: String,
    /// Number of nonzero weights.
    pub effective_n: usize,
}

impl LinearWeights {
    pub(crate) fn new(w: Vec<f64>, target: String) -> Self {
        let effective_n = w.iter().filter(|&&v| v != 0.0).count();
        Self { w, target, effective_n }
    }

    /// `Σ_i w_i v_i`.
    pub fn apply(&self, v: &[f64]) -> f64 {
        dot(&self.w, v)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn fill_powers(u: f64, out: &mut [f64]) {
    let mut acc = 1.0;
    for v in out.iter_mut() {
        *v = acc;
        acc *= u;
    }
}

/// A factored one-sided (or pooled) polynomial fit.
#[derive(Debug, Clone)]
pub(crate) struct SideFit {
    pub spec: LocalFitSpec,
    /// Observations with positive kernel weight on the side.
    pub indices: Vec<usize>,
    pub kernel_weights: Vec<f64>,
    chol: PivotedCholesky,
}

impl SideFit {
    pub fn new(spec: LocalFitSpec, x: &[f64]) -> Result<Self> {
        let LocalFitSpec { kernel, p, h, side } = spec;
        let insufficient = || Error::InsufficientData { side, bandwidth: h };

        let mut indices = Vec::new();
        let mut kernel_weights = Vec::new();
        for (i, &xi) in x.iter().enumerate() {
            if !side.contains(xi) {
                continue;
            }
            let k = kernel.weight(xi / h);
            if k > 0.0 {
                indices.push(i);
                kernel_weights.push(k);
            }
        }

        let mut distinct: Vec<f64> = indices.iter().map(|&i| x[i]).collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < p + 1 {
            return Err(insufficient());
        }

        let mut gram = SymMatrix::zeros(p + 1);
        let mut row = vec![0.0; p + 1];
        for (&i, &k) in indices.iter().zip(&kernel_weights) {
            fill_powers(x[i] / h, &mut row);
            gram.add_outer_upper(k, &row);
        }
        gram.symmetrize();
        let chol = PivotedCholesky::factor(&gram).map_err(|_| insufficient())?;
        Ok(Self { spec, indices, kernel_weights, chol })
    }

    /// Weights of the estimate of the `derivative`-th derivative at zero,
    /// as a length-`n` vector.
    pub fn derivative_weights(&self, x: &[f64], derivative: usize) -> Vec<f64> {
        let h = self.spec.h;
        let mut w = vec![0.0; x.len()];
        let row_inv = self.chol.inverse_row(derivative);
        let factor = factorial(derivative) / libm::pow(h, derivative as f64);
        let mut row = vec![0.0; self.spec.p + 1];
        for (&i, &k) in self.indices.iter().zip(&self.kernel_weights) {
            fill_powers(x[i] / h, &mut row);
            w[i] = factor * k * dot(&row_inv, &row);
        }
        w
    }

    /// Coefficients on `u^j = (x/h)^j` from regressing `v`.
    pub fn scaled_coefficients(&self, x: &[f64], v: &[f64]) -> Vec<f64> {
        let h = self.spec.h;
        let mut rhs = vec![0.0; self.spec.p + 1];
        let mut row = vec![0.0; self.spec.p + 1];
        for (&i, &k) in self.indices.iter().zip(&self.kernel_weights) {
            fill_powers(x[i] / h, &mut row);
            for (r, &c) in rhs.iter_mut().zip(&row) {
                *r += k * c * v[i];
            }
        }
        self.chol.solve(&rhs)
    }

    /// Fitted polynomial evaluated at `x_i` (extrapolated outside the window).
    pub fn predict(&self, coefficients: &[f64], xi: f64) -> f64 {
        let u = xi / self.spec.h;
        coefficients.iter().rev().fold(0.0, |acc, &c| acc * u + c)
    }

    /// Diagonal of the weighted hat matrix at observation `i`; zero outside
    /// the window.
    pub fn leverage(&self, x: &[f64], i: usize) -> f64 {
        let k = self.spec.kernel.weight(x[i] / self.spec.h);
        if k == 0.0 || !self.spec.side.contains(x[i]) {
            return 0.0;
        }
        let mut row = vec![0.0; self.spec.p + 1];
        fill_powers(x[i] / self.spec.h, &mut row);
        k * self.chol.inverse_quadratic_form(&row)
    }

    pub fn n_params(&self) -> usize {
        self.spec.p + 1
    }
}

/// Weights `w` with `Σ_i w_i y_i` equal to the estimated `derivative`-th
/// derivative at the cutoff of the side-restricted polynomial fit.
pub fn fit_weights(spec: LocalFitSpec, x: &[f64], derivative: usize) -> Result<LinearWeights> {
    if derivative > spec.p {
        return Err(Error::Domain(format!(
            "derivative {derivative} exceeds polynomial order {}",
            spec.p
        )));
    }
    let fit = SideFit::new(spec, x)?;
    let target = if derivative == 0 {
        format!("intercept, {} side, p={}", spec.side, spec.p)
    } else {
        format!("derivative {derivative}, {} side, p={}", spec.side, spec.p)
    };
    Ok(LinearWeights::new(fit.derivative_weights(x, derivative), target))
}

/// A named group of extra regressors appended to the RD design.
#[derive(Debug, Clone, Copy)]
pub struct ExtraBlock<'a> {
    pub label: &'a str,
    pub columns: &'a [Vec<f64>],
}

/// Factored pooled fit of `[1, T, x, Tx, ..., x^p, Tx^p, extras]` under
/// kernel weights `K(x/h)`.
#[derive(Debug, Clone)]
pub struct JointFit {
    spec: LocalFitSpec,
    indices: Vec<usize>,
    kernel_weights: Vec<f64>,
    /// Design rows of the window, row-major.
    rows: Vec<f64>,
    n_cols: usize,
    chol: PivotedCholesky,
}

impl JointFit {
    /// Single block of extra columns labelled "covariate block".
    pub fn new(spec: LocalFitSpec, x: &[f64], extras: &[Vec<f64>]) -> Result<Self> {
        Self::with_blocks(spec, x, &[ExtraBlock { label: "covariate block", columns: extras }])
    }

    pub fn with_blocks(spec: LocalFitSpec, x: &[f64], blocks: &[ExtraBlock<'_>]) -> Result<Self> {
        let LocalFitSpec { kernel, p, h, .. } = spec;
        let n = x.len();
        for b in blocks {
            for c in b.columns {
                if c.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, found: c.len() });
                }
            }
        }
        let n_base = 2 * (p + 1);
        let n_extra: usize = blocks.iter().map(|b| b.columns.len()).sum();
        let n_cols = n_base + n_extra;

        let mut indices = Vec::new();
        let mut kernel_weights = Vec::new();
        let mut rows = Vec::new();
        let mut gram = SymMatrix::zeros(n_cols);
        let mut row = vec![0.0; n_cols];
        for (i, &xi) in x.iter().enumerate() {
            let k = kernel.weight(xi / h);
            if k <= 0.0 {
                continue;
            }
            let t = if xi >= 0.0 { 1.0 } else { 0.0 };
            let u = xi / h;
            let mut pw = 1.0;
            for j in 0..=p {
                row[2 * j] = pw;
                row[2 * j + 1] = t * pw;
                pw *= u;
            }
            let mut c = n_base;
            for b in blocks {
                for col in b.columns {
                    row[c] = col[i];
                    c += 1;
                }
            }
            gram.add_outer_upper(k, &row);
            rows.extend_from_slice(&row);
            indices.push(i);
            kernel_weights.push(k);
        }
        gram.symmetrize();

        let mut group_ends = vec![n_base];
        let mut end = n_base;
        for b in blocks {
            if !b.columns.is_empty() {
                end += b.columns.len();
                group_ends.push(end);
            }
        }
        let chol = PivotedCholesky::factor_grouped(&gram, &group_ends).map_err(|fail| {
            if fail.group == 0 {
                Error::RankDeficient {
                    block: format!("polynomial block (1, T, x, Tx, ...) within bandwidth {h}: too few distinct points on a side"),
                }
            } else {
                let label = blocks.iter().filter(|b| !b.columns.is_empty()).nth(fail.group - 1).map_or("extra", |b| b.label);
                Error::RankDeficient { block: format!("{label} collinear") }
            }
        })?;

        Ok(Self { spec, indices, kernel_weights, rows, n_cols, chol })
    }

    pub fn spec(&self) -> &LocalFitSpec {
        &self.spec
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Index of the first extra column.
    pub fn n_base(&self) -> usize {
        2 * (self.spec.p + 1)
    }

    /// Observations inside the window (positive kernel weight).
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn unscale(&self, mut beta: Vec<f64>) -> Vec<f64> {
        let h = self.spec.h;
        for j in 1..=self.spec.p {
            let s = libm::pow(h, j as f64);
            beta[2 * j] /= s;
            beta[2 * j + 1] /= s;
        }
        beta
    }

    /// WLS coefficients in the order `(α, τ, β₋1, β₊1, ..., β₋p, β₊p, extras)`,
    /// where `β₋j` multiplies `x^j` and `β₊j` multiplies `T x^j`.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        let mut rhs = vec![0.0; self.n_cols];
        for (r, (&i, &k)) in self.indices.iter().zip(&self.kernel_weights).enumerate() {
            let row = &self.rows[r * self.n_cols..(r + 1) * self.n_cols];
            let ky = k * y[i];
            for (acc, &c) in rhs.iter_mut().zip(row) {
                *acc += ky * c;
            }
        }
        self.unscale(self.chol.solve(&rhs))
    }

    /// Weights `w` with `Σ_i w_i y_i` equal to coefficient `col`.
    pub fn coefficient_weights(&self, n: usize, col: usize) -> LinearWeights {
        let mut inv = self.chol.inverse_row(col);
        if col >= 2 && col < self.n_base() {
            let j = col / 2;
            let s = libm::pow(self.spec.h, j as f64);
            inv.iter_mut().for_each(|v| *v /= s);
        }
        let mut w = vec![0.0; n];
        for (r, (&i, &k)) in self.indices.iter().zip(&self.kernel_weights).enumerate() {
            let row = &self.rows[r * self.n_cols..(r + 1) * self.n_cols];
            w[i] = k * dot(&inv, row);
        }
        LinearWeights::new(w, format!("coefficient {col} of joint fit"))
    }
}

/// Convenience wrapper: coefficients of the joint RD regression of `y`.
pub fn joint_fit(spec: LocalFitSpec, x: &[f64], y: &[f64], extras: &[Vec<f64>]) -> Result<Vec<f64>> {
    if y.len() != x.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: y.len() });
    }
    Ok(JointFit::new(spec, x, extras)?.coefficients(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.37) / n as f64).collect()
    }

    #[test]
    fn local_constant_single_point() {
        let spec = LocalFitSpec::new(Kernel::Uniform, 0, 1.0, FitSide::Right).unwrap();
        let w = fit_weights(spec, &[-0.5, 0.5], 0).unwrap();
        assert_eq!(w.w, vec![0.0, 1.0]);
        assert_eq!(w.effective_n, 1);
    }

    #[test]
    fn reproduces_linear_intercept() {
        let x = grid(40);
        let spec = LocalFitSpec::new(Kernel::Triangular, 1, 0.6, FitSide::Right).unwrap();
        let w = fit_weights(spec, &x, 0).unwrap();
        for (a, b) in [(1.0, 2.0), (-3.5, 0.25), (0.0, 10.0)] {
            let y: Vec<f64> = x.iter().map(|v| a + b * v).collect();
            assert!((w.apply(&y) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn moment_conditions_for_derivatives() {
        let x = grid(60);
        let spec = LocalFitSpec::new(Kernel::Epanechnikov, 3, 0.8, FitSide::Left).unwrap();
        for der in 0..=3 {
            let w = fit_weights(spec, &x, der).unwrap();
            for m in 0..=3 {
                let s: f64 = w.w.iter().zip(&x).map(|(wi, xi)| wi * xi.powi(m as i32)).sum();
                let expected = if m == der { factorial(der) } else { 0.0 };
                assert!((s - expected).abs() < 1e-8, "der {der} m {m}: {s}");
            }
        }
    }

    #[test]
    fn zero_outside_window_and_side() {
        let x = grid(50);
        let spec = LocalFitSpec::new(Kernel::Uniform, 1, 0.3, FitSide::Left).unwrap();
        let w = fit_weights(spec, &x, 0).unwrap();
        for (wi, xi) in w.w.iter().zip(&x) {
            if *xi >= 0.0 || xi.abs() > 0.3 {
                assert_eq!(*wi, 0.0);
            }
        }
        assert!(w.effective_n > 0);
    }

    #[test]
    fn insufficient_points() {
        let x = [-0.5, 0.1, 0.1, 0.1];
        let spec = LocalFitSpec::new(Kernel::Uniform, 1, 1.0, FitSide::Right).unwrap();
        let err = fit_weights(spec, &x, 0).unwrap_err();
        assert_eq!(err, Error::InsufficientData { side: FitSide::Right, bandwidth: 1.0 });
    }

    #[test]
    fn bad_bandwidth_and_order() {
        assert!(LocalFitSpec::new(Kernel::Uniform, 1, 0.0, FitSide::Right).is_err());
        assert!(LocalFitSpec::new(Kernel::Uniform, 1, f64::NAN, FitSide::Right).is_err());
        assert!(LocalFitSpec::new(Kernel::Uniform, 5, 1.0, FitSide::Right).is_err());
        let spec = LocalFitSpec::new(Kernel::Uniform, 1, 1.0, FitSide::Right).unwrap();
        assert!(fit_weights(spec, &grid(10), 2).is_err());
    }

    #[test]
    fn joint_exact_fit() {
        let x = grid(30);
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * f64::from(u8::from(*v >= 0.0)) + 3.0 * v).collect();
        let spec = LocalFitSpec::new(Kernel::Triangular, 1, 0.9, FitSide::Pooled).unwrap();
        let beta = joint_fit(spec, &x, &y, &[]).unwrap();
        let expected = [1.0, 2.0, 3.0, 0.0];
        for (b, e) in beta.iter().zip(expected) {
            assert!((b - e).abs() < 1e-12, "{beta:?}");
        }
    }

    #[test]
    fn joint_zero_extra_column_is_rank_error() {
        let x = grid(30);
        let y = x.clone();
        let spec = LocalFitSpec::new(Kernel::Triangular, 1, 0.9, FitSide::Pooled).unwrap();
        let err = joint_fit(spec, &x, &y, &[vec![0.0; 30]]).unwrap_err();
        match err {
            Error::RankDeficient { block } => assert!(block.contains("covariate block collinear"), "{block}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn joint_tau_equals_difference_of_intercepts() {
        let x = grid(80);
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin() + if *v >= 0.0 { 0.4 } else { 0.0 }).collect();
        for p in 0..=3 {
            let spec = LocalFitSpec::new(Kernel::Triangular, p, 0.7, FitSide::Pooled).unwrap();
            let tau = joint_fit(spec, &x, &y, &[]).unwrap()[1];
            let right = fit_weights(spec.on_side(FitSide::Right), &x, 0).unwrap().apply(&y);
            let left = fit_weights(spec.on_side(FitSide::Left), &x, 0).unwrap().apply(&y);
            assert!((tau - (right - left)).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn coefficient_weights_match_coefficients() {
        let x = grid(50);
        let z = vec![x.iter().map(|v| (5.0 * v).cos()).collect::<Vec<_>>()];
        let y: Vec<f64> = x.iter().zip(&z[0]).map(|(v, zz)| v * v + 0.3 * zz).collect();
        let spec = LocalFitSpec::new(Kernel::Triangular, 2, 0.8, FitSide::Pooled).unwrap();
        let fit = JointFit::new(spec, &x, &z).unwrap();
        let beta = fit.coefficients(&y);
        for col in 0..fit.n_cols() {
            let w = fit.coefficient_weights(x.len(), col);
            assert!((w.apply(&y) - beta[col]).abs() < 1e-10, "col {col}");
        }
    }
}

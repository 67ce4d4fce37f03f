//! Robust bias-corrected inference for the standard and covariate-adjusted
//! estimators.
//!
//! The covariate coefficient `γ̃` is frozen at its point-estimate value, which
//! makes the bias-corrected estimator an exact linear functional of the
//! linearized outcome `ỹ = y - Z γ̃`:
//!
//! ```text
//! τ̃_bc = Σ_{x_i >= 0} P⁺_i ỹ_i - Σ_{x_i < 0} P⁻_i ỹ_i
//! P_i  = w_i(h) - (Σ_j w_j(h) x_j^{p+1}) · m_i(b) / (p+1)!
//! ```
//!
//! where `w(h)` are the order-`p` intercept weights and `m(b)` the order
//! `p+1` weights for the `(p+1)`-th derivative. Conditional bias and
//! variance are then computed directly from these weights, and the variance
//! is reported on the `nh`-scale, `Ṽ = n h Σ_i P_i² ε̂_i²`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, PointEstimate};
use crate::locfit::{dot, FitSide, LinearWeights, LocalFitSpec, SideFit};
use crate::normal;
use crate::vce::{self, ResidualFit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum VarianceMethod {
    /// Nearest-neighbor residual proxies.
    #[default]
    Nn,
    /// Plug-in residuals, no adjustment.
    Hc0,
    /// Plug-in residuals scaled by `sqrt(N / (N - k))`.
    Hc1,
    /// Plug-in residuals scaled by `1 / sqrt(1 - h_ii)`.
    Hc2,
    /// Plug-in residuals scaled by `1 / (1 - h_ii)`.
    Hc3,
    /// Within-cluster sums of weighted plug-in residuals.
    Cluster,
}

impl VarianceMethod {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMethod::Nn => "nn",
            VarianceMethod::Hc0 => "hc0",
            VarianceMethod::Hc1 => "hc1",
            VarianceMethod::Hc2 => "hc2",
            VarianceMethod::Hc3 => "hc3",
            VarianceMethod::Cluster => "cluster",
        }
    }
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "nn" => VarianceMethod::Nn,
            "hc0" => VarianceMethod::Hc0,
            "hc1" => VarianceMethod::Hc1,
            "hc2" => VarianceMethod::Hc2,
            "hc3" => VarianceMethod::Hc3,
            "cluster" => VarianceMethod::Cluster,
            other => return Err(Error::Domain(format!("unknown variance method '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceOptions {
    pub method: VarianceMethod,
    /// Same-side neighbors for [`VarianceMethod::Nn`].
    pub nn_neighbors: usize,
    /// Multiply cluster-robust variances by `G / (G - 1)`.
    pub cluster_dof_correction: bool,
}

impl Default for VarianceOptions {
    fn default() -> Self {
        Self { method: VarianceMethod::Nn, nn_neighbors: 3, cluster_dof_correction: false }
    }
}

impl VarianceOptions {
    pub fn with_method(method: VarianceMethod) -> Self {
        Self { method, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BiasEstimate {
    /// Estimated leading bias constant `B̃ = B̃₊ - B̃₋`.
    pub b_tilde: f64,
    /// Pilot bandwidth of the derivative fit.
    pub b: f64,
    /// Order of the derivative fit.
    pub q: usize,
    /// `(B̃₊, B̃₋)`.
    pub per_side: (f64, f64),
    /// Estimated `(p+1)`-th derivatives at the cutoff `(right, left)`.
    pub derivatives: (f64, f64),
    /// `h^{p+1} B̃`, the amount subtracted from the point estimate.
    pub correction: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VarianceEstimate {
    /// `n h Σ_i P_i² ε̂_i²` (or its clustered analogue).
    pub v_bc: f64,
    pub method: VarianceMethod,
    pub nn_neighbors: usize,
    pub df_note: String,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InferenceResult {
    /// Uncorrected point estimate.
    pub tau: f64,
    pub tau_bc: f64,
    /// `sqrt(v_bc / (n h))`.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub t_stat: f64,
    pub level: f64,
    /// Value of τ under the tested null.
    pub null_value: f64,
    pub v_bc: f64,
    pub h: f64,
    pub b: f64,
    /// Observations with positive kernel weight at `h` (left, right).
    pub effective_n: (usize, usize),
    pub method: VarianceMethod,
}

impl InferenceResult {
    pub fn ci_length(&self) -> f64 {
        self.ci_high - self.ci_low
    }
}

/// Bias-corrected fit with its exact linear representation.
#[derive(Debug, Clone)]
pub struct BiasCorrectedFit {
    pub estimate: PointEstimate,
    pub b: f64,
    pub bias: BiasEstimate,
    pub tau_bc: f64,
    /// `P⁻`: left-side weights, summing to one.
    pub weights_minus: LinearWeights,
    /// `P⁺`: right-side weights, summing to one.
    pub weights_plus: LinearWeights,
    /// Order-`p` intercept weights at `h` (left, right), before correction.
    pub intercept_weights: (Vec<f64>, Vec<f64>),
    /// `y - Z γ̃`.
    pub linearized: Vec<f64>,
    pub warnings: Vec<String>,
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn linearize(data: &Dataset, gamma: &[f64]) -> Vec<f64> {
    let mut v = data.y().to_vec();
    for (k, g) in gamma.iter().enumerate() {
        for (vi, zi) in v.iter_mut().zip(data.covariate(k)) {
            *vi -= g * zi;
        }
    }
    v
}

fn check_kind(kind: EstimatorKind) -> Result<()> {
    match kind {
        EstimatorKind::Standard | EstimatorKind::CovAdj => Ok(()),
        _ => Err(Error::Unsupported("robust inference is provided for the standard and covadj estimators")),
    }
}

fn check_bandwidth(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and positive, got {v}")))
    }
}

impl BiasCorrectedFit {
    pub fn new(data: &Dataset, kind: EstimatorKind, spec: LocalFitSpec, b: f64) -> Result<Self> {
        check_kind(kind)?;
        check_bandwidth("b", b)?;
        let estimate = estimate(data, kind, spec)?;
        let LocalFitSpec { p, h, .. } = estimate.spec;
        let q = p + 1;
        let x = data.x();
        let linearized = linearize(data, estimate.common_gamma());
        let q_fact = factorial(q);

        let mut warnings = Vec::new();
        if b < h / 2.0 {
            warnings.push(format!("pilot bandwidth b = {b} is less than h/2 = {}", h / 2.0));
        }

        let side_parts = |side: FitSide| -> Result<(Vec<f64>, Vec<f64>, f64, f64)> {
            let point = SideFit::new(spec.on_side(side), x)?;
            let w = point.derivative_weights(x, 0);
            let deriv = SideFit::new(spec.on_side(side).with(q, b)?, x)?;
            let m = deriv.derivative_weights(x, q);
            // Σ w_i x_i^{p+1} = h^{p+1} × design constant
            let moment: f64 = w.iter().zip(x).map(|(wi, xi)| wi * libm::pow(*xi, q as f64)).sum();
            let derivative = dot(&m, &linearized);
            let bias_constant = moment / libm::pow(h, q as f64) * derivative / q_fact;
            let combined: Vec<f64> = w.iter().zip(&m).map(|(wi, mi)| wi - moment * mi / q_fact).collect();
            Ok((w, combined, bias_constant, derivative))
        };
        let (w_minus, p_minus, b_minus, d_minus) = side_parts(FitSide::Left)?;
        let (w_plus, p_plus, b_plus, d_plus) = side_parts(FitSide::Right)?;

        let b_tilde = b_plus - b_minus;
        let correction = libm::pow(h, q as f64) * b_tilde;
        let tau_bc = estimate.tau - correction;
        let bias = BiasEstimate {
            b_tilde,
            b,
            q,
            per_side: (b_plus, b_minus),
            derivatives: (d_plus, d_minus),
            correction,
        };

        Ok(Self {
            weights_minus: LinearWeights::new(p_minus, format!("bias-corrected intercept, left side, p={p}, q={q}")),
            weights_plus: LinearWeights::new(p_plus, format!("bias-corrected intercept, right side, p={p}, q={q}")),
            intercept_weights: (w_minus, w_plus),
            estimate,
            b,
            bias,
            tau_bc,
            linearized,
            warnings,
        })
    }

    pub fn h(&self) -> f64 {
        self.estimate.spec.h
    }

    /// `Σ P⁺ ỹ - Σ P⁻ ỹ`; equals `tau_bc` up to rounding.
    pub fn tau_bc_from_weights(&self) -> f64 {
        self.weights_plus.apply(&self.linearized) - self.weights_minus.apply(&self.linearized)
    }

    /// Signed weights `P⁺ - P⁻` so that `tau_bc = Σ_i a_i ỹ_i`.
    pub fn signed_weights(&self) -> Vec<f64> {
        self.weights_plus.w.iter().zip(&self.weights_minus.w).map(|(p, m)| p - m).collect()
    }

    /// Variance of the bias-corrected estimator on the `nh` scale.
    pub fn variance(&self, data: &Dataset, opts: &VarianceOptions) -> Result<VarianceEstimate> {
        let spec = self.estimate.spec;
        let window = spec.h.max(self.b);
        let residual_fit = ResidualFit { kernel: spec.kernel, order: spec.p + 1, bandwidth: self.b };
        let sum = weighted_variance(
            data,
            &self.linearized,
            [&self.weights_minus.w, &self.weights_plus.w],
            window,
            residual_fit,
            opts,
        )?;
        Ok(VarianceEstimate {
            v_bc: data.n() as f64 * spec.h * sum.value,
            method: opts.method,
            nn_neighbors: opts.nn_neighbors,
            df_note: sum.note,
        })
    }

    /// Robust confidence interval and test of `τ = null_value`.
    pub fn inference(&self, data: &Dataset, opts: &VarianceOptions, level: f64, null_value: f64) -> Result<InferenceResult> {
        let var = self.variance(data, opts)?;
        let h = self.h();
        let nh = data.n() as f64 * h;
        let (ci_low, ci_high) = ci_bounds(self.tau_bc, var.v_bc, nh, level)?;
        let se = libm::sqrt(var.v_bc / nh);
        let t_stat = (self.tau_bc - null_value) / se;
        Ok(InferenceResult {
            tau: self.estimate.tau,
            tau_bc: self.tau_bc,
            se,
            ci_low,
            ci_high,
            p_value: normal::two_sided_p_value(t_stat),
            t_stat,
            level,
            null_value,
            v_bc: var.v_bc,
            h,
            b: self.b,
            effective_n: self.estimate.effective_n,
            method: opts.method,
        })
    }
}

struct VarianceSum {
    value: f64,
    note: String,
}

/// `Σ_sides Σ_i w_i² ε̂_i²` (or clustered) for the given side weights.
fn weighted_variance(
    data: &Dataset,
    v: &[f64],
    weights: [&[f64]; 2],
    window: f64,
    residual_fit: ResidualFit,
    opts: &VarianceOptions,
) -> Result<VarianceSum> {
    let x = data.x();
    let cluster = if opts.method == VarianceMethod::Cluster {
        Some(data.cluster().ok_or(Error::MissingClusters)?)
    } else {
        None
    };
    let mut value = 0.0;
    let mut clusters_seen: Vec<usize> = Vec::new();
    for (side, w) in [FitSide::Left, FitSide::Right].into_iter().zip(weights) {
        let proxies = vce::side_proxies(x, v, side, window, residual_fit, opts)?;
        value += vce::assemble(w, &proxies, cluster);
        if let Some(ids) = cluster {
            clusters_seen.extend(proxies.iter().filter(|(i, _)| w[*i] != 0.0).map(|(i, _)| ids[*i]));
        }
    }
    let note = match opts.method {
        VarianceMethod::Nn => format!("nearest-neighbor proxies, J = {}", opts.nn_neighbors),
        VarianceMethod::Hc1 => String::from("plug-in residuals, N/(N-k) scaling per side"),
        VarianceMethod::Hc2 | VarianceMethod::Hc3 => {
            String::from("plug-in residuals, leverage from the residual-generating local fit")
        }
        VarianceMethod::Hc0 => String::from("plug-in residuals, no adjustment"),
        VarianceMethod::Cluster => {
            clusters_seen.sort_unstable();
            clusters_seen.dedup();
            let g = clusters_seen.len();
            if opts.cluster_dof_correction && g > 1 {
                value *= g as f64 / (g as f64 - 1.0);
                format!("cluster-robust, G = {g}, G/(G-1) correction applied")
            } else {
                format!("cluster-robust, G = {g}, no small-G correction")
            }
        }
    };
    Ok(VarianceSum { value, note })
}

/// `tau_bc ± z_{(1+level)/2} sqrt(v_bc / nh)`.
pub fn ci_bounds(tau_bc: f64, v_bc: f64, nh: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level must lie in (0, 1), got {level}")));
    }
    if !(v_bc > 0.0) || !v_bc.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let half = normal::critical_value(level) * libm::sqrt(v_bc / nh);
    Ok((tau_bc - half, tau_bc + half))
}

/// Bias estimate of the covariate-adjusted (or, with `kind = Standard`, the
/// unadjusted) estimator using a derivative fit of order `p+1` at `b`.
pub fn bias_estimate(data: &Dataset, kind: EstimatorKind, spec: LocalFitSpec, b: f64) -> Result<BiasEstimate> {
    Ok(BiasCorrectedFit::new(data, kind, spec, b)?.bias)
}

pub fn bias_corrected_estimate(data: &Dataset, kind: EstimatorKind, spec: LocalFitSpec, b: f64) -> Result<f64> {
    Ok(BiasCorrectedFit::new(data, kind, spec, b)?.tau_bc)
}

pub fn variance_bc(
    data: &Dataset,
    kind: EstimatorKind,
    spec: LocalFitSpec,
    b: f64,
    opts: &VarianceOptions,
) -> Result<VarianceEstimate> {
    BiasCorrectedFit::new(data, kind, spec, b)?.variance(data, opts)
}

/// Robust bias-corrected confidence interval and two-sided p-value for
/// `H0: τ = 0`.
pub fn robust_ci(
    data: &Dataset,
    kind: EstimatorKind,
    spec: LocalFitSpec,
    b: f64,
    opts: &VarianceOptions,
    level: f64,
) -> Result<InferenceResult> {
    BiasCorrectedFit::new(data, kind, spec, b)?.inference(data, opts, level, 0.0)
}

/// Variance of the uncorrected order-`p` estimator applied to `v`, on the
/// `nh` scale, with residual proxies from the order-`p` fit at `h`.
pub(crate) fn conventional_variance(data: &Dataset, spec: LocalFitSpec, v: &[f64], opts: &VarianceOptions) -> Result<f64> {
    let x = data.x();
    let w_minus = SideFit::new(spec.on_side(FitSide::Left), x)?.derivative_weights(x, 0);
    let w_plus = SideFit::new(spec.on_side(FitSide::Right), x)?.derivative_weights(x, 0);
    let residual_fit = ResidualFit { kernel: spec.kernel, order: spec.p, bandwidth: spec.h };
    let sum = weighted_variance(data, v, [&w_minus, &w_plus], spec.h, residual_fit, opts)?;
    Ok(data.n() as f64 * spec.h * sum.value)
}

/// Ratio of the estimated variance of the covariate-adjusted estimator to
/// that of the standard estimator at a common bandwidth.
pub fn efficiency_ratio(data: &Dataset, spec: LocalFitSpec, opts: &VarianceOptions) -> Result<f64> {
    let adjusted = estimate(data, EstimatorKind::CovAdj, spec)?;
    let linearized = linearize(data, adjusted.common_gamma());
    let spec = adjusted.spec;
    let v_adj = conventional_variance(data, spec, &linearized, opts)?;
    let v_std = conventional_variance(data, spec, data.y(), opts)?;
    if !(v_std > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(v_adj / v_std)
}

/// Balance test for one covariate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlaceboRow {
    pub covariate: String,
    /// Standard RD estimate with the covariate as the outcome.
    pub tau_z: f64,
    pub tau_bc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub h: f64,
    pub b: f64,
}

/// Runs the unadjusted robust pipeline with each covariate as the outcome.
/// `specs[k]` gives the fit and pilot bandwidth for covariate `k`.
pub fn placebo_tests(
    data: &Dataset,
    specs: &[(LocalFitSpec, f64)],
    opts: &VarianceOptions,
    level: f64,
) -> Result<Vec<PlaceboRow>> {
    if specs.len() != data.d() {
        return Err(Error::DimensionMismatch { expected: data.d(), found: specs.len() });
    }
    let mut rows = Vec::with_capacity(data.d());
    for (k, &(spec, b)) in specs.iter().enumerate() {
        let as_outcome = data.with_outcome(data.covariate(k).to_vec())?;
        let r = robust_ci(&as_outcome, EstimatorKind::Standard, spec, b, opts, level)?;
        rows.push(PlaceboRow {
            covariate: data.covariate_names()[k].clone(),
            tau_z: r.tau,
            tau_bc: r.tau_bc,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            p_value: r.p_value,
            h: r.h,
            b: r.b,
        });
    }
    Ok(rows)
}

//! MSE- and CER-optimal bandwidth selection.
//!
//! Each stage targets the `ν`-th derivative jump estimated by an order-`o`
//! fit, with leading MSE `h^{2(o+1-ν)} B² + V / (n h^{1+2ν})` and minimizer
//!
//! ```text
//! h = [ (1+2ν) V / (2 (o+1-ν) n B²) ]^{1/(2o+3)}.
//! ```
//!
//! Selection runs three stages from a normal-reference pilot
//! `v = c₀ σ̂_x n^{-1/5}`:
//!
//! 1. `d`: `ν = o = p+2`, bias from a global order-`p+3` fit;
//! 2. `b`: `ν = o = p+1`, bias from an order-`p+2` fit at `d`;
//! 3. `h`: `ν = 0, o = p`, bias from an order-`p+1` fit at `b`.
//!
//! Variance constants always use the pilot `v`. For covariate-adjusted rules
//! the outcome is linearized with `γ̃` from the covariate-adjusted fit at `v`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind};
use crate::inference::{VarianceMethod, VarianceOptions};
use crate::kernel::Kernel;
use crate::locfit::{dot, FitSide, LocalFitSpec, SideFit, MAX_ORDER};
use crate::vce::{self, ResidualFit};

/// Default normal-reference constant `2.576 / sqrt(5)`.
pub const DEFAULT_PILOT_CONSTANT: f64 = 1.152_022_222_007_891_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BandwidthRule {
    MseCovadj,
    MseStandard,
    CerCovadj,
    CerStandard,
    Manual,
}

impl BandwidthRule {
    pub fn name(self) -> &'static str {
        match self {
            BandwidthRule::MseCovadj => "mse_covadj",
            BandwidthRule::MseStandard => "mse_standard",
            BandwidthRule::CerCovadj => "cer_covadj",
            BandwidthRule::CerStandard => "cer_standard",
            BandwidthRule::Manual => "manual",
        }
    }

    pub fn is_cer(self) -> bool {
        matches!(self, BandwidthRule::CerCovadj | BandwidthRule::CerStandard)
    }

    pub fn uses_covariates(self) -> bool {
        matches!(self, BandwidthRule::MseCovadj | BandwidthRule::CerCovadj)
    }

    /// Rule for an estimator kind and an `mserd`/`cerrd` style choice.
    pub fn for_kind(kind: EstimatorKind, cer: bool) -> Result<Self> {
        match (kind, cer) {
            (EstimatorKind::CovAdj, false) => Ok(BandwidthRule::MseCovadj),
            (EstimatorKind::CovAdj, true) => Ok(BandwidthRule::CerCovadj),
            (EstimatorKind::Standard, false) => Ok(BandwidthRule::MseStandard),
            (EstimatorKind::Standard, true) => Ok(BandwidthRule::CerStandard),
            _ => Err(Error::Unsupported("bandwidth selection is provided for the standard and covadj estimators")),
        }
    }
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mse_covadj" => BandwidthRule::MseCovadj,
            "mse_standard" => BandwidthRule::MseStandard,
            "cer_covadj" => BandwidthRule::CerCovadj,
            "cer_standard" => BandwidthRule::CerStandard,
            "manual" => BandwidthRule::Manual,
            other => return Err(Error::Domain(format!("unknown bandwidth rule '{other}'"))),
        })
    }
}

/// When the estimated variance of the bias constant is added to `B²` in the
/// plug-in formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Regularization {
    /// In every stage. Keeps the selector away from the huge bandwidths a
    /// noisy, nearly vanishing `B̂` would give.
    #[default]
    Always,
    /// Only when `B² < ε (V/n)^{1/2}`.
    NearZero,
}

impl Regularization {
    pub fn name(self) -> &'static str {
        match self {
            Regularization::Always => "always",
            Regularization::NearZero => "near_zero",
        }
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Regularization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "always" => Ok(Regularization::Always),
            "near_zero" | "near-zero" => Ok(Regularization::NearZero),
            other => Err(Error::Domain(format!("unknown regularization '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandwidthConfig {
    /// `c₀` in the pilot `c₀ σ̂_x n^{-1/5}`.
    pub pilot_constant: f64,
    pub regularization: Regularization,
    /// `ε` in the near-zero-bias test `B² < ε (V/n)^{1/2}`, used by
    /// [`Regularization::NearZero`].
    pub regularization_eps: f64,
    pub force_b_equals_h: bool,
    pub variance: VarianceOptions,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            pilot_constant: DEFAULT_PILOT_CONSTANT,
            regularization: Regularization::Always,
            regularization_eps: 1e-8,
            force_b_equals_h: false,
            variance: VarianceOptions::default(),
        }
    }
}

/// One plug-in stage.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageTrace {
    pub stage: String,
    pub nu: usize,
    pub order: usize,
    /// Bandwidth of the variance fit.
    pub variance_bandwidth: f64,
    /// Bandwidth of the derivative fit feeding the bias constant.
    pub bias_bandwidth: f64,
    /// Squared bias constant used in the formula, after any regularization.
    pub b_sq: f64,
    pub v: f64,
    pub regularized: bool,
    /// Bandwidth from the formula, before clamping.
    pub raw: f64,
    pub bandwidth: f64,
}

/// Intermediate quantities of a selection, for auditing.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PilotTrace {
    pub pilot_constant: f64,
    pub sigma_x: f64,
    /// Normal-reference pilot bandwidth.
    pub v: f64,
    pub stages: Vec<StageTrace>,
    /// `γ̃` at the pilot bandwidth (empty for unadjusted rules).
    pub pilot_gamma: Vec<f64>,
    /// MSE-optimal `h` before any CER shrinkage.
    pub h_mse: f64,
    pub cer_factor: Option<f64>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BandwidthSelection {
    pub h: f64,
    pub b: f64,
    pub rule: BandwidthRule,
    pub pilot: PilotTrace,
}

impl BandwidthSelection {
    /// User-supplied bandwidths; `b` defaults to `h`.
    pub fn manual(h: f64, b: Option<f64>) -> Result<Self> {
        let b = b.unwrap_or(h);
        for (name, v) in [("h", h), ("b", b)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Domain(format!("{name} must be finite and positive, got {v}")));
            }
        }
        Ok(Self { h, b, rule: BandwidthRule::Manual, pilot: PilotTrace::default() })
    }
}

/// `[ (1+2ν) V / (2 (o+1-ν) n B²) ]^{1/(2o+3)}` for `b_sq = B²`.
pub fn plugin_bandwidth(b_sq: f64, v: f64, n: usize, nu: usize, order: usize) -> Result<f64> {
    if nu > order {
        return Err(Error::Domain(format!("derivative {nu} exceeds fit order {order}")));
    }
    if n == 0 {
        return Err(Error::Empty);
    }
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("variance constant must be positive, got {v}")));
    }
    if !(b_sq > 0.0) {
        return Err(Error::NearZeroBias);
    }
    if !b_sq.is_finite() {
        return Err(Error::Domain(format!("bias constant must be finite, got {b_sq}")));
    }
    let num = (1 + 2 * nu) as f64 * v;
    let den = 2.0 * (order + 1 - nu) as f64 * n as f64 * b_sq;
    Ok(libm::pow(num / den, 1.0 / (2 * order + 3) as f64))
}

/// `[ (V/n) / (2(p+1) B²) ]^{1/(2p+3)}`.
pub fn mse_bandwidth(b: f64, v: f64, n: usize, p: usize) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::NearZeroBias);
    }
    plugin_bandwidth(b * b, v, n, 0, p)
}

/// `n^{-p/((3+2p)(3+p))}`; equals `n^{-1/20}` for `p = 1`.
pub fn cer_factor(n: usize, p: usize) -> f64 {
    let p = p as f64;
    libm::pow(n.max(1) as f64, -p / ((3.0 + 2.0 * p) * (3.0 + p)))
}

pub fn cer_bandwidth(h_mse: f64, n: usize, p: usize) -> f64 {
    h_mse * cer_factor(n, p)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

fn sample_sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    libm::sqrt(ss / (n - 1.0))
}

/// Smallest bandwidth giving at least `points` distinct positively weighted
/// scores on each side: midway between the `points`-th and the next distinct
/// `|x|`.
fn min_bandwidth(x: &[f64], points: usize) -> Result<f64> {
    let mut lower: f64 = 0.0;
    for side in [FitSide::Left, FitSide::Right] {
        let mut dist: Vec<f64> = x.iter().filter(|v| side.contains(**v)).map(|v| v.abs()).collect();
        dist.sort_by(f64::total_cmp);
        dist.dedup();
        if dist.len() < points {
            return Err(Error::InsufficientData { side, bandwidth: f64::INFINITY });
        }
        let kth = dist[points - 1];
        let bw = match dist.get(points) {
            Some(next) => 0.5 * (kth + next),
            None => kth * (1.0 + 1e-6),
        };
        lower = lower.max(bw);
    }
    Ok(lower)
}

struct Clamp {
    upper: f64,
    x: Vec<f64>,
}

impl Clamp {
    fn apply(&self, raw: f64, points: usize, what: &str, notices: &mut Vec<String>) -> Result<f64> {
        let lower = min_bandwidth(&self.x, points)?;
        if raw < lower {
            notices.push(format!("{what} = {raw:.6} raised to {lower:.6} to keep {points} distinct points per side"));
            Ok(lower)
        } else if raw > self.upper {
            notices.push(format!("{what} = {raw:.6} capped at the score range {:.6}", self.upper));
            Ok(self.upper)
        } else {
            Ok(raw)
        }
    }
}

struct Stage {
    name: &'static str,
    nu: usize,
    order: usize,
    variance_bandwidth: f64,
    bias_order: usize,
    bias_bandwidth: f64,
    bias_kernel: Kernel,
}

struct StageContext<'a> {
    data: &'a Dataset,
    v: &'a [f64],
    kernel: Kernel,
    config: &'a BandwidthConfig,
}

impl StageContext<'_> {
    fn proxies_sum(&self, weights: [&[f64]; 2], window: f64, residual_fit: ResidualFit) -> Result<f64> {
        let x = self.data.x();
        let opts = &self.config.variance;
        let cluster = if opts.method == VarianceMethod::Cluster {
            Some(self.data.cluster().ok_or(Error::MissingClusters)?)
        } else {
            None
        };
        let mut total = 0.0;
        for (side, w) in [FitSide::Left, FitSide::Right].into_iter().zip(weights) {
            let proxies = vce::side_proxies(x, self.v, side, window, residual_fit, opts)?;
            total += vce::assemble(w, &proxies, cluster);
        }
        Ok(total)
    }

    fn run(&self, stage: &Stage, clamp: &Clamp, notices: &mut Vec<String>) -> Result<StageTrace> {
        let x = self.data.x();
        let n = self.data.n();
        let Stage { nu, order, variance_bandwidth: hv, bias_order, bias_bandwidth: hb, .. } = *stage;
        let target = order + 1;

        let mut weights: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut bias_weights: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut constants = [0.0; 2];
        let mut bias_side = [0.0; 2];
        for (k, side) in [FitSide::Left, FitSide::Right].into_iter().enumerate() {
            let spec = LocalFitSpec::internal(self.kernel, order, hv, side)?;
            let w = SideFit::new(spec, x)?.derivative_weights(x, nu);
            let moment: f64 = w.iter().zip(x).map(|(wi, xi)| wi * libm::pow(*xi, target as f64)).sum();
            constants[k] = moment / libm::pow(hv, (target - nu) as f64) / factorial(target);
            let bias_spec = LocalFitSpec::internal(stage.bias_kernel, bias_order, hb, side)?;
            let m = SideFit::new(bias_spec, x)?.derivative_weights(x, target);
            bias_side[k] = constants[k] * dot(&m, self.v);
            weights[k] = w;
            bias_weights[k] = m;
        }
        let bias = bias_side[1] - bias_side[0];
        let residual_fit = ResidualFit { kernel: self.kernel, order, bandwidth: hv };
        let variance = n as f64
            * libm::pow(hv, (1 + 2 * nu) as f64)
            * self.proxies_sum([&weights[0], &weights[1]], hv, residual_fit)?;

        let mut b_sq = bias * bias;
        let mut regularized = false;
        let near_zero = b_sq < self.config.regularization_eps * libm::sqrt(variance / n as f64);
        if near_zero || self.config.regularization == Regularization::Always {
            // add the estimated variance of the bias constant
            let scaled: [Vec<f64>; 2] = [0, 1].map(|k| bias_weights[k].iter().map(|m| m * constants[k]).collect());
            let fit = ResidualFit { kernel: stage.bias_kernel, order: bias_order, bandwidth: hb };
            b_sq += self.proxies_sum([&scaled[0], &scaled[1]], hb, fit)?;
            regularized = true;
            if near_zero {
                notices.push(format!("{} stage: near-zero bias constant regularized", stage.name));
            }
        }

        let raw = match plugin_bandwidth(b_sq, variance, n, nu, order) {
            Ok(h) => h,
            Err(Error::NearZeroBias) => {
                notices.push(format!("{} stage: bias constant is zero", stage.name));
                f64::INFINITY
            }
            Err(Error::Domain(_)) if variance == 0.0 => {
                notices.push(format!("{} stage: variance constant is zero", stage.name));
                0.0
            }
            Err(e) => return Err(e),
        };
        let points = if stage.name == "h" { order + 2 } else { order + 1 };
        let bandwidth = clamp.apply(raw, points, stage.name, notices)?;
        Ok(StageTrace {
            stage: String::from(stage.name),
            nu,
            order,
            variance_bandwidth: hv,
            bias_bandwidth: hb,
            b_sq,
            v: variance,
            regularized,
            raw,
            bandwidth,
        })
    }
}

/// Data-driven `(h, b)` for the standard or covariate-adjusted estimator.
pub fn select(
    data: &Dataset,
    rule: BandwidthRule,
    kernel: Kernel,
    p: usize,
    config: &BandwidthConfig,
) -> Result<BandwidthSelection> {
    if rule == BandwidthRule::Manual {
        return Err(Error::Domain("manual bandwidths are not selected; use BandwidthSelection::manual".into()));
    }
    if p > MAX_ORDER {
        return Err(Error::Domain(format!("polynomial order {p} exceeds the maximum of {MAX_ORDER}")));
    }
    if !(config.pilot_constant > 0.0 && config.pilot_constant.is_finite()) {
        return Err(Error::Domain(format!("pilot constant must be positive, got {}", config.pilot_constant)));
    }
    data.require_two_sided()?;
    let x = data.x();
    let n = data.n();
    let mut notices = Vec::new();

    let upper = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let clamp = Clamp { upper, x: x.to_vec() };
    let sigma_x = sample_sd(x);
    let raw_pilot = config.pilot_constant * sigma_x * libm::pow(n as f64, -0.2);
    let pilot = clamp.apply(raw_pilot, p + 4, "pilot v", &mut notices)?;

    let (v_lin, pilot_gamma) = if rule.uses_covariates() && data.d() > 0 {
        let spec = LocalFitSpec::new(kernel, p, pilot, FitSide::Pooled)?;
        let gamma = estimate(data, EstimatorKind::CovAdj, spec)?.common_gamma().to_vec();
        let mut v = data.y().to_vec();
        for (k, g) in gamma.iter().enumerate() {
            for (vi, zi) in v.iter_mut().zip(data.covariate(k)) {
                *vi -= g * zi;
            }
        }
        (v, gamma)
    } else {
        (data.y().to_vec(), Vec::new())
    };

    let ctx = StageContext { data, v: &v_lin, kernel, config };
    // global fit spanning each side; uniform weights so no point drops out
    let global = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) * (1.0 + 1e-9);
    let d_stage = ctx.run(
        &Stage {
            name: "d",
            nu: p + 2,
            order: p + 2,
            variance_bandwidth: pilot,
            bias_order: p + 3,
            bias_bandwidth: global,
            bias_kernel: Kernel::Uniform,
        },
        &clamp,
        &mut notices,
    )?;
    let b_stage = ctx.run(
        &Stage {
            name: "b",
            nu: p + 1,
            order: p + 1,
            variance_bandwidth: pilot,
            bias_order: p + 2,
            bias_bandwidth: d_stage.bandwidth,
            bias_kernel: kernel,
        },
        &clamp,
        &mut notices,
    )?;
    let h_stage = ctx.run(
        &Stage {
            name: "h",
            nu: 0,
            order: p,
            variance_bandwidth: pilot,
            bias_order: p + 1,
            bias_bandwidth: b_stage.bandwidth,
            bias_kernel: kernel,
        },
        &clamp,
        &mut notices,
    )?;

    let h_mse = h_stage.bandwidth;
    let (h, cer) = if rule.is_cer() {
        let f = cer_factor(n, p);
        let h = clamp.apply(h_mse * f, p + 2, "CER h", &mut notices)?;
        notices.push(format!("CER shrinkage n^(-p/((3+2p)(3+p))) = {f:.6} applied to h only"));
        (h, Some(f))
    } else {
        (h_mse, None)
    };
    let b = if config.force_b_equals_h { h } else { b_stage.bandwidth };

    Ok(BandwidthSelection {
        h,
        b,
        rule,
        pilot: PilotTrace {
            pilot_constant: config.pilot_constant,
            sigma_x,
            v: pilot,
            stages: alloc::vec![d_stage, b_stage, h_stage],
            pilot_gamma,
            h_mse,
            cer_factor: cer,
            notices,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn closed_form() {
        let h = mse_bandwidth(0.5, 2.0, 500, 1).unwrap();
        assert!((h - 0.004f64.powf(0.2)).abs() < 1e-12);
        assert!((h - 0.331445).abs() < 1e-6);
    }

    #[test]
    fn homogeneity_and_rate() {
        let h1 = mse_bandwidth(0.5, 2.0, 500, 1).unwrap();
        let h2 = mse_bandwidth(1.0, 2.0, 500, 1).unwrap();
        assert!((h2 / h1 - 2f64.powf(-0.4)).abs() < 1e-12);
        let h16 = mse_bandwidth(0.5, 2.0, 8000, 1).unwrap();
        assert!((h16 / h1 - 16f64.powf(-0.2)).abs() < 1e-12);
        // sign of B is irrelevant
        assert_eq!(mse_bandwidth(-0.5, 2.0, 500, 1).unwrap(), h1);
        // p = 2 rate n^{-1/7}
        let a = mse_bandwidth(0.5, 2.0, 100, 2).unwrap();
        let b = mse_bandwidth(0.5, 2.0, 12800, 2).unwrap();
        assert!((b / a - 128f64.powf(-1.0 / 7.0)).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_bias_and_variance() {
        let base = mse_bandwidth(0.5, 2.0, 500, 1).unwrap();
        assert!(mse_bandwidth(0.6, 2.0, 500, 1).unwrap() < base);
        assert!(mse_bandwidth(0.5, 2.5, 500, 1).unwrap() > base);
    }

    #[test]
    fn zero_bias_is_an_error() {
        assert_eq!(mse_bandwidth(0.0, 2.0, 500, 1), Err(Error::NearZeroBias));
        assert!(mse_bandwidth(0.5, 0.0, 500, 1).is_err());
    }

    #[test]
    fn plugin_matches_mse_at_level() {
        let a = plugin_bandwidth(0.25, 2.0, 500, 0, 1).unwrap();
        assert_eq!(a, mse_bandwidth(0.5, 2.0, 500, 1).unwrap());
    }

    #[test]
    fn cer_examples() {
        assert!((cer_factor(1024, 1) - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((cer_bandwidth(1.0, 1024, 1) - 0.70711).abs() < 1e-5);
        for p in 0..=4 {
            assert_eq!(cer_factor(1, p), 1.0);
        }
        assert!(cer_bandwidth(0.3, 2, 1) < 0.3);
        assert!(cer_bandwidth(0.3, 500, 2) < 0.3);
    }

    #[test]
    fn min_bandwidth_midpoints() {
        let x = [-0.3, -0.2, -0.1, 0.0, 0.1, 0.25, 0.5];
        // left: between 0.2 and 0.3; right: between 0.1 and 0.25
        let m = min_bandwidth(&x, 2).unwrap();
        assert!((m - 0.25).abs() < 1e-15);
        assert!((min_bandwidth(&x, 1).unwrap() - 0.15).abs() < 1e-15);
        assert!(min_bandwidth(&x, 5).is_err());
    }

    fn curved(n: usize) -> Dataset {
        // deterministic pseudo-noise keeps the example free of RNG deps
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let e = ((i * 7919) % 101) as f64 / 101.0 - 0.5;
                0.5 + v + 3.0 * v * v + if *v >= 0.0 { 1.0 - v * v } else { 0.0 } + 0.3 * e
            })
            .collect();
        let z = vec![x.iter().enumerate().map(|(i, v)| v + (((i * 31) % 17) as f64 / 17.0)).collect()];
        Dataset::from_centered(y, x, z, None).unwrap()
    }

    #[test]
    fn select_is_deterministic_and_bounded() {
        let data = curved(600);
        let cfg = BandwidthConfig::default();
        let a = select(&data, BandwidthRule::MseCovadj, Kernel::Triangular, 1, &cfg).unwrap();
        let b = select(&data, BandwidthRule::MseCovadj, Kernel::Triangular, 1, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.h > 0.0 && a.h <= 1.0 && a.b > 0.0 && a.b <= 1.0);
        assert_eq!(a.pilot.stages.len(), 3);
        assert_eq!(a.pilot.pilot_gamma.len(), 1);
    }

    #[test]
    fn scale_equivariance() {
        let data = curved(500);
        let cfg = BandwidthConfig::default();
        for rule in [BandwidthRule::MseStandard, BandwidthRule::MseCovadj, BandwidthRule::CerCovadj] {
            let a = select(&data, rule, Kernel::Triangular, 1, &cfg).unwrap();
            let s = select(&data.with_scaled_score(2.0), rule, Kernel::Triangular, 1, &cfg).unwrap();
            assert!((s.h / a.h - 2.0).abs() < 1e-8, "{rule}: {} vs {}", s.h, a.h);
            assert!((s.b / a.b - 2.0).abs() < 1e-8, "{rule}: {} vs {}", s.b, a.b);
        }
    }

    #[test]
    fn cer_rule_shrinks_h() {
        let data = curved(500);
        let cfg = BandwidthConfig::default();
        let mse = select(&data, BandwidthRule::MseStandard, Kernel::Triangular, 1, &cfg).unwrap();
        let cer = select(&data, BandwidthRule::CerStandard, Kernel::Triangular, 1, &cfg).unwrap();
        assert!((cer.h - mse.h * cer_factor(500, 1)).abs() < 1e-12);
        assert_eq!(cer.b, mse.b);
        let forced = BandwidthConfig { force_b_equals_h: true, ..cfg };
        let f = select(&data, BandwidthRule::CerStandard, Kernel::Triangular, 1, &forced).unwrap();
        assert_eq!(f.b, f.h);
    }

    #[test]
    fn regularization_modes() {
        let data = curved(600);
        let always = BandwidthConfig::default();
        let near_zero = BandwidthConfig { regularization: Regularization::NearZero, ..always };
        let a = select(&data, BandwidthRule::MseStandard, Kernel::Triangular, 1, &always).unwrap();
        let z = select(&data, BandwidthRule::MseStandard, Kernel::Triangular, 1, &near_zero).unwrap();
        assert!(a.pilot.stages.iter().all(|s| s.regularized));
        assert!(z.pilot.stages.iter().all(|s| !s.regularized));
        // the added variance only enlarges the denominator at the final stage
        let (sa, sz) = (&a.pilot.stages[2], &z.pilot.stages[2]);
        assert!(sa.b_sq >= sz.b_sq || sa.bias_bandwidth != sz.bias_bandwidth);
        assert_eq!("near-zero".parse::<Regularization>().unwrap(), Regularization::NearZero);
        assert_eq!(Regularization::Always.to_string(), "always");
    }

    #[test]
    fn manual_defaults_b_to_h() {
        let m = BandwidthSelection::manual(0.4, None).unwrap();
        assert_eq!((m.h, m.b, m.rule), (0.4, 0.4, BandwidthRule::Manual));
        assert!(BandwidthSelection::manual(-1.0, None).is_err());
    }
}

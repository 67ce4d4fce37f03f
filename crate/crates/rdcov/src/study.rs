//! Monte Carlo studies.
//!
//! Replications are independent and keyed by index, so they are computed in
//! parallel and then reduced sequentially in replication order; reports are
//! bit-identical for any number of workers.

use std::fmt::Write as _;

use rayon::prelude::*;
use rdcov_core::bandwidth::{self, BandwidthConfig, BandwidthRule};
use rdcov_core::inference::BiasCorrectedFit;
use rdcov_core::{estimate, EstimatorKind, FitSide, Kernel, LocalFitSpec, VarianceOptions};
use serde::{Deserialize, Serialize};

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BandwidthChoice {
    /// Data-driven selection for each method, MSE- or CER-optimal.
    Selected { cer: bool },
    Fixed { h: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n: usize,
    pub reps: usize,
    /// Estimators to compare on the same draws (standard and/or covadj).
    pub methods: Vec<EstimatorKind>,
    pub kernel: Kernel,
    pub p: usize,
    pub level: f64,
    pub bandwidth: BandwidthChoice,
    pub bandwidth_config: BandwidthConfig,
    pub variance: VarianceOptions,
}

impl StudyConfig {
    pub fn new(n: usize, reps: usize) -> Self {
        Self {
            n,
            reps,
            methods: vec![EstimatorKind::Standard, EstimatorKind::CovAdj],
            kernel: Kernel::Triangular,
            p: 1,
            level: 0.95,
            bandwidth: BandwidthChoice::Selected { cer: false },
            bandwidth_config: BandwidthConfig::default(),
            variance: VarianceOptions::default(),
        }
    }
}

/// One method on one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub tau: f64,
    pub tau_bc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: EstimatorKind,
    pub successes: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Share of robust intervals containing the true effect.
    pub coverage: f64,
    pub mean_ci_length: f64,
    pub mean_h: f64,
    pub median_h: f64,
    pub mean_b: f64,
    pub median_b: f64,
    /// First few failure messages, for diagnosis.
    pub failure_examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub dgp: String,
    pub seed: u64,
    pub n: usize,
    pub reps: usize,
    pub tau: f64,
    pub level: f64,
    pub kernel: Kernel,
    pub p: usize,
    pub bandwidth: BandwidthChoice,
    pub variance: VarianceOptions,
    pub methods: Vec<MethodSummary>,
}

impl StudyReport {
    pub fn method(&self, kind: EstimatorKind) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == kind)
    }

    /// `100 (L_adj / L_std - 1)` for the average robust CI length.
    pub fn ci_length_change_pct(&self) -> Option<f64> {
        let s = self.method(EstimatorKind::Standard)?;
        let a = self.method(EstimatorKind::CovAdj)?;
        Some(100.0 * (a.mean_ci_length / s.mean_ci_length - 1.0))
    }

    /// `MSE_adj / MSE_std`.
    pub fn mse_ratio(&self) -> Option<f64> {
        let s = self.method(EstimatorKind::Standard)?;
        let a = self.method(EstimatorKind::CovAdj)?;
        Some(a.mse / s.mse)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "DGP {} (seed {}), n = {}, reps = {}, tau = {:.6}", self.dgp, self.seed, self.n, self.reps, self.tau);
        let _ = writeln!(
            out,
            "{:<10} {:>10} {:>10} {:>10} {:>10} {:>9} {:>10} {:>9} {:>9}",
            "method", "bias", "sd", "rmse", "coverage", "CI len", "median h", "median b", "failures"
        );
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<10} {:>10.5} {:>10.5} {:>10.5} {:>10.4} {:>9.5} {:>10.5} {:>9.5} {:>9}",
                m.method.name(),
                m.bias,
                m.variance.sqrt(),
                m.rmse,
                m.coverage,
                m.mean_ci_length,
                m.median_h,
                m.median_b,
                m.failures
            );
        }
        if let Some(change) = self.ci_length_change_pct() {
            let _ = writeln!(out, "CI length change (%) covadj vs standard: {change:.2}");
        }
        if let Some(ratio) = self.mse_ratio() {
            let _ = writeln!(out, "MSE ratio covadj / standard: {ratio:.4}");
        }
        out
    }
}

/// Runs `f` on a pool with `workers` threads, or the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be at least 1".into())),
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn one_method(
    data: &rdcov_core::Dataset,
    kind: EstimatorKind,
    config: &StudyConfig,
) -> rdcov_core::Result<Draw> {
    let (h, b) = match config.bandwidth {
        BandwidthChoice::Fixed { h, b } => (h, b),
        BandwidthChoice::Selected { cer } => {
            let rule = BandwidthRule::for_kind(kind, cer)?;
            let sel = bandwidth::select(data, rule, config.kernel, config.p, &config.bandwidth_config)?;
            (sel.h, sel.b)
        }
    };
    let spec = LocalFitSpec::new(config.kernel, config.p, h, FitSide::Pooled)?;
    let fit = BiasCorrectedFit::new(data, kind, spec, b)?;
    let r = fit.inference(data, &config.variance, config.level, 0.0)?;
    Ok(Draw { tau: r.tau, tau_bc: r.tau_bc, ci_low: r.ci_low, ci_high: r.ci_high, h, b })
}

/// Per-replication draws for every method, in replication order.
pub fn run_draws(
    dgp: &DgpSpec,
    config: &StudyConfig,
    workers: Option<usize>,
) -> Result<Vec<Vec<std::result::Result<Draw, String>>>> {
    if config.reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if config.methods.is_empty() {
        return Err(Error::Config("no methods to compare".into()));
    }
    for kind in &config.methods {
        if !matches!(kind, EstimatorKind::Standard | EstimatorKind::CovAdj) {
            return Err(Error::Config(format!("studies support standard and covadj, not {kind}")));
        }
    }
    dgp.validate()?;
    // surface configuration errors once rather than per replication
    dgp.draw(1, 0)?;
    with_workers(workers, || {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|rep| match dgp.draw(config.n, rep) {
                Ok(data) => config.methods.iter().map(|&k| one_method(&data, k, config).map_err(|e| e.to_string())).collect(),
                Err(e) => config.methods.iter().map(|_| Err(e.to_string())).collect(),
            })
            .collect()
    })
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

fn summarize(kind: EstimatorKind, draws: &[&std::result::Result<Draw, String>], tau: f64) -> MethodSummary {
    let ok: Vec<Draw> = draws.iter().filter_map(|d| d.as_ref().ok().copied()).collect();
    let failure_examples: Vec<String> = draws.iter().filter_map(|d| d.as_ref().err().cloned()).take(3).collect();
    let s = ok.len();
    let failures = draws.len() - s;
    let nf = s as f64;
    let mean = |f: &dyn Fn(&Draw) -> f64| ok.iter().map(f).sum::<f64>() / nf;
    let mean_estimate = mean(&|d| d.tau);
    let variance = if s > 1 {
        ok.iter().map(|d| (d.tau - mean_estimate).powi(2)).sum::<f64>() / (nf - 1.0)
    } else {
        f64::NAN
    };
    let mse = mean(&|d| (d.tau - tau).powi(2));
    let coverage = ok.iter().filter(|d| d.ci_low <= tau && tau <= d.ci_high).count() as f64 / nf;
    let mut hs: Vec<f64> = ok.iter().map(|d| d.h).collect();
    let mut bs: Vec<f64> = ok.iter().map(|d| d.b).collect();
    MethodSummary {
        method: kind,
        successes: s,
        failures,
        failure_rate: failures as f64 / draws.len() as f64,
        mean_estimate,
        bias: mean_estimate - tau,
        variance,
        mse,
        rmse: mse.sqrt(),
        coverage,
        mean_ci_length: mean(&|d| d.ci_high - d.ci_low),
        mean_h: mean(&|d| d.h),
        median_h: median(&mut hs),
        mean_b: mean(&|d| d.b),
        median_b: median(&mut bs),
        failure_examples,
    }
}

/// Runs a study: bias, variance, MSE, coverage and interval length for each
/// method, computed on the same draws.
pub fn run_study(dgp: &DgpSpec, config: &StudyConfig, workers: Option<usize>) -> Result<StudyReport> {
    let draws = run_draws(dgp, config, workers)?;
    let tau = dgp.tau();
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(m, &kind)| {
            let column: Vec<_> = draws.iter().map(|rep| &rep[m]).collect();
            summarize(kind, &column, tau)
        })
        .collect();
    Ok(StudyReport {
        dgp: dgp.name.clone(),
        seed: dgp.seed,
        n: config.n,
        reps: config.reps,
        tau,
        level: config.level,
        kernel: config.kernel,
        p: config.p,
        bandwidth: config.bandwidth,
        variance: config.variance,
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlimRow {
    pub kind: EstimatorKind,
    pub n: usize,
    pub h: f64,
    pub reps: usize,
    pub failures: usize,
    pub mean: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    /// Probability limit implied by the population objects of the design.
    pub limit: f64,
    /// `(mean - limit) / mc_se`.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlimReport {
    pub dgp: String,
    pub h_constant: f64,
    pub rows: Vec<PlimRow>,
}

impl PlimReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>8} {:>9} {:>12} {:>12} {:>10} {:>8}", "estimator", "n", "h", "mean", "limit", "mc se", "z");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>8} {:>9.5} {:>12.6} {:>12.6} {:>10.6} {:>8.2}",
                r.kind.name(),
                r.n,
                r.h,
                r.mean,
                r.limit,
                r.mc_se,
                r.z
            );
        }
        out
    }
}

/// Averages each estimator over `reps` draws at every `n` in `n_grid`, with
/// a triangular-kernel local linear fit at `h = h_constant n^{-1/5}`, and
/// compares the average with the estimator's probability limit.
pub fn plim_check(
    dgp: &DgpSpec,
    kinds: &[EstimatorKind],
    n_grid: &[usize],
    reps: usize,
    h_constant: f64,
    workers: Option<usize>,
) -> Result<PlimReport> {
    if reps < 2 {
        return Err(Error::Config("plim_check needs at least two replications".into()));
    }
    let mut rows = Vec::new();
    for &n in n_grid {
        let h = h_constant * (n as f64).powf(-0.2);
        let spec = LocalFitSpec::new(Kernel::Triangular, 1, h, FitSide::Pooled)?;
        let per_rep: Vec<Vec<Option<f64>>> = with_workers(workers, || {
            (0..reps as u64)
                .into_par_iter()
                .map(|rep| match dgp.draw(n, rep) {
                    Ok(data) => kinds.iter().map(|&k| estimate(&data, k, spec).ok().map(|e| e.tau)).collect(),
                    Err(_) => vec![None; kinds.len()],
                })
                .collect()
        })?;
        for (j, &kind) in kinds.iter().enumerate() {
            let vals: Vec<f64> = per_rep.iter().filter_map(|r| r[j]).collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let mc_se = (var / m).sqrt();
            let limit = dgp.probability_limit(kind);
            rows.push(PlimRow {
                kind,
                n,
                h,
                reps,
                failures: reps - vals.len(),
                mean,
                mc_se,
                limit,
                z: (mean - limit) / mc_se,
            });
        }
    }
    Ok(PlimReport { dgp: dgp.name.clone(), h_constant, rows })
}

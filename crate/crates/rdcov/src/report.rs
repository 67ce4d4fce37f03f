//! Analyses behind the `estimate`, `bandwidth`, `placebo` and `validate`
//! subcommands, and their renderings.
//!
//! Every report is a plain serializable struct; the text table and CSV are
//! formatted from the same values that go into the JSON.

use std::fmt::Write as _;

use rdcov_core::bandwidth::{self, BandwidthConfig, BandwidthRule, BandwidthSelection};
use rdcov_core::{
    estimate, BiasCorrectedFit, Dataset, DiagnosticsReport, EstimatorKind, FitSide, InferenceResult, Kernel,
    LocalFitSpec, PlaceboRow, VarianceOptions,
};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::LoadSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// How bandwidths are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthMode {
    /// Data-driven; `cer` selects coverage-error-optimal instead of MSE.
    Select { cer: bool },
    /// User-supplied; `b` defaults to `h`.
    Manual { h: f64, b: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub kernel: Kernel,
    pub p: usize,
    pub level: f64,
    pub bandwidth: BandwidthMode,
    pub bandwidth_config: BandwidthConfig,
    pub variance: VarianceOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            kernel: Kernel::Triangular,
            p: 1,
            level: 0.95,
            bandwidth: BandwidthMode::Select { cer: false },
            bandwidth_config: BandwidthConfig::default(),
            variance: VarianceOptions::default(),
        }
    }
}

impl AnalysisOptions {
    fn selection(&self, data: &Dataset, kind: EstimatorKind) -> Result<BandwidthSelection> {
        match self.bandwidth {
            BandwidthMode::Manual { h, b } => Ok(BandwidthSelection::manual(h, b)?),
            BandwidthMode::Select { cer } => {
                let rule = BandwidthRule::for_kind(kind, cer)?;
                Ok(bandwidth::select(data, rule, self.kernel, self.p, &self.bandwidth_config)?)
            }
        }
    }

    fn spec(&self, h: f64) -> Result<LocalFitSpec> {
        Ok(LocalFitSpec::new(self.kernel, self.p, h, FitSide::Pooled)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSummary {
    pub n: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub cutoff: f64,
    pub covariates: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<LoadSummary>,
}

impl DataSummary {
    pub fn new(data: &Dataset, rows: Option<LoadSummary>) -> Self {
        Self {
            n: data.n(),
            n_left: data.n_left(),
            n_right: data.n_right(),
            cutoff: data.cutoff(),
            covariates: data.covariate_names().to_vec(),
            rows,
        }
    }
}

/// Robust bias-corrected inference in one column and one `b` choice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustBlock {
    pub b: f64,
    pub tau_bc: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_length: f64,
    /// Relative to the first column of the same block; `None` there.
    pub ci_length_change_pct: Option<f64>,
    pub p_value: f64,
}

impl RobustBlock {
    fn new(r: &InferenceResult) -> Self {
        Self {
            b: r.b,
            tau_bc: r.tau_bc,
            se: r.se,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            ci_length: r.ci_length(),
            ci_length_change_pct: None,
            p_value: r.p_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateColumn {
    pub label: String,
    pub estimator: EstimatorKind,
    /// Rule that produced `h` and `b`.
    pub bandwidth_rule: BandwidthRule,
    pub point_estimate: f64,
    pub h: f64,
    /// Inference with a separately selected (or supplied) `b`.
    pub robust: RobustBlock,
    /// Inference with `b = h`.
    pub robust_b_equals_h: RobustBlock,
    /// Observations with positive kernel weight at `h`.
    pub n_left: usize,
    pub n_right: usize,
}

/// Point estimate of a non-default estimator, reported for comparison only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtraEstimate {
    pub estimator: EstimatorKind,
    pub point_estimate: f64,
    pub h: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub data: DataSummary,
    pub kernel: Kernel,
    pub p: usize,
    pub level: f64,
    pub variance: VarianceOptions,
    pub columns: Vec<EstimateColumn>,
    pub extra: Vec<ExtraEstimate>,
    pub notices: Vec<String>,
}

pub const DIAGNOSTIC_NOTE: &str = "diagnostic — not recommended";

fn column(
    data: &Dataset,
    opts: &AnalysisOptions,
    label: &str,
    kind: EstimatorKind,
    sel: &BandwidthSelection,
    notices: &mut Vec<String>,
) -> Result<EstimateColumn> {
    let spec = opts.spec(sel.h)?;
    let fit = BiasCorrectedFit::new(data, kind, spec, sel.b)?;
    let r = fit.inference(data, &opts.variance, opts.level, 0.0)?;
    let same = if sel.b == sel.h {
        r.clone()
    } else {
        BiasCorrectedFit::new(data, kind, spec, sel.h)?.inference(data, &opts.variance, opts.level, 0.0)?
    };
    for w in &fit.warnings {
        notices.push(format!("{label}: {w}"));
    }
    if let Some(n) = &fit.estimate.notice {
        notices.push(format!("{label}: {n}"));
    }
    Ok(EstimateColumn {
        label: label.to_string(),
        estimator: kind,
        bandwidth_rule: sel.rule,
        point_estimate: r.tau,
        h: sel.h,
        robust: RobustBlock::new(&r),
        robust_b_equals_h: RobustBlock::new(&same),
        n_left: r.effective_n.0,
        n_right: r.effective_n.1,
    })
}

/// The headline analysis: the unadjusted estimator as benchmark and the
/// covariate-adjusted estimator at the benchmark bandwidths and at its own
/// optimal bandwidths, each with robust bias-corrected intervals.
///
/// `extra` requests point estimates of further estimators at the benchmark
/// bandwidth.
pub fn estimate_report(
    data: &Dataset,
    opts: &AnalysisOptions,
    extra: &[EstimatorKind],
    rows: Option<LoadSummary>,
) -> Result<EstimateReport> {
    let mut notices = Vec::new();
    let std_sel = opts.selection(data, EstimatorKind::Standard)?;
    notices.extend(std_sel.pilot.notices.iter().map(|n| format!("bandwidth ({}): {n}", std_sel.rule)));

    let mut columns = vec![column(data, opts, "Standard", EstimatorKind::Standard, &std_sel, &mut notices)?];
    if data.d() == 0 {
        notices.push("no covariates supplied: the covariate-adjusted estimator equals the standard one; only the standard column is reported".into());
    } else {
        columns.push(column(data, opts, "Cov-adjusted", EstimatorKind::CovAdj, &std_sel, &mut notices)?);
        if let BandwidthMode::Select { .. } = opts.bandwidth {
            let adj_sel = opts.selection(data, EstimatorKind::CovAdj)?;
            notices.extend(adj_sel.pilot.notices.iter().map(|n| format!("bandwidth ({}): {n}", adj_sel.rule)));
            columns.push(column(data, opts, "Cov-adjusted", EstimatorKind::CovAdj, &adj_sel, &mut notices)?);
        }
    }
    let (base, base_eq) = (columns[0].robust.ci_length, columns[0].robust_b_equals_h.ci_length);
    for c in columns.iter_mut().skip(1) {
        c.robust.ci_length_change_pct = Some(100.0 * (c.robust.ci_length / base - 1.0));
        c.robust_b_equals_h.ci_length_change_pct = Some(100.0 * (c.robust_b_equals_h.ci_length / base_eq - 1.0));
    }

    let mut extras = Vec::new();
    for &kind in extra {
        if matches!(kind, EstimatorKind::Standard | EstimatorKind::CovAdj) {
            continue;
        }
        if data.d() == 0 {
            return Err(Error::Config(format!("estimator {kind} needs covariates")));
        }
        let e = estimate(data, kind, opts.spec(std_sel.h)?)?;
        extras.push(ExtraEstimate {
            estimator: kind,
            point_estimate: e.tau,
            h: std_sel.h,
            note: if kind.is_diagnostic() { DIAGNOSTIC_NOTE.into() } else { "point estimate only".into() },
        });
    }

    Ok(EstimateReport {
        data: DataSummary::new(data, rows),
        kernel: opts.kernel,
        p: opts.p,
        level: opts.level,
        variance: opts.variance,
        columns,
        extra: extras,
        notices,
    })
}

fn pct(level: f64) -> String {
    format!("{}%", 100.0 * level)
}

fn ci(b: &RobustBlock) -> String {
    format!("[{:.3}, {:.3}]", b.ci_low, b.ci_high)
}

fn change(b: &RobustBlock) -> String {
    b.ci_length_change_pct.map_or_else(|| "—".into(), |v| format!("{v:.1}"))
}

/// Writes rows of cells with the first column left-aligned and the rest
/// right-aligned.
fn aligned(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..ncol).map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            let pad = widths[j] - cell.chars().count();
            if j == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl EstimateReport {
    pub fn to_table(&self) -> String {
        let cols = &self.columns;
        let mut rows: Vec<Vec<String>> = Vec::new();
        let row = |label: &str, f: &dyn Fn(&EstimateColumn) -> String| {
            let mut r = vec![label.to_string()];
            r.extend(cols.iter().map(f));
            r
        };
        rows.push(row("", &|c| c.label.clone()));
        rows.push(row("Bandwidth rule", &|c| c.bandwidth_rule.to_string()));
        rows.push(row("Point estimate", &|c| format!("{:.3}", c.point_estimate)));
        rows.push(vec!["h ≠ b".into()]);
        let lvl = pct(self.level);
        rows.push(row(&format!("  Robust {lvl} CI"), &|c| ci(&c.robust)));
        rows.push(row("  CI length change (%)", &|c| change(&c.robust)));
        rows.push(row("  p-value", &|c| format!("{:.3}", c.robust.p_value)));
        rows.push(vec!["h = b".into()]);
        rows.push(row(&format!("  Robust {lvl} CI"), &|c| ci(&c.robust_b_equals_h)));
        rows.push(row("  CI length change (%)", &|c| change(&c.robust_b_equals_h)));
        rows.push(row("  p-value", &|c| format!("{:.3}", c.robust_b_equals_h.p_value)));
        rows.push(row("Bandwidths h / b", &|c| format!("{:.3} / {:.3}", c.h, c.robust.b)));
        rows.push(row("Observations left / right", &|c| format!("{} / {}", c.n_left, c.n_right)));

        let mut out = format!(
            "n = {} ({} left, {} right), cutoff = {}, kernel = {}, p = {}, vce = {}\n",
            self.data.n,
            self.data.n_left,
            self.data.n_right,
            self.data.cutoff,
            self.kernel.name(),
            self.p,
            self.variance.method
        );
        if !self.data.covariates.is_empty() {
            let _ = writeln!(out, "covariates: {}", self.data.covariates.join(", "));
        }
        if let Some(r) = self.data.rows {
            if r.rows_dropped > 0 {
                let _ = writeln!(out, "rows read: {}, dropped for missing values: {}", r.rows_read, r.rows_dropped);
            }
        }
        out.push('\n');
        out.push_str(&aligned(&rows));
        if !self.extra.is_empty() {
            out.push('\n');
            let mut extra = vec![vec!["Other estimators".to_string(), "estimate".into(), "h".into(), String::new()]];
            for e in &self.extra {
                extra.push(vec![
                    format!("  {}", e.estimator),
                    format!("{:.3}", e.point_estimate),
                    format!("{:.3}", e.h),
                    format!("({})", e.note),
                ]);
            }
            out.push_str(&aligned(&extra));
        }
        for n in &self.notices {
            let _ = writeln!(out, "notice: {n}");
        }
        out
    }

    /// One CSV row per column, full precision.
    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            column: usize,
            label: &'a str,
            estimator: EstimatorKind,
            bandwidth_rule: BandwidthRule,
            point_estimate: f64,
            h: f64,
            b: f64,
            tau_bc: f64,
            se: f64,
            ci_low: f64,
            ci_high: f64,
            ci_length_change_pct: Option<f64>,
            p_value: f64,
            tau_bc_b_equals_h: f64,
            se_b_equals_h: f64,
            ci_low_b_equals_h: f64,
            ci_high_b_equals_h: f64,
            ci_length_change_pct_b_equals_h: Option<f64>,
            p_value_b_equals_h: f64,
            n_left: usize,
            n_right: usize,
        }
        let rows = self.columns.iter().enumerate().map(|(i, c)| Row {
            column: i + 1,
            label: &c.label,
            estimator: c.estimator,
            bandwidth_rule: c.bandwidth_rule,
            point_estimate: c.point_estimate,
            h: c.h,
            b: c.robust.b,
            tau_bc: c.robust.tau_bc,
            se: c.robust.se,
            ci_low: c.robust.ci_low,
            ci_high: c.robust.ci_high,
            ci_length_change_pct: c.robust.ci_length_change_pct,
            p_value: c.robust.p_value,
            tau_bc_b_equals_h: c.robust_b_equals_h.tau_bc,
            se_b_equals_h: c.robust_b_equals_h.se,
            ci_low_b_equals_h: c.robust_b_equals_h.ci_low,
            ci_high_b_equals_h: c.robust_b_equals_h.ci_high,
            ci_length_change_pct_b_equals_h: c.robust_b_equals_h.ci_length_change_pct,
            p_value_b_equals_h: c.robust_b_equals_h.p_value,
            n_left: c.n_left,
            n_right: c.n_right,
        });
        to_csv_string(rows)
    }
}

fn to_csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv output: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv output: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub data: DataSummary,
    pub kernel: Kernel,
    pub p: usize,
    pub selections: Vec<BandwidthSelection>,
}

/// Bandwidths for the standard estimator and, with covariates, the
/// covariate-adjusted one, with their pilot traces.
pub fn bandwidth_report(data: &Dataset, opts: &AnalysisOptions, rows: Option<LoadSummary>) -> Result<BandwidthReport> {
    let mut selections = vec![opts.selection(data, EstimatorKind::Standard)?];
    if data.d() > 0 && !matches!(opts.bandwidth, BandwidthMode::Manual { .. }) {
        selections.push(opts.selection(data, EstimatorKind::CovAdj)?);
    }
    Ok(BandwidthReport { data: DataSummary::new(data, rows), kernel: opts.kernel, p: opts.p, selections })
}

impl BandwidthReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for s in &self.selections {
            let _ = writeln!(out, "rule {}: h = {:.6}, b = {:.6}", s.rule, s.h, s.b);
            let t = &s.pilot;
            if s.rule == BandwidthRule::Manual {
                continue;
            }
            let _ = writeln!(out, "  pilot v = {:.6} (c0 = {:.6}, sd(x) = {:.6})", t.v, t.pilot_constant, t.sigma_x);
            if !t.pilot_gamma.is_empty() {
                let g: Vec<String> = t.pilot_gamma.iter().map(|g| format!("{g:.6}")).collect();
                let _ = writeln!(out, "  pilot gamma = [{}]", g.join(", "));
            }
            let mut rows = vec![["stage", "nu", "order", "var bw", "bias bw", "B^2", "V", "reg", "raw", "bandwidth"]
                .map(String::from)
                .to_vec()];
            for st in &t.stages {
                rows.push(vec![
                    format!("  {}", st.stage),
                    st.nu.to_string(),
                    st.order.to_string(),
                    format!("{:.6}", st.variance_bandwidth),
                    format!("{:.6}", st.bias_bandwidth),
                    format!("{:.4e}", st.b_sq),
                    format!("{:.4e}", st.v),
                    if st.regularized { "yes".into() } else { "no".into() },
                    format!("{:.6}", st.raw),
                    format!("{:.6}", st.bandwidth),
                ]);
            }
            out.push_str(&aligned(&rows));
            if let Some(f) = t.cer_factor {
                let _ = writeln!(out, "  CER factor {:.6} applied to h_mse = {:.6}", f, t.h_mse);
            }
            for n in &t.notices {
                let _ = writeln!(out, "  notice: {n}");
            }
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row {
            rule: BandwidthRule,
            h: f64,
            b: f64,
            pilot: f64,
            h_mse: f64,
            cer_factor: Option<f64>,
        }
        to_csv_string(self.selections.iter().map(|s| Row {
            rule: s.rule,
            h: s.h,
            b: s.b,
            pilot: s.pilot.v,
            h_mse: s.pilot.h_mse,
            cer_factor: s.pilot.cer_factor,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlaceboReport {
    pub data: DataSummary,
    pub level: f64,
    pub rows: Vec<PlaceboRow>,
}

/// Balance tests: the unadjusted robust pipeline with each covariate as the
/// outcome, at bandwidths selected for that covariate.
pub fn placebo_report(data: &Dataset, opts: &AnalysisOptions, rows: Option<LoadSummary>) -> Result<PlaceboReport> {
    if data.d() == 0 {
        return Err(Error::Config("placebo tests need at least one covariate (--covs)".into()));
    }
    let mut specs = Vec::with_capacity(data.d());
    for k in 0..data.d() {
        let as_outcome = data.with_outcome(data.covariate(k).to_vec())?.without_covariates();
        let sel = opts.selection(&as_outcome, EstimatorKind::Standard)?;
        specs.push((opts.spec(sel.h)?, sel.b));
    }
    let out = rdcov_core::inference::placebo_tests(data, &specs, &opts.variance, opts.level)?;
    Ok(PlaceboReport { data: DataSummary::new(data, rows), level: opts.level, rows: out })
}

impl PlaceboReport {
    pub fn to_table(&self) -> String {
        let lvl = pct(self.level);
        let mut rows = vec![vec![
            "covariate".to_string(),
            "estimate".into(),
            format!("robust {lvl} CI"),
            "p-value".into(),
            "h".into(),
            "b".into(),
        ]];
        for r in &self.rows {
            rows.push(vec![
                r.covariate.clone(),
                format!("{:.4}", r.tau_z),
                format!("[{:.4}, {:.4}]", r.ci_low, r.ci_high),
                format!("{:.4}", r.p_value),
                format!("{:.4}", r.h),
                format!("{:.4}", r.b),
            ]);
        }
        aligned(&rows)
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv_string(&self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<LoadSummary>,
    pub covariates: Vec<String>,
    pub diagnostics: DiagnosticsReport,
}

pub fn validate_report(data: &Dataset, rows: Option<LoadSummary>) -> ValidateReport {
    ValidateReport { rows, covariates: data.covariate_names().to_vec(), diagnostics: rdcov_core::validate(data) }
}

impl ValidateReport {
    pub fn to_table(&self) -> String {
        let d = &self.diagnostics;
        let mut out = String::new();
        if let Some(r) = self.rows {
            let _ = writeln!(out, "rows read: {}, dropped: {}", r.rows_read, r.rows_dropped);
        }
        let _ = writeln!(out, "n = {} ({} left, {} right), d = {}", d.n, d.n_left, d.n_right, d.d);
        let _ = writeln!(out, "support of normalized score: [{}, {}]", d.support.0, d.support.1);
        let _ = writeln!(out, "covariate rank: {} of {}", d.covariate_rank, d.d);
        let _ = writeln!(out, "innermost decile left / right: {} / {}", d.innermost_decile.0, d.innermost_decile.1);
        if d.warnings.is_empty() {
            out.push_str("no warnings\n");
        }
        for w in &d.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Row<'a> {
            n: usize,
            n_left: usize,
            n_right: usize,
            d: usize,
            covariate_rank: usize,
            warnings: &'a str,
        }
        let d = &self.diagnostics;
        let warnings = d.warnings.join("; ");
        to_csv_string([Row {
            n: d.n,
            n_left: d.n_left,
            n_right: d.n_right,
            d: d.d,
            covariate_rank: d.covariate_rank,
            warnings: &warnings,
        }])
    }
}

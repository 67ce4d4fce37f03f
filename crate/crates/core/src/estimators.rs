//! Sharp RD point estimators with and without covariate adjustment.
//!
//! Every estimator is the coefficient on `T` in one joint weighted least
//! squares regression on `[1, T, x, Tx, ..., x^p, Tx^p]` plus a
//! kind-specific block of covariate columns:
//!
//! | kind                          | extra columns                                  |
//! |-------------------------------|------------------------------------------------|
//! | `Standard`                    | none                                           |
//! | `CovAdj`                      | `Z`                                            |
//! | `Interacted`                  | `(1-T) Z`, `T Z`                               |
//! | `DemeanedCommon`              | `Z - Z̄`                                        |
//! | `DemeanedCommonInteracted`    | `(1-T)(Z - Z̄)`, `T (Z - Z̄)`                    |
//! | `DemeanedGroupInteracted`     | `(1-T)(Z - Z̄₋)`, `T (Z - Z̄₊)`                  |
//!
//! `Z̄`, `Z̄₋` and `Z̄₊` are unweighted sample means over `|x| <= h`,
//! `-h <= x < 0` and `0 <= x <= h`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::locfit::{ExtraBlock, FitSide, JointFit, LocalFitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum EstimatorKind {
    Standard,
    /// The recommended covariate-adjusted estimator: one common covariate
    /// coefficient on both sides.
    CovAdj,
    Interacted,
    DemeanedCommon,
    DemeanedCommonInteracted,
    DemeanedGroupInteracted,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Standard,
        EstimatorKind::CovAdj,
        EstimatorKind::Interacted,
        EstimatorKind::DemeanedCommon,
        EstimatorKind::DemeanedCommonInteracted,
        EstimatorKind::DemeanedGroupInteracted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Standard => "standard",
            EstimatorKind::CovAdj => "covadj",
            EstimatorKind::Interacted => "interacted",
            EstimatorKind::DemeanedCommon => "demeaned_common",
            EstimatorKind::DemeanedCommonInteracted => "demeaned_common_interacted",
            EstimatorKind::DemeanedGroupInteracted => "demeaned_group_interacted",
        }
    }

    pub fn uses_covariates(self) -> bool {
        self != EstimatorKind::Standard
    }

    /// Demeaning-based estimators are kept for comparison only.
    pub fn is_diagnostic(self) -> bool {
        matches!(
            self,
            EstimatorKind::DemeanedCommon
                | EstimatorKind::DemeanedCommonInteracted
                | EstimatorKind::DemeanedGroupInteracted
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(alloc::format!("unknown estimator kind '{s}'")))
    }
}

/// Covariate coefficients of a fitted estimator.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Gamma {
    None,
    Common(Vec<f64>),
    PerSide { minus: Vec<f64>, plus: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PointEstimate {
    pub kind: EstimatorKind,
    pub tau: f64,
    pub gamma: Gamma,
    /// Standard RD estimate with each covariate as the outcome.
    pub tau_z: Vec<f64>,
    /// `(1, -γ')'` for the common-coefficient kinds, so that
    /// `s_hat' (τ̂, τ̂_Z')' = tau`.
    pub s_hat: Option<Vec<f64>>,
    /// All coefficients of the joint regression.
    pub coefficients: Vec<f64>,
    pub spec: LocalFitSpec,
    /// Observations with positive kernel weight (left, right).
    pub effective_n: (usize, usize),
    pub notice: Option<String>,
}

impl PointEstimate {
    /// The common covariate coefficient, empty for the standard estimator.
    pub fn common_gamma(&self) -> &[f64] {
        match &self.gamma {
            Gamma::Common(g) => g,
            _ => &[],
        }
    }
}

struct WindowMeans {
    all: Vec<f64>,
    minus: Vec<f64>,
    plus: Vec<f64>,
}

fn window_means(data: &Dataset, h: f64) -> WindowMeans {
    let d = data.d();
    let mut all = alloc::vec![0.0; d];
    let mut minus = alloc::vec![0.0; d];
    let mut plus = alloc::vec![0.0; d];
    let (mut n_all, mut n_minus, mut n_plus) = (0usize, 0usize, 0usize);
    for (i, &xi) in data.x().iter().enumerate() {
        if xi.abs() > h {
            continue;
        }
        n_all += 1;
        let side = if xi >= 0.0 {
            n_plus += 1;
            &mut plus
        } else {
            n_minus += 1;
            &mut minus
        };
        for k in 0..d {
            let z = data.covariate(k)[i];
            all[k] += z;
            side[k] += z;
        }
    }
    let scale = |v: &mut Vec<f64>, c: usize| {
        if c > 0 {
            v.iter_mut().for_each(|m| *m /= c as f64);
        }
    };
    scale(&mut all, n_all);
    scale(&mut minus, n_minus);
    scale(&mut plus, n_plus);
    WindowMeans { all, minus, plus }
}

fn side_masked(data: &Dataset, shift: &[f64], treated: bool) -> Vec<Vec<f64>> {
    (0..data.d())
        .map(|k| {
            data.covariate(k)
                .iter()
                .zip(data.x())
                .map(|(&z, &x)| if (x >= 0.0) == treated { z - shift[k] } else { 0.0 })
                .collect()
        })
        .collect()
}

fn shifted(data: &Dataset, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..data.d())
        .map(|k| data.covariate(k).iter().map(|&z| z - shift[k]).collect())
        .collect()
}

fn pooled(spec: LocalFitSpec) -> LocalFitSpec {
    spec.on_side(FitSide::Pooled)
}

/// Standard RD estimate with each covariate as the outcome.
pub fn covariate_rd_effects(data: &Dataset, spec: LocalFitSpec) -> Result<Vec<f64>> {
    data.require_two_sided()?;
    let fit = JointFit::new(pooled(spec), data.x(), &[])?;
    Ok(data.covariates().iter().map(|z| fit.coefficients(z)[1]).collect())
}

/// Fits the estimator of the given kind. The side of `spec` is ignored; all
/// estimators use both sides.
///
/// With no covariates, every kind reduces to the standard estimator and the
/// returned `notice` says so.
pub fn estimate(data: &Dataset, kind: EstimatorKind, spec: LocalFitSpec) -> Result<PointEstimate> {
    data.require_two_sided()?;
    let spec = pooled(spec);
    let x = data.x();
    let d = data.d();

    let (kind, notice) = if d == 0 && kind.uses_covariates() {
        (
            EstimatorKind::Standard,
            Some(alloc::format!("no covariates supplied: {kind} reduces to the standard estimator")),
        )
    } else {
        (kind, None)
    };

    let zero = alloc::vec![0.0; d];
    let means = if kind.is_diagnostic() { Some(window_means(data, spec.h)) } else { None };

    let owned: Vec<(&str, Vec<Vec<f64>>)> = match kind {
        EstimatorKind::Standard => Vec::new(),
        EstimatorKind::CovAdj => Vec::new(),
        EstimatorKind::Interacted => alloc::vec![
            ("control-side covariate block", side_masked(data, &zero, false)),
            ("treated-side covariate block", side_masked(data, &zero, true)),
        ],
        EstimatorKind::DemeanedCommon => {
            let m = means.as_ref().expect("means computed for demeaned kinds");
            alloc::vec![("demeaned covariate block", shifted(data, &m.all))]
        }
        EstimatorKind::DemeanedCommonInteracted => {
            let m = means.as_ref().expect("means computed for demeaned kinds");
            alloc::vec![
                ("control-side demeaned covariate block", side_masked(data, &m.all, false)),
                ("treated-side demeaned covariate block", side_masked(data, &m.all, true)),
            ]
        }
        EstimatorKind::DemeanedGroupInteracted => {
            let m = means.as_ref().expect("means computed for demeaned kinds");
            alloc::vec![
                ("control-side demeaned covariate block", side_masked(data, &m.minus, false)),
                ("treated-side demeaned covariate block", side_masked(data, &m.plus, true)),
            ]
        }
    };
    let mut blocks: Vec<ExtraBlock<'_>> = owned.iter().map(|(label, cols)| ExtraBlock { label, columns: cols }).collect();
    if kind == EstimatorKind::CovAdj {
        blocks.push(ExtraBlock { label: "covariate block", columns: data.covariates() });
    }

    let fit = JointFit::with_blocks(spec, x, &blocks)?;
    let coefficients = fit.coefficients(data.y());
    let tau = coefficients[1];
    let base = fit.n_base();
    let gamma = match kind {
        EstimatorKind::Standard => Gamma::None,
        EstimatorKind::CovAdj | EstimatorKind::DemeanedCommon => Gamma::Common(coefficients[base..].to_vec()),
        _ => Gamma::PerSide {
            minus: coefficients[base..base + d].to_vec(),
            plus: coefficients[base + d..].to_vec(),
        },
    };
    let s_hat = match &gamma {
        Gamma::Common(g) => Some(core::iter::once(1.0).chain(g.iter().map(|v| -v)).collect()),
        _ => None,
    };

    let tau_z = if d == 0 {
        Vec::new()
    } else {
        let standard = JointFit::new(spec, x, &[])?;
        data.covariates().iter().map(|z| standard.coefficients(z)[1]).collect()
    };

    let left = fit.indices().iter().filter(|&&i| x[i] < 0.0).count();
    let effective_n = (left, fit.indices().len() - left);

    Ok(PointEstimate { kind, tau, gamma, tau_z, s_hat, coefficients, spec, effective_n, notice })
}

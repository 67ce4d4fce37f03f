//! Cutoff-normalized RD datasets and data diagnostics.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{PivotedCholesky, SymMatrix};

/// Sides with fewer observations than this trigger a warning.
pub const SMALL_SIDE_THRESHOLD: usize = 10;
/// Left/right count ratio inside the innermost decile that triggers a
/// density-gap warning.
pub const DENSITY_RATIO_THRESHOLD: f64 = 4.0;

/// Outcomes, score, covariates and optional cluster ids of a sharp RD
/// sample, with the score shifted so that the cutoff is zero.
///
/// Treatment status is derived from the score (`x >= 0` is treated) and is
/// never stored.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    covariate_names: Vec<String>,
    cluster: Option<Vec<usize>>,
    cutoff: f64,
}

impl Dataset {
    /// Builds a dataset from a raw score and a cutoff. Covariates are given
    /// column by column.
    pub fn new(
        y: Vec<f64>,
        score: Vec<f64>,
        z: Vec<Vec<f64>>,
        cluster: Option<Vec<usize>>,
        cutoff: f64,
    ) -> Result<Self> {
        if !cutoff.is_finite() {
            return Err(Error::Domain(format!("cutoff must be finite, got {cutoff}")));
        }
        let x = score.into_iter().map(|s| s - cutoff).collect();
        Self::build(y, x, z, cluster, cutoff)
    }

    /// Builds a dataset whose score is already centered at the cutoff.
    pub fn from_centered(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>, cluster: Option<Vec<usize>>) -> Result<Self> {
        Self::build(y, x, z, cluster, 0.0)
    }

    fn build(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>, cluster: Option<Vec<usize>>, cutoff: f64) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::Empty);
        }
        check_len(n, x.len())?;
        for col in &z {
            check_len(n, col.len())?;
        }
        if let Some(c) = &cluster {
            check_len(n, c.len())?;
        }
        let all_finite = y.iter().chain(x.iter()).chain(z.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Domain("dataset contains non-finite values".into()));
        }
        let covariate_names = (1..=z.len()).map(|k| format!("z{k}")).collect();
        Ok(Self { y, x, z, covariate_names, cluster, cutoff })
    }

    /// Replaces the default covariate names (`z1`, `z2`, ...).
    pub fn with_covariate_names(mut self, names: Vec<String>) -> Result<Self> {
        check_len(self.z.len(), names.len())?;
        self.covariate_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates.
    pub fn d(&self) -> usize {
        self.z.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Cutoff-normalized score.
    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn covariate(&self, k: usize) -> &[f64] {
        &self.z[k]
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn cluster(&self) -> Option<&[usize]> {
        self.cluster.as_deref()
    }

    /// The cutoff in the original score units.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `T_i = 1(x_i >= 0)`.
    #[inline]
    pub fn treated(&self, i: usize) -> bool {
        self.x[i] >= 0.0
    }

    pub fn n_left(&self) -> usize {
        self.x.iter().filter(|&&v| v < 0.0).count()
    }

    pub fn n_right(&self) -> usize {
        self.n() - self.n_left()
    }

    pub fn is_one_sided(&self) -> bool {
        self.n_left() == 0 || self.n_right() == 0
    }

    pub(crate) fn require_two_sided(&self) -> Result<()> {
        if self.is_one_sided() {
            Err(Error::OneSided)
        } else {
            Ok(())
        }
    }

    /// Same score and clusters with a different outcome and no covariates.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<Self> {
        check_len(self.n(), y.len())?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("outcome contains non-finite values".into()));
        }
        Ok(Self {
            y,
            x: self.x.clone(),
            z: Vec::new(),
            covariate_names: Vec::new(),
            cluster: self.cluster.clone(),
            cutoff: self.cutoff,
        })
    }

    /// Drops all covariates.
    pub fn without_covariates(&self) -> Self {
        Self { z: Vec::new(), covariate_names: Vec::new(), ..self.clone() }
    }

    /// Multiplies the normalized score by `c`.
    pub fn with_scaled_score(&self, c: f64) -> Self {
        Self { x: self.x.iter().map(|v| v * c).collect(), ..self.clone() }
    }

    /// Score in original units, `x_i + cutoff`.
    pub fn raw_score(&self) -> Vec<f64> {
        self.x.iter().map(|v| v + self.cutoff).collect()
    }

    /// Number of distinct cluster ids, if clustered.
    pub fn cluster_count(&self) -> Option<usize> {
        self.cluster.as_ref().map(|c| {
            let mut ids = c.clone();
            ids.sort_unstable();
            ids.dedup();
            ids.len()
        })
    }
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Summary of a dataset's support and potential problems.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticsReport {
    pub n: usize,
    pub n_left: usize,
    pub n_right: usize,
    pub d: usize,
    /// Observed range of the normalized score.
    pub support: (f64, f64),
    /// Rank of the covariate matrix augmented with an intercept column,
    /// minus one (so `d` when nothing is collinear).
    pub covariate_rank: usize,
    /// Observations left and right of the cutoff among the tenth of the
    /// sample closest to it.
    pub innermost_decile: (usize, usize),
    pub one_sided: bool,
    pub warnings: Vec<String>,
}

/// Heuristic data checks. Never fails; problems are reported as warnings.
pub fn validate(data: &Dataset) -> DiagnosticsReport {
    let n = data.n();
    let n_left = data.n_left();
    let n_right = n - n_left;
    let mut warnings = Vec::new();

    let (lo, hi) = data
        .x()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    let one_sided = n_left == 0 || n_right == 0;
    if one_sided {
        warnings.push(String::from("one-sided data: all observations are on one side of the cutoff"));
    }
    for (count, label) in [(n_left, "left"), (n_right, "right")] {
        if count > 0 && count < SMALL_SIDE_THRESHOLD {
            warnings.push(format!("small side: only {count} observations {label} of cutoff"));
        }
    }

    let mut constant = Vec::new();
    for (k, col) in data.covariates().iter().enumerate() {
        if col.iter().all(|&v| v == col[0]) {
            constant.push(k);
            warnings.push(format!(
                "covariate {} is constant: covariate collinear with intercept",
                data.covariate_names()[k]
            ));
        }
    }
    let covariate_rank = intercept_augmented_rank(data.covariates(), n);
    if covariate_rank + constant.len() < data.d() {
        warnings.push(String::from("covariates are collinear: covariate matrix is rank deficient"));
    }

    let innermost_decile = innermost_counts(data.x());
    let (l, r) = innermost_decile;
    if !one_sided && l + r > 0 {
        let (small, large) = if l < r { (l, r) } else { (r, l) };
        if small == 0 || large as f64 > DENSITY_RATIO_THRESHOLD * small as f64 {
            warnings.push(format!(
                "possible density gap at cutoff: {l} left vs {r} right among the 10% of observations closest to it"
            ));
        }
    }

    DiagnosticsReport {
        n,
        n_left,
        n_right,
        d: data.d(),
        support: (lo, hi),
        covariate_rank,
        innermost_decile,
        one_sided,
        warnings,
    }
}

fn innermost_counts(x: &[f64]) -> (usize, usize) {
    let n = x.len();
    let k = n.div_ceil(10);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].abs().total_cmp(&x[b].abs()).then(a.cmp(&b)));
    let left = order[..k].iter().filter(|&&i| x[i] < 0.0).count();
    (left, k - left)
}

/// Greedy rank of `[1, Z]` excluding the intercept.
fn intercept_augmented_rank(z: &[Vec<f64>], n: usize) -> usize {
    let mut kept: Vec<&[f64]> = Vec::new();
    let ones = vec![1.0; n];
    for col in z {
        let mut trial: Vec<&[f64]> = vec![&ones];
        trial.extend(kept.iter().copied());
        trial.push(col);
        let m = trial.len();
        let mut gram = SymMatrix::zeros(m);
        let mut row = vec![0.0; m];
        for i in 0..n {
            for (j, c) in trial.iter().enumerate() {
                row[j] = c[i];
            }
            gram.add_outer_upper(1.0, &row);
        }
        gram.symmetrize();
        if PivotedCholesky::factor_grouped(&gram, &[m - 1, m]).is_ok() {
            kept.push(col);
        }
    }
    kept.len()
}

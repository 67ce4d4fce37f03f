//! Simulation designs with analytically known population quantities.
//!
//! On side `t ∈ {-, +}` of the cutoff the design is
//!
//! ```text
//! Z    = μ_{Z,t}(x) + e_z
//! Y(t) = μ_{Y,t}(x) + β_t' e_z + ε (+ u_g)
//! (e_z, ε) ~ N(0, [[Σ_t, ρ c_t], [ρ c_t', σ²_ε]])
//! ```
//!
//! with polynomial means, `ρ` the residual-correlation multiplier and `u_g`
//! an optional cluster effect. Hence `Cov(Z, Y | X = 0±) = Σ_± β_± + ρ c_±`
//! and every population object entering the probability limits of the
//! estimators is available in closed form.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rdcov_core::{Dataset, EstimatorKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Format version of DGP config files understood by this build.
pub const CONFIG_VERSION: u32 = 1;

/// Default design, Model 2 analogue.
pub const DEFAULT_CONFIG: &str = include_str!("../fixtures/dgp_v1.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ScoreDist {
    /// `2 B - 1` with `B ~ Beta(a, b)`.
    BetaShifted { a: f64, b: f64 },
    /// Uniform on `[-1, 1]`.
    Uniform,
}

impl ScoreDist {
    pub fn density_at_zero(self) -> f64 {
        match self {
            ScoreDist::Uniform => 0.5,
            ScoreDist::BetaShifted { a, b } => {
                let log_beta = libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b);
                0.5 * libm::exp((a - 1.0) * 0.5f64.ln() + (b - 1.0) * 0.5f64.ln() - log_beta)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    /// Polynomial coefficients of `μ_{Y-}(x)`, constant first.
    pub mu_minus: Vec<f64>,
    pub mu_plus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub mu_minus: Vec<f64>,
    pub mu_plus: Vec<f64>,
    /// Added to `μ_{Z+}`; a nonzero value breaks covariate balance.
    #[serde(default)]
    pub jump: f64,
    /// Loading of the covariate residual in the outcome.
    pub beta_minus: f64,
    pub beta_plus: f64,
    /// `c_±`: covariance of this covariate residual with `ε`, before `ρ`.
    pub resid_cov_minus: f64,
    pub resid_cov_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `Σ_-`, covariance of the covariate residuals left of the cutoff.
    pub z_cov_minus: Vec<Vec<f64>>,
    pub z_cov_plus: Vec<Vec<f64>>,
    /// `σ²_ε`.
    pub sigma2_eps: f64,
}

/// Cluster random effect added to the outcome; unit `i` is in cluster
/// `i mod groups`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub groups: usize,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub version: u32,
    pub name: String,
    pub seed: u64,
    pub score: ScoreDist,
    /// `ρ`: scales the residual covariances `c_±`.
    pub residual_corr_multiplier: f64,
    /// When false the covariate is independent of the outcome
    /// (`β_± = 0`, `c_± = 0`).
    pub covariate_relevant: bool,
    pub outcome: OutcomeSpec,
    pub covariates: Vec<CovariateSpec>,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub clusters: Option<ClusterSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

fn poly(coefficients: &[f64], x: f64) -> f64 {
    coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(coefficients: &[f64], k: usize) -> f64 {
    let fact: f64 = (1..=k).map(|v| v as f64).product();
    coefficients.get(k).copied().unwrap_or(0.0) * fact
}

/// Lower-triangular `L` with `L L' = a` for positive semidefinite `a`.
fn psd_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d < -tol {
            return None;
        }
        if d <= tol {
            for i in j + 1..n {
                let r = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                if r.abs() > 1e-9 * scale {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let r = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = r / djj;
        }
    }
    Some(l)
}

impl DgpSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: DgpSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("DGP specs serialize")
    }

    /// The bundled default design.
    pub fn default_design() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("bundled DGP config is valid")
    }

    /// Analogues of the four simulation models built from the default
    /// design: 1 irrelevant covariate, 2 default, 3 zero residual
    /// correlation, 4 doubled residual correlation.
    pub fn model(k: u8) -> Result<Self> {
        let mut spec = Self::default_design();
        match k {
            1 => spec.covariate_relevant = false,
            2 => {}
            3 => spec.residual_corr_multiplier = 0.0,
            4 => spec.residual_corr_multiplier *= 2.0,
            _ => return Err(Error::Config(format!("model must be 1, 2, 3 or 4, got {k}"))),
        }
        spec.name = format!("model{k}");
        spec.validate()?;
        Ok(spec)
    }

    pub fn d(&self) -> usize {
        self.covariates.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dgp(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        let d = self.d();
        for (label, m) in [("z_cov_minus", &self.noise.z_cov_minus), ("z_cov_plus", &self.noise.z_cov_plus)] {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return bad(format!("{label} must be {d}x{d}"));
            }
            for i in 0..d {
                for j in 0..d {
                    if (m[i][j] - m[j][i]).abs() > 1e-12 {
                        return bad(format!("{label} is not symmetric"));
                    }
                }
            }
        }
        if self.outcome.mu_minus.is_empty() || self.outcome.mu_plus.is_empty() {
            return bad("outcome means need at least a constant term".into());
        }
        if !(self.noise.sigma2_eps >= 0.0) {
            return bad("sigma2_eps must be nonnegative".into());
        }
        if !(self.residual_corr_multiplier.is_finite()) {
            return bad("residual_corr_multiplier must be finite".into());
        }
        if let ScoreDist::BetaShifted { a, b } = self.score {
            if !(a > 0.0 && b > 0.0) {
                return bad(format!("beta parameters must be positive, got ({a}, {b})"));
            }
        }
        if let Some(c) = self.clusters {
            if c.groups == 0 || !(c.sd >= 0.0) {
                return bad("clusters need groups >= 1 and sd >= 0".into());
            }
        }
        for side in [Side::Minus, Side::Plus] {
            if psd_cholesky(&self.joint_cov(side)).is_none() {
                return bad(format!(
                    "joint residual covariance on the {} side is not positive semidefinite",
                    if side == Side::Minus { "left" } else { "right" }
                ));
            }
        }
        Ok(())
    }

    pub fn z_cov(&self, side: Side) -> DMatrix<f64> {
        let m = match side {
            Side::Minus => &self.noise.z_cov_minus,
            Side::Plus => &self.noise.z_cov_plus,
        };
        let d = self.d();
        DMatrix::from_fn(d, d, |i, j| m[i][j])
    }

    pub fn beta(&self, side: Side) -> DVector<f64> {
        DVector::from_iterator(
            self.d(),
            self.covariates.iter().map(|c| match (self.covariate_relevant, side) {
                (false, _) => 0.0,
                (true, Side::Minus) => c.beta_minus,
                (true, Side::Plus) => c.beta_plus,
            }),
        )
    }

    /// `ρ c_±`.
    pub fn resid_cov(&self, side: Side) -> DVector<f64> {
        let rho = if self.covariate_relevant { self.residual_corr_multiplier } else { 0.0 };
        DVector::from_iterator(
            self.d(),
            self.covariates.iter().map(|c| {
                rho * match side {
                    Side::Minus => c.resid_cov_minus,
                    Side::Plus => c.resid_cov_plus,
                }
            }),
        )
    }

    fn joint_cov(&self, side: Side) -> DMatrix<f64> {
        let d = self.d();
        let s = self.z_cov(side);
        let c = self.resid_cov(side);
        DMatrix::from_fn(d + 1, d + 1, |i, j| match (i < d, j < d) {
            (true, true) => s[(i, j)],
            (true, false) => c[i],
            (false, true) => c[j],
            (false, false) => self.noise.sigma2_eps,
        })
    }

    pub fn mu_y(&self, side: Side, x: f64) -> f64 {
        match side {
            Side::Minus => poly(&self.outcome.mu_minus, x),
            Side::Plus => poly(&self.outcome.mu_plus, x),
        }
    }

    pub fn mu_z(&self, side: Side, k: usize, x: f64) -> f64 {
        let c = &self.covariates[k];
        match side {
            Side::Minus => poly(&c.mu_minus, x),
            Side::Plus => poly(&c.mu_plus, x) + c.jump,
        }
    }

    /// `k`-th derivative of `μ_{Y,±}` at the cutoff.
    pub fn mu_y_derivative(&self, side: Side, k: usize) -> f64 {
        match side {
            Side::Minus => poly_derivative(&self.outcome.mu_minus, k),
            Side::Plus => poly_derivative(&self.outcome.mu_plus, k),
        }
    }

    pub fn mu_z_derivative(&self, side: Side, cov: usize, k: usize) -> f64 {
        let c = &self.covariates[cov];
        let base = match side {
            Side::Minus => poly_derivative(&c.mu_minus, k),
            Side::Plus => poly_derivative(&c.mu_plus, k),
        };
        if k == 0 && side == Side::Plus {
            base + c.jump
        } else {
            base
        }
    }

    /// `μ_{Z±} = E[Z | X = 0±]`.
    pub fn mu_z_at_cutoff(&self, side: Side) -> DVector<f64> {
        DVector::from_iterator(self.d(), (0..self.d()).map(|k| self.mu_z(side, k, 0.0)))
    }

    pub fn tau(&self) -> f64 {
        self.mu_y(Side::Plus, 0.0) - self.mu_y(Side::Minus, 0.0)
    }

    pub fn tau_z(&self) -> Vec<f64> {
        (self.mu_z_at_cutoff(Side::Plus) - self.mu_z_at_cutoff(Side::Minus)).iter().copied().collect()
    }

    /// `Cov(Z, Y | X = 0±) = Σ_± β_± + ρ c_±`.
    pub fn cov_zy(&self, side: Side) -> DVector<f64> {
        self.z_cov(side) * self.beta(side) + self.resid_cov(side)
    }

    pub fn cluster_variance(&self) -> f64 {
        self.clusters.map_or(0.0, |c| c.sd * c.sd)
    }

    /// `Var(Y | X = 0±)`.
    pub fn sigma2_y(&self, side: Side) -> f64 {
        let b = self.beta(side);
        let s = self.z_cov(side);
        (b.transpose() * &s * &b)[(0, 0)]
            + 2.0 * b.dot(&self.resid_cov(side))
            + self.noise.sigma2_eps
            + self.cluster_variance()
    }

    /// `Var(Y - Z'γ | X = 0±)`.
    pub fn linearized_variance(&self, side: Side, gamma: &[f64]) -> f64 {
        let g = DVector::from_column_slice(gamma);
        let s = self.z_cov(side);
        self.sigma2_y(side) - 2.0 * g.dot(&self.cov_zy(side)) + (g.transpose() * &s * &g)[(0, 0)]
    }

    /// `k`-th derivative at the cutoff of `E[Y - Z'γ | X = x]` on one side.
    pub fn linearized_derivative(&self, side: Side, gamma: &[f64], k: usize) -> f64 {
        self.mu_y_derivative(side, k)
            - gamma.iter().enumerate().map(|(c, g)| g * self.mu_z_derivative(side, c, k)).sum::<f64>()
    }

    fn solve(a: DMatrix<f64>, b: DVector<f64>) -> Vec<f64> {
        if a.nrows() == 0 {
            return Vec::new();
        }
        a.lu().solve(&b).expect("covariate covariance is nonsingular").iter().copied().collect()
    }

    /// `γ_Y = (Σ_- + Σ_+)^{-1} (Cov_- + Cov_+)`.
    pub fn gamma_y(&self) -> Vec<f64> {
        Self::solve(
            self.z_cov(Side::Minus) + self.z_cov(Side::Plus),
            self.cov_zy(Side::Minus) + self.cov_zy(Side::Plus),
        )
    }

    /// `γ_{Y±} = Σ_±^{-1} Cov_±`.
    pub fn gamma_y_side(&self, side: Side) -> Vec<f64> {
        Self::solve(self.z_cov(side), self.cov_zy(side))
    }

    /// Probability limit of each estimator at the cutoff.
    pub fn probability_limit(&self, kind: EstimatorKind) -> f64 {
        let tau = self.tau();
        if self.d() == 0 {
            return tau;
        }
        let dot = |a: &DVector<f64>, b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let mp = self.mu_z_at_cutoff(Side::Plus);
        let mm = self.mu_z_at_cutoff(Side::Minus);
        let gp = self.gamma_y_side(Side::Plus);
        let gm = self.gamma_y_side(Side::Minus);
        match kind {
            EstimatorKind::Standard | EstimatorKind::DemeanedGroupInteracted => tau,
            EstimatorKind::CovAdj | EstimatorKind::DemeanedCommon => {
                tau - self.tau_z().iter().zip(self.gamma_y()).map(|(t, g)| t * g).sum::<f64>()
            }
            EstimatorKind::Interacted => tau - (dot(&mp, &gp) - dot(&mm, &gm)),
            EstimatorKind::DemeanedCommonInteracted => {
                let mean = (&mp + &mm) / 2.0;
                tau - (dot(&(&mp - &mean), &gp) - dot(&(&mm - &mean), &gm))
            }
        }
    }

    fn rng(&self, replication: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&replication.to_le_bytes());
        key[16..24].copy_from_slice(b"rdcovdgp");
        ChaCha8Rng::from_seed(key)
    }

    /// Draws replication `replication` of size `n`. Unit `i` uses its own
    /// stream of the replication's generator, so the result does not depend
    /// on how replications are scheduled.
    pub fn draw(&self, n: usize, replication: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Config("sample size must be at least 1".into()));
        }
        self.validate()?;
        let d = self.d();
        let chol = |side| psd_cholesky(&self.joint_cov(side)).expect("validated");
        let (l_minus, l_plus) = (chol(Side::Minus), chol(Side::Plus));
        let (b_minus, b_plus) = (self.beta(Side::Minus), self.beta(Side::Plus));

        let base = self.rng(replication);
        let effects: Vec<f64> = match self.clusters {
            Some(c) => (0..c.groups)
                .map(|g| {
                    let mut rng = base.clone();
                    rng.set_stream((1u64 << 63) | g as u64);
                    c.sd * rng.sample::<f64, _>(StandardNormal)
                })
                .collect(),
            None => Vec::new(),
        };
        let beta_dist = match self.score {
            ScoreDist::BetaShifted { a, b } => Some(Beta::new(a, b).map_err(|e| Error::Dgp(e.to_string()))?),
            ScoreDist::Uniform => None,
        };

        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        let mut z = vec![Vec::with_capacity(n); d];
        let mut xi = vec![0.0; d + 1];
        for i in 0..n {
            let mut rng = base.clone();
            rng.set_stream(i as u64);
            let score = match &beta_dist {
                Some(dist) => 2.0 * dist.sample(&mut rng) - 1.0,
                None => rng.random_range(-1.0..1.0),
            };
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let (side, l, b) = if score >= 0.0 { (Side::Plus, &l_plus, &b_plus) } else { (Side::Minus, &l_minus, &b_minus) };
            let noise = l * DVector::from_column_slice(&xi);
            let mut outcome = self.mu_y(side, score) + noise[d];
            for k in 0..d {
                z[k].push(self.mu_z(side, k, score) + noise[k]);
                outcome += b[k] * noise[k];
            }
            if let Some(c) = self.clusters {
                outcome += effects[i % c.groups];
            }
            x.push(score);
            y.push(outcome);
        }
        let cluster = self.clusters.map(|c| (0..n).map(|i| i % c.groups).collect());
        let names = self.covariates.iter().map(|c| c.name.clone()).collect();
        Ok(Dataset::from_centered(y, x, z, cluster)?.with_covariate_names(names)?)
    }
}

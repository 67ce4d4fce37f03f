//! Residual proxies and variance assembly for linear estimators.
//!
//! Both proxies are linear in the variable they are applied to, so applying
//! them to the linearized outcome `y - Z γ` gives exactly `s' ε̂_i` for the
//! stacked `(y, Z)` proxies with `s = (1, -γ')'`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::inference::{VarianceMethod, VarianceOptions};
use crate::kernel::Kernel;
use crate::locfit::{FitSide, LocalFitSpec, SideFit};

/// Residual proxies `(index, ε̂_i)` for one side.
pub(crate) type Proxies = Vec<(usize, f64)>;

/// Observations on `side` with `|x| <= window`.
pub(crate) fn side_members(x: &[f64], side: FitSide, window: f64) -> Vec<usize> {
    (0..x.len()).filter(|&i| side.contains(x[i]) && x[i].abs() <= window).collect()
}

/// Nearest-neighbor proxies `sqrt(J/(J+1)) (v_i - mean of J nearest v)`.
///
/// Neighbors are other members of the same set, ordered by distance in `x`
/// and then by ascending index.
pub(crate) fn nn_proxies(x: &[f64], v: &[f64], members: &[usize], neighbors: usize, side: FitSide) -> Result<Proxies> {
    if neighbors == 0 {
        return Err(Error::Domain("nearest-neighbor variance needs at least one neighbor".into()));
    }
    if members.len() < neighbors + 1 {
        return Err(Error::TooManyNeighbors {
            requested: neighbors,
            available: members.len().saturating_sub(1),
            side,
        });
    }
    let mut sorted = members.to_vec();
    sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let scale = libm::sqrt(neighbors as f64 / (neighbors as f64 + 1.0));

    let mut out = Vec::with_capacity(sorted.len());
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for (pos, &i) in sorted.iter().enumerate() {
        candidates.clear();
        let xi = x[i];
        gather(sorted[..pos].iter().rev(), x, xi, neighbors, &mut candidates);
        gather(sorted[pos + 1..].iter(), x, xi, neighbors, &mut candidates);
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mean = candidates[..neighbors].iter().map(|&(_, j)| v[j]).sum::<f64>() / neighbors as f64;
        out.push((i, scale * (v[i] - mean)));
    }
    out.sort_by_key(|&(i, _)| i);
    Ok(out)
}

// Walks outwards from `xi`, keeping ties with the J-th candidate.
fn gather<'a>(walk: impl Iterator<Item = &'a usize>, x: &[f64], xi: f64, neighbors: usize, out: &mut Vec<(f64, usize)>) {
    let mut taken = 0;
    let mut last = f64::NAN;
    for &j in walk {
        let dist = (x[j] - xi).abs();
        if taken >= neighbors && dist != last {
            break;
        }
        out.push((dist, j));
        last = dist;
        taken += 1;
    }
}

/// Plug-in residual proxies from a one-sided polynomial fit, with the HC
/// scaling implied by `method`.
pub(crate) fn plugin_proxies(
    x: &[f64],
    v: &[f64],
    members: &[usize],
    fit: &SideFit,
    method: VarianceMethod,
) -> Proxies {
    let beta = fit.scaled_coefficients(x, v);
    let n_fit = fit.indices.len();
    let k = fit.n_params();
    let hc1 = if n_fit > k { libm::sqrt(n_fit as f64 / (n_fit - k) as f64) } else { 1.0 };
    members
        .iter()
        .map(|&i| {
            let e = v[i] - fit.predict(&beta, x[i]);
            let adj = match method {
                VarianceMethod::Hc1 => e * hc1,
                VarianceMethod::Hc2 | VarianceMethod::Hc3 => {
                    let one_minus = 1.0 - fit.leverage(x, i);
                    if one_minus <= 1e-12 {
                        e
                    } else if method == VarianceMethod::Hc2 {
                        e / libm::sqrt(one_minus)
                    } else {
                        e / one_minus
                    }
                }
                _ => e,
            };
            (i, adj)
        })
        .collect()
}

/// Fit whose residuals feed the plug-in proxies.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ResidualFit {
    pub kernel: Kernel,
    pub order: usize,
    pub bandwidth: f64,
}

/// Proxies for one side according to the variance options.
pub(crate) fn side_proxies(
    x: &[f64],
    v: &[f64],
    side: FitSide,
    window: f64,
    residual_fit: ResidualFit,
    opts: &VarianceOptions,
) -> Result<Proxies> {
    let members = side_members(x, side, window);
    match opts.method {
        VarianceMethod::Nn => nn_proxies(x, v, &members, opts.nn_neighbors, side),
        method => {
            let spec = LocalFitSpec::internal(residual_fit.kernel, residual_fit.order, residual_fit.bandwidth, side)?;
            let fit = SideFit::new(spec, x)?;
            let method = if method == VarianceMethod::Cluster { VarianceMethod::Hc0 } else { method };
            Ok(plugin_proxies(x, v, &members, &fit, method))
        }
    }
}

/// `Σ_i w_i² ε̂_i²`, or `Σ_g (Σ_{i∈g} w_i ε̂_i)²` when clustered.
pub(crate) fn assemble(weights: &[f64], proxies: &Proxies, cluster: Option<&[usize]>) -> f64 {
    match cluster {
        None => proxies.iter().map(|&(i, e)| (weights[i] * e) * (weights[i] * e)).sum(),
        Some(ids) => {
            let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
            for &(i, e) in proxies {
                *sums.entry(ids[i]).or_insert(0.0) += weights[i] * e;
            }
            sums.values().map(|s| s * s).sum()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn nn_picks_closest_with_index_ties() {
        let x = [0.0, 0.1, 0.2, 0.3, 0.9];
        let v = [0.0, 1.0, 5.0, 3.0, 100.0];
        let members = [0, 1, 2, 3, 4];
        let p = nn_proxies(&x, &v, &members, 1, FitSide::Right).unwrap();
        let scale = libm::sqrt(0.5);
        // 0.1 and 0.3 are not exactly equidistant from 0.2 in binary, so
        // compare with a brute-force search
        for &(i, e) in &p {
            let mut others: Vec<(f64, usize)> =
                members.iter().filter(|&&j| j != i).map(|&j| ((x[i] - x[j]).abs(), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expected = scale * (v[i] - v[others[0].1]);
            assert!((e - expected).abs() < 1e-15, "i={i}");
        }
    }

    #[test]
    fn nn_exact_ties() {
        let x = [0.5, 0.5, 0.5, 0.5, 1.0];
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        let members = [0, 1, 2, 3, 4];
        let p = nn_proxies(&x, &v, &members, 2, FitSide::Right).unwrap();
        let scale = libm::sqrt(2.0 / 3.0);
        // unit 2 ties with 0, 1, 3 at distance 0 -> neighbors 0 and 1
        assert!((p[2].1 - scale * (3.0 - 1.5)).abs() < 1e-15);
        // unit 0 -> neighbors 1 and 2
        assert!((p[0].1 - scale * (1.0 - 2.5)).abs() < 1e-15);
        // unit 4 -> neighbors 0 and 1 among the tied block
        assert!((p[4].1 - scale * (5.0 - 1.5)).abs() < 1e-15);
    }

    #[test]
    fn nn_too_many_neighbors() {
        let x = [0.1, 0.2, 0.3];
        let err = nn_proxies(&x, &[0.0; 3], &[0, 1, 2], 3, FitSide::Right).unwrap_err();
        assert!(matches!(err, Error::TooManyNeighbors { requested: 3, available: 2, .. }));
        // J = side size - 1 works
        assert!(nn_proxies(&x, &[0.0; 3], &[0, 1, 2], 2, FitSide::Right).is_ok());
    }

    #[test]
    fn singleton_clusters_match_heteroskedastic() {
        let w = [0.5, -0.25, 0.0, 1.5];
        let proxies: Proxies = vec![(0, 1.0), (1, -2.0), (3, 0.5)];
        let ids = [10, 11, 12, 13];
        assert_eq!(assemble(&w, &proxies, None), assemble(&w, &proxies, Some(&ids)));
        let same = [0, 0, 0, 0];
        let s: f64 = 0.5 * 1.0 + -0.25 * -2.0 + 1.5 * 0.5;
        assert!((assemble(&w, &proxies, Some(&same)) - s * s).abs() < 1e-15);
    }
}

//! Posterior identification: modal factor configuration, rotation / sign /
//! permutation alignment of loading draws, posterior mean curves, and
//! covariance-derived loadings.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::gibbs::{Draw, PosteriorDraws};
use crate::linalg::{fix_sign, sym_eigen_desc, symmetrize};
use crate::model::loading_covariance;

/// Active-factor counts `(L*, K*_1, ..., K*_S)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorConfiguration {
    pub l_star: usize,
    pub k_star: Vec<usize>,
}

impl FactorConfiguration {
    pub fn total(&self) -> usize {
        self.l_star + self.k_star.iter().sum::<usize>()
    }

    /// Flat tuple `(L*, K*_1, ...)`.
    pub fn as_tuple(&self) -> Vec<usize> {
        std::iter::once(self.l_star).chain(self.k_star.iter().copied()).collect()
    }

    pub fn label(&self) -> String {
        let parts: Vec<String> = self.as_tuple().iter().map(usize::to_string).collect();
        format!("({})", parts.join(","))
    }
}

/// Configurations with their counts, most frequent first; ties by smaller
/// total dimension, then lexicographically.
pub fn configuration_histogram(configs: &[FactorConfiguration]) -> Vec<(FactorConfiguration, usize)> {
    let mut counts: HashMap<&FactorConfiguration, usize> = HashMap::new();
    for c in configs {
        *counts.entry(c).or_default() += 1;
    }
    let mut hist: Vec<(FactorConfiguration, usize)> = counts.into_iter().map(|(c, n)| (c.clone(), n)).collect();
    hist.sort_by(|(a, na), (b, nb)| {
        nb.cmp(na)
            .then(a.total().cmp(&b.total()))
            .then(a.as_tuple().cmp(&b.as_tuple()))
    });
    hist
}

/// Most frequent configuration and the indices of the draws that carry it.
pub fn modal_configuration(configs: &[FactorConfiguration]) -> Result<(FactorConfiguration, Vec<usize>)> {
    let hist = configuration_histogram(configs);
    let (mode, _) = hist
        .into_iter()
        .next()
        .ok_or_else(|| Error::EmptyDraws("no retained draws to select a configuration from".into()))?;
    let members = configs
        .iter()
        .enumerate()
        .filter(|(_, c)| **c == mode)
        .map(|(i, _)| i)
        .collect();
    Ok((mode, members))
}

/// Varimax criterion `Σ_j [mean_i x_ij^4 - (mean_i x_ij^2)^2]`.
pub fn varimax_criterion(x: &DMatrix<f64>) -> f64 {
    let p = x.nrows() as f64;
    x.column_iter()
        .map(|c| {
            let m2 = c.iter().map(|v| v * v).sum::<f64>() / p;
            let m4 = c.iter().map(|v| v.powi(4)).sum::<f64>() / p;
            m4 - m2 * m2
        })
        .sum()
}

pub const VARIMAX_TOL: f64 = 1e-8;
pub const VARIMAX_MAX_ITER: usize = 500;

/// Orthogonal `q x q` rotation maximizing the varimax criterion of
/// `loadings * Q`, by the SVD fixed-point iteration.
pub fn varimax(loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = loadings.shape();
    let mut rot = DMatrix::identity(q, q);
    if q < 2 || p == 0 {
        return rot;
    }
    let mut best = varimax_criterion(loadings);
    for _ in 0..VARIMAX_MAX_ITER {
        let z = loadings * &rot;
        let col_ss: Vec<f64> = z.column_iter().map(|c| c.norm_squared() / p as f64).collect();
        let target = DMatrix::from_fn(p, q, |i, j| z[(i, j)].powi(3) - z[(i, j)] * col_ss[j]);
        let grad = loadings.transpose() * target;
        let svd = grad.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            break;
        };
        let candidate = u * v_t;
        let value = varimax_criterion(&(loadings * &candidate));
        if value < best {
            break;
        }
        let gain = value - best;
        rot = candidate;
        best = value;
        if gain < VARIMAX_TOL {
            break;
        }
    }
    rot
}

/// Minimum-cost perfect matching on a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // Potentials formulation, 1-based with a sentinel column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if matched[j] > 0 {
            result[matched[j] - 1] = j - 1;
        }
    }
    result
}

/// Signed permutation `P` (entries in `{-1, 0, 1}`) minimizing
/// `||x P - reference||_F^2`.
pub fn signed_permutation(x: &DMatrix<f64>, reference: &DMatrix<f64>) -> DMatrix<f64> {
    let q = x.ncols();
    let mut cost = DMatrix::zeros(q, q);
    let mut sign = DMatrix::zeros(q, q);
    for j in 0..q {
        for k in 0..q {
            let plus = (x.column(j) - reference.column(k)).norm_squared();
            let minus = (x.column(j) + reference.column(k)).norm_squared();
            if minus < plus {
                cost[(j, k)] = minus;
                sign[(j, k)] = -1.0;
            } else {
                cost[(j, k)] = plus;
                sign[(j, k)] = 1.0;
            }
        }
    }
    let assignment = hungarian(&cost);
    let mut p = DMatrix::zeros(q, q);
    for (j, &k) in assignment.iter().enumerate() {
        p[(j, k)] = sign[(j, k)];
    }
    p
}

pub const RSP_TOL: f64 = 1e-6;
pub const RSP_MAX_ITER: usize = 100;

/// Output of the rotation-sign-permutation alignment.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub loadings: Vec<DMatrix<f64>>,
    /// Per draw, the transformed score matrices (one row per subject).
    pub scores: Vec<Vec<DMatrix<f64>>>,
    /// Per draw, the orthogonal `q x q` transform applied on the right.
    pub transforms: Vec<DMatrix<f64>>,
    pub reference: DMatrix<f64>,
    pub discrepancy: f64,
    pub iterations: usize,
}

/// Align loading draws (each `p x q`) and their scores.
///
/// Every draw is varimax-rotated once, then repeatedly matched to the
/// running reference by the best signed column permutation; the reference is
/// the mean of the aligned draws. Scores receive the same transform, so
/// `loadings * scores'` is unchanged for every draw.
pub fn rsp_align(loadings: &[DMatrix<f64>], scores: &[Vec<DMatrix<f64>>]) -> Result<Alignment> {
    if loadings.is_empty() {
        return Err(Error::EmptyDraws("no loading draws to align".into()));
    }
    if scores.len() != loadings.len() {
        return Err(Error::InvalidDimension("scores and loadings differ in draw count".into()));
    }
    let (p, q) = loadings[0].shape();
    for (m, s) in loadings.iter().zip(scores) {
        if m.shape() != (p, q) || s.iter().any(|x| x.ncols() != q) {
            return Err(Error::InvalidDimension("every draw must share the loading shape".into()));
        }
    }
    let rotations: Vec<DMatrix<f64>> = loadings.iter().map(varimax).collect();
    let rotated: Vec<DMatrix<f64>> = loadings.iter().zip(&rotations).map(|(m, r)| m * r).collect();

    let mut reference = rotated[0].clone();
    let mut perms: Vec<DMatrix<f64>> = vec![DMatrix::identity(q, q); loadings.len()];
    let mut previous = f64::INFINITY;
    let mut discrepancy = 0.0;
    let mut iterations = 0;
    for it in 0..RSP_MAX_ITER {
        iterations = it + 1;
        for (perm, x) in perms.iter_mut().zip(&rotated) {
            *perm = signed_permutation(x, &reference);
        }
        let mut mean = DMatrix::zeros(p, q);
        for (perm, x) in perms.iter().zip(&rotated) {
            mean += x * perm;
        }
        mean /= loadings.len() as f64;
        reference = mean;
        discrepancy = perms
            .iter()
            .zip(&rotated)
            .map(|(perm, x)| (x * perm - &reference).norm_squared())
            .sum();
        if (previous - discrepancy).abs() < RSP_TOL {
            break;
        }
        previous = discrepancy;
    }

    let transforms: Vec<DMatrix<f64>> = rotations.iter().zip(&perms).map(|(r, s)| r * s).collect();
    let aligned_loadings = loadings.iter().zip(&transforms).map(|(m, t)| m * t).collect();
    let aligned_scores = scores
        .iter()
        .zip(&transforms)
        .map(|(set, t)| set.iter().map(|s| s * t).collect())
        .collect();
    Ok(Alignment {
        loadings: aligned_loadings,
        scores: aligned_scores,
        transforms,
        reference,
        discrepancy,
        iterations,
    })
}

/// Active columns of a draw's block, i.e. indices `l` with `z_l > l`.
pub fn active_columns(z: &[usize]) -> Vec<usize> {
    z.iter().enumerate().filter(|(l, v)| **v > *l).map(|(l, _)| l).collect()
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

fn write_columns(m: &mut DMatrix<f64>, cols: &[usize], values: &DMatrix<f64>) {
    for (j, &c) in cols.iter().enumerate() {
        m.set_column(c, &values.column(j));
    }
}

/// RSP-align the active columns of every block across `draws` (which must
/// share one configuration), returning draws with aligned loadings/scores.
pub fn align_draws(draws: &[Draw]) -> Result<Vec<Draw>> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws("no draws to align".into()));
    }
    let mut out = draws.to_vec();
    let groups = draws[0].num_groups();
    // shared block
    let cols: Vec<Vec<usize>> = draws.iter().map(|d| active_columns(&d.z_shared)).collect();
    if cols.iter().any(|c| c.len() != cols[0].len()) {
        return Err(Error::InvalidDimension("draws disagree on the shared configuration".into()));
    }
    if !cols[0].is_empty() {
        let loads: Vec<_> = draws.iter().zip(&cols).map(|(d, c)| select_columns(&d.lambda, c)).collect();
        let scores: Vec<Vec<_>> = draws
            .iter()
            .zip(&cols)
            .map(|(d, c)| d.eta.iter().map(|e| select_columns(e, c)).collect())
            .collect();
        let a = rsp_align(&loads, &scores)?;
        for ((d, c), (l, sc)) in out.iter_mut().zip(&cols).zip(a.loadings.iter().zip(&a.scores)) {
            write_columns(&mut d.lambda, c, l);
            for (e, s) in d.eta.iter_mut().zip(sc) {
                write_columns(e, c, s);
            }
        }
    }
    for g in 0..groups {
        let cols: Vec<Vec<usize>> = draws.iter().map(|d| active_columns(&d.z_specific[g])).collect();
        if cols.iter().any(|c| c.len() != cols[0].len()) {
            return Err(Error::InvalidDimension(format!("draws disagree on group {g} configuration")));
        }
        if cols[0].is_empty() {
            continue;
        }
        let loads: Vec<_> = draws.iter().zip(&cols).map(|(d, c)| select_columns(&d.phi[g], c)).collect();
        let scores: Vec<Vec<_>> = draws
            .iter()
            .zip(&cols)
            .map(|(d, c)| vec![select_columns(&d.rho[g], c)])
            .collect();
        let a = rsp_align(&loads, &scores)?;
        for ((d, c), (l, sc)) in out.iter_mut().zip(&cols).zip(a.loadings.iter().zip(&a.scores)) {
            write_columns(&mut d.phi[g], c, l);
            write_columns(&mut d.rho[g], c, &sc[0]);
        }
    }
    Ok(out)
}

/// Pointwise posterior means and 95% bands of the latent curves.
#[derive(Clone, Debug)]
pub struct CurveSummary {
    /// `n_s x T` per group.
    pub mean: Vec<DMatrix<f64>>,
    pub lower: Vec<DMatrix<f64>>,
    pub upper: Vec<DMatrix<f64>>,
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn draw_curves(d: &Draw, basis: &BasisSystem, s: usize) -> DMatrix<f64> {
    let n = d.eta[s].nrows();
    let mut coef = &d.lambda * d.eta[s].transpose() + &d.phi[s] * d.rho[s].transpose();
    for i in 0..n {
        coef.column_mut(i).axpy(1.0, &d.beta[s], 1.0);
    }
    (&basis.b * coef).transpose()
}

pub fn posterior_mean_curves(draws: &[Draw], basis: &BasisSystem) -> Result<CurveSummary> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws("no draws for curve summaries".into()));
    }
    let groups = draws[0].num_groups();
    let m = draws.len();
    let mut mean = Vec::with_capacity(groups);
    let mut lower = Vec::with_capacity(groups);
    let mut upper = Vec::with_capacity(groups);
    for s in 0..groups {
        let curves: Vec<DMatrix<f64>> = draws.iter().map(|d| draw_curves(d, basis, s)).collect();
        let (n, t) = curves[0].shape();
        let mut mu = DMatrix::zeros(n, t);
        for c in &curves {
            mu += c;
        }
        mu /= m as f64;
        let mut lo = DMatrix::zeros(n, t);
        let mut hi = DMatrix::zeros(n, t);
        let mut buf = vec![0.0; m];
        for i in 0..n {
            for j in 0..t {
                for (b, c) in buf.iter_mut().zip(&curves) {
                    *b = c[(i, j)];
                }
                buf.sort_by(f64::total_cmp);
                lo[(i, j)] = quantile_sorted(&buf, 0.025);
                hi[(i, j)] = quantile_sorted(&buf, 0.975);
            }
        }
        mean.push(mu);
        lower.push(lo);
        upper.push(hi);
    }
    Ok(CurveSummary { mean, lower, upper })
}

/// Posterior-mean covariance operators on the time grid.
#[derive(Clone, Debug)]
pub struct CovarianceSummaries {
    pub sigma_lambda: DMatrix<f64>,
    pub sigma_phi: Vec<DMatrix<f64>>,
    pub sigma_f: Vec<DMatrix<f64>>,
}

pub fn covariance_summaries(draws: &[Draw], basis: &BasisSystem) -> Result<CovarianceSummaries> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws("no draws for covariance summaries".into()));
    }
    let t = basis.num_times();
    let groups = draws[0].num_groups();
    let m = draws.len() as f64;
    let mut sigma_lambda = DMatrix::zeros(t, t);
    let mut sigma_phi = vec![DMatrix::zeros(t, t); groups];
    for d in draws {
        sigma_lambda += loading_covariance(basis, &d.lambda);
        for (acc, phi) in sigma_phi.iter_mut().zip(&d.phi) {
            *acc += loading_covariance(basis, phi);
        }
    }
    let sigma_lambda = symmetrize(&(sigma_lambda / m));
    let sigma_phi: Vec<DMatrix<f64>> = sigma_phi.into_iter().map(|s| symmetrize(&(s / m))).collect();
    let sigma_f = sigma_phi.iter().map(|p| &sigma_lambda + p).collect();
    Ok(CovarianceSummaries {
        sigma_lambda,
        sigma_phi,
        sigma_f,
    })
}

/// Covariance-derived loadings in time space.
#[derive(Clone, Debug)]
pub struct IdentifiedLoadings {
    /// `T x L*`.
    pub shared: DMatrix<f64>,
    /// `T x K*_s` per group.
    pub specific: Vec<DMatrix<f64>>,
    pub sigma_lambda_hat: DMatrix<f64>,
    pub sigma_phi_hat: Vec<DMatrix<f64>>,
    pub sigma_f_hat: Vec<DMatrix<f64>>,
    /// Residual covariances `Σ̂_f,s - Λ̃Λ̃'`.
    pub sigma_res_hat: Vec<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

/// Top-`k` eigenpairs scaled to loadings `U_k D_k^{1/2}`; negative
/// eigenvalues are clipped to zero and only strictly positive ones are used.
fn leading_loadings(cov: &DMatrix<f64>, k: usize, what: &str, warnings: &mut Vec<String>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(cov);
    let scale = values.first().copied().unwrap_or(0.0).abs().max(1.0);
    let positive = values.iter().take_while(|v| **v > 1e-12 * scale).count();
    let used = if k > positive {
        let msg = format!("{what}: requested {k} components but only {positive} eigenvalues are positive");
        log::warn!("{msg}");
        warnings.push(msg);
        positive
    } else {
        k
    };
    let mut out = DMatrix::zeros(cov.nrows(), used);
    for j in 0..used {
        let mut col = vectors.column(j).clone_owned();
        fix_sign(&mut col);
        out.set_column(j, &(col * values[j].max(0.0).sqrt()));
    }
    out
}

pub fn covariance_derived_loadings(summaries: &CovarianceSummaries, config: &FactorConfiguration) -> Result<IdentifiedLoadings> {
    let t = summaries.sigma_lambda.nrows();
    if config.l_star > t || config.k_star.iter().any(|k| *k > t) {
        return Err(Error::InvalidDimension(format!("factor counts cannot exceed T={t}")));
    }
    if config.k_star.len() != summaries.sigma_f.len() {
        return Err(Error::InvalidDimension("configuration and summaries disagree on groups".into()));
    }
    let mut warnings = Vec::new();
    let shared = if config.l_star == 0 {
        DMatrix::zeros(t, 0)
    } else {
        leading_loadings(&summaries.sigma_lambda, config.l_star, "shared", &mut warnings)
    };
    let shared_cov = &shared * shared.transpose();
    let mut specific = Vec::new();
    let mut residuals = Vec::new();
    for (s, (sf, k)) in summaries.sigma_f.iter().zip(&config.k_star).enumerate() {
        let res = symmetrize(&(sf - &shared_cov));
        let phi = if *k == 0 {
            DMatrix::zeros(t, 0)
        } else {
            leading_loadings(&res, *k, &format!("group {}", s + 1), &mut warnings)
        };
        specific.push(phi);
        residuals.push(res);
    }
    Ok(IdentifiedLoadings {
        shared,
        specific,
        sigma_lambda_hat: summaries.sigma_lambda.clone(),
        sigma_phi_hat: summaries.sigma_phi.clone(),
        sigma_f_hat: summaries.sigma_f.clone(),
        sigma_res_hat: residuals,
        warnings,
    })
}

/// Everything the identification pipeline produces for one chain.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    pub configuration: FactorConfiguration,
    pub histogram: Vec<(FactorConfiguration, usize)>,
    /// Indices (into the retained draws) of the modal-configuration draws.
    pub members: Vec<usize>,
    pub curves: CurveSummary,
    pub loadings: IdentifiedLoadings,
    /// Aligned coefficient-space loadings averaged over the modal draws.
    pub mean_lambda: DMatrix<f64>,
    pub mean_phi: Vec<DMatrix<f64>>,
}

/// Modal configuration, restriction, alignment, curve and covariance
/// summaries, covariance-derived loadings.
pub fn summarize(draws: &PosteriorDraws, basis: &BasisSystem) -> Result<PosteriorSummary> {
    let (configuration, members) = modal_configuration(&draws.configs)?;
    let histogram = configuration_histogram(&draws.configs);
    let selected: Vec<Draw> = members.iter().map(|&i| draws.draws[i].clone()).collect();
    let aligned = align_draws(&selected)?;
    let curves = posterior_mean_curves(&aligned, basis)?;
    let summaries = covariance_summaries(&aligned, basis)?;
    let loadings = covariance_derived_loadings(&summaries, &configuration)?;
    let m = aligned.len() as f64;
    let groups = draws.num_groups();
    let cols_shared = active_columns(&aligned[0].z_shared);
    let mut mean_lambda = DMatrix::zeros(basis.num_basis, cols_shared.len());
    let mut mean_phi: Vec<DMatrix<f64>> = (0..groups)
        .map(|g| DMatrix::zeros(basis.num_basis, configuration.k_star[g]))
        .collect();
    for d in &aligned {
        mean_lambda += select_columns(&d.lambda, &active_columns(&d.z_shared));
        for g in 0..groups {
            mean_phi[g] += select_columns(&d.phi[g], &active_columns(&d.z_specific[g]));
        }
    }
    mean_lambda /= m;
    for p in &mut mean_phi {
        *p /= m;
    }
    Ok(PosteriorSummary {
        configuration,
        histogram,
        members,
        curves,
        loadings,
        mean_lambda,
        mean_phi,
    })
}

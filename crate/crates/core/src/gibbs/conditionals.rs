//! Conjugate full conditionals of the continuous parameters.
//!
//! Every function here returns the exact conditional distribution (mean and
//! precision, or shape and scale) so it can be checked against an independent
//! dense computation; the matching `sample_*` functions in the parent module
//! draw from it. All likelihood terms are evaluated in coefficient space
//! through `B'B` and `B'y`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::basis::BasisSystem;
use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, kron, GaussianConditional};
use crate::model::{FunctionalDataset, ModelState};

use super::NoisePrior;

/// Per-group data summaries reused across sweeps.
#[derive(Clone, Debug)]
pub struct GroupCache {
    /// `n_s x T`.
    pub y: DMatrix<f64>,
    /// `R x n_s`, column `i` is `B' y_is`.
    pub bty: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Workspace {
    pub groups: Vec<GroupCache>,
}

impl Workspace {
    pub fn new(data: &FunctionalDataset, basis: &BasisSystem) -> Result<Self> {
        data.validate()?;
        if basis.num_times() != data.num_times() {
            return Err(Error::InvalidDimension(format!(
                "basis has {} rows, grid has {} points",
                basis.num_times(),
                data.num_times()
            )));
        }
        Ok(Self {
            groups: data
                .groups
                .iter()
                .map(|g| GroupCache {
                    y: g.y.clone(),
                    bty: basis.b.transpose() * g.y.transpose(),
                })
                .collect(),
        })
    }

    /// Replace the curves of every group, keeping shapes.
    pub fn set_curves(&mut self, curves: &[DMatrix<f64>], basis: &BasisSystem) {
        for (cache, y) in self.groups.iter_mut().zip(curves) {
            cache.y.copy_from(y);
            cache.bty = basis.b.transpose() * y.transpose();
        }
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }
}

fn check_state(state: &ModelState, ws: &Workspace, basis: &BasisSystem) -> Result<()> {
    if state.num_groups() != ws.num_groups() {
        return Err(Error::InvalidDimension("state and data disagree on group count".into()));
    }
    if state.num_basis() != basis.num_basis {
        return Err(Error::InvalidDimension("state and basis disagree on R".into()));
    }
    for (s, g) in ws.groups.iter().enumerate() {
        if state.eta[s].nrows() != g.y.nrows() {
            return Err(Error::InvalidDimension(format!("group {s} score rows differ from subjects")));
        }
    }
    Ok(())
}

/// `B' (y_is - B c_is)` for every subject, with `c_is` the coefficient
/// columns passed in (one column per subject).
fn projected_residual(cache: &GroupCache, basis: &BasisSystem, coef: &DMatrix<f64>) -> DMatrix<f64> {
    &cache.bty - &basis.btb * coef
}

fn add_to_columns(m: &mut DMatrix<f64>, v: &DVector<f64>) {
    for mut col in m.column_iter_mut() {
        col += v;
    }
}

/// `N(μ*, P^-1)` with `P = (n/σ²_ε) B'B + Ω/σ²_β`.
pub fn beta_conditional(state: &ModelState, ws: &Workspace, basis: &BasisSystem, s: usize) -> Result<GaussianConditional> {
    check_state(state, ws, basis)?;
    let cache = &ws.groups[s];
    let n = cache.y.nrows() as f64;
    let inv_eps = 1.0 / state.sigma2_eps[s];
    let factors = &state.lambda() * state.eta[s].transpose() + &state.phi(s) * state.rho[s].transpose();
    let resid = projected_residual(cache, basis, &factors);
    let linear = resid.column_sum() * inv_eps;
    let precision = &basis.btb * (n * inv_eps) + &basis.omega * (1.0 / state.sigma2_beta[s]);
    GaussianConditional::from_precision(precision, &linear, "beta")
}

/// Residual sum of squares of group `s` in time space.
pub fn residual_sum_of_squares(state: &ModelState, ws: &Workspace, basis: &BasisSystem, s: usize) -> f64 {
    let fitted = (&basis.b * state.coefficients(s)).transpose();
    (&ws.groups[s].y - fitted).iter().map(|r| r * r).sum()
}

/// Inverse-gamma `(shape, scale)` of `σ²_ε_s`.
pub fn sigma_eps_posterior(
    state: &ModelState,
    ws: &Workspace,
    basis: &BasisSystem,
    s: usize,
    prior: NoisePrior,
) -> Result<(f64, f64)> {
    check_state(state, ws, basis)?;
    let y = &ws.groups[s].y;
    let count = (y.nrows() * y.ncols()) as f64;
    let rss = residual_sum_of_squares(state, ws, basis, s);
    noise_posterior(count, rss, prior)
}

/// Inverse-gamma parameters for `count` residuals with sum of squares `rss`.
pub fn noise_posterior(count: f64, rss: f64, prior: NoisePrior) -> Result<(f64, f64)> {
    let (shape, scale) = match prior {
        NoisePrior::Flat => {
            if count <= 2.0 {
                return Err(Error::ImproperPosterior(format!(
                    "flat noise prior needs more than 2 observations per group, got {count}"
                )));
            }
            (count / 2.0 - 1.0, rss / 2.0)
        }
        NoisePrior::InvGamma { shape, scale } => (shape + count / 2.0, scale + rss / 2.0),
    };
    if !(scale > 0.0) {
        return Err(Error::DegenerateResidual(
            "residual sum of squares is zero; noise variance posterior is degenerate".into(),
        ));
    }
    Ok((shape, scale))
}

/// Inverse-gamma `(shape, scale)` of `σ²_β_s`.
pub fn sigma_beta_posterior(beta: &DVector<f64>, basis: &BasisSystem, a_beta: f64, b_beta: f64) -> (f64, f64) {
    let quad = beta.dot(&(&basis.omega * beta));
    (a_beta + basis.num_basis as f64 / 2.0, b_beta + quad / 2.0)
}

/// `P(m = +1 | ξ)` under `ξ | m ~ N(m, 1)` and a uniform sign prior.
pub fn sign_probability(xi: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * xi).exp())
}

/// Which loading block an update targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Shared,
    Specific(usize),
}

/// Scores of the block multiplied elementwise by its scales (`γ ⊙ η_is`),
/// one row per subject, and the projected partial residual `B' r_is` that
/// excludes the block's own contribution, one column per subject.
struct BlockTerms {
    weight: f64,
    scaled_scores: DMatrix<f64>,
    partial: DMatrix<f64>,
}

fn block_terms(state: &ModelState, ws: &Workspace, basis: &BasisSystem, block: Block) -> Vec<BlockTerms> {
    let groups: Vec<usize> = match block {
        Block::Shared => (0..state.num_groups()).collect(),
        Block::Specific(s) => vec![s],
    };
    groups
        .into_iter()
        .map(|s| {
            let (scores, gamma, other) = match block {
                Block::Shared => (&state.eta[s], &state.shared.gamma, &state.phi(s) * state.rho[s].transpose()),
                Block::Specific(_) => (
                    &state.rho[s],
                    &state.specific[s].gamma,
                    &state.lambda() * state.eta[s].transpose(),
                ),
            };
            let mut coef = other;
            add_to_columns(&mut coef, &state.beta[s]);
            let mut scaled = scores.clone();
            for (l, g) in gamma.iter().enumerate() {
                scaled.column_mut(l).scale_mut(*g);
            }
            BlockTerms {
                weight: 1.0 / state.sigma2_eps[s],
                scaled_scores: scaled,
                partial: projected_residual(&ws.groups[s], basis, &coef),
            }
        })
        .collect()
}

fn block_ref(state: &ModelState, block: Block) -> &crate::model::ExpansionBlock {
    match block {
        Block::Shared => &state.shared,
        Block::Specific(s) => &state.specific[s],
    }
}

/// Joint Gaussian conditional of `vec(Ξ)` (column-major) for one block.
///
/// Precision `I + Σ w_s (G_s'G_s ⊗ B'B)`, linear term
/// `vec(M) + Σ w_s vec(B'R_s G_s)`.
pub fn xi_conditional(state: &ModelState, ws: &Workspace, basis: &BasisSystem, block: Block) -> Result<GaussianConditional> {
    check_state(state, ws, basis)?;
    let blk = block_ref(state, block);
    let r = basis.num_basis;
    let l = blk.truncation();
    let mut gram = DMatrix::zeros(l, l);
    let mut lin = blk.signs.clone();
    for t in block_terms(state, ws, basis, block) {
        gram += t.scaled_scores.transpose() * &t.scaled_scores * t.weight;
        lin += &t.partial * &t.scaled_scores * t.weight;
    }
    let mut precision = kron(&gram, &basis.btb);
    for d in 0..r * l {
        precision[(d, d)] += 1.0;
    }
    let linear = DVector::from_column_slice(lin.as_slice());
    GaussianConditional::from_precision(precision, &linear, "xi")
}

/// Sequential conditional machinery for the scales `γ_l` of one block.
///
/// With `Ξ` fixed, `W = Ξ'B'BΞ` and `A_s = Ξ'B'R_s` let every `γ_l`
/// conditional be evaluated in `O(L n)` from the current scales.
pub struct GammaSweep {
    weights: Vec<f64>,
    scores: Vec<DMatrix<f64>>,
    projected: Vec<DMatrix<f64>>,
    cross: DMatrix<f64>,
}

impl GammaSweep {
    pub fn new(state: &ModelState, ws: &Workspace, basis: &BasisSystem, block: Block) -> Result<Self> {
        check_state(state, ws, basis)?;
        let xi = &block_ref(state, block).xi;
        let cross = xi.transpose() * &basis.btb * xi;
        let groups: Vec<usize> = match block {
            Block::Shared => (0..state.num_groups()).collect(),
            Block::Specific(s) => vec![s],
        };
        let mut weights = Vec::new();
        let mut scores = Vec::new();
        let mut projected = Vec::new();
        for s in groups {
            let (sc, other) = match block {
                Block::Shared => (state.eta[s].clone(), &state.phi(s) * state.rho[s].transpose()),
                Block::Specific(_) => (state.rho[s].clone(), &state.lambda() * state.eta[s].transpose()),
            };
            let mut coef = other;
            add_to_columns(&mut coef, &state.beta[s]);
            let partial = projected_residual(&ws.groups[s], basis, &coef);
            weights.push(1.0 / state.sigma2_eps[s]);
            projected.push(xi.transpose() * partial);
            scores.push(sc);
        }
        Ok(Self {
            weights,
            scores,
            projected,
            cross,
        })
    }

    /// Mean and variance of `γ_l` given every other scale in `gamma`.
    pub fn conditional(&self, gamma: &DVector<f64>, l: usize, prior_var: f64) -> (f64, f64) {
        let energy = self.cross[(l, l)];
        let mut precision = 1.0 / prior_var;
        let mut linear = 0.0;
        for ((w, scores), proj) in self.weights.iter().zip(&self.scores).zip(&self.projected) {
            for i in 0..scores.nrows() {
                let e = scores[(i, l)];
                if e == 0.0 {
                    continue;
                }
                let mut dot = proj[(l, i)];
                for k in 0..gamma.len() {
                    if k != l {
                        dot -= self.cross[(l, k)] * gamma[k] * scores[(i, k)];
                    }
                }
                precision += w * e * e * energy;
                linear += w * e * dot;
            }
        }
        let var = 1.0 / precision;
        (var * linear, var)
    }
}

/// Conditional mean and variance of `γ_l` in `block` given everything else.
pub fn gamma_conditional(state: &ModelState, ws: &Workspace, basis: &BasisSystem, block: Block, l: usize) -> Result<(f64, f64)> {
    let sweep = GammaSweep::new(state, ws, basis, block)?;
    let blk = block_ref(state, block);
    Ok(sweep.conditional(&blk.gamma, l, blk.cusp.gamma_prior_var(l)))
}

/// Conditional of the score vectors of one group for one block; every
/// subject shares the precision, only the mean differs.
pub struct ScoreConditional {
    chol: Cholesky<f64, Dyn>,
    /// One row per subject.
    pub means: DMatrix<f64>,
}

impl ScoreConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn precision(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        &l * l.transpose()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let (n, q) = self.means.shape();
        let l = self.chol.l_dirty();
        let mut out = self.means.clone();
        for i in 0..n {
            let z = DVector::from_fn(q, |_, _| std_normal(rng));
            let offset = l
                .tr_solve_lower_triangular(&z)
                .expect("cholesky factor has a nonzero diagonal");
            for k in 0..q {
                out[(i, k)] += offset[k];
            }
        }
        out
    }
}

/// Conditional of `η_is` (shared) or `ρ_is` (specific) for every subject of
/// group `s`: precision `I + (1/σ²_ε) M'B'BM`, mean
/// `P^-1 (1/σ²_ε) M'B'(y_is - B(β_s + other_is))`.
pub fn score_conditional(state: &ModelState, ws: &Workspace, basis: &BasisSystem, s: usize, block: Block) -> Result<ScoreConditional> {
    check_state(state, ws, basis)?;
    let inv_eps = 1.0 / state.sigma2_eps[s];
    let (loadings, other) = match block {
        Block::Shared => (state.lambda(), &state.phi(s) * state.rho[s].transpose()),
        Block::Specific(_) => (state.phi(s), &state.lambda() * state.eta[s].transpose()),
    };
    let q = loadings.ncols();
    let mut coef = other;
    add_to_columns(&mut coef, &state.beta[s]);
    let partial = projected_residual(&ws.groups[s], basis, &coef);
    let bl = &basis.btb * &loadings;
    let mut precision = loadings.transpose() * &bl * inv_eps;
    for d in 0..q {
        precision[(d, d)] += 1.0;
    }
    let chol = cholesky_with_jitter(precision, "scores")?;
    let linear = loadings.transpose() * partial * inv_eps;
    let means = chol.solve(&linear).transpose();
    Ok(ScoreConditional { chol, means })
}

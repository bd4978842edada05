//! Data and model-state types plus the deterministic model quantities.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::basis::{BasisSystem, TimeGrid};
use crate::cusp::{CuspHyper, CuspState};
use crate::dist::{self, LN_2PI};
use crate::error::{Error, Result};

/// Curves of one group, one subject per row.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupData {
    pub group_id: String,
    pub subject_ids: Vec<String>,
    /// `n_s x T`.
    pub y: DMatrix<f64>,
}

impl GroupData {
    pub fn new(group_id: impl Into<String>, y: DMatrix<f64>) -> Self {
        let group_id = group_id.into();
        let subject_ids = (0..y.nrows()).map(|i| format!("{group_id}_{}", i + 1)).collect();
        Self { group_id, subject_ids, y }
    }

    pub fn len(&self) -> usize {
        self.y.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.y.nrows() == 0
    }
}

/// Grouped curves on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalDataset {
    pub grid: TimeGrid,
    pub groups: Vec<GroupData>,
}

impl FunctionalDataset {
    pub fn new(grid: TimeGrid, groups: Vec<GroupData>) -> Result<Self> {
        let ds = Self { grid, groups };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidData("dataset has no groups".into()));
        }
        let t = self.grid.len();
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::InvalidData(format!("group {} has no subjects", g.group_id)));
            }
            if g.y.ncols() != t {
                return Err(Error::InvalidDimension(format!(
                    "group {} has {} time points, grid has {t}",
                    g.group_id,
                    g.y.ncols()
                )));
            }
            if g.subject_ids.len() != g.len() {
                return Err(Error::InvalidData(format!(
                    "group {} has {} subject ids for {} curves",
                    g.group_id,
                    g.subject_ids.len(),
                    g.len()
                )));
            }
            if g.y.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "group {} contains missing or non-finite values",
                    g.group_id
                )));
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(GroupData::len).collect()
    }

    pub fn num_times(&self) -> usize {
        self.grid.len()
    }
}

/// One parameter-expanded loading block, `loadings = xi * diag(gamma)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpansionBlock {
    /// `R x truncation`.
    pub xi: DMatrix<f64>,
    pub gamma: DVector<f64>,
    /// Prior means of `xi`, entries in `{-1, +1}`.
    pub signs: DMatrix<f64>,
    pub cusp: CuspState,
}

impl ExpansionBlock {
    pub fn zeros(num_basis: usize, truncation: usize, hyper: CuspHyper) -> Self {
        Self {
            xi: DMatrix::zeros(num_basis, truncation),
            gamma: DVector::zeros(truncation),
            signs: DMatrix::from_element(num_basis, truncation, 1.0),
            cusp: CuspState::initial(truncation, hyper),
        }
    }

    /// Draw the whole block from its prior.
    pub fn sample_prior<R: Rng + ?Sized>(
        num_basis: usize,
        truncation: usize,
        hyper: CuspHyper,
        rng: &mut R,
    ) -> Result<Self> {
        let cusp = CuspState::sample_prior(truncation, hyper, rng)?;
        let signs = DMatrix::from_fn(num_basis, truncation, |_, _| {
            if rng.random::<bool>() { 1.0 } else { -1.0 }
        });
        let xi = DMatrix::from_fn(num_basis, truncation, |r, l| signs[(r, l)] + dist::std_normal(rng));
        let gamma = DVector::from_fn(truncation, |l, _| dist::normal(rng, 0.0, cusp.gamma_prior_var(l)));
        Ok(Self { xi, gamma, signs, cusp })
    }

    pub fn truncation(&self) -> usize {
        self.gamma.len()
    }

    pub fn loadings(&self) -> DMatrix<f64> {
        let mut out = self.xi.clone();
        for (l, g) in self.gamma.iter().enumerate() {
            out.column_mut(l).scale_mut(*g);
        }
        out
    }

    pub fn active(&self) -> usize {
        self.cusp.active()
    }
}

/// Full sampler state.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// Group mean coefficients, one length-`R` vector per group.
    pub beta: Vec<DVector<f64>>,
    pub sigma2_eps: Vec<f64>,
    pub sigma2_beta: Vec<f64>,
    pub shared: ExpansionBlock,
    pub specific: Vec<ExpansionBlock>,
    /// Shared scores, `n_s x L_max` per group.
    pub eta: Vec<DMatrix<f64>>,
    /// Group-specific scores, `n_s x K_max` per group.
    pub rho: Vec<DMatrix<f64>>,
}

impl ModelState {
    pub fn num_groups(&self) -> usize {
        self.beta.len()
    }

    pub fn num_basis(&self) -> usize {
        self.shared.xi.nrows()
    }

    /// Shared loadings `Λ = Ξ diag(γ)`.
    pub fn lambda(&self) -> DMatrix<f64> {
        self.shared.loadings()
    }

    /// Group-specific loadings `Φ_s = Ξ^s diag(γ^s)`.
    pub fn phi(&self, s: usize) -> DMatrix<f64> {
        self.specific[s].loadings()
    }

    /// `(L*, K*_1, ..., K*_S)`.
    pub fn configuration(&self) -> (usize, Vec<usize>) {
        (self.shared.active(), self.specific.iter().map(ExpansionBlock::active).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.beta.len();
        let r = self.num_basis();
        if self.sigma2_eps.len() != s
            || self.sigma2_beta.len() != s
            || self.specific.len() != s
            || self.eta.len() != s
            || self.rho.len() != s
        {
            return Err(Error::InvalidDimension("per-group state vectors differ in length".into()));
        }
        let l = self.shared.truncation();
        if self.shared.xi.shape() != (r, l) || self.shared.signs.shape() != (r, l) {
            return Err(Error::InvalidDimension("shared block shape mismatch".into()));
        }
        for g in 0..s {
            let k = self.specific[g].truncation();
            if self.beta[g].len() != r
                || self.specific[g].xi.shape() != (r, k)
                || self.specific[g].signs.shape() != (r, k)
                || self.eta[g].ncols() != l
                || self.rho[g].ncols() != k
                || self.eta[g].nrows() != self.rho[g].nrows()
            {
                return Err(Error::InvalidDimension(format!("group {g} state shape mismatch")));
            }
        }
        if self
            .sigma2_eps
            .iter()
            .chain(&self.sigma2_beta)
            .any(|v| !(*v > 0.0) || !v.is_finite())
        {
            return Err(Error::InvalidState("variances must be positive and finite".into()));
        }
        let signs_ok = |m: &DMatrix<f64>| m.iter().all(|v| *v == 1.0 || *v == -1.0);
        if !signs_ok(&self.shared.signs) || !self.specific.iter().all(|b| signs_ok(&b.signs)) {
            return Err(Error::InvalidState("sign matrices must hold entries in {-1, +1}".into()));
        }
        self.shared.cusp.validate()?;
        for b in &self.specific {
            b.cusp.validate()?;
        }
        Ok(())
    }

    /// Coefficient-space curves `β_s + Λη_is + Φ_sρ_is`, one column per subject.
    pub fn coefficients(&self, s: usize) -> DMatrix<f64> {
        let n = self.eta[s].nrows();
        let mut c = &self.lambda() * self.eta[s].transpose() + &self.phi(s) * self.rho[s].transpose();
        for i in 0..n {
            c.column_mut(i).axpy(1.0, &self.beta[s], 1.0);
        }
        c
    }

    fn check_basis(&self, basis: &BasisSystem) -> Result<()> {
        if basis.num_basis != self.num_basis() {
            return Err(Error::InvalidDimension(format!(
                "state has {} basis coefficients, basis has {}",
                self.num_basis(),
                basis.num_basis
            )));
        }
        Ok(())
    }
}

/// `f_is = B(β_s + Λη_is + Φ_sρ_is)`, returned as `n_s x T` per group.
pub fn reconstruct_curves(state: &ModelState, basis: &BasisSystem) -> Result<Vec<DMatrix<f64>>> {
    state.validate()?;
    state.check_basis(basis)?;
    Ok((0..state.num_groups())
        .map(|s| (&basis.b * state.coefficients(s)).transpose())
        .collect())
}

/// Gaussian log-likelihood of the data given the state.
pub fn log_likelihood(state: &ModelState, data: &FunctionalDataset, basis: &BasisSystem) -> Result<f64> {
    if state.sigma2_eps.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidState("noise variances must be positive".into()));
    }
    if data.num_groups() != state.num_groups() {
        return Err(Error::InvalidDimension("dataset and state disagree on the number of groups".into()));
    }
    let curves = reconstruct_curves(state, basis)?;
    let mut total = 0.0;
    for (s, (group, f)) in data.groups.iter().zip(&curves).enumerate() {
        if group.y.shape() != f.shape() {
            return Err(Error::InvalidDimension(format!("group {s} data and state shapes differ")));
        }
        let var = state.sigma2_eps[s];
        let rss: f64 = (&group.y - f).iter().map(|r| r * r).sum();
        let count = (group.y.nrows() * group.y.ncols()) as f64;
        total += -0.5 * count * (LN_2PI + var.ln()) - 0.5 * rss / var;
    }
    Ok(total)
}

/// Covariance pieces of the marginal distribution of one group's curves.
#[derive(Clone, Debug)]
pub struct MarginalCovariances {
    pub sigma_lambda: DMatrix<f64>,
    pub sigma_phi: DMatrix<f64>,
    pub sigma_eps: DMatrix<f64>,
}

impl MarginalCovariances {
    /// `Σ_Y = Σ_Λ + Σ_Φ + Σ_ε`.
    pub fn total(&self) -> DMatrix<f64> {
        &self.sigma_lambda + &self.sigma_phi + &self.sigma_eps
    }
}

/// `Σ = (B M)(B M)'` for a coefficient-space loading matrix `M`.
pub fn loading_covariance(basis: &BasisSystem, loadings: &DMatrix<f64>) -> DMatrix<f64> {
    let bm = &basis.b * loadings;
    &bm * bm.transpose()
}

pub fn marginal_covariances(state: &ModelState, basis: &BasisSystem, group: usize) -> Result<MarginalCovariances> {
    state.check_basis(basis)?;
    if group >= state.num_groups() {
        return Err(Error::InvalidDimension(format!(
            "group {group} out of range for {} groups",
            state.num_groups()
        )));
    }
    let t = basis.num_times();
    Ok(MarginalCovariances {
        sigma_lambda: loading_covariance(basis, &state.lambda()),
        sigma_phi: loading_covariance(basis, &state.phi(group)),
        sigma_eps: DMatrix::identity(t, t) * state.sigma2_eps[group],
    })
}

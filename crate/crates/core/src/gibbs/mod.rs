//! Gibbs sampler for the multi-group functional factor model.
//!
//! One sweep updates, in order: the group means `β_s`, the noise variances
//! `σ²_ε_s`, the mean-smoothing variances `σ²_β_s`; then the shared block
//! (signs, `Ξ`, sequential `γ_l`, rescaling, shared scores `η`, shrinkage
//! state); then, per group, the specific block with scores `ρ`.

pub mod conditionals;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, TimeGrid};
use crate::cusp::{self, CuspHyper, CuspState};
use crate::dist;
use crate::error::{Error, Result};
use crate::model::{ExpansionBlock, FunctionalDataset, ModelState};
use crate::postprocess::FactorConfiguration;
use crate::DEFAULT_RIDGE;

pub use conditionals::{Block, GammaSweep, Workspace};

/// Prior on each noise variance `σ²_ε_s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisePrior {
    /// `p(σ²) ∝ 1`.
    #[default]
    Flat,
    /// Proper `Inv-Gamma(shape, scale)`.
    InvGamma { shape: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub l_max: usize,
    pub k_max: usize,
    /// Number of basis functions; `None` means `round(T / 2)`.
    pub num_basis: Option<usize>,
    pub ridge: f64,
    pub hyper_shared: CuspHyper,
    pub hyper_specific: CuspHyper,
    pub a_beta: f64,
    pub b_beta: f64,
    pub noise_prior: NoisePrior,
    /// Rescale each `(ξ_l, γ_l)` pair after the scale update.
    pub rescale: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            burn_in: 10_000,
            thin: 1,
            l_max: 10,
            k_max: 10,
            num_basis: None,
            ridge: DEFAULT_RIDGE,
            hyper_shared: CuspHyper::default(),
            hyper_specific: CuspHyper::default(),
            a_beta: 1.0,
            b_beta: 1.0,
            noise_prior: NoisePrior::Flat,
            rescale: true,
            seed: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be at least 1".into()));
        }
        if self.l_max == 0 || self.k_max == 0 {
            return Err(Error::InvalidConfig("l_max and k_max must be at least 1".into()));
        }
        if !(self.ridge > 0.0) {
            return Err(Error::InvalidConfig("ridge must be positive".into()));
        }
        if !(self.a_beta > 0.0 && self.b_beta > 0.0) {
            return Err(Error::InvalidConfig("a_beta and b_beta must be positive".into()));
        }
        if let NoisePrior::InvGamma { shape, scale } = self.noise_prior {
            if !(shape > 0.0 && scale > 0.0) {
                return Err(Error::InvalidConfig("noise prior shape and scale must be positive".into()));
            }
        }
        self.hyper_shared.validate("hyper_shared")?;
        self.hyper_specific.validate("hyper_specific")?;
        Ok(())
    }

    pub fn resolved_num_basis(&self, num_times: usize) -> usize {
        self.num_basis
            .unwrap_or_else(|| ((num_times as f64) / 2.0).round() as usize)
    }

    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn build_basis(&self, grid: &TimeGrid) -> Result<BasisSystem> {
        BasisSystem::new(grid, self.resolved_num_basis(grid.len()), self.ridge)
    }
}

/// The stored subset of one retained state.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub beta: Vec<DVector<f64>>,
    pub sigma2_eps: Vec<f64>,
    pub sigma2_beta: Vec<f64>,
    /// Shared loadings `Λ`, `R x L_max`.
    pub lambda: DMatrix<f64>,
    /// Group loadings `Φ_s`, `R x K_max`.
    pub phi: Vec<DMatrix<f64>>,
    pub eta: Vec<DMatrix<f64>>,
    pub rho: Vec<DMatrix<f64>>,
    pub gamma_shared: DVector<f64>,
    pub gamma_specific: Vec<DVector<f64>>,
    pub z_shared: Vec<usize>,
    pub z_specific: Vec<Vec<usize>>,
}

impl Draw {
    pub fn from_state(iteration: usize, state: &ModelState) -> Self {
        Self {
            iteration,
            beta: state.beta.clone(),
            sigma2_eps: state.sigma2_eps.clone(),
            sigma2_beta: state.sigma2_beta.clone(),
            lambda: state.lambda(),
            phi: (0..state.num_groups()).map(|s| state.phi(s)).collect(),
            eta: state.eta.clone(),
            rho: state.rho.clone(),
            gamma_shared: state.shared.gamma.clone(),
            gamma_specific: state.specific.iter().map(|b| b.gamma.clone()).collect(),
            z_shared: state.shared.cusp.z.clone(),
            z_specific: state.specific.iter().map(|b| b.cusp.z.clone()).collect(),
        }
    }

    pub fn configuration(&self) -> FactorConfiguration {
        FactorConfiguration {
            l_star: cusp::count_active(&self.z_shared),
            k_star: self.z_specific.iter().map(|z| cusp::count_active(z)).collect(),
        }
    }

    pub fn num_groups(&self) -> usize {
        self.beta.len()
    }
}

/// Retained draws of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<Draw>,
    /// Configuration of each retained draw.
    pub configs: Vec<FactorConfiguration>,
    /// Configuration at every iteration, burn-in included.
    pub config_trace: Vec<FactorConfiguration>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.draws.first().map_or(0, Draw::num_groups)
    }

    /// Trace of `σ²_ε_s` over retained draws.
    pub fn sigma2_eps_trace(&self, s: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.sigma2_eps[s]).collect()
    }

    pub fn sigma2_beta_trace(&self, s: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.sigma2_beta[s]).collect()
    }

    pub fn beta_trace(&self, s: usize, r: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.beta[s][r]).collect()
    }
}

/// Draw each group mean from its Gaussian conditional.
pub fn sample_beta<R: Rng + ?Sized>(state: &mut ModelState, ws: &Workspace, basis: &BasisSystem, rng: &mut R) -> Result<()> {
    for s in 0..state.num_groups() {
        let cond = conditionals::beta_conditional(state, ws, basis, s)?;
        state.beta[s] = cond.draw(rng);
    }
    Ok(())
}

pub fn sample_sigma_eps<R: Rng + ?Sized>(
    state: &mut ModelState,
    ws: &Workspace,
    basis: &BasisSystem,
    prior: NoisePrior,
    rng: &mut R,
) -> Result<()> {
    for s in 0..state.num_groups() {
        let (shape, scale) = conditionals::sigma_eps_posterior(state, ws, basis, s, prior)?;
        state.sigma2_eps[s] = dist::inv_gamma(rng, shape, scale)?;
    }
    Ok(())
}

pub fn sample_sigma_beta<R: Rng + ?Sized>(
    state: &mut ModelState,
    basis: &BasisSystem,
    a_beta: f64,
    b_beta: f64,
    rng: &mut R,
) -> Result<()> {
    for s in 0..state.num_groups() {
        let (shape, scale) = conditionals::sigma_beta_posterior(&state.beta[s], basis, a_beta, b_beta);
        state.sigma2_beta[s] = dist::inv_gamma(rng, shape, scale)?;
    }
    Ok(())
}

fn block_mut(state: &mut ModelState, block: Block) -> &mut ExpansionBlock {
    match block {
        Block::Shared => &mut state.shared,
        Block::Specific(s) => &mut state.specific[s],
    }
}

/// Draw every prior sign `m_rl` given `ξ_rl`.
pub fn sample_signs<R: Rng + ?Sized>(block: &mut ExpansionBlock, rng: &mut R) {
    for (m, xi) in block.signs.iter_mut().zip(block.xi.iter()) {
        let p = conditionals::sign_probability(*xi);
        *m = if rng.random::<f64>() < p { 1.0 } else { -1.0 };
    }
}

pub fn sample_xi<R: Rng + ?Sized>(
    state: &mut ModelState,
    ws: &Workspace,
    basis: &BasisSystem,
    block: Block,
    rng: &mut R,
) -> Result<()> {
    let cond = conditionals::xi_conditional(state, ws, basis, block)?;
    let draw = cond.draw(rng);
    let blk = block_mut(state, block);
    let (r, l) = blk.xi.shape();
    blk.xi = DMatrix::from_column_slice(r, l, draw.as_slice());
    Ok(())
}

/// Update `γ_1, ..., γ_L` in order, each given the freshest values of the
/// others.
pub fn sample_gamma_sequential<R: Rng + ?Sized>(
    state: &mut ModelState,
    ws: &Workspace,
    basis: &BasisSystem,
    block: Block,
    rng: &mut R,
) -> Result<()> {
    let sweep = GammaSweep::new(state, ws, basis, block)?;
    let blk = block_mut(state, block);
    for l in 0..blk.truncation() {
        let (mean, var) = sweep.conditional(&blk.gamma, l, blk.cusp.gamma_prior_var(l));
        blk.gamma[l] = dist::normal(rng, mean, var);
    }
    Ok(())
}

/// Rescale each column pair so `mean_r |ξ_rl| = 1`, leaving `Ξ diag(γ)`
/// unchanged. All-zero columns are left alone.
pub fn rescale_expansion(block: &mut ExpansionBlock) {
    let r = block.xi.nrows() as f64;
    for l in 0..block.truncation() {
        let d = block.xi.column(l).iter().map(|v| v.abs()).sum::<f64>() / r;
        if d > 0.0 && d.is_finite() {
            block.xi.column_mut(l).unscale_mut(d);
            block.gamma[l] *= d;
        }
    }
}

/// Draw shared scores `η` for every group, then specific scores `ρ`.
pub fn sample_factors<R: Rng + ?Sized>(state: &mut ModelState, ws: &Workspace, basis: &BasisSystem, rng: &mut R) -> Result<()> {
    sample_scores(state, ws, basis, Block::Shared, rng)?;
    for s in 0..state.num_groups() {
        sample_scores(state, ws, basis, Block::Specific(s), rng)?;
    }
    Ok(())
}

/// Draw the scores attached to `block`: `η_is` for every group when shared,
/// `ρ_is` of one group otherwise.
pub fn sample_scores<R: Rng + ?Sized>(
    state: &mut ModelState,
    ws: &Workspace,
    basis: &BasisSystem,
    block: Block,
    rng: &mut R,
) -> Result<()> {
    match block {
        Block::Shared => {
            for s in 0..state.num_groups() {
                let cond = conditionals::score_conditional(state, ws, basis, s, block)?;
                state.eta[s] = cond.draw(rng);
            }
        }
        Block::Specific(s) => {
            let cond = conditionals::score_conditional(state, ws, basis, s, block)?;
            state.rho[s] = cond.draw(rng);
        }
    }
    Ok(())
}

fn abort(iteration: usize, parameter: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::ChainAborted {
        iteration,
        parameter,
        source: Box::new(e),
    }
}

/// Chain driver holding data summaries, state, and the RNG.
pub struct Sampler<'a> {
    pub basis: &'a BasisSystem,
    pub config: SamplerConfig,
    pub ws: Workspace,
    pub state: ModelState,
    pub rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Sampler<'a> {
    /// Sampler started from a data-driven initial state.
    pub fn new(data: &FunctionalDataset, basis: &'a BasisSystem, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let ws = Workspace::new(data, basis)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state = initial_state(&ws, basis, &config, &mut rng)?;
        Ok(Self {
            basis,
            config,
            ws,
            state,
            rng,
            iteration: 0,
        })
    }

    /// Sampler started from a given state.
    pub fn with_state(
        data: &FunctionalDataset,
        basis: &'a BasisSystem,
        config: SamplerConfig,
        state: ModelState,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let ws = Workspace::new(data, basis)?;
        state.validate()?;
        Ok(Self {
            basis,
            config,
            ws,
            state,
            rng,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Update one loading block and its scores and shrinkage state.
    fn update_block(&mut self, block: Block) -> Result<()> {
        let it = self.iteration;
        let (basis, ws, rng) = (self.basis, &self.ws, &mut self.rng);
        let state = &mut self.state;
        sample_signs(block_mut(state, block), rng);
        sample_xi(state, ws, basis, block, rng).map_err(abort(it, "xi"))?;
        sample_gamma_sequential(state, ws, basis, block, rng).map_err(abort(it, "gamma"))?;
        if self.config.rescale {
            rescale_expansion(block_mut(state, block));
        }
        sample_scores(state, ws, basis, block, rng).map_err(abort(it, "scores"))?;
        let blk = block_mut(state, block);
        let gamma: Vec<f64> = blk.gamma.iter().copied().collect();
        cusp::update_block(&gamma, &mut blk.cusp, rng).map_err(abort(it, "shrinkage"))?;
        Ok(())
    }

    /// One full sweep.
    pub fn step(&mut self) -> Result<()> {
        let it = self.iteration;
        sample_beta(&mut self.state, &self.ws, self.basis, &mut self.rng).map_err(abort(it, "beta"))?;
        sample_sigma_eps(&mut self.state, &self.ws, self.basis, self.config.noise_prior, &mut self.rng)
            .map_err(abort(it, "sigma2_eps"))?;
        sample_sigma_beta(&mut self.state, self.basis, self.config.a_beta, self.config.b_beta, &mut self.rng)
            .map_err(abort(it, "sigma2_beta"))?;
        self.update_block(Block::Shared)?;
        for s in 0..self.state.num_groups() {
            self.update_block(Block::Specific(s))?;
        }
        self.iteration += 1;
        Ok(())
    }

    /// Run the configured number of iterations and keep the retained draws.
    pub fn run(mut self) -> Result<PosteriorDraws> {
        let cfg = self.config.clone();
        let mut draws = Vec::with_capacity(cfg.retained());
        let mut configs = Vec::with_capacity(cfg.retained());
        let mut trace = Vec::with_capacity(cfg.iterations);
        for it in 0..cfg.iterations {
            self.step()?;
            let (l, k) = self.state.configuration();
            let config = FactorConfiguration { l_star: l, k_star: k };
            trace.push(config.clone());
            if it >= cfg.burn_in && (it - cfg.burn_in + 1) % cfg.thin == 0 {
                draws.push(Draw::from_state(it, &self.state));
                configs.push(config);
            }
            if (it + 1) % 1000 == 0 {
                log::debug!("iteration {}/{}", it + 1, cfg.iterations);
            }
        }
        Ok(PosteriorDraws {
            draws,
            configs,
            config_trace: trace,
        })
    }
}

/// Fit the model: build the basis from the config and run one chain.
pub fn run_chain(data: &FunctionalDataset, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    data.validate()?;
    let basis = config.build_basis(&data.grid)?;
    Sampler::new(data, &basis, config.clone())?.run()
}

/// Data-driven starting point: smoothed group means, residual variance as
/// the noise level, prior-mean shrinkage states with all but the last column
/// active, random signs and standard-normal scores.
pub fn initial_state<R: Rng + ?Sized>(ws: &Workspace, basis: &BasisSystem, config: &SamplerConfig, rng: &mut R) -> Result<ModelState> {
    let r = basis.num_basis;
    let s_count = ws.num_groups();
    let mut beta = Vec::with_capacity(s_count);
    let mut sigma2_eps = Vec::with_capacity(s_count);
    let smoother = &basis.btb + &basis.omega * 1e-3;
    let chol = crate::linalg::cholesky_with_jitter(smoother, "initial mean")?;
    for g in &ws.groups {
        let n = g.y.nrows() as f64;
        let b = chol.solve(&(g.bty.column_sum() / n));
        let fitted = &basis.b * &b;
        let mut rss = 0.0;
        for row in g.y.row_iter() {
            for (j, v) in row.iter().enumerate() {
                let d = v - fitted[j];
                rss += d * d;
            }
        }
        let var = (rss / (g.y.len() as f64)).max(1e-8);
        beta.push(b);
        sigma2_eps.push(var);
    }
    let init_block = |truncation: usize, hyper: CuspHyper, rng: &mut R| -> ExpansionBlock {
        let cusp = CuspState::initial(truncation, hyper);
        let signs = DMatrix::from_fn(r, truncation, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let xi = DMatrix::from_fn(r, truncation, |i, l| signs[(i, l)] + dist::std_normal(rng));
        let gamma = DVector::from_fn(truncation, |l, _| dist::normal(rng, 0.0, 0.1 * cusp.gamma_prior_var(l)));
        ExpansionBlock { xi, gamma, signs, cusp }
    };
    let shared = init_block(config.l_max, config.hyper_shared, rng);
    let specific = (0..s_count)
        .map(|_| init_block(config.k_max, config.hyper_specific, rng))
        .collect();
    let eta = ws
        .groups
        .iter()
        .map(|g| DMatrix::from_fn(g.y.nrows(), config.l_max, |_, _| dist::std_normal(rng)))
        .collect();
    let rho = ws
        .groups
        .iter()
        .map(|g| DMatrix::from_fn(g.y.nrows(), config.k_max, |_, _| dist::std_normal(rng)))
        .collect();
    let state = ModelState {
        beta,
        sigma2_eps,
        sigma2_beta: vec![1.0; s_count],
        shared,
        specific,
        eta,
        rho,
    };
    state.validate()?;
    Ok(state)
}

/// Draw a complete state from the prior. Needs a proper noise prior.
pub fn sample_prior_state<R: Rng + ?Sized>(
    basis: &BasisSystem,
    config: &SamplerConfig,
    group_sizes: &[usize],
    rng: &mut R,
) -> Result<ModelState> {
    let NoisePrior::InvGamma { shape, scale } = config.noise_prior else {
        return Err(Error::InvalidConfig("prior simulation needs a proper noise prior".into()));
    };
    let r = basis.num_basis;
    let omega_chol = crate::linalg::cholesky_with_jitter(basis.omega.clone(), "penalty")?;
    let mut beta = Vec::new();
    let mut sigma2_beta = Vec::new();
    let mut sigma2_eps = Vec::new();
    for _ in group_sizes {
        let sb = dist::inv_gamma(rng, config.a_beta, config.b_beta)?;
        // β ~ N(0, σ²_β Ω^-1): solve L' x = z for Ω = L L'.
        let z = DVector::from_fn(r, |_, _| dist::std_normal(rng));
        let x = omega_chol
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .expect("penalty factor has a nonzero diagonal");
        beta.push(x * sb.sqrt());
        sigma2_beta.push(sb);
        sigma2_eps.push(dist::inv_gamma(rng, shape, scale)?);
    }
    let shared = ExpansionBlock::sample_prior(r, config.l_max, config.hyper_shared, rng)?;
    let specific = group_sizes
        .iter()
        .map(|_| ExpansionBlock::sample_prior(r, config.k_max, config.hyper_specific, rng))
        .collect::<Result<Vec<_>>>()?;
    let eta = group_sizes
        .iter()
        .map(|&n| DMatrix::from_fn(n, config.l_max, |_, _| dist::std_normal(rng)))
        .collect();
    let rho = group_sizes
        .iter()
        .map(|&n| DMatrix::from_fn(n, config.k_max, |_, _| dist::std_normal(rng)))
        .collect();
    Ok(ModelState {
        beta,
        sigma2_eps,
        sigma2_beta,
        shared,
        specific,
        eta,
        rho,
    })
}

/// Simulate curves `y_is = f_is + ε_is` from a state.
pub fn simulate_curves<R: Rng + ?Sized>(state: &ModelState, basis: &BasisSystem, rng: &mut R) -> Result<Vec<DMatrix<f64>>> {
    let f = crate::model::reconstruct_curves(state, basis)?;
    Ok(f.into_iter()
        .enumerate()
        .map(|(s, mut m)| {
            let sd = state.sigma2_eps[s].sqrt();
            for v in m.iter_mut() {
                *v += sd * dist::std_normal(rng);
            }
            m
        })
        .collect())
}

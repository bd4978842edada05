//! Brute-force oracles and fixtures shared by the integration tests.
//!
//! Every oracle works in observation space with explicitly built design
//! matrices or by 1-D quadrature, never through the sampler's cached
//! coefficient-space summaries.

#![allow(dead_code)]

use mgfactor::basis::{BasisSystem, TimeGrid};
use mgfactor::gibbs::{self, Block, NoisePrior, SamplerConfig, Workspace};
use mgfactor::model::{FunctionalDataset, GroupData, ModelState};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// T=6, R=4, L=K=1, two groups of three subjects, data simulated from a
/// prior draw.
pub struct Tiny {
    pub data: FunctionalDataset,
    pub basis: BasisSystem,
    pub state: ModelState,
    pub ws: Workspace,
    pub config: SamplerConfig,
}

pub fn tiny(seed: u64) -> Tiny {
    let grid = TimeGrid::uniform(6).unwrap();
    let config = SamplerConfig {
        num_basis: Some(4),
        l_max: 1,
        k_max: 1,
        ridge: 0.5,
        noise_prior: NoisePrior::InvGamma { shape: 3.0, scale: 1.0 },
        iterations: 10,
        burn_in: 0,
        ..SamplerConfig::default()
    };
    let basis = config.build_basis(&grid).unwrap();
    let mut r = rng(seed);
    let mut state = gibbs::sample_prior_state(&basis, &config, &[3, 3], &mut r).unwrap();
    // keep both blocks' loadings clearly away from zero
    state.shared.gamma[0] = 1.5;
    state.specific[0].gamma[0] = -1.2;
    state.specific[1].gamma[0] = 0.8;
    let y = gibbs::simulate_curves(&state, &basis, &mut r).unwrap();
    let groups = y
        .into_iter()
        .enumerate()
        .map(|(s, m)| GroupData::new(format!("g{}", s + 1), m))
        .collect();
    let data = FunctionalDataset::new(grid, groups).unwrap();
    let ws = Workspace::new(&data, &basis).unwrap();
    Tiny {
        data,
        basis,
        state,
        ws,
        config,
    }
}

/// Latent curve of subject `i` in group `s`, built column by column.
pub fn subject_curve(state: &ModelState, basis: &BasisSystem, s: usize, i: usize) -> DVector<f64> {
    let lambda = state.lambda();
    let phi = state.phi(s);
    let mut coef = state.beta[s].clone();
    for l in 0..lambda.ncols() {
        coef += lambda.column(l) * state.eta[s][(i, l)];
    }
    for k in 0..phi.ncols() {
        coef += phi.column(k) * state.rho[s][(i, k)];
    }
    &basis.b * coef
}

pub fn rss_direct(state: &ModelState, data: &FunctionalDataset, basis: &BasisSystem, s: usize) -> f64 {
    let y = &data.groups[s].y;
    let mut total = 0.0;
    for i in 0..y.nrows() {
        let f = subject_curve(state, basis, s, i);
        for t in 0..y.ncols() {
            total += (y[(i, t)] - f[t]).powi(2);
        }
    }
    total
}

/// Posterior of a Gaussian linear model `r = D x + e`, `e ~ N(0, σ² I)`,
/// prior `N(m, P0^-1)`, computed by explicit inversion.
pub fn dense_gaussian(
    designs: &[(DMatrix<f64>, DVector<f64>, f64)],
    prior_precision: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut precision = prior_precision.clone();
    let mut linear = prior_precision * prior_mean;
    for (d, r, s2) in designs {
        precision += d.transpose() * d / *s2;
        linear += d.transpose() * r / *s2;
    }
    let cov = precision.try_inverse().expect("posterior precision is invertible");
    (&cov * linear, cov)
}

/// `β_s` oracle: stacked `(n T) x R` design.
pub fn beta_oracle(t: &Tiny, s: usize) -> (DVector<f64>, DMatrix<f64>) {
    let mut st = t.state.clone();
    st.beta[s].fill(0.0);
    let y = &t.data.groups[s].y;
    let designs: Vec<_> = (0..y.nrows())
        .map(|i| {
            let offset = subject_curve(&st, &t.basis, s, i);
            let r = y.row(i).transpose() - offset;
            (t.basis.b.clone(), r, st.sigma2_eps[s])
        })
        .collect();
    let r = t.basis.num_basis;
    dense_gaussian(&designs, &(penalty_oracle(r, t.basis.ridge) / st.sigma2_beta[s]), &DVector::zeros(r))
}

/// `D'D + ridge I` with `D` the explicit `(R-2) x R` second-difference matrix.
pub fn penalty_oracle(r: usize, ridge: f64) -> DMatrix<f64> {
    let d = DMatrix::from_fn(r - 2, r, |i, j| match j as isize - i as isize {
        0 | 2 => 1.0,
        1 => -2.0,
        _ => 0.0,
    });
    d.transpose() * d + DMatrix::identity(r, r) * ridge
}

fn block_groups(block: Block, groups: usize) -> Vec<usize> {
    match block {
        Block::Shared => (0..groups).collect(),
        Block::Specific(s) => vec![s],
    }
}

fn zero_block(state: &mut ModelState, block: Block) {
    match block {
        Block::Shared => state.shared.gamma.fill(0.0),
        Block::Specific(s) => state.specific[s].gamma.fill(0.0),
    }
}

/// `vec(Ξ)` oracle: design column `(l, r)` is `B[:, r] γ_l score_il`.
pub fn xi_oracle(t: &Tiny, block: Block) -> (DVector<f64>, DMatrix<f64>) {
    let st = &t.state;
    let blk = match block {
        Block::Shared => &st.shared,
        Block::Specific(s) => &st.specific[s],
    };
    let (r, l) = blk.xi.shape();
    let mut without = st.clone();
    zero_block(&mut without, block);
    let mut designs = Vec::new();
    for s in block_groups(block, st.num_groups()) {
        let y = &t.data.groups[s].y;
        let scores = match block {
            Block::Shared => &st.eta[s],
            Block::Specific(_) => &st.rho[s],
        };
        for i in 0..y.nrows() {
            let mut d = DMatrix::zeros(y.ncols(), r * l);
            for c in 0..l {
                let w = blk.gamma[c] * scores[(i, c)];
                for k in 0..r {
                    d.set_column(c * r + k, &(t.basis.b.column(k) * w));
                }
            }
            let resid = y.row(i).transpose() - subject_curve(&without, &t.basis, s, i);
            designs.push((d, resid, st.sigma2_eps[s]));
        }
    }
    let prior_mean = DVector::from_column_slice(blk.signs.as_slice());
    dense_gaussian(&designs, &DMatrix::identity(r * l, r * l), &prior_mean)
}

/// Score oracle for subject `i` of group `s`: design `B M`.
pub fn score_oracle(t: &Tiny, s: usize, i: usize, block: Block) -> (DVector<f64>, DMatrix<f64>) {
    let st = &t.state;
    let mut without = st.clone();
    let loadings = match block {
        Block::Shared => {
            without.eta[s].fill(0.0);
            st.lambda()
        }
        Block::Specific(_) => {
            without.rho[s].fill(0.0);
            st.phi(s)
        }
    };
    let q = loadings.ncols();
    let resid = t.data.groups[s].y.row(i).transpose() - subject_curve(&without, &t.basis, s, i);
    dense_gaussian(
        &[(&t.basis.b * loadings, resid, st.sigma2_eps[s])],
        &DMatrix::identity(q, q),
        &DVector::zeros(q),
    )
}

/// Mean and variance of an unnormalized log density on `[lo, hi]` by
/// composite Simpson quadrature.
pub fn quadrature_moments(log_density: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let n = points + points % 2;
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|k| lo + h * k as f64).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, (&x, &lg)) in xs.iter().zip(&logs).enumerate() {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let p = w * (lg - top).exp();
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Mean and variance of a positive variable with unnormalized log density
/// `log_density(v)`, integrating over `u = log v`.
pub fn positive_quadrature(log_density: impl Fn(f64) -> f64, centre: f64) -> (f64, f64) {
    let c = centre.ln();
    let lo = c - 8.0;
    let hi = c + 8.0;
    // density of u is p(e^u) e^u; moments of v = e^u
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let logs: Vec<f64> = (0..=n)
        .map(|k| {
            let u = lo + h * k as f64;
            log_density(u.exp()) + u
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, lg) in logs.iter().enumerate() {
        let w = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let v = (lo + h * k as f64).exp();
        let p = w * (lg - top).exp();
        z += p;
        m1 += p * v;
        m2 += p * v * v;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// `σ²_ε_s` oracle under the tiny instance's Inv-Gamma noise prior.
pub fn sigma_eps_oracle(t: &Tiny, s: usize) -> (f64, f64) {
    let NoisePrior::InvGamma { shape, scale } = t.config.noise_prior else {
        unreachable!("tiny instance uses a proper prior")
    };
    let rss = rss_direct(&t.state, &t.data, &t.basis, s);
    let count = t.data.groups[s].y.len() as f64;
    positive_quadrature(
        |v| -(shape + 1.0) * v.ln() - scale / v - 0.5 * count * v.ln() - rss / (2.0 * v),
        rss / count,
    )
}

/// `σ²_β_s` oracle; the penalty form is summed from second differences.
pub fn sigma_beta_oracle(t: &Tiny, s: usize) -> (f64, f64) {
    let (a, b) = (t.config.a_beta, t.config.b_beta);
    let beta = &t.state.beta[s];
    let diffs: f64 = (2..beta.len()).map(|j| (beta[j] - 2.0 * beta[j - 1] + beta[j - 2]).powi(2)).sum();
    let quad = diffs + t.basis.ridge * beta.norm_squared();
    let r = t.basis.num_basis as f64;
    positive_quadrature(
        |v| -(a + 1.0) * v.ln() - b / v - 0.5 * r * v.ln() - quad / (2.0 * v),
        (b + quad / 2.0) / (a + r / 2.0),
    )
}

/// `γ_l` oracle: log posterior evaluated through full time-space residuals.
pub fn gamma_oracle(t: &Tiny, block: Block, l: usize, window: (f64, f64)) -> (f64, f64) {
    let st = &t.state;
    let groups = block_groups(block, st.num_groups());
    let prior_var = match block {
        Block::Shared => st.shared.cusp.gamma_prior_var(l),
        Block::Specific(s) => st.specific[s].cusp.gamma_prior_var(l),
    };
    let log_post = |g: f64| {
        let mut trial = st.clone();
        match block {
            Block::Shared => trial.shared.gamma[l] = g,
            Block::Specific(s) => trial.specific[s].gamma[l] = g,
        }
        let mut lp = -g * g / (2.0 * prior_var);
        for &s in &groups {
            lp -= rss_direct(&trial, &t.data, &t.basis, s) / (2.0 * trial.sigma2_eps[s]);
        }
        lp
    };
    quadrature_moments(log_post, window.0, window.1, 4000)
}

/// `σ²_γl` oracle given `γ_l` and `θ_l`.
pub fn gamma_scale_oracle(gamma: f64, theta: f64, a1: f64, a2: f64) -> (f64, f64) {
    positive_quadrature(
        |v| -(a1 + 1.0) * v.ln() - a2 / v - 0.5 * (theta * v).ln() - gamma * gamma / (2.0 * theta * v),
        (a2 + gamma * gamma / (2.0 * theta)) / (a1 + 0.5),
    )
}

/// Empirical mean and its standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Empirical variance and its standard error (from the fourth moment).
pub fn var_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (v, ((m4 - v * v) / n).sqrt())
}

/// `|a - b| <= tol * max(|b|, 1e-300)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

/// Check `draws` (one sample vector per component) against target means and
/// variances; returns the worst standardized deviation.
pub fn worst_z(draws: &[Vec<f64>], means: &[f64], vars: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for ((x, m), v) in draws.iter().zip(means).zip(vars) {
        let (em, se) = mean_se(x);
        worst = worst.max(((em - m) / se).abs());
        let (ev, vse) = var_se(x);
        worst = worst.max(((ev - v) / vse).abs());
    }
    worst
}

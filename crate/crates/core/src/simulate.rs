//! Simulation scenarios: a fixed latent truth and replicated noisy datasets
//! at a controlled signal-to-noise ratio.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{build_bspline_basis, TimeGrid};
use crate::dist;
use crate::error::{Error, Result};
use crate::model::{FunctionalDataset, GroupData};

/// Dimensions and noise level of one simulation scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub l_true: usize,
    pub k_true: Vec<usize>,
    pub n: Vec<usize>,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_r")]
    pub r: usize,
    /// Defaults to `0.2 + 0.2 (s - 1)` for group `s` (1-based).
    #[serde(default)]
    pub sigma2_beta_true: Vec<f64>,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_t() -> usize {
    60
}
fn default_r() -> usize {
    30
}
fn default_snr() -> f64 {
    2.0
}
fn default_replicates() -> usize {
    1
}
fn default_seed() -> u64 {
    1
}

pub fn default_sigma2_beta(groups: usize) -> Vec<f64> {
    (0..groups).map(|s| 0.2 + 0.2 * s as f64).collect()
}

impl ScenarioConfig {
    pub fn new(l_true: usize, k_true: Vec<usize>, n: Vec<usize>) -> Self {
        let groups = n.len();
        Self {
            name: String::new(),
            l_true,
            k_true,
            n,
            t: default_t(),
            r: default_r(),
            sigma2_beta_true: default_sigma2_beta(groups),
            snr: default_snr(),
            replicates: default_replicates(),
            seed: default_seed(),
        }
    }

    /// Named preset such as `"A-322-n40-80"`, `"B-300-n40-40"` or
    /// `"C-022-n80-80"`. The digits give `L`, `K_1`, `K_2`.
    pub fn preset(name: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown scenario preset {name:?}"));
        let parts: Vec<&str> = name.split('-').collect();
        let [family, dims, n1, n2] = parts.as_slice() else {
            return Err(bad());
        };
        let dims = match (*family, *dims) {
            ("A", "322") => (3, [2, 2]),
            ("A", "320") => (3, [2, 0]),
            ("B", "300") => (3, [0, 0]),
            ("C", "022") => (0, [2, 2]),
            _ => return Err(bad()),
        };
        let n1: usize = n1.strip_prefix('n').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let n2: usize = n2.parse().map_err(|_| bad())?;
        if ![(40, 40), (80, 80), (40, 80)].contains(&(n1, n2)) {
            return Err(bad());
        }
        let mut cfg = Self::new(dims.0, dims.1.to_vec(), vec![n1, n2]);
        cfg.name = name.to_string();
        Ok(cfg)
    }

    pub fn num_groups(&self) -> usize {
        self.n.len()
    }

    pub fn validate(&self) -> Result<()> {
        let groups = self.n.len();
        if groups == 0 {
            return Err(Error::InvalidConfig("scenario needs at least one group".into()));
        }
        if self.k_true.len() != groups {
            return Err(Error::InvalidConfig("k_true must list one count per group".into()));
        }
        if !self.sigma2_beta_true.is_empty() && self.sigma2_beta_true.len() != groups {
            return Err(Error::InvalidConfig("sigma2_beta_true must list one value per group".into()));
        }
        if self.sigma2_beta_true.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidConfig("sigma2_beta_true must be nonnegative".into()));
        }
        if self.n.contains(&0) {
            return Err(Error::InvalidConfig("every group needs at least one subject".into()));
        }
        if !(self.snr.is_finite() && self.snr > 0.0) {
            return Err(Error::InvalidConfig("snr must be positive".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.t < 4 || self.r < 4 || self.r > self.t {
            return Err(Error::InvalidConfig(format!(
                "need 4 <= r <= t, got t={} r={}",
                self.t, self.r
            )));
        }
        Ok(())
    }

    pub fn sigma2_beta(&self) -> Vec<f64> {
        if self.sigma2_beta_true.is_empty() {
            default_sigma2_beta(self.n.len())
        } else {
            self.sigma2_beta_true.clone()
        }
    }
}

/// Latent truth shared by every replicate of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTruth {
    pub config: ScenarioConfig,
    pub grid: TimeGrid,
    /// `T x R` basis used to build the truth.
    pub basis: DMatrix<f64>,
    pub beta: Vec<DVector<f64>>,
    /// `R x L`.
    pub lambda: DMatrix<f64>,
    /// `R x K_s` per group.
    pub phi: Vec<DMatrix<f64>>,
    /// Latent curves, `n_s x T` per group.
    pub f: Vec<DMatrix<f64>>,
    pub sigma2_eps: Vec<f64>,
    /// `B Λ Λ' B' + B Φ_s Φ_s' B'` per group.
    pub sigma_f: Vec<DMatrix<f64>>,
}

impl ScenarioTruth {
    /// Shared loadings on the grid, `B Λ`.
    pub fn lambda_time(&self) -> DMatrix<f64> {
        &self.basis * &self.lambda
    }

    pub fn phi_time(&self, s: usize) -> DMatrix<f64> {
        &self.basis * &self.phi[s]
    }
}

/// Stream 0 is the truth; replicate `k` uses stream `k + 1`.
pub fn scenario_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal_matrix(rows: usize, cols: usize, var: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let sd = var.sqrt();
    DMatrix::from_fn(rows, cols, |_, _| sd * dist::std_normal(rng))
}

fn gram(m: &DMatrix<f64>) -> DMatrix<f64> {
    m * m.transpose()
}

/// Draw the fixed truth of a scenario from its seed.
pub fn generate_truth(config: &ScenarioConfig) -> Result<ScenarioTruth> {
    config.validate()?;
    let mut rng = scenario_rng(config.seed, 0);
    let grid = TimeGrid::uniform(config.t)?;
    let basis = build_bspline_basis(&grid, config.r)?;
    let r = config.r;
    let s2b = config.sigma2_beta();
    let beta: Vec<DVector<f64>> = s2b
        .iter()
        .map(|v| normal_matrix(r, 1, *v, &mut rng).column(0).into_owned())
        .collect();
    let lambda = normal_matrix(r, config.l_true, 1.0, &mut rng);
    let phi: Vec<DMatrix<f64>> = config.k_true.iter().map(|k| normal_matrix(r, *k, 1.0, &mut rng)).collect();

    let mut f = Vec::with_capacity(config.n.len());
    let mut sigma_f = Vec::with_capacity(config.n.len());
    let mut sigma2_eps = Vec::with_capacity(config.n.len());
    for (s, &n) in config.n.iter().enumerate() {
        let eta = normal_matrix(n, config.l_true, 1.0, &mut rng);
        let rho = normal_matrix(n, config.k_true[s], 1.0, &mut rng);
        let mut coef = &lambda * eta.transpose() + &phi[s] * rho.transpose();
        for mut col in coef.column_iter_mut() {
            col += &beta[s];
        }
        f.push((&basis * coef).transpose());
        let cov = gram(&(&basis * &lambda)) + gram(&(&basis * &phi[s]));
        let trace = cov.trace();
        if trace <= 0.0 {
            return Err(Error::DegenerateScenario(format!(
                "group {} has no latent signal, so the noise variance for snr={} is zero",
                s + 1,
                config.snr
            )));
        }
        sigma2_eps.push(trace / (config.t as f64 * config.snr));
        sigma_f.push(cov);
    }
    Ok(ScenarioTruth {
        config: config.clone(),
        grid,
        basis,
        beta,
        lambda,
        phi,
        f,
        sigma2_eps,
        sigma_f,
    })
}

/// Add fresh noise to the truth; replicate `index` is reproducible from the
/// scenario seed alone.
pub fn generate_replicate(truth: &ScenarioTruth, index: usize) -> Result<FunctionalDataset> {
    let mut rng = scenario_rng(truth.config.seed, index as u64 + 1);
    let groups = truth
        .f
        .iter()
        .zip(&truth.sigma2_eps)
        .enumerate()
        .map(|(s, (f, v))| {
            let noise = normal_matrix(f.nrows(), f.ncols(), *v, &mut rng);
            GroupData::new(format!("g{}", s + 1), f + noise)
        })
        .collect();
    FunctionalDataset::new(truth.grid.clone(), groups)
}

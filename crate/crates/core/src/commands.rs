//! The `simulate`, `fit`, `postprocess` and `metrics` commands.
//!
//! Each command writes into an output directory and returns the files it
//! produced; [`run`] wraps a command with the run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, TimeGrid};
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, PosteriorDraws, SamplerConfig};
use crate::io::{self, fmt_f64, FitMeta, RunConfig, RunManifest, Table};
use crate::metrics::{geweke_diagnostic, pointwise_mse, rv_coefficient, GEWEKE_FIRST, GEWEKE_LAST};
use crate::model::{FunctionalDataset, GroupData};
use crate::postprocess::{summarize, FactorConfiguration, PosteriorSummary};
use crate::simulate::{generate_replicate, generate_truth, ScenarioConfig, ScenarioTruth};

/// Rows kept in the configuration-frequency table.
pub const HISTOGRAM_ROWS: usize = 15;

#[derive(Clone, Debug)]
pub enum Command {
    Simulate,
    Fit { data: PathBuf, grid: Option<PathBuf> },
    Postprocess { draws: PathBuf },
    Metrics { truth: PathBuf, results: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Fit { .. } => "fit",
            Command::Postprocess { .. } => "postprocess",
            Command::Metrics { .. } => "metrics",
        }
    }

    fn inputs(&self) -> Vec<String> {
        let show = |p: &Path| p.display().to_string();
        match self {
            Command::Simulate => vec![],
            Command::Fit { data, grid } => std::iter::once(show(data)).chain(grid.as_deref().map(show)).collect(),
            Command::Postprocess { draws } => vec![show(draws)],
            Command::Metrics { truth, results } => vec![show(truth), show(results)],
        }
    }
}

/// Everything a command needs besides its own paths.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: RunConfig,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl RunOptions {
    pub fn seed(&self) -> u64 {
        self.seed.or(self.config.seed).unwrap_or(self.config.sampler.seed)
    }
}

/// Execute a command and write `manifest.json` into the output directory.
pub fn run(command: &Command, opts: &RunOptions) -> Result<RunManifest> {
    let started = io::unix_now();
    io::create_dir(&opts.out)?;
    let outputs = match command {
        Command::Simulate => simulate(opts)?,
        Command::Fit { data, grid } => fit(data, grid.as_deref(), opts)?,
        Command::Postprocess { draws } => postprocess(draws, &opts.out)?,
        Command::Metrics { truth, results } => metrics(truth, results, &opts.out)?,
    };
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_digest: opts.config_digest.clone(),
        seed: opts.seed(),
        started_unix: started,
        finished_unix: io::unix_now(),
        inputs: command.inputs(),
        outputs: outputs
            .iter()
            .map(|p| p.strip_prefix(&opts.out).unwrap_or(p).display().to_string())
            .collect(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    io::write_json(&opts.out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- simulate

#[derive(Serialize, Deserialize)]
struct TruthParams {
    scenario: ScenarioConfig,
    sigma2_eps: Vec<f64>,
    beta: Vec<Vec<f64>>,
}

pub fn replicate_file(k: usize) -> String {
    format!("dataset_r{k}.csv")
}

pub fn simulate(opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let section = opts
        .config
        .scenario
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("simulate needs a [scenario] section".into()))?;
    let scenario = section.resolve(opts.seed())?;
    let truth = generate_truth(&scenario)?;
    let out = &opts.out;
    let mut files = write_truth(out, &truth)?;
    let replicates: Vec<PathBuf> = (1..=scenario.replicates)
        .into_par_iter()
        .map(|k| {
            let data = generate_replicate(&truth, k - 1)?;
            let path = out.join(replicate_file(k));
            io::write_curves(&path, &data.groups)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    files.extend(replicates);
    Ok(files)
}

fn write_truth(out: &Path, truth: &ScenarioTruth) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let path = out.join("grid.csv");
    io::write_grid(&path, &truth.grid)?;
    files.push(path);

    let groups: Vec<GroupData> = truth
        .f
        .iter()
        .enumerate()
        .map(|(s, f)| GroupData::new(format!("g{}", s + 1), f.clone()))
        .collect();
    let path = out.join("truth_curves.csv");
    io::write_curves(&path, &groups)?;
    files.push(path);

    let path = out.join("truth_loadings_shared.csv");
    io::write_loadings(&path, &truth.lambda_time())?;
    files.push(path);
    for s in 0..truth.phi.len() {
        let path = out.join(format!("truth_loadings_g{}.csv", s + 1));
        io::write_loadings(&path, &truth.phi_time(s))?;
        files.push(path);
        let path = out.join(format!("truth_covariance_g{}.csv", s + 1));
        io::write_matrix(&path, &truth.sigma_f[s])?;
        files.push(path);
    }
    let path = out.join("truth_params.json");
    io::write_json(
        &path,
        &TruthParams {
            scenario: truth.config.clone(),
            sigma2_eps: truth.sigma2_eps.clone(),
            beta: truth.beta.iter().map(|b| b.iter().copied().collect()).collect(),
        },
    )?;
    files.push(path);
    Ok(files)
}

// ---------------------------------------------------------------- fit

/// Numbered replicate files `dataset_r{k}.csv` in a directory, by `k`.
fn replicate_datasets(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(k) = name
            .strip_prefix("dataset_r")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        {
            found.insert(k, entry.path());
        }
    }
    Ok(found)
}

/// Fit one dataset file, or every `dataset_r{k}.csv` of a directory into
/// `r{k}/` subdirectories (replicate `k` uses seed `seed + k - 1`).
pub fn fit(data: &Path, grid: Option<&Path>, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let mut sampler = opts.config.sampler.clone();
    sampler.seed = opts.seed();
    sampler.validate()?;
    if data.is_dir() {
        let grid = grid.map_or_else(|| data.join("grid.csv"), Path::to_path_buf);
        let sets = replicate_datasets(data)?;
        if sets.is_empty() {
            return Err(Error::InvalidData(format!("no dataset_r*.csv files in {}", data.display())));
        }
        let nested: Vec<Vec<PathBuf>> = sets
            .par_iter()
            .map(|(k, path)| {
                let mut cfg = sampler.clone();
                cfg.seed = sampler.seed.wrapping_add(*k as u64 - 1);
                fit_one(path, &grid, &cfg, &opts.out.join(format!("r{k}")))
            })
            .collect::<Result<_>>()?;
        Ok(nested.into_iter().flatten().collect())
    } else {
        let grid = match grid {
            Some(g) => g.to_path_buf(),
            None => data.parent().unwrap_or(Path::new(".")).join("grid.csv"),
        };
        fit_one(data, &grid, &sampler, &opts.out)
    }
}

fn fit_one(data: &Path, grid: &Path, config: &SamplerConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let dataset = io::read_dataset(data, grid)?;
    io::create_dir(out)?;
    let draws = run_chain(&dataset, config)?;
    let basis = config.build_basis(&dataset.grid)?;
    let mut files = Vec::new();

    let draw_dir = out.join("draws");
    io::write_draws(&draw_dir, &draws.draws)?;
    files.extend(io::DRAW_FAMILIES.iter().map(|f| draw_dir.join(format!("{f}.csv"))));

    let path = out.join("configurations.csv");
    io::write_config_log(&path, &draws, config)?;
    files.push(path);

    let path = out.join("geweke.csv");
    write_geweke(&path, &draws, basis.num_basis, config.seed)?;
    files.push(path);

    let path = out.join("meta.json");
    io::write_json(&path, &fit_meta(&dataset, &basis, config))?;
    files.push(path);
    Ok(files)
}

fn fit_meta(data: &FunctionalDataset, basis: &BasisSystem, config: &SamplerConfig) -> FitMeta {
    FitMeta {
        num_basis: basis.num_basis,
        ridge: basis.ridge,
        l_max: config.l_max,
        k_max: config.k_max,
        grid: data.grid.points().to_vec(),
        group_ids: data.groups.iter().map(|g| g.group_id.clone()).collect(),
        subject_ids: data.groups.iter().map(|g| g.subject_ids.clone()).collect(),
        sampler: config.clone(),
    }
}

/// `(group, basis index)` pairs of the β components tracked by the Geweke
/// table; chosen by the run seed.
pub fn diagnostic_beta_indices(seed: u64, groups: usize, num_basis: usize) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let total = groups * num_basis;
    rand::seq::index::sample(&mut rng, total, total.min(3))
        .into_iter()
        .map(|k| (k / num_basis, k % num_basis))
        .collect()
}

fn write_geweke(path: &Path, draws: &PosteriorDraws, num_basis: usize, seed: u64) -> Result<()> {
    let mut t = Table::create(path, &["parameter", "group", "index", "z"])?;
    let mut emit = |name: &str, group: usize, index: usize, chain: Vec<f64>| -> Result<()> {
        let z = match geweke_diagnostic(&chain, GEWEKE_FIRST, GEWEKE_LAST) {
            Ok(z) => fmt_f64(z),
            Err(e) => {
                log::warn!("Geweke z for {name} group {group} unavailable: {e}");
                "NA".to_string()
            }
        };
        t.row([name.to_string(), group.to_string(), index.to_string(), z])
    };
    let groups = draws.num_groups();
    for s in 0..groups {
        emit("sigma2_eps", s + 1, 1, draws.sigma2_eps_trace(s))?;
        emit("sigma2_beta", s + 1, 1, draws.sigma2_beta_trace(s))?;
    }
    if groups > 0 {
        for (s, r) in diagnostic_beta_indices(seed, groups, num_basis) {
            emit("beta", s + 1, r + 1, draws.beta_trace(s, r))?;
        }
    }
    t.finish()
}

// ---------------------------------------------------------------- postprocess

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PostprocessSummary {
    pub configuration: Vec<usize>,
    pub retained: usize,
    pub modal_draws: usize,
    pub warnings: Vec<String>,
}

/// Subdirectories `r{k}` of a results directory, by `k`.
fn replicate_dirs(dir: &Path) -> Result<BTreeMap<usize, PathBuf>> {
    let mut found = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if !entry.path().is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(k) = name.strip_prefix('r').and_then(|s| s.parse::<usize>().ok()) {
            found.insert(k, entry.path());
        }
    }
    Ok(found)
}

/// Identify one fit directory (containing `meta.json`), or every `r{k}`
/// fit below the given directory.
pub fn postprocess(fit_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    if fit_dir.join("meta.json").exists() {
        return postprocess_one(fit_dir, out);
    }
    let fits = replicate_dirs(fit_dir)?;
    if fits.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} holds neither meta.json nor r<k> fit directories",
            fit_dir.display()
        )));
    }
    let nested: Vec<Vec<PathBuf>> = fits
        .par_iter()
        .map(|(k, dir)| postprocess_one(dir, &out.join(format!("r{k}"))))
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Load the retained draws of a fit directory.
pub fn load_fit(fit_dir: &Path) -> Result<(FitMeta, BasisSystem, PosteriorDraws)> {
    let meta: FitMeta = io::read_json(&fit_dir.join("meta.json"))?;
    let grid = TimeGrid::new(meta.grid.clone())?;
    let basis = BasisSystem::new(&grid, meta.num_basis, meta.ridge)?;
    let draws = io::read_draws(&fit_dir.join("draws"), &meta)?;
    if draws.is_empty() {
        return Err(Error::EmptyDraws(format!("{} has no retained draws", fit_dir.display())));
    }
    let configs: Vec<FactorConfiguration> = draws.iter().map(|d| d.configuration()).collect();
    let posterior = PosteriorDraws {
        draws,
        config_trace: configs.clone(),
        configs,
    };
    Ok((meta, basis, posterior))
}

fn postprocess_one(fit_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let (meta, basis, draws) = load_fit(fit_dir)?;
    let summary = summarize(&draws, &basis)?;
    io::create_dir(out)?;
    write_summary(out, &meta, &summary, draws.len())
}

fn write_summary(out: &Path, meta: &FitMeta, summary: &PosteriorSummary, retained: usize) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    let groups = meta.group_ids.len();

    let path = out.join("configuration_histogram.csv");
    let mut header = vec!["configuration".to_string(), "l_star".to_string()];
    header.extend((1..=groups).map(|g| format!("k_{g}")));
    header.push("count".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(&path, &header)?;
    for (config, count) in summary.histogram.iter().take(HISTOGRAM_ROWS) {
        let mut row = vec![config.label()];
        row.extend(config.as_tuple().iter().map(usize::to_string));
        row.push(count.to_string());
        t.row(row)?;
    }
    t.finish()?;
    files.push(path);

    let loads = &summary.loadings;
    let mut matrix = |name: String, m: &DMatrix<f64>, loadings: bool| -> Result<()> {
        let path = out.join(name);
        if loadings {
            io::write_loadings(&path, m)?;
        } else {
            io::write_matrix(&path, m)?;
        }
        files.push(path);
        Ok(())
    };
    matrix("loadings_shared.csv".into(), &loads.shared, true)?;
    matrix("covariance_shared.csv".into(), &loads.sigma_lambda_hat, false)?;
    for s in 0..groups {
        let g = s + 1;
        matrix(format!("loadings_g{g}.csv"), &loads.specific[s], true)?;
        matrix(format!("covariance_specific_g{g}.csv"), &loads.sigma_phi_hat[s], false)?;
        matrix(format!("covariance_total_g{g}.csv"), &loads.sigma_f_hat[s], false)?;
        matrix(format!("covariance_residual_g{g}.csv"), &loads.sigma_res_hat[s], false)?;
    }

    for s in 0..groups {
        let path = out.join(format!("curves_g{}.csv", s + 1));
        let mut t = Table::create(&path, &["subject_id", "time", "mean", "lower", "upper"])?;
        let (mean, lo, hi) = (&summary.curves.mean[s], &summary.curves.lower[s], &summary.curves.upper[s]);
        for (i, sid) in meta.subject_ids[s].iter().enumerate() {
            for j in 0..mean.ncols() {
                t.row([
                    sid.clone(),
                    (j + 1).to_string(),
                    fmt_f64(mean[(i, j)]),
                    fmt_f64(lo[(i, j)]),
                    fmt_f64(hi[(i, j)]),
                ])?;
            }
        }
        t.finish()?;
        files.push(path);
    }

    let path = out.join("summary.json");
    io::write_json(
        &path,
        &PostprocessSummary {
            configuration: summary.configuration.as_tuple(),
            retained,
            modal_draws: summary.members.len(),
            warnings: loads.warnings.clone(),
        },
    )?;
    files.push(path);
    Ok(files)
}

// ---------------------------------------------------------------- metrics

/// Read posterior mean curves (`n_s x T`) from a postprocess directory.
pub fn read_curve_means(path: &Path, times: usize) -> Result<DMatrix<f64>> {
    let (header, rows) = io::read_table(path)?;
    if header.first().map(String::as_str) != Some("subject_id") || rows.len() % times != 0 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "expected subject_id,time,mean,lower,upper rows, T per subject".into(),
        });
    }
    let n = rows.len() / times;
    let mut m = DMatrix::zeros(n, times);
    for (k, r) in rows.iter().enumerate() {
        m[(k / times, k % times)] = r[2].parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            message: format!("not a number: {:?}", &r[2]),
        })?;
    }
    Ok(m)
}

/// RV and MSE tables comparing every replicate's estimates with the truth.
pub fn metrics(truth_dir: &Path, results_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let truth_keys: BTreeSet<usize> = replicate_datasets(truth_dir)?.into_keys().collect();
    let result_dirs = replicate_dirs(results_dir)?;
    let result_keys: BTreeSet<usize> = result_dirs
        .iter()
        .filter(|(_, d)| d.join("summary.json").exists())
        .map(|(k, _)| *k)
        .collect();
    let missing: Vec<String> = truth_keys
        .symmetric_difference(&result_keys)
        .map(|k| {
            if truth_keys.contains(k) {
                format!("r{k} (no results)")
            } else {
                format!("r{k} (no truth)")
            }
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::KeyMismatch(missing.join(", ")));
    }
    if truth_keys.is_empty() {
        return Err(Error::InvalidData(format!("no replicates found in {}", truth_dir.display())));
    }

    let grid = io::read_grid(&truth_dir.join("grid.csv"))?;
    let t = grid.len();
    let truth_curves = io::read_curves(&truth_dir.join("truth_curves.csv"))?;
    let groups = truth_curves.len();
    let truth_shared = io::read_loadings(&truth_dir.join("truth_loadings_shared.csv"), t)?;
    let truth_specific = (1..=groups)
        .map(|g| io::read_loadings(&truth_dir.join(format!("truth_loadings_g{g}.csv")), t))
        .collect::<Result<Vec<_>>>()?;

    let mut files = Vec::new();
    let rv_path = out.join("rv.csv");
    let mse_path = out.join("mse.csv");
    let cfg_path = out.join("configurations.csv");
    let mut rv_table = Table::create(&rv_path, &["replicate", "block", "group", "rv"])?;
    let mut mse_table = Table::create(&mse_path, &["replicate", "group", "mse"])?;
    let mut cfg_header = vec!["replicate".to_string(), "l_star".to_string()];
    cfg_header.extend((1..=groups).map(|g| format!("k_{g}")));
    let cfg_header: Vec<&str> = cfg_header.iter().map(String::as_str).collect();
    let mut cfg_table = Table::create(&cfg_path, &cfg_header)?;
    let mut pointwise_sum = vec![vec![0.0; t]; groups];

    let rv_cell = |est: &DMatrix<f64>, truth: &DMatrix<f64>| {
        if est.ncols() == 0 || truth.ncols() == 0 {
            return "NA".to_string();
        }
        rv_coefficient(est, truth).map_or_else(|_| "NA".to_string(), fmt_f64)
    };
    for k in &truth_keys {
        let dir = &result_dirs[k];
        let rep = k.to_string();
        let summary: PostprocessSummary = io::read_json(&dir.join("summary.json"))?;
        let mut row = vec![rep.clone()];
        row.extend(summary.configuration.iter().map(usize::to_string));
        cfg_table.row(row)?;

        let shared = io::read_loadings(&dir.join("loadings_shared.csv"), t)?;
        rv_table.row([rep.as_str(), "shared", "0", &rv_cell(&shared, &truth_shared)])?;
        for s in 0..groups {
            let g = (s + 1).to_string();
            let spec = io::read_loadings(&dir.join(format!("loadings_g{g}.csv")), t)?;
            rv_table.row([rep.as_str(), "specific", &g, &rv_cell(&spec, &truth_specific[s])])?;

            let est = read_curve_means(&dir.join(format!("curves_g{g}.csv")), t)?;
            let pw = pointwise_mse(&truth_curves[s].y, &est)?;
            mse_table.row([rep.clone(), g.clone(), fmt_f64(pw.mean())])?;
            for (acc, v) in pointwise_sum[s].iter_mut().zip(pw.iter()) {
                *acc += v;
            }
        }
    }
    rv_table.finish()?;
    mse_table.finish()?;
    cfg_table.finish()?;
    files.extend([rv_path, mse_path, cfg_path]);

    let path = out.join("mse_pointwise.csv");
    let mut table = Table::create(&path, &["group", "time", "mse"])?;
    let reps = truth_keys.len() as f64;
    for (s, sums) in pointwise_sum.iter().enumerate() {
        for (j, v) in sums.iter().enumerate() {
            table.row([(s + 1).to_string(), (j + 1).to_string(), fmt_f64(v / reps)])?;
        }
    }
    table.finish()?;
    files.push(path);
    Ok(files)
}

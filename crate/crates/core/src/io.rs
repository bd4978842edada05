//! On-disk formats: run configuration, wide curve CSVs, per-family draw
//! CSVs, and run manifests.
//!
//! Every float is written with 17 significant digits, so a value written and
//! read back is bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::TimeGrid;
use crate::error::{Error, Result};
use crate::gibbs::{Draw, PosteriorDraws, SamplerConfig};
use crate::model::{FunctionalDataset, GroupData};
use crate::simulate::ScenarioConfig;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        message: format!("not a number: {s:?}"),
    })
}

fn parse_usize(s: &str, path: &Path) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        message: format!("not a nonnegative integer: {s:?}"),
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => Error::Parse {
            path: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// CSV writer that reports failures against its path.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let writer = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
        let mut table = Self { path, writer };
        table.row(header)?;
        Ok(table)
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| csv_err(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Header and records of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let rows = reader
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}

fn expect_header(path: &Path, header: &[String], expected: &[&str]) -> Result<()> {
    if header.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: format!("expected header {:?}, found {header:?}", expected.join(",")),
        });
    }
    Ok(())
}

/// Write `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------- config

/// Scenario section of a run configuration: an optional preset name plus
/// field overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub preset: Option<String>,
    pub l_true: Option<usize>,
    pub k_true: Option<Vec<usize>>,
    pub n: Option<Vec<usize>>,
    pub t: Option<usize>,
    pub r: Option<usize>,
    pub sigma2_beta_true: Option<Vec<f64>>,
    pub snr: Option<f64>,
    pub replicates: Option<usize>,
}

impl ScenarioSection {
    pub fn resolve(&self, seed: u64) -> Result<ScenarioConfig> {
        let mut cfg = match &self.preset {
            Some(name) => ScenarioConfig::preset(name)?,
            None => {
                let (Some(l), Some(k), Some(n)) = (self.l_true, self.k_true.clone(), self.n.clone()) else {
                    return Err(Error::InvalidConfig(
                        "scenario needs a preset or all of l_true, k_true and n".into(),
                    ));
                };
                ScenarioConfig::new(l, k, n)
            }
        };
        if let Some(v) = self.l_true {
            cfg.l_true = v;
        }
        if let Some(v) = &self.k_true {
            cfg.k_true = v.clone();
        }
        if let Some(v) = &self.n {
            cfg.sigma2_beta_true = crate::simulate::default_sigma2_beta(v.len());
            cfg.n = v.clone();
        }
        if let Some(v) = self.t {
            cfg.t = v;
            cfg.r = v / 2;
        }
        if let Some(v) = self.r {
            cfg.r = v;
        }
        if let Some(v) = &self.sigma2_beta_true {
            cfg.sigma2_beta_true = v.clone();
        }
        if let Some(v) = self.snr {
            cfg.snr = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of the TOML file passed with `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("{}: {}", path.display(), e.message())))
    }

    /// Read a config file; returns the config and the SHA-256 digest of its
    /// bytes.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Parse {
            path: path.display().to_string(),
            message: "config is not UTF-8".into(),
        })?;
        Ok((Self::parse(&text, path)?, digest(&bytes)))
    }
}

pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

// ---------------------------------------------------------------- curves

pub fn write_grid(path: &Path, grid: &TimeGrid) -> Result<()> {
    let mut t = Table::create(path, &["index", "time"])?;
    for (i, v) in grid.points().iter().enumerate() {
        t.row([(i + 1).to_string(), fmt_f64(*v)])?;
    }
    t.finish()
}

pub fn read_grid(path: &Path) -> Result<TimeGrid> {
    let (header, rows) = read_table(path)?;
    expect_header(path, &header, &["index", "time"])?;
    let mut points = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if parse_usize(&row[0], path)? != i + 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("grid indices must run 1..T, row {} breaks the sequence", i + 1),
            });
        }
        points.push(parse_f64(&row[1], path)?);
    }
    TimeGrid::new(points)
}

/// Wide curve table: `subject_id,group_id,t_1,...,t_T`.
pub fn write_curves(path: &Path, groups: &[GroupData]) -> Result<()> {
    let t = groups.first().map_or(0, |g| g.y.ncols());
    let mut header = vec!["subject_id".to_string(), "group_id".to_string()];
    header.extend((1..=t).map(|j| format!("t_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = Table::create(path, &header)?;
    for g in groups {
        for (i, sid) in g.subject_ids.iter().enumerate() {
            let mut row = vec![sid.clone(), g.group_id.clone()];
            row.extend(g.y.row(i).iter().map(|v| fmt_f64(*v)));
            table.row(row)?;
        }
    }
    table.finish()
}

/// Read a wide curve table; groups keep their order of first appearance.
pub fn read_curves(path: &Path) -> Result<Vec<GroupData>> {
    let (header, rows) = read_table(path)?;
    if header.len() < 3 || header[0] != "subject_id" || header[1] != "group_id" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            message: "header must start with subject_id,group_id,t_1".into(),
        });
    }
    let t = header.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut by_group: BTreeMap<String, (Vec<String>, Vec<f64>)> = BTreeMap::new();
    for row in &rows {
        if row.len() != t + 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("row for {} has {} fields, expected {}", &row[0], row.len(), t + 2),
            });
        }
        let gid = row[1].to_string();
        if !by_group.contains_key(&gid) {
            order.push(gid.clone());
        }
        let entry = by_group.entry(gid).or_default();
        entry.0.push(row[0].to_string());
        for v in row.iter().skip(2) {
            entry.1.push(parse_f64(v, path)?);
        }
    }
    Ok(order
        .into_iter()
        .map(|gid| {
            let (ids, values) = by_group.remove(&gid).expect("group recorded on first appearance");
            let n = ids.len();
            GroupData {
                group_id: gid,
                subject_ids: ids,
                y: DMatrix::from_row_slice(n, t, &values),
            }
        })
        .collect())
}

pub fn read_dataset(data: &Path, grid: &Path) -> Result<FunctionalDataset> {
    let grid = read_grid(grid)?;
    let groups = read_curves(data)?;
    if let Some(g) = groups.first() {
        if g.y.ncols() != grid.len() {
            return Err(Error::InvalidData(format!(
                "{} has {} time columns but the grid has {} points",
                data.display(),
                g.y.ncols(),
                grid.len()
            )));
        }
    }
    FunctionalDataset::new(grid, groups)
}

/// Long matrix table `row,col,value` (1-based indices).
pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut t = Table::create(path, &["row", "col", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            t.row([(i + 1).to_string(), (j + 1).to_string(), fmt_f64(m[(i, j)])])?;
        }
    }
    t.finish()
}

/// Read a `row,col,value` table into a `rows x cols` matrix.
pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let (header, records) = read_table(path)?;
    expect_header(path, &header, &["row", "col", "value"])?;
    let mut m = DMatrix::zeros(rows, cols);
    for r in &records {
        let (i, j) = (parse_usize(&r[0], path)?, parse_usize(&r[1], path)?);
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("entry ({i},{j}) outside {rows}x{cols}"),
            });
        }
        m[(i - 1, j - 1)] = parse_f64(&r[2], path)?;
    }
    Ok(m)
}

/// Loadings table `time,component,value` (1-based indices).
pub fn write_loadings(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut t = Table::create(path, &["time", "component", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            t.row([(i + 1).to_string(), (j + 1).to_string(), fmt_f64(m[(i, j)])])?;
        }
    }
    t.finish()
}

pub fn read_loadings(path: &Path, times: usize) -> Result<DMatrix<f64>> {
    let (header, records) = read_table(path)?;
    expect_header(path, &header, &["time", "component", "value"])?;
    let mut cols = 0;
    for r in &records {
        cols = cols.max(parse_usize(&r[1], path)?);
    }
    let mut m = DMatrix::zeros(times, cols);
    for r in &records {
        let (i, j) = (parse_usize(&r[0], path)?, parse_usize(&r[1], path)?);
        if i == 0 || j == 0 || i > times {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: format!("entry ({i},{j}) outside the {times}-point grid"),
            });
        }
        m[(i - 1, j - 1)] = parse_f64(&r[2], path)?;
    }
    Ok(m)
}

// ---------------------------------------------------------------- draws

/// Shapes needed to rebuild draws from their CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub num_basis: usize,
    pub ridge: f64,
    pub l_max: usize,
    pub k_max: usize,
    pub grid: Vec<f64>,
    pub group_ids: Vec<String>,
    pub subject_ids: Vec<Vec<String>>,
    pub sampler: SamplerConfig,
}

impl FitMeta {
    pub fn group_sizes(&self) -> Vec<usize> {
        self.subject_ids.iter().map(Vec::len).collect()
    }
}

pub const DRAW_HEADER: [&str; 5] = ["iteration", "group", "row", "col", "value"];

/// Parameter families, each stored as `draws/<name>.csv`. Group 0 marks the
/// shared block; groups are 1-based otherwise.
pub const DRAW_FAMILIES: [&str; 11] = [
    "beta",
    "sigma2_eps",
    "sigma2_beta",
    "lambda",
    "phi",
    "eta",
    "rho",
    "gamma_shared",
    "gamma_specific",
    "z_shared",
    "z_specific",
];

fn push_matrix(t: &mut Table, it: &str, group: usize, m: &DMatrix<f64>) -> Result<()> {
    let g = group.to_string();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            t.row([it, &g, &(i + 1).to_string(), &(j + 1).to_string(), &fmt_f64(m[(i, j)])])?;
        }
    }
    Ok(())
}

fn push_vector(t: &mut Table, it: &str, group: usize, v: impl IntoIterator<Item = f64>) -> Result<()> {
    let g = group.to_string();
    for (i, x) in v.into_iter().enumerate() {
        t.row([it, &g, &(i + 1).to_string(), "1", &fmt_f64(x)])?;
    }
    Ok(())
}

fn push_indices(t: &mut Table, it: &str, group: usize, z: &[usize]) -> Result<()> {
    let g = group.to_string();
    for (i, x) in z.iter().enumerate() {
        // indicators are stored 1-based, as in the model notation
        t.row([it, &g, &(i + 1).to_string(), "1", &(x + 1).to_string()])?;
    }
    Ok(())
}

pub fn write_draws(dir: &Path, draws: &[Draw]) -> Result<()> {
    create_dir(dir)?;
    let mut tables: Vec<Table> = DRAW_FAMILIES
        .iter()
        .map(|name| Table::create(dir.join(format!("{name}.csv")), &DRAW_HEADER))
        .collect::<Result<_>>()?;
    for d in draws {
        let it = (d.iteration + 1).to_string();
        let it = it.as_str();
        let [beta, s2e, s2b, lambda, phi, eta, rho, gs, gk, zs, zk] = &mut tables[..] else {
            unreachable!("one table per family");
        };
        for s in 0..d.num_groups() {
            let g = s + 1;
            push_vector(beta, it, g, d.beta[s].iter().copied())?;
            push_vector(s2e, it, g, [d.sigma2_eps[s]])?;
            push_vector(s2b, it, g, [d.sigma2_beta[s]])?;
            push_matrix(phi, it, g, &d.phi[s])?;
            push_matrix(eta, it, g, &d.eta[s])?;
            push_matrix(rho, it, g, &d.rho[s])?;
            push_vector(gk, it, g, d.gamma_specific[s].iter().copied())?;
            push_indices(zk, it, g, &d.z_specific[s])?;
        }
        push_matrix(lambda, it, 0, &d.lambda)?;
        push_vector(gs, it, 0, d.gamma_shared.iter().copied())?;
        push_indices(zs, it, 0, &d.z_shared)?;
    }
    tables.into_iter().try_for_each(Table::finish)
}

/// Parsed rows of one draw family, keyed by (iteration, group).
type FamilyRows = BTreeMap<(usize, usize), Vec<(usize, usize, f64)>>;

fn read_family(dir: &Path, name: &str) -> Result<FamilyRows> {
    let path = dir.join(format!("{name}.csv"));
    let (header, records) = read_table(&path)?;
    expect_header(&path, &header, &DRAW_HEADER)?;
    let mut out: FamilyRows = BTreeMap::new();
    for r in &records {
        let key = (parse_usize(&r[0], &path)?, parse_usize(&r[1], &path)?);
        let (i, j) = (parse_usize(&r[2], &path)?, parse_usize(&r[3], &path)?);
        if i == 0 || j == 0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "row and col are 1-based".into(),
            });
        }
        out.entry(key).or_default().push((i - 1, j - 1, parse_f64(&r[4], &path)?));
    }
    Ok(out)
}

fn take_matrix(rows: &mut FamilyRows, key: (usize, usize), nr: usize, nc: usize, what: &str) -> Result<DMatrix<f64>> {
    let entries = rows
        .remove(&key)
        .ok_or_else(|| Error::InvalidData(format!("{what} missing for iteration {} group {}", key.0, key.1)))?;
    if entries.len() != nr * nc {
        return Err(Error::InvalidData(format!(
            "{what} for iteration {} group {} has {} entries, expected {}",
            key.0,
            key.1,
            entries.len(),
            nr * nc
        )));
    }
    let mut m = DMatrix::zeros(nr, nc);
    for (i, j, v) in entries {
        if i >= nr || j >= nc {
            return Err(Error::InvalidData(format!("{what} entry ({},{}) out of range", i + 1, j + 1)));
        }
        m[(i, j)] = v;
    }
    Ok(m)
}

fn take_indices(rows: &mut FamilyRows, key: (usize, usize), len: usize, what: &str) -> Result<Vec<usize>> {
    let m = take_matrix(rows, key, len, 1, what)?;
    m.iter()
        .map(|v| {
            if *v >= 1.0 && v.fract() == 0.0 && (*v as usize) <= len {
                Ok(*v as usize - 1)
            } else {
                Err(Error::InvalidData(format!("{what} value {v} is not an index in 1..{len}")))
            }
        })
        .collect()
}

/// Rebuild the retained draws written by [`write_draws`].
pub fn read_draws(dir: &Path, meta: &FitMeta) -> Result<Vec<Draw>> {
    let mut fam: BTreeMap<&str, FamilyRows> = BTreeMap::new();
    for name in DRAW_FAMILIES {
        fam.insert(name, read_family(dir, name)?);
    }
    let iterations: Vec<usize> = fam["sigma2_eps"].keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let sizes = meta.group_sizes();
    let (r, lm, km) = (meta.num_basis, meta.l_max, meta.k_max);
    let mut draws = Vec::with_capacity(iterations.len());
    for it in iterations {
        let mut get = |name: &str, g: usize, nr: usize, nc: usize| {
            take_matrix(fam.get_mut(name).expect("family loaded"), (it, g), nr, nc, name)
        };
        let lambda = get("lambda", 0, r, lm)?;
        let gamma_shared = get("gamma_shared", 0, lm, 1)?.column(0).into_owned();
        let mut beta = Vec::new();
        let mut sigma2_eps = Vec::new();
        let mut sigma2_beta = Vec::new();
        let mut phi = Vec::new();
        let mut eta = Vec::new();
        let mut rho = Vec::new();
        let mut gamma_specific = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            let g = s + 1;
            beta.push(DVector::from_column_slice(get("beta", g, r, 1)?.as_slice()));
            sigma2_eps.push(get("sigma2_eps", g, 1, 1)?[(0, 0)]);
            sigma2_beta.push(get("sigma2_beta", g, 1, 1)?[(0, 0)]);
            phi.push(get("phi", g, r, km)?);
            eta.push(get("eta", g, n, lm)?);
            rho.push(get("rho", g, n, km)?);
            gamma_specific.push(get("gamma_specific", g, km, 1)?.column(0).into_owned());
        }
        let z_shared = take_indices(fam.get_mut("z_shared").expect("family loaded"), (it, 0), lm, "z_shared")?;
        let z_specific = (1..=sizes.len())
            .map(|g| take_indices(fam.get_mut("z_specific").expect("family loaded"), (it, g), km, "z_specific"))
            .collect::<Result<Vec<_>>>()?;
        draws.push(Draw {
            iteration: it - 1,
            beta,
            sigma2_eps,
            sigma2_beta,
            lambda,
            phi,
            eta,
            rho,
            gamma_shared,
            gamma_specific,
            z_shared,
            z_specific,
        });
    }
    for (name, rows) in &fam {
        if let Some(((it, g), _)) = rows.iter().next() {
            return Err(Error::InvalidData(format!(
                "{name} has rows for iteration {it} group {g} that match no draw"
            )));
        }
    }
    Ok(draws)
}

/// Per-iteration configuration log: `iteration,retained,l_star,k_1,...`.
pub fn write_config_log(path: &Path, draws: &PosteriorDraws, config: &SamplerConfig) -> Result<()> {
    let groups = draws.config_trace.first().map_or(0, |c| c.k_star.len());
    let mut header = vec!["iteration".to_string(), "retained".to_string(), "l_star".to_string()];
    header.extend((1..=groups).map(|g| format!("k_{g}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::create(path, &header)?;
    for (it, c) in draws.config_trace.iter().enumerate() {
        let retained = it >= config.burn_in && (it - config.burn_in + 1) % config.thin == 0;
        let mut row = vec![(it + 1).to_string(), u8::from(retained).to_string()];
        row.extend(c.as_tuple().iter().map(usize::to_string));
        t.row(row)?;
    }
    t.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn config_rejects_unknown_keys_and_fills_defaults() {
        let p = Path::new("x.toml");
        let cfg = RunConfig::parse("seed = 4\n[sampler]\niterations = 50\nburn_in = 10\n", p).unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.sampler.iterations, 50);
        assert_eq!(cfg.sampler.l_max, 10);
        assert_eq!(cfg.sampler.hyper_shared.a2, 30.0);
        assert!(matches!(RunConfig::parse("sede = 4\n", p), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::parse("[sampler]\nl_maks = 3\n", p).is_err());
    }

    #[test]
    fn scenario_section_resolution() {
        let s = ScenarioSection {
            preset: Some("A-322-n40-80".into()),
            replicates: Some(3),
            ..Default::default()
        };
        let cfg = s.resolve(9).unwrap();
        assert_eq!((cfg.l_true, cfg.n.clone(), cfg.replicates, cfg.seed), (3, vec![40, 80], 3, 9));
        let bad = ScenarioSection {
            preset: Some("A-322-n40-80".into()),
            replicates: Some(0),
            ..Default::default()
        };
        assert!(matches!(bad.resolve(1), Err(Error::InvalidConfig(_))));
        assert!(ScenarioSection::default().resolve(1).is_err());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            digest(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

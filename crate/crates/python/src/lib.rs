//! Python bindings. Matrices cross the boundary as lists of rows.

use mgfactor::basis::TimeGrid;
use mgfactor::metrics::{geweke_diagnostic, rv_coefficient, total_mse};
use mgfactor::simulate::{generate_replicate, generate_truth};
use mgfactor::{gibbs, postprocess, FunctionalDataset, GroupData, SamplerConfig, ScenarioConfig};
use nalgebra::DMatrix;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;

fn py_err(e: mgfactor::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], name: &str) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{name}: rows have unequal lengths")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

/// One simulated replicate together with its generating truth.
#[pyclass(get_all, frozen)]
struct Simulation {
    grid: Vec<f64>,
    /// Observed curves per group, `n_s x T`.
    observed: Vec<Rows>,
    /// Noise-free curves per group.
    truth_curves: Vec<Rows>,
    truth_loadings_shared: Rows,
    truth_loadings_specific: Vec<Rows>,
    sigma2_eps: Vec<f64>,
}

/// Summary of a fitted chain.
#[pyclass(get_all, frozen)]
struct Fit {
    /// Modal `(L*, K*_1, ..., K*_S)`.
    configuration: Vec<usize>,
    curve_mean: Vec<Rows>,
    curve_lower: Vec<Rows>,
    curve_upper: Vec<Rows>,
    loadings_shared: Rows,
    loadings_specific: Vec<Rows>,
    sigma2_eps_trace: Vec<Vec<f64>>,
    warnings: Vec<String>,
}

#[pyfunction]
#[pyo3(signature = (preset, seed = None, replicate = 0))]
fn simulate(preset: &str, seed: Option<u64>, replicate: usize) -> PyResult<Simulation> {
    let mut config = ScenarioConfig::preset(preset).map_err(py_err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let truth = generate_truth(&config).map_err(py_err)?;
    let data = generate_replicate(&truth, replicate).map_err(py_err)?;
    let groups = data.groups.len();
    Ok(Simulation {
        grid: data.grid.points().to_vec(),
        observed: data.groups.iter().map(|g| to_rows(&g.y)).collect(),
        truth_curves: truth.f.iter().map(to_rows).collect(),
        truth_loadings_shared: to_rows(&truth.lambda_time()),
        truth_loadings_specific: (0..groups).map(|s| to_rows(&truth.phi_time(s))).collect(),
        sigma2_eps: truth.sigma2_eps.clone(),
    })
}

#[pyfunction]
#[pyo3(signature = (grid, groups, iterations = 8000, burn_in = 4000, seed = 1, l_max = 10, k_max = 10))]
fn fit(
    grid: Vec<f64>,
    groups: Vec<Rows>,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    l_max: usize,
    k_max: usize,
) -> PyResult<Fit> {
    let grid = TimeGrid::new(grid).map_err(py_err)?;
    let groups = groups
        .iter()
        .enumerate()
        .map(|(s, y)| Ok(GroupData::new(format!("{}", s + 1), from_rows(y, "groups")?)))
        .collect::<PyResult<Vec<_>>>()?;
    let data = FunctionalDataset::new(grid, groups).map_err(py_err)?;
    let config = SamplerConfig { iterations, burn_in, seed, l_max, k_max, ..SamplerConfig::default() };
    let draws = gibbs::run_chain(&data, &config).map_err(py_err)?;
    let basis = config.build_basis(&data.grid).map_err(py_err)?;
    let summary = postprocess::summarize(&draws, &basis).map_err(py_err)?;
    let curves = &summary.curves;
    Ok(Fit {
        configuration: summary.configuration.as_tuple(),
        curve_mean: curves.mean.iter().map(to_rows).collect(),
        curve_lower: curves.lower.iter().map(to_rows).collect(),
        curve_upper: curves.upper.iter().map(to_rows).collect(),
        loadings_shared: to_rows(&summary.loadings.shared),
        loadings_specific: summary.loadings.specific.iter().map(to_rows).collect(),
        sigma2_eps_trace: (0..data.groups.len()).map(|s| draws.sigma2_eps_trace(s)).collect(),
        warnings: summary.loadings.warnings.clone(),
    })
}

#[pyfunction(name = "rv_coefficient")]
fn rv(x: Rows, y: Rows) -> PyResult<f64> {
    rv_coefficient(&from_rows(&x, "x")?, &from_rows(&y, "y")?).map_err(py_err)
}

#[pyfunction]
fn mse(truth: Rows, estimate: Rows) -> PyResult<f64> {
    total_mse(&from_rows(&truth, "truth")?, &from_rows(&estimate, "estimate")?).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (chain, first = 0.1, last = 0.5))]
fn geweke(chain: Vec<f64>, first: f64, last: f64) -> PyResult<f64> {
    geweke_diagnostic(&chain, first, last).map_err(py_err)
}

#[pymodule]
fn mgfactor_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulation>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(rv, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(geweke, m)?)?;
    Ok(())
}

//! Evaluation metrics and MCMC convergence diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// RV coefficient between the Gram matrices `X X'` and `Y Y'`.
pub fn rv_coefficient(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() != y.nrows() {
        return Err(Error::InvalidDimension(format!(
            "RV needs equal row counts, got {} and {}",
            x.nrows(),
            y.nrows()
        )));
    }
    let gx = x * x.transpose();
    let gy = y * y.transpose();
    // tr(A B) for symmetric A, B is the elementwise inner product.
    let cross = gx.dot(&gy);
    let nx = gx.norm_squared();
    let ny = gy.norm_squared();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::UndefinedMetric("RV coefficient of a zero matrix".into()));
    }
    Ok(cross / (nx * ny).sqrt())
}

/// Mean over subjects of the squared error at each time point.
pub fn pointwise_mse(f_true: &DMatrix<f64>, f_hat: &DMatrix<f64>) -> Result<DVector<f64>> {
    if f_true.shape() != f_hat.shape() {
        return Err(Error::InvalidDimension(format!(
            "curve shapes differ: {:?} vs {:?}",
            f_true.shape(),
            f_hat.shape()
        )));
    }
    if f_true.nrows() == 0 {
        return Err(Error::InvalidDimension("no curves to compare".into()));
    }
    let diff = f_true - f_hat;
    let n = diff.nrows() as f64;
    Ok(DVector::from_iterator(
        diff.ncols(),
        diff.column_iter().map(|c| c.norm_squared() / n),
    ))
}

/// Time average of [`pointwise_mse`].
pub fn total_mse(f_true: &DMatrix<f64>, f_hat: &DMatrix<f64>) -> Result<f64> {
    Ok(pointwise_mse(f_true, f_hat)?.mean())
}

pub const GEWEKE_FIRST: f64 = 0.1;
pub const GEWEKE_LAST: f64 = 0.5;
pub const GEWEKE_BATCHES: usize = 20;

/// Spectral variance at frequency zero by non-overlapping batch means,
/// returned as the variance of the window mean. Windows shorter than the
/// batch count use one draw per batch.
fn batch_mean_variance(window: &[f64], batches: usize) -> f64 {
    let batches = batches.min(window.len());
    let size = window.len() / batches;
    let means: Vec<f64> = window
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    var / batches as f64
}

/// Geweke z-score comparing the mean of the first `frac_a` of the chain with
/// the mean of the last `frac_b`.
pub fn geweke_diagnostic(chain: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if chain.len() < 100 {
        return Err(Error::InvalidDimension(format!(
            "Geweke needs at least 100 draws, got {}",
            chain.len()
        )));
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::InvalidConfig("Geweke windows must be positive and not overlap".into()));
    }
    let n = chain.len();
    let na = (frac_a * n as f64).floor() as usize;
    let nb = (frac_b * n as f64).floor() as usize;
    if na < 2 || nb < 2 {
        return Err(Error::InvalidDimension("Geweke windows need at least two draws".into()));
    }
    let a = &chain[..na];
    let b = &chain[n - nb..];
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let va = batch_mean_variance(a, GEWEKE_BATCHES);
    let vb = batch_mean_variance(b, GEWEKE_BATCHES);
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::DegenerateChain("a Geweke window has zero variance".into()));
    }
    Ok((mean(a) - mean(b)) / (va + vb).sqrt())
}

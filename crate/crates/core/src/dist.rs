//! Scalar random variates and densities, shape-rate convention.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    mean + var.sqrt() * std_normal(rng)
}

/// Gamma draw with `shape` and `rate`.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
        return Err(Error::Numerical(format!(
            "gamma parameters must be positive and finite, got shape={shape}, rate={rate}"
        )));
    }
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma draw: `1 / Gamma(shape, rate = scale)`.
pub fn inv_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    let g = gamma(rng, shape, scale)?;
    if g <= 0.0 {
        return Err(Error::Numerical(format!(
            "inverse-gamma({shape}, {scale}) underflowed"
        )));
    }
    Ok(1.0 / g)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    let d = Beta::new(a, b).map_err(|e| Error::Numerical(format!("beta({a}, {b}): {e}")))?;
    Ok(d.sample(rng))
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Draw an index from unnormalized log weights.
pub fn categorical_from_log<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical(
            "categorical weights carry no mass".into(),
        ));
    }
    let weights: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (h, w) in weights.iter().enumerate() {
        if u < *w {
            return Ok(h);
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last positive weight.
    Ok(weights.iter().rposition(|w| *w > 0.0).unwrap_or(0))
}

/// Normalized probabilities from log weights.
pub fn normalize_log(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

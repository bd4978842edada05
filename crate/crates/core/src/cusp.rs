//! Cumulative shrinkage process machinery for one expansion block.
//!
//! Column `l` of a block's loading matrix has scale `gamma_l ~ N(0, theta_l *
//! sigma2_gamma_l)`. The spike variance `theta_l = v0` is switched on when the
//! latent indicator `z_l` falls at or below `l`, which happens with
//! probability `pi_l`, the cumulative sum of stick-breaking weights. Indices
//! are 0-based throughout: `z_l` takes values in `0..truncation` and column
//! `l` is active when `z_l > l`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{self, normal_ln_pdf};
use crate::error::{Error, Result};

/// Largest admissible stick fraction in the concentration update.
pub const NU_CLAMP: f64 = 1.0 - 1e-12;

/// Hyperparameters for one block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuspHyper {
    /// Inverse-gamma shape of `sigma2_gamma`.
    pub a1: f64,
    /// Inverse-gamma scale of `sigma2_gamma`.
    pub a2: f64,
    /// Spike variance multiplier.
    pub v0: f64,
    /// Gamma shape of the concentration `alpha`.
    pub a_alpha: f64,
    /// Gamma rate of the concentration `alpha`.
    pub b_alpha: f64,
    /// Stick prior `Beta(iota, iota * alpha)`.
    pub iota: f64,
}

impl Default for CuspHyper {
    fn default() -> Self {
        Self {
            a1: 10.0,
            a2: 30.0,
            v0: 0.001,
            a_alpha: 2.0,
            b_alpha: 1.0,
            iota: 1.0,
        }
    }
}

impl CuspHyper {
    pub fn validate(&self, what: &str) -> Result<()> {
        let positive = [
            ("a1", self.a1),
            ("a2", self.a2),
            ("a_alpha", self.a_alpha),
            ("b_alpha", self.b_alpha),
            ("iota", self.iota),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{what}.{name} must be positive, got {v}")));
            }
        }
        if !(self.v0 > 0.0 && self.v0 < 1.0) {
            return Err(Error::InvalidConfig(format!("{what}.v0 must lie in (0, 1), got {}", self.v0)));
        }
        // The concentration update is conjugate only for unit iota.
        if self.iota != 1.0 {
            return Err(Error::InvalidConfig(format!(
                "{what}.iota must be 1 for the gamma concentration update, got {}",
                self.iota
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CuspState {
    pub z: Vec<usize>,
    pub nu: Vec<f64>,
    pub omega: Vec<f64>,
    pub pi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2_gamma: Vec<f64>,
    pub alpha: f64,
    pub hyper: CuspHyper,
}

impl CuspState {
    /// State with every column but the last active and prior-mean scales.
    pub fn initial(truncation: usize, hyper: CuspHyper) -> Self {
        let alpha = hyper.a_alpha / hyper.b_alpha;
        let nu_mean = 1.0 / (1.0 + alpha);
        let mut nu = vec![nu_mean; truncation];
        if let Some(last) = nu.last_mut() {
            *last = 1.0;
        }
        let z = vec![truncation.saturating_sub(1); truncation];
        let sigma2 = if hyper.a1 > 1.0 {
            hyper.a2 / (hyper.a1 - 1.0)
        } else {
            hyper.a2 / hyper.a1
        };
        let mut state = Self {
            z,
            nu,
            omega: vec![0.0; truncation],
            pi: vec![0.0; truncation],
            theta: vec![1.0; truncation],
            sigma2_gamma: vec![sigma2; truncation],
            alpha,
            hyper,
        };
        state.refresh_sticks();
        state.refresh_theta();
        state
    }

    /// Draw every quantity from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(truncation: usize, hyper: CuspHyper, rng: &mut R) -> Result<Self> {
        let mut state = Self::initial(truncation, hyper);
        state.alpha = dist::gamma(rng, hyper.a_alpha, hyper.b_alpha)?;
        for h in 0..truncation.saturating_sub(1) {
            state.nu[h] = dist::beta(rng, hyper.iota, hyper.iota * state.alpha)?;
        }
        state.refresh_sticks();
        for l in 0..truncation {
            state.z[l] = sample_index(&state.omega, rng)?;
            state.sigma2_gamma[l] = dist::inv_gamma(rng, hyper.a1, hyper.a2)?;
        }
        state.refresh_theta();
        Ok(state)
    }

    pub fn truncation(&self) -> usize {
        self.z.len()
    }

    /// Prior variance `theta_l * sigma2_gamma_l` of `gamma_l`.
    pub fn gamma_prior_var(&self, l: usize) -> f64 {
        self.theta[l] * self.sigma2_gamma[l]
    }

    pub fn active(&self) -> usize {
        count_active(&self.z)
    }

    /// Recompute `omega` and `pi` from `nu`.
    pub fn refresh_sticks(&mut self) {
        let mut remaining = 1.0;
        let mut cumulative = 0.0;
        for h in 0..self.nu.len() {
            let w = self.nu[h] * remaining;
            self.omega[h] = w;
            remaining *= 1.0 - self.nu[h];
            cumulative += w;
            self.pi[h] = cumulative;
        }
    }

    /// `theta_l = v0` exactly when `z_l <= l`.
    pub fn refresh_theta(&mut self) {
        for (l, z) in self.z.iter().enumerate() {
            self.theta[l] = if *z <= l { self.hyper.v0 } else { 1.0 };
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.z.len();
        if [self.nu.len(), self.omega.len(), self.pi.len(), self.theta.len(), self.sigma2_gamma.len()]
            .iter()
            .any(|len| *len != n)
        {
            return Err(Error::InvalidState("shrinkage state vectors differ in length".into()));
        }
        if self.z.iter().any(|z| *z >= n) {
            return Err(Error::InvalidState("indicator outside the truncation".into()));
        }
        if self.sigma2_gamma.iter().any(|v| !(*v > 0.0)) || !(self.alpha > 0.0) {
            return Err(Error::InvalidState("shrinkage variances must be positive".into()));
        }
        Ok(())
    }
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let logs: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    dist::categorical_from_log(rng, &logs)
}

/// Log weights of the categorical full conditional of `z_l`.
pub fn indicator_log_weights(gamma_l: f64, l: usize, cusp: &CuspState) -> Vec<f64> {
    let spike = normal_ln_pdf(gamma_l, 0.0, cusp.hyper.v0 * cusp.sigma2_gamma[l]);
    let slab = normal_ln_pdf(gamma_l, 0.0, cusp.sigma2_gamma[l]);
    cusp.omega
        .iter()
        .enumerate()
        .map(|(h, w)| w.ln() + if h <= l { spike } else { slab })
        .collect()
}

/// Draw every `z_l` from its categorical full conditional, then set `theta`.
pub fn sample_indicators<R: Rng + ?Sized>(gamma: &[f64], cusp: &mut CuspState, rng: &mut R) -> Result<()> {
    if gamma.len() != cusp.truncation() {
        return Err(Error::InvalidDimension(format!(
            "gamma has {} entries, truncation is {}",
            gamma.len(),
            cusp.truncation()
        )));
    }
    for (l, g) in gamma.iter().enumerate() {
        let lw = indicator_log_weights(*g, l, cusp);
        cusp.z[l] = dist::categorical_from_log(rng, &lw).map_err(|_| {
            Error::Numerical(format!("indicator weights for column {l} underflowed"))
        })?;
    }
    cusp.refresh_theta();
    Ok(())
}

/// Beta parameters of the full conditional of `nu_h`, `h < truncation - 1`.
pub fn stick_posterior(z: &[usize], h: usize, hyper: &CuspHyper, alpha: f64) -> (f64, f64) {
    let at = z.iter().filter(|v| **v == h).count() as f64;
    let beyond = z.iter().filter(|v| **v > h).count() as f64;
    (hyper.iota + at, hyper.iota * alpha + beyond)
}

/// Draw the stick fractions given `z`; the last one stays fixed at one.
pub fn sample_sticks<R: Rng + ?Sized>(cusp: &mut CuspState, rng: &mut R) -> Result<()> {
    let n = cusp.truncation();
    for h in 0..n.saturating_sub(1) {
        let (a, b) = stick_posterior(&cusp.z, h, &cusp.hyper, cusp.alpha);
        cusp.nu[h] = dist::beta(rng, a, b)?;
    }
    if n > 0 {
        cusp.nu[n - 1] = 1.0;
    }
    cusp.refresh_sticks();
    Ok(())
}

/// Shape and rate of the gamma full conditional of `alpha`.
pub fn alpha_posterior(nu: &[f64], hyper: &CuspHyper) -> (f64, f64) {
    let free = nu.len().saturating_sub(1);
    let log_sum: f64 = nu[..free].iter().map(|v| (1.0 - v.min(NU_CLAMP)).ln()).sum();
    (hyper.a_alpha + free as f64, hyper.b_alpha - log_sum)
}

pub fn sample_alpha<R: Rng + ?Sized>(cusp: &mut CuspState, rng: &mut R) -> Result<()> {
    let (shape, rate) = alpha_posterior(&cusp.nu, &cusp.hyper);
    if !rate.is_finite() {
        return Err(Error::Numerical("concentration rate is not finite".into()));
    }
    cusp.alpha = dist::gamma(rng, shape, rate)?;
    Ok(())
}

/// Shape and scale of the inverse-gamma full conditional of `sigma2_gamma_l`.
pub fn gamma_scale_posterior(gamma_l: f64, theta_l: f64, hyper: &CuspHyper) -> (f64, f64) {
    (hyper.a1 + 0.5, hyper.a2 + gamma_l * gamma_l / (2.0 * theta_l))
}

pub fn sample_gamma_scales<R: Rng + ?Sized>(gamma: &[f64], cusp: &mut CuspState, rng: &mut R) -> Result<()> {
    for (l, g) in gamma.iter().enumerate() {
        let (shape, scale) = gamma_scale_posterior(*g, cusp.theta[l], &cusp.hyper);
        cusp.sigma2_gamma[l] = dist::inv_gamma(rng, shape, scale)?;
    }
    Ok(())
}

/// Number of active columns, `#{l : z_l > l}`.
pub fn count_active(z: &[usize]) -> usize {
    z.iter().enumerate().filter(|(l, z)| **z > *l).count()
}

/// One full shrinkage update given the current scales: `sigma2_gamma`, then
/// every indicator, then the sticks, then `alpha`.
pub fn update_block<R: Rng + ?Sized>(gamma: &[f64], cusp: &mut CuspState, rng: &mut R) -> Result<()> {
    sample_gamma_scales(gamma, cusp, rng)?;
    sample_indicators(gamma, cusp, rng)?;
    sample_sticks(cusp, rng)?;
    sample_alpha(cusp, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(n: usize) -> CuspState {
        CuspState::initial(n, CuspHyper::default())
    }

    #[test]
    fn count_active_examples() {
        assert_eq!(count_active(&[1, 2, 3, 4]), 4);
        assert_eq!(count_active(&[0, 0, 0, 0]), 0);
        // 1-based (3,3,1) is 0-based (2,2,0)
        assert_eq!(count_active(&[2, 2, 0]), 2);
    }

    #[test]
    fn spike_equals_slab_gives_prior_weights() {
        let mut s = state(3);
        s.hyper.v0 = 1.0;
        let lw = indicator_log_weights(0.0, 1, &s);
        let p = dist::normalize_log(&lw);
        for (a, b) in p.iter().zip(&s.omega) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_stick_forces_indicator() {
        let mut s = state(2);
        s.nu = vec![0.0, 1.0];
        s.refresh_sticks();
        assert_eq!(s.omega, vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            sample_indicators(&[0.3, -2.0], &mut s, &mut rng).unwrap();
            assert_eq!(s.z, vec![1, 1]);
            assert_eq!(s.theta, vec![1.0, s.hyper.v0]);
        }
    }

    #[test]
    fn sticks_sum_to_one() {
        let mut s = state(6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        s.z = vec![0, 5, 2, 2, 1, 4];
        for _ in 0..100 {
            sample_sticks(&mut s, &mut rng).unwrap();
            let total: f64 = s.omega.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(s.pi.windows(2).all(|w| w[1] >= w[0]));
            assert!((s.pi[5] - 1.0).abs() < 1e-12);
            assert_eq!(s.nu[5], 1.0);
        }
    }

    #[test]
    fn alpha_posterior_reductions() {
        let h = CuspHyper::default();
        assert_eq!(alpha_posterior(&[1.0], &h), (2.0, 1.0));
        let (shape, rate) = alpha_posterior(&[0.5, 1.0], &h);
        assert_eq!(shape, 3.0);
        assert!((rate - (1.0 + 2f64.ln())).abs() < 1e-15);
        // nu at one is clamped rather than producing an infinite rate
        let (_, rate) = alpha_posterior(&[1.0, 1.0], &h);
        assert!(rate.is_finite());
    }

    #[test]
    fn gamma_scale_posterior_reductions() {
        let h = CuspHyper::default();
        assert_eq!(gamma_scale_posterior(0.0, 1.0, &h), (10.5, 30.0));
        assert_eq!(gamma_scale_posterior(2.0, 1.0, &h), (10.5, 32.0));
        assert_eq!(gamma_scale_posterior(0.1, 0.001, &h), (10.5, 30.0 + 5.0));
    }

    #[test]
    fn hyper_validation() {
        assert!(CuspHyper::default().validate("shared").is_ok());
        let bad = CuspHyper { v0: 1.5, ..Default::default() };
        assert!(bad.validate("shared").is_err());
        let bad = CuspHyper { iota: 2.0, ..Default::default() };
        assert!(bad.validate("shared").is_err());
    }
}

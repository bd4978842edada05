mod common;

use common::*;
use mgfactor::gibbs::{self, conditionals, Block, NoisePrior, SamplerConfig};
use mgfactor::Error;
use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF, InverseGamma, Normal};

const DRAWS: usize = 100_000;

/// Chi-squared goodness-of-fit p-value of `draws` against `cdf`, using
/// `bins` equiprobable cells defined by `quantile`.
fn chi_square_p(draws: &[f64], bins: usize, quantile: impl Fn(f64) -> f64) -> f64 {
    let edges: Vec<f64> = (1..bins).map(|k| quantile(k as f64 / bins as f64)).collect();
    let mut counts = vec![0usize; bins];
    for x in draws {
        counts[edges.partition_point(|e| e < x)] += 1;
    }
    let expected = draws.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|c| (*c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(stat)
}

fn ks_distance(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let c = cdf(*x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn flat_prior_noise_draws_match_quadrature_density() {
    let mut t = tiny(1);
    t.config.noise_prior = NoisePrior::Flat;
    let (qm, _) = {
        // the quadrature oracle integrates the flat-prior density directly
        let rss = rss_direct(&t.state, &t.data, &t.basis, 0);
        let count = 18.0;
        positive_quadrature(|v| -0.5 * count * v.ln() - rss / (2.0 * v), rss / count)
    };
    let (shape, scale) =
        conditionals::sigma_eps_posterior(&t.state, &t.ws, &t.basis, 0, NoisePrior::Flat).unwrap();
    assert!(rel_close(scale / (shape - 1.0), qm, 1e-6));

    let mut st = t.state.clone();
    let mut r = rng(2);
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::sample_sigma_eps(&mut st, &t.ws, &t.basis, NoisePrior::Flat, &mut r).unwrap();
            st.sigma2_eps[0]
        })
        .collect();
    let ig = InverseGamma::new(shape, scale).unwrap();
    assert!(ks_distance(&draws, |x| ig.cdf(x)) < 0.01);
    assert!(chi_square_p(&draws, 20, |p| ig.inverse_cdf(p)) > 0.001);
}

#[test]
fn penalty_variance_draws_pass_goodness_of_fit() {
    let t = tiny(3);
    let (shape, scale) =
        conditionals::sigma_beta_posterior(&t.state.beta[0], &t.basis, t.config.a_beta, t.config.b_beta);
    let (qm, _) = sigma_beta_oracle(&t, 0);
    assert!(rel_close(scale / (shape - 1.0), qm, 1e-6));
    let mut st = t.state.clone();
    let mut r = rng(4);
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            gibbs::sample_sigma_beta(&mut st, &t.basis, t.config.a_beta, t.config.b_beta, &mut r).unwrap();
            st.sigma2_beta[0]
        })
        .collect();
    let ig = InverseGamma::new(shape, scale).unwrap();
    assert!(chi_square_p(&draws, 20, |p| ig.inverse_cdf(p)) > 0.001);
}

#[test]
fn scale_draws_pass_goodness_of_fit() {
    let t = tiny(5);
    let block = Block::Specific(0);
    let (m, v) = conditionals::gamma_conditional(&t.state, &t.ws, &t.basis, block, 0).unwrap();
    let (qm, qv) = gamma_oracle(&t, block, 0, (m - 12.0 * v.sqrt(), m + 12.0 * v.sqrt()));
    assert!((m - qm).abs() <= 1e-6 * v.sqrt() && rel_close(v, qv, 1e-6));
    let mut st = t.state.clone();
    let mut r = rng(6);
    let draws: Vec<f64> = (0..DRAWS)
        .map(|_| {
            st.specific[0].gamma[0] = t.state.specific[0].gamma[0];
            gibbs::sample_gamma_sequential(&mut st, &t.ws, &t.basis, block, &mut r).unwrap();
            st.specific[0].gamma[0]
        })
        .collect();
    let normal = Normal::new(m, v.sqrt()).unwrap();
    assert!(chi_square_p(&draws, 20, |p| normal.inverse_cdf(p)) > 0.001);
}

#[test]
fn sign_frequency_at_unit_xi() {
    let t = tiny(7);
    let mut blk = t.state.shared.clone();
    blk.xi = DMatrix::from_element(4, 1, 1.0);
    let mut r = rng(8);
    let mut plus = 0usize;
    for _ in 0..DRAWS / 4 {
        gibbs::sample_signs(&mut blk, &mut r);
        plus += blk.signs.iter().filter(|m| **m > 0.0).count();
    }
    let p = 1.0 / (1.0 + (-2f64).exp());
    assert!((p - 0.8808).abs() < 1e-4);
    let freq = plus as f64 / DRAWS as f64;
    assert!((freq - p).abs() < 3.0 * (p * (1.0 - p) / DRAWS as f64).sqrt());
}

#[test]
fn vanishing_scales_give_prior_conditionals() {
    let t = tiny(9);
    let mut st = t.state.clone();
    st.shared.gamma.fill(0.0);
    let xi = conditionals::xi_conditional(&st, &t.ws, &t.basis, Block::Shared).unwrap();
    assert!((&xi.mean - DMatrix::from_column_slice(4, 1, st.shared.signs.as_slice()).column(0)).amax() < 1e-12);
    assert!((xi.covariance() - DMatrix::identity(4, 4)).amax() < 1e-12);
    // with Λ = 0 the shared scores fall back to N(0, I)
    let scores = conditionals::score_conditional(&st, &t.ws, &t.basis, 0, Block::Shared).unwrap();
    assert!(scores.means.amax() < 1e-12);
    assert!((scores.covariance() - DMatrix::identity(1, 1)).amax() < 1e-12);

    let mut st = t.state.clone();
    for e in &mut st.rho {
        e.fill(0.0);
    }
    let (m, v) = conditionals::gamma_conditional(&st, &t.ws, &t.basis, Block::Specific(1), 0).unwrap();
    assert_eq!(m, 0.0);
    assert!(rel_close(v, st.specific[1].cusp.gamma_prior_var(0), 1e-12));
}

#[test]
fn tight_mean_prior_shrinks_beta_to_zero() {
    let t = tiny(10);
    let mut st = t.state.clone();
    st.sigma2_beta = vec![1e-12; 2];
    let cond = conditionals::beta_conditional(&st, &t.ws, &t.basis, 0).unwrap();
    assert!(cond.mean.amax() < 1e-6);
}

#[test]
fn improper_and_degenerate_noise_posteriors_are_errors() {
    assert!(matches!(
        conditionals::noise_posterior(2.0, 1.0, NoisePrior::Flat),
        Err(Error::ImproperPosterior(_))
    ));
    assert!(matches!(
        conditionals::noise_posterior(10.0, 0.0, NoisePrior::Flat),
        Err(Error::DegenerateResidual(_))
    ));
    assert_eq!(conditionals::noise_posterior(4.0, 2.0, NoisePrior::Flat).unwrap(), (1.0, 1.0));
}

#[test]
fn chain_states_stay_in_their_supports() {
    let t = tiny(11);
    let cfg = SamplerConfig {
        iterations: 400,
        burn_in: 100,
        thin: 3,
        l_max: 3,
        k_max: 2,
        num_basis: Some(4),
        ..SamplerConfig::default()
    };
    let draws = gibbs::run_chain(&t.data, &cfg).unwrap();
    assert_eq!(draws.len(), 100);
    assert_eq!(draws.config_trace.len(), 400);
    for (d, c) in draws.draws.iter().zip(&draws.configs) {
        assert!(d.sigma2_eps.iter().chain(&d.sigma2_beta).all(|v| *v > 0.0 && v.is_finite()));
        assert_eq!(&d.configuration(), c);
        assert!(d.z_shared.iter().all(|z| *z < 3));
        assert!(d.z_specific.iter().flatten().all(|z| *z < 2));
    }
    let iters: Vec<usize> = draws.draws.iter().map(|d| d.iteration).collect();
    assert!(iters.windows(2).all(|w| w[1] - w[0] == 3));
}

#[test]
fn sampler_keeps_theta_consistent_with_indicators() {
    let t = tiny(12);
    let cfg = SamplerConfig { l_max: 3, k_max: 2, num_basis: Some(4), seed: 4, ..SamplerConfig::default() };
    let ws = gibbs::Workspace::new(&t.data, &t.basis).unwrap();
    let mut r = rng(13);
    let init = gibbs::initial_state(&ws, &t.basis, &cfg, &mut r).unwrap();
    let mut sampler = gibbs::Sampler::with_state(&t.data, &t.basis, cfg, init, rng(14)).unwrap();
    for _ in 0..200 {
        sampler.step().unwrap();
        let st = &sampler.state;
        for blk in std::iter::once(&st.shared).chain(&st.specific) {
            for (l, (z, th)) in blk.cusp.z.iter().zip(&blk.cusp.theta).enumerate() {
                assert!(*th == 1.0 || *th == blk.cusp.hyper.v0);
                assert_eq!(*th == blk.cusp.hyper.v0, *z <= l);
            }
            assert!(blk.signs.iter().all(|m| m.abs() == 1.0));
        }
    }
}

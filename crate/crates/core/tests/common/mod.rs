//! Shared fixtures and statistical oracles for the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use aevb::evalkit::{ppca_ml_fit, sample_linear_gaussian, PpcaFit};
use aevb::networks::{Decoder, GaussianMlp, VaeModel};
use aevb::numkit::{Matrix, RngState};
use aevb::samplers::ReparamFamily;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

/// Asymptotic Kolmogorov critical constant at the 0.1% level.
pub const KS_CRIT_0001: f64 = 1.9495;

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n − F|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn ks_critical(n: usize) -> f64 {
    KS_CRIT_0001 / (n as f64).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDFs written from the textbook densities, independent of the samplers'
/// inverse-CDF code.
pub fn family_cdf(f: &ReparamFamily, x: f64) -> f64 {
    match *f {
        ReparamFamily::GaussianLocScale { loc, scale } => std_normal_cdf((x - loc) / scale),
        ReparamFamily::Exponential { rate } => {
            if x <= 0.0 {
                0.0
            } else {
                -(-rate * x).exp_m1()
            }
        }
        ReparamFamily::Cauchy { loc, scale } => 0.5 + ((x - loc) / scale).atan() / PI,
        ReparamFamily::Logistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
        ReparamFamily::Rayleigh { scale } => {
            if x <= 0.0 {
                0.0
            } else {
                -(-(x * x) / (2.0 * scale * scale)).exp_m1()
            }
        }
        ReparamFamily::Weibull { shape, scale } => {
            if x <= 0.0 {
                0.0
            } else {
                -(-(x / scale).powf(shape)).exp_m1()
            }
        }
        ReparamFamily::Gumbel { loc, scale } => (-(-(x - loc) / scale).exp()).exp(),
        ReparamFamily::LogNormal { mu, sigma } => {
            if x <= 0.0 {
                0.0
            } else {
                std_normal_cdf((x.ln() - mu) / sigma)
            }
        }
    }
}

pub fn sampler_catalog() -> Vec<ReparamFamily> {
    vec![
        ReparamFamily::GaussianLocScale { loc: -1.5, scale: 2.0 },
        ReparamFamily::Exponential { rate: 0.7 },
        ReparamFamily::Cauchy { loc: 0.3, scale: 1.7 },
        ReparamFamily::Logistic { loc: 2.0, scale: 0.5 },
        ReparamFamily::Rayleigh { scale: 1.3 },
        ReparamFamily::Weibull { shape: 1.8, scale: 2.5 },
        ReparamFamily::Gumbel { loc: -0.4, scale: 1.1 },
        ReparamFamily::LogNormal { mu: 0.2, sigma: 0.6 },
    ]
}

/// Upper `alpha` critical value of the chi-squared distribution.
pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Chi-squared statistic of `samples` binned into `bins` cells that are
/// equiprobable under the standard normal.
pub fn normal_chi2(samples: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let cell = ((std_normal_cdf(x) * bins as f64) as usize).min(bins - 1);
        counts[cell] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Synthetic 2-latent, 10-observed linear-Gaussian data set with its
/// maximum-likelihood pPCA fit on the train split.
pub struct Conjugate {
    pub w: Matrix,
    pub mean: Vec<f64>,
    pub noise_var: f64,
    pub train: Matrix,
    pub test: Matrix,
    pub fit: PpcaFit,
}

pub fn conjugate_problem(seed: u64, n_train: usize, n_test: usize) -> Conjugate {
    let mut rng = RngState::from_seed(seed);
    let w = Matrix::new(10, 2, rng.standard_normal_vec(20)).unwrap();
    let mean = rng.standard_normal_vec(10);
    let noise_var = 0.5;
    let train = sample_linear_gaussian(&w, &mean, noise_var, n_train, &mut rng);
    let test = sample_linear_gaussian(&w, &mean, noise_var, n_test, &mut rng);
    let fit = ppca_ml_fit(&train, 2).unwrap();
    Conjugate { w, mean, noise_var, train, test, fit }
}

/// A tanh layer `tanh(a·M·x + b)` followed by `W/a` is linear in `x` up to
/// `O(a²)`. Used to express affine maps as MLPs.
const LINEARIZE: f64 = 1e-4;

fn near_linear(
    map: &Matrix,
    offset: &[f64],
    pre_offset: Option<&[f64]>,
    log_var: &[f64],
) -> GaussianMlp {
    let (out, inp) = map.shape();
    let mut mlp = GaussianMlp::zeros(inp, inp, out, false);
    for i in 0..inp {
        mlp.w_hidden.set(i, i, LINEARIZE);
        if let Some(p) = pre_offset {
            mlp.b_hidden[i] = -LINEARIZE * p[i];
        }
    }
    for r in 0..out {
        for c in 0..inp {
            mlp.w_mean.set(r, c, map.get(r, c) / LINEARIZE);
        }
    }
    mlp.b_mean.copy_from_slice(offset);
    mlp.b_log_var.copy_from_slice(log_var);
    mlp
}

/// VAE whose decoder is (numerically) `N(W z + mean, noise_var·I)` and whose
/// encoder is the exact posterior mean with the posterior's marginal
/// variances.
pub fn linear_gaussian_vae(w: &Matrix, mean: &[f64], noise_var: f64) -> VaeModel {
    let (d, q) = w.shape();
    let decoder = near_linear(w, mean, None, &vec![noise_var.ln(); d]);

    // Posterior precision I + WᵀW/σ², posterior mean Σ Wᵀ (x − mean) / σ².
    let mut prec = nalgebra::DMatrix::<f64>::identity(q, q);
    let wm = nalgebra::DMatrix::from_row_slice(d, q, w.as_slice());
    prec += wm.transpose() * &wm / noise_var;
    let cov = prec.try_inverse().unwrap();
    let gain = &cov * wm.transpose() / noise_var;
    let gain = Matrix::new(q, d, (0..q).flat_map(|r| (0..d).map(move |c| (r, c))).map(|(r, c)| gain[(r, c)]).collect()).unwrap();
    let log_var: Vec<f64> = (0..q).map(|i| cov[(i, i)].ln()).collect();
    let encoder = near_linear(&gain, &vec![0.0; q], Some(mean), &log_var);
    VaeModel::new(encoder, Decoder::Gaussian(decoder)).unwrap()
}

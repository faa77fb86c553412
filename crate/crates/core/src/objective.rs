//! Lower-bound estimators.
//!
//! [`sgvb_a`] averages the full integrand `log p(x,z) − log q(z|x)` over
//! reparameterized draws. [`sgvb_b`] integrates the Gaussian KL analytically
//! and samples only the reconstruction term; it is the default for training.

use crate::error::{AevbError, Result};
use crate::networks::{kl_term, log_q_at_noise, log_std_normal, GaussianParams, VaeModel};

/// Which stochastic bound estimator to use.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Estimator {
    /// Fully sampled integrand.
    A,
    /// Analytic KL plus sampled reconstruction.
    #[default]
    B,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::A => "a",
            Estimator::B => "b",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = AevbError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(Estimator::A),
            "b" => Ok(Estimator::B),
            other => Err(AevbError::Param(format!("unknown estimator '{other}' (expected a or b)"))),
        }
    }
}

/// A single-datapoint bound estimate.
///
/// `value` is the mean of `per_sample_values`, plus the analytic KL term for
/// estimator B.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundEstimate {
    pub value: f64,
    pub per_sample_values: Vec<f64>,
    pub n_samples: usize,
}

/// `−KL(q ‖ N(0, I)) = ½ Σ (1 + log σ² − μ² − σ²)`. Never positive.
pub fn kl_gauss_prior(p: &GaussianParams) -> f64 {
    kl_term(p)
}

fn encode(model: &VaeModel, x: &[f64], eps: &[Vec<f64>]) -> Result<GaussianParams> {
    if eps.is_empty() {
        return Err(AevbError::Param("at least one noise vector is required".into()));
    }
    let j = model.latent_dim();
    if let Some(bad) = eps.iter().find(|e| e.len() != j) {
        return Err(AevbError::shape(
            "sgvb",
            format!("noise of length {}", bad.len()),
            format!("latent dim {j}"),
        ));
    }
    model.encoder.forward(x)
}

pub fn sgvb_a(model: &VaeModel, x: &[f64], eps: &[Vec<f64>]) -> Result<BoundEstimate> {
    let q = encode(model, x, eps)?;
    let per_sample_values = eps
        .iter()
        .map(|e| {
            let z = q.reparameterize(e);
            Ok(log_std_normal(&z) + model.decoder.log_lik(x, &z)? - log_q_at_noise(&q.log_var, e))
        })
        .collect::<Result<Vec<f64>>>()?;
    let value = per_sample_values.iter().sum::<f64>() / eps.len() as f64;
    Ok(BoundEstimate {
        value,
        per_sample_values,
        n_samples: eps.len(),
    })
}

pub fn sgvb_b(model: &VaeModel, x: &[f64], eps: &[Vec<f64>]) -> Result<BoundEstimate> {
    let q = encode(model, x, eps)?;
    let per_sample_values = eps
        .iter()
        .map(|e| model.decoder.log_lik(x, &q.reparameterize(e)))
        .collect::<Result<Vec<f64>>>()?;
    let value = kl_term(&q) + per_sample_values.iter().sum::<f64>() / eps.len() as f64;
    Ok(BoundEstimate {
        value,
        per_sample_values,
        n_samples: eps.len(),
    })
}

pub fn estimate(estimator: Estimator, model: &VaeModel, x: &[f64], eps: &[Vec<f64>]) -> Result<BoundEstimate> {
    match estimator {
        Estimator::A => sgvb_a(model, x, eps),
        Estimator::B => sgvb_b(model, x, eps),
    }
}

/// Full-dataset bound from a minibatch: `(N / M) Σ per_point`.
pub fn minibatch_bound(per_point: &[f64], n: usize) -> Result<f64> {
    if per_point.is_empty() {
        return Err(AevbError::Param("empty minibatch".into()));
    }
    if n < per_point.len() {
        return Err(AevbError::Param(format!(
            "dataset size {n} smaller than minibatch size {}",
            per_point.len()
        )));
    }
    Ok(n as f64 / per_point.len() as f64 * per_point.iter().sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{Decoder, DecoderFamily, ModelShape, Parameters};
    use crate::numkit::{mean_var, RngState, LN_2PI};
    use proptest::prelude::*;

    fn toy(seed: u64, family: DecoderFamily) -> VaeModel {
        let shape = ModelShape {
            data_dim: 4,
            encoder_hidden: 3,
            decoder_hidden: 3,
            latent_dim: 2,
            family,
        };
        let mut m = VaeModel::zeros(&shape).unwrap();
        let mut rng = RngState::from_seed(seed);
        let flat: Vec<f64> = rng.standard_normal_vec(m.num_params()).iter().map(|v| 0.5 * v).collect();
        m.set_flat(&flat).unwrap();
        m
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_gauss_prior(&GaussianParams::standard(4)), 0.0);
        let p = GaussianParams::new(vec![1.0], vec![0.0]).unwrap();
        assert!((kl_gauss_prior(&p) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let p = GaussianParams::new(vec![0.3, -0.7], vec![0.5f64.ln(), 2.0f64.ln()]).unwrap();
        let std = p.std_dev();
        let mut rng = RngState::from_seed(77);
        let n = 1_000_000;
        let mut terms = Vec::with_capacity(n);
        let mut eps = [0.0; 2];
        for _ in 0..n {
            rng.fill_standard_normal(&mut eps);
            let z: Vec<f64> = (0..2).map(|k| p.mean[k] + std[k] * eps[k]).collect();
            terms.push(log_std_normal(&z) - log_q_at_noise(&p.log_var, &eps));
        }
        let (mean, var) = mean_var(&terms);
        let se = (var / n as f64).sqrt();
        assert!((mean - kl_gauss_prior(&p)).abs() < 3.0 * se, "{mean} vs {}", kl_gauss_prior(&p));
    }

    #[test]
    fn estimator_a_cancels_for_prior_encoder_and_constant_decoder() {
        let mut m = toy(1, DecoderFamily::Bernoulli);
        m.encoder.fill(0.0);
        if let Decoder::Bernoulli(b) = &mut m.decoder {
            b.w_hidden.as_mut_slice().fill(0.0);
        }
        let x = [1.0, 0.0, 1.0, 1.0];
        let reference = m.decoder.log_lik(&x, &[0.0, 0.0]).unwrap();
        let mut rng = RngState::from_seed(4);
        let eps: Vec<Vec<f64>> = (0..50).map(|_| rng.standard_normal_vec(2)).collect();
        let est = sgvb_a(&m, &x, &eps).unwrap();
        for v in &est.per_sample_values {
            assert!((v - reference).abs() < 1e-12);
        }
        assert!((est.value - reference).abs() < 1e-12);
    }

    #[test]
    fn estimator_a_matches_straight_line_evaluation() {
        let m = toy(6, DecoderFamily::Gaussian { clamp_mean: false });
        let x = [0.1, -0.3, 0.8, 0.4];
        let e = vec![0.7, -0.2];
        let got = sgvb_a(&m, &x, &[e.clone()]).unwrap().value;

        let q = m.encoder.forward(&x).unwrap();
        let z: Vec<f64> = (0..2).map(|k| q.mean[k] + (q.log_var[k] / 2.0).exp() * e[k]).collect();
        let mut log_prior = 0.0;
        let mut log_q = 0.0;
        for k in 0..2 {
            let var = q.log_var[k].exp();
            log_prior += -0.5 * LN_2PI - 0.5 * z[k] * z[k];
            log_q += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (z[k] - q.mean[k]).powi(2) / (2.0 * var);
        }
        let out = match &m.decoder {
            Decoder::Gaussian(g) => g.forward(&z).unwrap(),
            _ => unreachable!(),
        };
        let mut log_lik = 0.0;
        for i in 0..4 {
            let var = out.log_var[i].exp();
            log_lik += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x[i] - out.mean[i]).powi(2) / (2.0 * var);
        }
        assert!((got - (log_prior + log_lik - log_q)).abs() < 1e-10);
    }

    #[test]
    fn estimators_share_expectation() {
        let m = toy(12, DecoderFamily::Bernoulli);
        let x = [1.0, 0.0, 0.0, 1.0];
        let mut rng = RngState::from_seed(3);
        let n = 100_000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let e = vec![rng.standard_normal_vec(2)];
            a.push(sgvb_a(&m, &x, &e).unwrap().value);
            b.push(sgvb_b(&m, &x, &e).unwrap().value);
        }
        let (ma, va) = mean_var(&a);
        let (mb, vb) = mean_var(&b);
        let se = (va / n as f64 + vb / n as f64).sqrt();
        assert!((ma - mb).abs() < 3.0 * se, "{ma} vs {mb}, se {se}");
    }

    #[test]
    fn estimator_b_zero_model_value() {
        let shape = ModelShape {
            data_dim: 6,
            encoder_hidden: 2,
            decoder_hidden: 2,
            latent_dim: 3,
            family: DecoderFamily::Bernoulli,
        };
        let m = VaeModel::zeros(&shape).unwrap();
        let x = [1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let est = sgvb_b(&m, &x, &[vec![0.4, -1.0, 2.0]]).unwrap();
        assert!((est.value - 6.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn value_is_mean_plus_kl() {
        let m = toy(2, DecoderFamily::Bernoulli);
        let x = [0.0, 1.0, 0.5, 0.25];
        let mut rng = RngState::from_seed(5);
        let eps: Vec<Vec<f64>> = (0..7).map(|_| rng.standard_normal_vec(2)).collect();
        let b = sgvb_b(&m, &x, &eps).unwrap();
        let q = m.encoder.forward(&x).unwrap();
        let mean = b.per_sample_values.iter().sum::<f64>() / 7.0;
        assert_eq!(b.n_samples, 7);
        assert!((b.value - (mean + kl_gauss_prior(&q))).abs() < 1e-12);
        let a = sgvb_a(&m, &x, &eps).unwrap();
        assert!((a.value - a.per_sample_values.iter().sum::<f64>() / 7.0).abs() < 1e-12);
    }

    #[test]
    fn minibatch_examples() {
        assert_eq!(minibatch_bound(&[-1.0, -2.0, -3.0], 3).unwrap(), -6.0);
        assert_eq!(minibatch_bound(&[-2.0, -4.0], 100).unwrap(), -300.0);
        assert!(minibatch_bound(&[], 10).is_err());
        assert!(minibatch_bound(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn minibatch_expectation_over_all_pairs() {
        let data = [-1.5, -2.25, -0.5, -4.0];
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..4 {
            for j in i + 1..4 {
                total += minibatch_bound(&[data[i], data[j]], 4).unwrap();
                count += 1;
            }
        }
        assert_eq!(count, 6);
        assert!((total / count as f64 - data.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn kl_strictly_negative_off_prior() {
        let p = GaussianParams::new(vec![0.0, 1e-3], vec![0.0, 0.0]).unwrap();
        assert!(kl_gauss_prior(&p) < 0.0);
        let p = GaussianParams::new(vec![0.0], vec![1e-3]).unwrap();
        assert!(kl_gauss_prior(&p) < 0.0);
    }

    proptest! {
        #[test]
        fn kl_permutation_invariant(
            mean in prop::collection::vec(-3.0f64..3.0, 1..8),
            seed in any::<u64>(),
        ) {
            let mut rng = RngState::from_seed(seed);
            let log_var: Vec<f64> = mean.iter().map(|_| 2.0 * rng.standard_normal()).collect();
            let p = GaussianParams::new(mean.clone(), log_var.clone()).unwrap();
            let mut idx: Vec<usize> = (0..mean.len()).collect();
            rng.shuffle(&mut idx);
            let permuted = GaussianParams::new(
                idx.iter().map(|&i| mean[i]).collect(),
                idx.iter().map(|&i| log_var[i]).collect(),
            ).unwrap();
            let a = kl_gauss_prior(&p);
            prop_assert!(a <= 0.0);
            prop_assert!((a - kl_gauss_prior(&permuted)).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }
}

use crate::error::{AevbError, Result};
use crate::numkit::{RngState, LN_2PI};
use crate::objective::Estimator;

use super::bernoulli::{bernoulli_loglik, bernoulli_loglik_grad_logits, BernoulliMlp};
use super::gaussian::{gaussian_loglik, gaussian_loglik_grad, GaussianMlp, GaussianParams};
use super::Parameters;

/// Observation model `p(x|z)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Decoder {
    Bernoulli(BernoulliMlp),
    Gaussian(GaussianMlp),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderFamily {
    Bernoulli,
    Gaussian { clamp_mean: bool },
}

impl DecoderFamily {
    pub fn name(&self) -> &'static str {
        match self {
            DecoderFamily::Bernoulli => "bernoulli",
            DecoderFamily::Gaussian { .. } => "gaussian",
        }
    }
}

impl Decoder {
    pub fn family(&self) -> DecoderFamily {
        match self {
            Decoder::Bernoulli(_) => DecoderFamily::Bernoulli,
            Decoder::Gaussian(g) => DecoderFamily::Gaussian {
                clamp_mean: g.clamp_mean_unit_interval,
            },
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Bernoulli(b) => b.input_dim(),
            Decoder::Gaussian(g) => g.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            Decoder::Bernoulli(b) => b.hidden_dim(),
            Decoder::Gaussian(g) => g.hidden_dim(),
        }
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Decoder::Bernoulli(b) => b.output_dim(),
            Decoder::Gaussian(g) => g.output_dim(),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        match self {
            Decoder::Bernoulli(b) => b.check_shapes(),
            Decoder::Gaussian(g) => g.check_shapes(),
        }
    }

    /// `log p(x|z)`.
    pub fn log_lik(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        match self {
            Decoder::Bernoulli(b) => bernoulli_loglik(x, &b.forward(z)?),
            Decoder::Gaussian(g) => gaussian_loglik(x, &g.forward(z)?),
        }
    }

    /// Evaluate `log p(x|z)` and add `scale` times its gradient into `grad`
    /// (and into `d_z` when given).
    pub fn log_lik_backward(
        &self,
        x: &[f64],
        z: &[f64],
        scale: f64,
        grad: &mut Decoder,
        d_z: Option<&mut [f64]>,
    ) -> Result<f64> {
        if x.len() != self.data_dim() {
            return Err(AevbError::shape(
                "Decoder::log_lik_backward",
                format!("x of length {}", x.len()),
                format!("decoder output {}", self.data_dim()),
            ));
        }
        match (self, grad) {
            (Decoder::Bernoulli(net), Decoder::Bernoulli(g)) => {
                let (y, trace) = net.forward_traced(z)?;
                let value = bernoulli_loglik(x, &y)?;
                let mut d_logits = vec![0.0; y.len()];
                bernoulli_loglik_grad_logits(x, &y, scale, &mut d_logits);
                net.backward(z, &trace, &d_logits, Some(g), d_z);
                Ok(value)
            }
            (Decoder::Gaussian(net), Decoder::Gaussian(g)) => {
                let (out, trace) = net.forward_traced(z)?;
                let value = gaussian_loglik(x, &out)?;
                let mut d_mean = vec![0.0; out.dim()];
                let mut d_log_var = vec![0.0; out.dim()];
                gaussian_loglik_grad(x, &out, scale, &mut d_mean, &mut d_log_var);
                net.backward(z, &out, &trace, &d_mean, &d_log_var, Some(g), d_z);
                Ok(value)
            }
            _ => Err(AevbError::Param(
                "gradient buffer has a different decoder family".into(),
            )),
        }
    }

    /// `log p(x|z)` with its gradient in `z` written to `d_z`.
    pub fn log_lik_grad_z(&self, x: &[f64], z: &[f64], d_z: &mut [f64]) -> Result<f64> {
        if x.len() != self.data_dim() {
            return Err(AevbError::shape(
                "Decoder::log_lik_grad_z",
                format!("x of length {}", x.len()),
                format!("decoder output {}", self.data_dim()),
            ));
        }
        d_z.fill(0.0);
        match self {
            Decoder::Bernoulli(net) => {
                let (y, trace) = net.forward_traced(z)?;
                let mut d_logits = vec![0.0; y.len()];
                bernoulli_loglik_grad_logits(x, &y, 1.0, &mut d_logits);
                net.backward(z, &trace, &d_logits, None, Some(d_z));
                bernoulli_loglik(x, &y)
            }
            Decoder::Gaussian(net) => {
                let (out, trace) = net.forward_traced(z)?;
                let mut d_mean = vec![0.0; out.dim()];
                let mut d_log_var = vec![0.0; out.dim()];
                gaussian_loglik_grad(x, &out, 1.0, &mut d_mean, &mut d_log_var);
                net.backward(z, &out, &trace, &d_mean, &d_log_var, None, Some(d_z));
                gaussian_loglik(x, &out)
            }
        }
    }

    /// Mean of `p(x|z)`: Bernoulli probabilities or Gaussian means.
    pub fn mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self {
            Decoder::Bernoulli(b) => b.forward(z),
            Decoder::Gaussian(g) => Ok(g.forward(z)?.mean),
        }
    }

    /// One draw `x ~ p(x|z)`.
    pub fn sample(&self, z: &[f64], rng: &mut RngState) -> Result<Vec<f64>> {
        match self {
            Decoder::Bernoulli(b) => Ok(b
                .forward(z)?
                .into_iter()
                .map(|p| if rng.uniform() < p { 1.0 } else { 0.0 })
                .collect()),
            Decoder::Gaussian(g) => {
                let out = g.forward(z)?;
                let eps = rng.standard_normal_vec(out.dim());
                Ok(out.reparameterize(&eps))
            }
        }
    }
}

impl Parameters for Decoder {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Decoder::Bernoulli(b) => b.blocks(),
            Decoder::Gaussian(g) => g.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            Decoder::Bernoulli(b) => b.blocks_mut(),
            Decoder::Gaussian(g) => g.blocks_mut(),
        }
    }
}

/// Layer sizes of a VAE.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub data_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub latent_dim: usize,
    pub family: DecoderFamily,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("data_dim", self.data_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("latent_dim", self.latent_dim),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(AevbError::Param(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Recognition model `q(z|x)` plus observation model `p(x|z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: GaussianMlp,
    pub decoder: Decoder,
}

impl VaeModel {
    pub fn new(encoder: GaussianMlp, decoder: Decoder) -> Result<Self> {
        encoder.check_shapes()?;
        decoder.check_shapes()?;
        if encoder.output_dim() != decoder.latent_dim() || encoder.input_dim() != decoder.data_dim() {
            return Err(AevbError::shape(
                "VaeModel::new",
                format!("encoder {}->{}", encoder.input_dim(), encoder.output_dim()),
                format!("decoder {}->{}", decoder.latent_dim(), decoder.data_dim()),
            ));
        }
        Ok(Self { encoder, decoder })
    }

    /// All-zero model of the given shape.
    pub fn zeros(shape: &ModelShape) -> Result<Self> {
        shape.validate()?;
        let encoder = GaussianMlp::zeros(shape.data_dim, shape.encoder_hidden, shape.latent_dim, false);
        let decoder = match shape.family {
            DecoderFamily::Bernoulli => Decoder::Bernoulli(BernoulliMlp::zeros(
                shape.latent_dim,
                shape.decoder_hidden,
                shape.data_dim,
            )),
            DecoderFamily::Gaussian { clamp_mean } => Decoder::Gaussian(GaussianMlp::zeros(
                shape.latent_dim,
                shape.decoder_hidden,
                shape.data_dim,
                clamp_mean,
            )),
        };
        Ok(Self { encoder, decoder })
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            data_dim: self.data_dim(),
            encoder_hidden: self.encoder.hidden_dim(),
            decoder_hidden: self.decoder.hidden_dim(),
            latent_dim: self.latent_dim(),
            family: self.decoder.family(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// `"encoder.<block>"` or `"decoder.<block>"` of the first non-finite entry.
    pub fn non_finite_block(&self) -> Option<String> {
        if let Some(b) = self.encoder.first_non_finite() {
            return Some(format!("encoder.{b}"));
        }
        self.decoder.first_non_finite().map(|b| format!("decoder.{b}"))
    }
}

impl Parameters for VaeModel {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut v = self.encoder.blocks();
        v.extend(self.decoder.blocks());
        v
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v = self.encoder.blocks_mut();
        v.extend(self.decoder.blocks_mut());
        v
    }
}

/// Bound value and its gradient over every encoder and decoder parameter.
#[derive(Clone, Debug)]
pub struct VaeGradient {
    pub value: f64,
    pub grad: VaeModel,
}

/// The Gaussian-posterior bound for one datapoint and its exact gradient,
/// using `z = μ + σ ⊙ ε` for each noise vector in `eps`.
pub fn vae_backward(model: &VaeModel, x: &[f64], eps: &[Vec<f64>]) -> Result<VaeGradient> {
    let mut grad = model.zeros_like();
    let value = vae_backward_into(model, x, eps, Estimator::B, 1.0, &mut grad)?;
    Ok(VaeGradient { value, grad })
}

/// Evaluate the per-datapoint bound with the chosen estimator and add
/// `scale` times its gradient into `grad`. Returns the (unscaled) value.
pub fn vae_backward_into(
    model: &VaeModel,
    x: &[f64],
    eps: &[Vec<f64>],
    estimator: Estimator,
    scale: f64,
    grad: &mut VaeModel,
) -> Result<f64> {
    if eps.is_empty() {
        return Err(AevbError::Param("at least one noise vector is required".into()));
    }
    let j = model.latent_dim();
    if let Some(bad) = eps.iter().find(|e| e.len() != j) {
        return Err(AevbError::shape(
            "vae_backward",
            format!("noise of length {}", bad.len()),
            format!("latent dim {j}"),
        ));
    }
    let (q, trace) = model.encoder.forward_traced(x)?;
    if !q.is_finite() {
        return Err(AevbError::non_finite("encoder"));
    }
    let std = q.std_dev();
    let n_samples = eps.len() as f64;
    let per_sample = scale / n_samples;

    let mut d_mean = vec![0.0; j];
    let mut d_log_var = vec![0.0; j];
    let mut value = 0.0;
    if estimator == Estimator::B {
        value += kl_term(&q);
        for k in 0..j {
            d_mean[k] -= scale * q.mean[k];
            d_log_var[k] += scale * 0.5 * (1.0 - q.log_var[k].exp());
        }
    }

    let mut d_z = vec![0.0; j];
    let mut recon = 0.0;
    for e in eps {
        let z = q.reparameterize(e);
        d_z.fill(0.0);
        let ll = model
            .decoder
            .log_lik_backward(x, &z, per_sample, &mut grad.decoder, Some(&mut d_z))?;
        if !ll.is_finite() {
            return Err(AevbError::non_finite("decoder"));
        }
        recon += ll;
        if estimator == Estimator::A {
            recon += log_std_normal(&z) - log_q_at_noise(&q.log_var, e);
            for k in 0..j {
                d_z[k] -= per_sample * z[k];
                d_log_var[k] += per_sample * 0.5;
            }
        }
        for k in 0..j {
            d_mean[k] += d_z[k];
            d_log_var[k] += d_z[k] * e[k] * std[k] * 0.5;
        }
    }
    value += recon / n_samples;

    model
        .encoder
        .backward(x, &q, &trace, &d_mean, &d_log_var, Some(&mut grad.encoder), None);
    Ok(value)
}

/// `½ Σ (1 + log σ² − μ² − σ²)`.
pub(crate) fn kl_term(q: &GaussianParams) -> f64 {
    0.5 * q
        .mean
        .iter()
        .zip(&q.log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

pub(crate) fn log_std_normal(z: &[f64]) -> f64 {
    z.iter().map(|v| -0.5 * (LN_2PI + v * v)).sum()
}

/// `log q(z|x)` at `z = μ + σ ⊙ ε`, which depends on `μ` only through `ε`.
pub(crate) fn log_q_at_noise(log_var: &[f64], eps: &[f64]) -> f64 {
    log_var
        .iter()
        .zip(eps)
        .map(|(lv, e)| -0.5 * (LN_2PI + lv + e * e))
        .sum()
}

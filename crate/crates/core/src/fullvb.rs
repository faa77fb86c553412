//! Variational inference over the generative parameters as well as the
//! latent variables.
//!
//! The parameters get a diagonal Gaussian posterior `q(θ) = N(μ_θ, σ_θ²)`
//! under a standard-normal hyperprior. Sampled parameters are
//! `θ = μ_θ + σ_θ ⊙ ζ` and latents are `z = μ_z(x) + σ_z(x) ⊙ ε` from an
//! encoder, so the per-draw objective
//!
//! ```text
//! f(x, z, θ) = N (log p_θ(x|z) + log p(z) − log q(z|x)) + log p(θ) − log q(θ)
//! ```
//!
//! is differentiable in every variational parameter. [`FullVbEstimator::Gaussian`]
//! replaces the four Gaussian log-density terms by their closed forms.

use crate::error::{AevbError, Result};
use crate::networks::{kl_term, log_std_normal, Decoder, GaussianMlp, GaussianParams, Parameters, LOG_VAR_BOUND};
use crate::numkit::{Matrix, RngState, LN_2PI};

/// A generative model `p_θ(x|z)` whose parameters are a flat vector.
pub trait ParamModel {
    fn num_params(&self) -> usize;
    /// Zero for models without latent variables.
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    /// `log p_θ(x|z)`, adding `scale ·` its gradients into `d_theta` and `d_z`.
    fn log_lik_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        z: &[f64],
        scale: f64,
        d_theta: &mut [f64],
        d_z: &mut [f64],
    ) -> Result<f64>;

    fn log_lik(&self, theta: &[f64], x: &[f64], z: &[f64]) -> Result<f64> {
        let mut dt = vec![0.0; self.num_params()];
        let mut dz = vec![0.0; self.latent_dim()];
        self.log_lik_grad(theta, x, z, 0.0, &mut dt, &mut dz)
    }
}

/// Any decoder network, with `θ` laid out as its flattened parameters.
#[derive(Clone, Debug)]
pub struct DecoderModel {
    template: Decoder,
}

impl DecoderModel {
    pub fn new(template: Decoder) -> Self {
        Self { template }
    }

    pub fn decoder_at(&self, theta: &[f64]) -> Result<Decoder> {
        let mut d = self.template.clone();
        d.set_flat(theta)?;
        Ok(d)
    }
}

impl ParamModel for DecoderModel {
    fn num_params(&self) -> usize {
        self.template.num_params()
    }

    fn latent_dim(&self) -> usize {
        self.template.latent_dim()
    }

    fn data_dim(&self) -> usize {
        self.template.data_dim()
    }

    fn log_lik_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        z: &[f64],
        scale: f64,
        d_theta: &mut [f64],
        d_z: &mut [f64],
    ) -> Result<f64> {
        let dec = self.decoder_at(theta)?;
        let mut grad = dec.zeros_like();
        let value = dec.log_lik_backward(x, z, scale, &mut grad, Some(d_z))?;
        for (d, g) in d_theta.iter_mut().zip(grad.to_flat()) {
            *d += g;
        }
        Ok(value)
    }
}

/// `x ~ N(θ, I)` with unknown mean `θ` and no latent variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnknownMeanModel {
    pub dim: usize,
}

impl UnknownMeanModel {
    /// Exact posterior `N(Σx / (N + 1), 1 / (N + 1))` per coordinate under
    /// the standard-normal hyperprior.
    pub fn exact_posterior(&self, data: &Matrix) -> Result<(Vec<f64>, f64)> {
        if data.cols() != self.dim || data.rows() == 0 {
            return Err(AevbError::shape(
                "UnknownMeanModel::exact_posterior",
                format!("{}x{} data", data.rows(), data.cols()),
                format!("nonempty data with {} columns", self.dim),
            ));
        }
        let n = data.rows() as f64;
        let mean = (0..self.dim)
            .map(|k| (0..data.rows()).map(|i| data.row(i)[k]).sum::<f64>() / (n + 1.0))
            .collect();
        Ok((mean, 1.0 / (n + 1.0)))
    }
}

impl ParamModel for UnknownMeanModel {
    fn num_params(&self) -> usize {
        self.dim
    }

    fn latent_dim(&self) -> usize {
        0
    }

    fn data_dim(&self) -> usize {
        self.dim
    }

    fn log_lik_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        _z: &[f64],
        scale: f64,
        d_theta: &mut [f64],
        _d_z: &mut [f64],
    ) -> Result<f64> {
        if theta.len() != self.dim || x.len() != self.dim {
            return Err(AevbError::shape(
                "UnknownMeanModel::log_lik",
                format!("theta {} and x {}", theta.len(), x.len()),
                format!("dimension {}", self.dim),
            ));
        }
        let mut value = 0.0;
        for k in 0..self.dim {
            let r = x[k] - theta[k];
            value -= 0.5 * (LN_2PI + r * r);
            d_theta[k] += scale * r;
        }
        Ok(value)
    }
}

/// Diagonal Gaussian posterior over the flattened generative parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl ParamPosterior {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(AevbError::shape(
                "ParamPosterior::new",
                format!("mean of length {}", mean.len()),
                format!("log_var of length {}", log_var.len()),
            ));
        }
        Ok(Self { mean, log_var })
    }

    /// Hyperprior-matched start: `μ = 0`, `σ = 1`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-variances after the `[−LOG_VAR_BOUND, LOG_VAR_BOUND]` clamp.
    pub fn effective_log_var(&self) -> Vec<f64> {
        self.log_var.iter().map(|v| v.clamp(-LOG_VAR_BOUND, LOG_VAR_BOUND)).collect()
    }

    pub fn as_gaussian(&self) -> GaussianParams {
        GaussianParams {
            mean: self.mean.clone(),
            log_var: self.effective_log_var(),
        }
    }

    pub fn sample(&self, zeta: &[f64]) -> Vec<f64> {
        self.as_gaussian().reparameterize(zeta)
    }
}

/// All variational parameters: the parameter posterior and, for models
/// with latents, the recognition encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FullVbParams {
    pub q_theta: ParamPosterior,
    pub encoder: Option<GaussianMlp>,
}

impl FullVbParams {
    /// Check that the layout fits `model`.
    pub fn check<M: ParamModel + ?Sized>(&self, model: &M) -> Result<()> {
        if self.q_theta.dim() != model.num_params() || self.q_theta.log_var.len() != model.num_params() {
            return Err(AevbError::shape(
                "FullVbParams",
                format!("parameter posterior of dimension {}", self.q_theta.dim()),
                format!("{} generative parameters", model.num_params()),
            ));
        }
        match (&self.encoder, model.latent_dim()) {
            (None, 0) => Ok(()),
            (Some(e), j) if j > 0 => {
                e.check_shapes()?;
                if e.output_dim() != j || e.input_dim() != model.data_dim() {
                    return Err(AevbError::shape(
                        "FullVbParams",
                        format!("encoder {} -> {}", e.input_dim(), e.output_dim()),
                        format!("{} -> {j}", model.data_dim()),
                    ));
                }
                Ok(())
            }
            (None, j) => Err(AevbError::Param(format!("model has {j} latent dims but no encoder"))),
            (Some(_), _) => Err(AevbError::Param("model has no latent variables; drop the encoder".into())),
        }
    }
}

impl Parameters for FullVbParams {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut v = vec![("theta.mean", &self.q_theta.mean[..]), ("theta.log_var", &self.q_theta.log_var[..])];
        if let Some(e) = &self.encoder {
            v.extend(e.blocks());
        }
        v
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut v = vec![
            ("theta.mean", &mut self.q_theta.mean[..]),
            ("theta.log_var", &mut self.q_theta.log_var[..]),
        ];
        if let Some(e) = &mut self.encoder {
            v.extend(e.blocks_mut());
        }
        v
    }
}

/// Which per-draw estimator to differentiate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FullVbEstimator {
    /// Every term of `f` by Monte Carlo.
    #[default]
    Generic,
    /// Closed-form KL terms for `z` and `θ`; only the likelihood is sampled.
    Gaussian,
}

/// `log N(v; μ, diag(exp(log_var)))`.
fn log_normal_diag(v: &[f64], mean: &[f64], log_var: &[f64]) -> f64 {
    v.iter()
        .zip(mean)
        .zip(log_var)
        .map(|((x, m), lv)| -0.5 * (LN_2PI + lv + (x - m) * (x - m) / lv.exp()))
        .sum()
}

/// The per-draw objective at explicit `z` and `θ`:
/// `N (log p_θ(x|z) + log p(z) − log q(z|x)) + log p(θ) − log q(θ)`.
pub fn f_phi<M: ParamModel + ?Sized>(
    model: &M,
    x: &[f64],
    z: &[f64],
    theta: &[f64],
    n: usize,
    q_z: &GaussianParams,
    q_theta: &ParamPosterior,
) -> Result<f64> {
    if z.len() != model.latent_dim() || q_z.dim() != z.len() {
        return Err(AevbError::shape(
            "f_phi",
            format!("z of length {} with q(z|x) of dimension {}", z.len(), q_z.dim()),
            format!("latent dim {}", model.latent_dim()),
        ));
    }
    if theta.len() != model.num_params() || q_theta.dim() != theta.len() || x.len() != model.data_dim() {
        return Err(AevbError::shape(
            "f_phi",
            format!("theta {} / q(theta) {} / x {}", theta.len(), q_theta.dim(), x.len()),
            format!("{} parameters and data dim {}", model.num_params(), model.data_dim()),
        ));
    }
    let local = model.log_lik(theta, x, z)? + log_std_normal(z) - log_normal_diag(z, &q_z.mean, &q_z.log_var);
    let global = log_std_normal(theta) - log_normal_diag(theta, &q_theta.mean, &q_theta.effective_log_var());
    Ok(n as f64 * local + global)
}

/// One draw `(x, ε, ζ)`: evaluate the chosen estimator and add
/// `scale ·` its gradient into `grad`. `n` is the dataset size.
#[allow(clippy::too_many_arguments)]
pub fn fullvb_draw_backward<M: ParamModel + ?Sized>(
    model: &M,
    params: &FullVbParams,
    x: &[f64],
    eps: &[f64],
    zeta: &[f64],
    n: usize,
    estimator: FullVbEstimator,
    scale: f64,
    grad: &mut FullVbParams,
) -> Result<f64> {
    params.check(model)?;
    let j = model.latent_dim();
    let p = model.num_params();
    if eps.len() != j || zeta.len() != p {
        return Err(AevbError::shape(
            "fullvb_draw_backward",
            format!("noise of lengths {} and {}", eps.len(), zeta.len()),
            format!("{j} latents and {p} parameters"),
        ));
    }
    let nf = n as f64;

    let q_theta = params.q_theta.as_gaussian();
    let theta = q_theta.reparameterize(zeta);
    let sd_theta = q_theta.std_dev();

    let encoded = match &params.encoder {
        Some(e) => Some(e.forward_traced(x)?),
        None => None,
    };
    let q_z = encoded.as_ref().map_or_else(|| GaussianParams::standard(0), |(q, _)| q.clone());
    if !q_z.is_finite() {
        return Err(AevbError::non_finite("encoder"));
    }
    let z = q_z.reparameterize(eps);
    let sd_z = q_z.std_dev();

    let mut d_theta = vec![0.0; p];
    let mut d_z = vec![0.0; j];
    let mut d_lv_theta = vec![0.0; p];
    let mut d_mu_theta = vec![0.0; p];
    let mut d_lv_z = vec![0.0; j];
    let mut d_mu_z = vec![0.0; j];

    let ll = model.log_lik_grad(&theta, x, &z, scale * nf, &mut d_theta, &mut d_z)?;
    let value = match estimator {
        FullVbEstimator::Generic => {
            // log p(z) − log q(z|x), with log q at the noise.
            let log_q_z: f64 = q_z.log_var.iter().zip(eps).map(|(lv, e)| -0.5 * (LN_2PI + lv + e * e)).sum();
            let log_q_theta: f64 =
                q_theta.log_var.iter().zip(zeta).map(|(lv, e)| -0.5 * (LN_2PI + lv + e * e)).sum();
            for k in 0..j {
                d_z[k] -= scale * nf * z[k];
                d_lv_z[k] += scale * nf * 0.5;
            }
            for k in 0..p {
                d_theta[k] -= scale * theta[k];
                d_lv_theta[k] += scale * 0.5;
            }
            nf * (ll + log_std_normal(&z) - log_q_z) + log_std_normal(&theta) - log_q_theta
        }
        FullVbEstimator::Gaussian => {
            for k in 0..j {
                d_mu_z[k] -= scale * nf * q_z.mean[k];
                d_lv_z[k] += scale * nf * 0.5 * (1.0 - q_z.log_var[k].exp());
            }
            for k in 0..p {
                d_mu_theta[k] -= scale * q_theta.mean[k];
                d_lv_theta[k] += scale * 0.5 * (1.0 - q_theta.log_var[k].exp());
            }
            nf * (kl_term(&q_z) + ll) + kl_term(&q_theta)
        }
    };
    if !value.is_finite() {
        return Err(AevbError::non_finite("full VB objective"));
    }

    for k in 0..p {
        d_mu_theta[k] += d_theta[k];
        d_lv_theta[k] += d_theta[k] * zeta[k] * sd_theta[k] * 0.5;
        if params.q_theta.log_var[k].abs() > LOG_VAR_BOUND {
            d_lv_theta[k] = 0.0;
        }
        grad.q_theta.mean[k] += d_mu_theta[k];
        grad.q_theta.log_var[k] += d_lv_theta[k];
    }
    if let (Some((q, trace)), Some(enc), Some(g)) = (&encoded, &params.encoder, grad.encoder.as_mut()) {
        for k in 0..j {
            d_mu_z[k] += d_z[k];
            d_lv_z[k] += d_z[k] * eps[k] * sd_z[k] * 0.5;
        }
        enc.backward(x, q, trace, &d_mu_z, &d_lv_z, Some(g), None);
    }
    Ok(value)
}

/// Stochastic estimate and gradient from `l` draws, each picking a datapoint
/// uniformly with replacement.
#[derive(Clone, Debug)]
pub struct FullVbGradient {
    pub value: f64,
    pub grad: FullVbParams,
}

pub fn fullvb_gradient_with<M: ParamModel + ?Sized>(
    model: &M,
    data: &Matrix,
    params: &FullVbParams,
    l: usize,
    estimator: FullVbEstimator,
    rng: &mut RngState,
) -> Result<FullVbGradient> {
    if data.rows() == 0 {
        return Err(AevbError::Param("dataset is empty".into()));
    }
    if l == 0 {
        return Err(AevbError::Param("at least one draw is required".into()));
    }
    if data.cols() != model.data_dim() {
        return Err(AevbError::shape(
            "fullvb_gradient",
            format!("data with {} columns", data.cols()),
            format!("data dim {}", model.data_dim()),
        ));
    }
    let mut grad = params.zeros_like();
    let mut total = 0.0;
    for _ in 0..l {
        let i = rng.below(data.rows());
        let eps = rng.standard_normal_vec(model.latent_dim());
        let zeta = rng.standard_normal_vec(model.num_params());
        total += fullvb_draw_backward(
            model,
            params,
            data.row(i),
            &eps,
            &zeta,
            data.rows(),
            estimator,
            1.0 / l as f64,
            &mut grad,
        )?;
    }
    Ok(FullVbGradient {
        value: total / l as f64,
        grad,
    })
}

/// Gradient of the all-Monte-Carlo estimator.
pub fn fullvb_gradient<M: ParamModel + ?Sized>(
    model: &M,
    data: &Matrix,
    params: &FullVbParams,
    l: usize,
    rng: &mut RngState,
) -> Result<FullVbGradient> {
    fullvb_gradient_with(model, data, params, l, FullVbEstimator::Generic, rng)
}

/// The closed-form-KL estimate of the bound from `l` draws.
pub fn fullvb_gaussian_estimate<M: ParamModel + ?Sized>(
    model: &M,
    data: &Matrix,
    params: &FullVbParams,
    l: usize,
    rng: &mut RngState,
) -> Result<f64> {
    Ok(fullvb_gradient_with(model, data, params, l, FullVbEstimator::Gaussian, rng)?.value)
}

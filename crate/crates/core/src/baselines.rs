//! Comparison algorithms: wake-sleep, which trains the same encoder on
//! dreamed pairs, and Monte Carlo EM, which replaces the encoder by HMC
//! chains over each datapoint's posterior.

use crate::aevb::OptimizerState;
use crate::error::{AevbError, Result};
use crate::evalkit::{
    hmc_transition, marginal_loglik_estimate, mll_hmc_config, HmcConfig, StepsizeAdapter, HmcPoint, LatentModel,
    LinearGaussianDecoder, Posterior,
};
use crate::networks::{gaussian_loglik, gaussian_loglik_grad, log_std_normal, Decoder, GaussianMlp, Parameters, VaeModel};
use crate::numkit::{Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WakeSleepDiagnostics {
    /// Mean `log p(x, z)` over the minibatch, `z ~ q(z|x)`.
    pub wake: f64,
    /// Mean `log q(z|x̃)` over the dreamed pairs.
    pub sleep: f64,
}

/// Wake phase for one datapoint: `z = μ + σ ⊙ ε` from the encoder, then
/// `scale · ∇_θ log p(x|z)` into `grad`. Returns `log p(x, z)`.
pub fn wake_gradient(model: &VaeModel, x: &[f64], eps: &[f64], scale: f64, grad: &mut Decoder) -> Result<f64> {
    let q = model.encoder.forward(x)?;
    let z = q.reparameterize(eps);
    let ll = model.decoder.log_lik_backward(x, &z, scale, grad, None)?;
    Ok(ll + log_std_normal(&z))
}

/// Sleep phase for one dreamed pair: `scale · ∇_φ log q(z|x̃)` into `grad`.
/// Returns `log q(z|x̃)`.
pub fn sleep_gradient(encoder: &GaussianMlp, z: &[f64], x_dream: &[f64], scale: f64, grad: &mut GaussianMlp) -> Result<f64> {
    let (q, trace) = encoder.forward_traced(x_dream)?;
    let value = gaussian_loglik(z, &q)?;
    let mut d_mean = vec![0.0; q.dim()];
    let mut d_log_var = vec![0.0; q.dim()];
    gaussian_loglik_grad(z, &q, scale, &mut d_mean, &mut d_log_var);
    encoder.backward(x_dream, &q, &trace, &d_mean, &d_log_var, Some(grad), None);
    Ok(value)
}

/// One wake-sleep step: a wake update of the decoder on the minibatch, then
/// a sleep update of the encoder on as many ancestral samples `(z, x̃)` drawn
/// from the updated decoder. Both gradients are scaled by `N / M` and share
/// one Adagrad state (they touch disjoint entries).
pub fn wake_sleep_step(
    model: &mut VaeModel,
    optimizer: &mut OptimizerState,
    data: &Matrix,
    batch: &[usize],
    weight_decay: bool,
    rng: &mut RngState,
) -> Result<WakeSleepDiagnostics> {
    if batch.is_empty() {
        return Err(AevbError::Param("empty minibatch".into()));
    }
    let scale = data.rows() as f64 / batch.len() as f64;
    let j = model.latent_dim();

    let mut grad = model.zeros_like();
    let mut wake = 0.0;
    for &i in batch {
        let eps = rng.standard_normal_vec(j);
        wake += wake_gradient(model, data.row(i), &eps, scale, &mut grad.decoder)?;
    }
    wake /= batch.len() as f64;
    if weight_decay {
        grad.decoder.add_scaled(&model.decoder, -1.0);
    }
    if !wake.is_finite() {
        return Err(AevbError::non_finite("wake objective"));
    }
    if let Some(b) = grad.non_finite_block() {
        return Err(AevbError::non_finite(format!("wake gradient of {b}")));
    }
    optimizer.apply(model, &grad, 1.0)?;

    let mut grad = model.zeros_like();
    let mut sleep = 0.0;
    for _ in batch {
        let z = rng.standard_normal_vec(j);
        let x_dream = model.decoder.sample(&z, rng)?;
        sleep += sleep_gradient(&model.encoder, &z, &x_dream, scale, &mut grad.encoder)?;
    }
    sleep /= batch.len() as f64;
    if !sleep.is_finite() {
        return Err(AevbError::non_finite("sleep objective"));
    }
    if let Some(b) = grad.non_finite_block() {
        return Err(AevbError::non_finite(format!("sleep gradient of {b}")));
    }
    optimizer.apply(model, &grad, 1.0)?;
    Ok(WakeSleepDiagnostics { wake, sleep })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McemConfig {
    /// Sampler for the per-datapoint chains. The stepsize is tuned during the
    /// first `burn_in` transitions of the run and then frozen.
    pub hmc: HmcConfig,
    pub weight_updates: usize,
    /// Adagrad stepsize after `t` updates is `η / √(1 + t / anneal_horizon)`.
    pub anneal_horizon: f64,
    /// Stepsize halvings allowed for one divergent transition.
    pub max_retries: usize,
    /// Posterior samples per point for the logged marginal likelihood.
    pub eval_samples: usize,
    pub eval_hmc: HmcConfig,
}

impl Default for McemConfig {
    fn default() -> Self {
        Self {
            hmc: HmcConfig {
                leapfrog_steps: 10,
                ..HmcConfig::default()
            },
            weight_updates: 5,
            anneal_horizon: 1e4,
            max_retries: 10,
            eval_samples: 50,
            eval_hmc: mll_hmc_config(),
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        self.hmc.validate()?;
        self.eval_hmc.validate()?;
        if self.weight_updates == 0 {
            return Err(AevbError::Param("weight_updates must be positive".into()));
        }
        if !(self.anneal_horizon > 0.0) {
            return Err(AevbError::Param("anneal_horizon must be positive".into()));
        }
        if self.eval_samples == 0 {
            return Err(AevbError::Param("eval_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Persistent per-datapoint chains and sampler/optimizer counters.
#[derive(Clone, Debug, PartialEq)]
pub struct McemState {
    pub chains: Matrix,
    pub stepsize: f64,
    pub adapter: StepsizeAdapter,
    pub transitions: u64,
    pub updates: u64,
}

impl McemState {
    /// Chains start at prior draws.
    pub fn new(n: usize, latent_dim: usize, cfg: &McemConfig, rng: &mut RngState) -> Self {
        let chains = Matrix::new(n, latent_dim, rng.standard_normal_vec(n * latent_dim)).expect("positive sizes");
        Self {
            chains,
            stepsize: cfg.hmc.stepsize,
            adapter: StepsizeAdapter::new(cfg.hmc.stepsize, cfg.hmc.target_acceptance),
            transitions: 0,
            updates: 0,
        }
    }
}

/// A decoder whose parameters Monte Carlo EM can fit.
pub trait McemModel: LatentModel + Parameters {
    /// `log p(x|z)`, adding `scale · ∇_θ log p(x|z)` into `grad`.
    fn log_lik_param_backward(&self, x: &[f64], z: &[f64], scale: f64, grad: &mut Self) -> Result<f64>;
}

impl McemModel for Decoder {
    fn log_lik_param_backward(&self, x: &[f64], z: &[f64], scale: f64, grad: &mut Self) -> Result<f64> {
        self.log_lik_backward(x, z, scale, grad, None)
    }
}

impl McemModel for LinearGaussianDecoder {
    fn log_lik_param_backward(&self, x: &[f64], z: &[f64], scale: f64, grad: &mut Self) -> Result<f64> {
        let value = self.log_lik(x, z)?;
        let mut r = vec![0.0; x.len()];
        crate::numkit::affine(&self.w, z, &self.bias, &mut r);
        for (ri, xi) in r.iter_mut().zip(x) {
            *ri = (xi - *ri) / self.noise_var;
        }
        crate::numkit::add_outer(&mut grad.w, scale, &r, z);
        for (b, ri) in grad.bias.iter_mut().zip(&r) {
            *b += scale * ri;
        }
        Ok(value)
    }
}

/// Advance datapoint `i`'s chain by one HMC transition. A non-finite
/// proposal is retried with fresh momentum and half the stepsize.
fn advance_chain<D: McemModel>(
    decoder: &D,
    state: &mut McemState,
    x: &[f64],
    i: usize,
    cfg: &McemConfig,
    rng: &mut RngState,
) -> Result<()> {
    let target = Posterior { model: decoder, x };
    let mut point = HmcPoint::new(&target, state.chains.row(i))?;
    let mut retries = 0;
    let t = loop {
        let t = hmc_transition(&target, &mut point, state.stepsize, cfg.hmc.leapfrog_steps, rng);
        if t.finite {
            break t;
        }
        retries += 1;
        if retries > cfg.max_retries {
            return Err(AevbError::Divergence(format!(
                "chain {i} diverged {} times; stepsize down to {}",
                retries, state.stepsize
            )));
        }
        state.stepsize *= 0.5;
    };
    if cfg.hmc.adapt && state.transitions < cfg.hmc.burn_in as u64 {
        state.adapter.update(t.accept_prob);
        state.stepsize = if state.transitions + 1 == cfg.hmc.burn_in as u64 {
            state.adapter.final_stepsize()
        } else {
            state.adapter.stepsize()
        };
    }
    state.transitions += 1;
    state.chains.row_mut(i).copy_from_slice(&point.z);
    Ok(())
}

/// One Monte Carlo EM step: advance each minibatch point's posterior chain,
/// then take `weight_updates` annealed Adagrad steps on
/// `(N / M) Σ log p(x, z)` (+ `log N(θ; 0, I)` with decay) at fixed `z`.
/// Returns the mean `log p(x, z)` before the updates.
#[allow(clippy::too_many_arguments)]
pub fn mcem_step<D: McemModel>(
    decoder: &mut D,
    optimizer: &mut OptimizerState,
    state: &mut McemState,
    data: &Matrix,
    batch: &[usize],
    cfg: &McemConfig,
    weight_decay: bool,
    rng: &mut RngState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(AevbError::Param("empty minibatch".into()));
    }
    for &i in batch {
        advance_chain(decoder, state, data.row(i), i, cfg, rng)?;
    }
    let scale = data.rows() as f64 / batch.len() as f64;
    let mut first = None;
    for _ in 0..cfg.weight_updates {
        let mut grad = decoder.zeros_like();
        let mut total = 0.0;
        for &i in batch {
            let z = state.chains.row(i);
            total += decoder.log_lik_param_backward(data.row(i), z, scale, &mut grad)? + log_std_normal(z);
        }
        let mean = total / batch.len() as f64;
        if !mean.is_finite() {
            return Err(AevbError::non_finite("decoder log-likelihood"));
        }
        first.get_or_insert(mean);
        if weight_decay {
            grad.add_scaled(decoder, -1.0);
        }
        if let Some(b) = grad.first_non_finite() {
            return Err(AevbError::non_finite(format!("gradient of decoder.{b}")));
        }
        let factor = 1.0 / (1.0 + state.updates as f64 / cfg.anneal_horizon).sqrt();
        optimizer.apply(decoder, &grad, factor)?;
        state.updates += 1;
    }
    Ok(first.expect("weight_updates > 0"))
}

/// Mean estimated `log p(x)` over the first `n_points` rows.
pub fn mcem_eval<D: LatentModel + ?Sized>(
    decoder: &D,
    data: &Matrix,
    n_points: Option<usize>,
    cfg: &McemConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let n = n_points.map_or(data.rows(), |p| p.min(data.rows()));
    let mut total = 0.0;
    for i in 0..n {
        total += marginal_loglik_estimate(decoder, data.row(i), cfg.eval_samples, &cfg.eval_hmc, rng)?.log_marginal;
    }
    Ok(total / n as f64)
}

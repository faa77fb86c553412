//! Evaluation: Hamiltonian Monte Carlo, a Gaussian density fit to posterior
//! samples, the posterior-sample marginal-likelihood estimator, and the
//! closed-form linear-Gaussian (probabilistic PCA) likelihood used as an
//! oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{AevbError, Result};
use crate::networks::{Decoder, Parameters};
use crate::numkit::{log_sum_exp, Matrix, RngState, LN_2PI};

/// Jitter added to the diagonal of fitted covariances.
pub const COV_JITTER: f64 = 1e-6;
/// Latent dimension above which the marginal-likelihood estimate is flagged.
pub const MAX_RELIABLE_LATENT_DIM: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HmcConfig {
    pub leapfrog_steps: usize,
    pub stepsize: f64,
    pub target_acceptance: f64,
    /// Iterations discarded before recording; the stepsize is tuned during
    /// these when `adapt` is set.
    pub burn_in: usize,
    /// Record every `thinning`-th iteration after burn-in.
    pub thinning: usize,
    pub adapt: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            leapfrog_steps: 10,
            stepsize: 0.1,
            target_acceptance: 0.9,
            burn_in: 200,
            thinning: 1,
            adapt: true,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.leapfrog_steps == 0 || self.thinning == 0 {
            return Err(AevbError::Param("leapfrog_steps and thinning must be positive".into()));
        }
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(AevbError::Param(format!("HMC stepsize must be positive, got {}", self.stepsize)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(AevbError::Param("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// An unnormalized log-density that also writes its gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> f64;
}

/// A closure-backed [`LogDensity`].
pub struct FnDensity<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> LogDensity for FnDensity<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(z, grad)
    }
}

/// Standard normal target, mostly for tests and tuning.
pub struct StandardNormal(pub usize);

impl LogDensity for StandardNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(z) {
            *g = -v;
        }
        -0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `steps` leapfrog steps of size `stepsize` for `H(z, p) = −log π(z) + ½|p|²`.
///
/// `grad` must hold `∇ log π(z)` on entry and is kept current. Returns the
/// log-density at the final position.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    z: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    stepsize: f64,
    steps: usize,
) -> f64 {
    let mut logp = f64::NAN;
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi += 0.5 * stepsize * gi;
    }
    for s in 0..steps {
        for (zi, pi) in z.iter_mut().zip(p.iter()) {
            *zi += stepsize * pi;
        }
        logp = target.log_density_grad(z, grad);
        let factor = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi += factor * stepsize * gi;
        }
    }
    logp
}

#[derive(Clone, Debug)]
pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    /// Fraction of recorded-phase proposals accepted.
    pub acceptance_rate: f64,
    /// Mean Metropolis acceptance probability over the recorded phase.
    pub mean_accept_prob: f64,
    /// Stepsize in force after burn-in.
    pub stepsize: f64,
    /// Final chain position.
    pub last: Vec<f64>,
}

/// A chain position with its cached log-density and gradient.
#[derive(Clone, Debug)]
pub struct HmcPoint {
    pub z: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

impl HmcPoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, z: &[f64]) -> Result<Self> {
        if z.len() != target.dim() {
            return Err(AevbError::shape("HmcPoint", format!("z of length {}", z.len()), format!("target dim {}", target.dim())));
        }
        let mut grad = vec![0.0; z.len()];
        let logp = target.log_density_grad(z, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AevbError::non_finite("HMC start point"));
        }
        Ok(Self { z: z.to_vec(), grad, logp })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    /// `min(1, exp(−ΔH))`, zero for a non-finite proposal.
    pub accept_prob: f64,
    pub accepted: bool,
    /// False when the proposal's Hamiltonian was not finite.
    pub finite: bool,
}

/// Relative half-width of the per-transition stepsize jitter.
pub const STEPSIZE_JITTER: f64 = 0.5;

/// One HMC transition: fresh momentum, leapfrog, Metropolis correction.
///
/// The leapfrog stepsize is drawn uniformly from
/// `stepsize · [1 − STEPSIZE_JITTER, 1 + STEPSIZE_JITTER]`, which breaks
/// the near-periodic orbits a fixed trajectory length produces on
/// Gaussian-like targets.
pub fn hmc_transition<T: LogDensity + ?Sized>(
    target: &T,
    point: &mut HmcPoint,
    stepsize: f64,
    steps: usize,
    rng: &mut RngState,
) -> Transition {
    let dim = point.z.len();
    let stepsize = stepsize * (1.0 + STEPSIZE_JITTER * (2.0 * rng.uniform() - 1.0));
    let mut p = rng.standard_normal_vec(dim);
    let h0 = -point.logp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let mut z = point.z.clone();
    let mut grad = point.grad.clone();
    let logp = leapfrog(target, &mut z, &mut p, &mut grad, stepsize, steps);
    let h1 = -logp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    let finite = h1.is_finite() && grad.iter().all(|g| g.is_finite());
    let accept_prob = if finite { (h0 - h1).exp().min(1.0) } else { 0.0 };
    let accepted = finite && rng.uniform() < accept_prob;
    if accepted {
        point.z = z;
        point.grad = grad;
        point.logp = logp;
    }
    Transition {
        accept_prob,
        accepted,
        finite,
    }
}

/// Proposals in a row with a non-finite Hamiltonian before giving up.
const MAX_DIVERGENT_RUN: usize = 100;

/// Dual-averaging stepsize tuner.
///
/// Drives the Metropolis acceptance probability toward `target` by
/// shrinking `log ε` toward `ln(10 ε₀)`; [`StepsizeAdapter::final_stepsize`]
/// is the weighted average of the iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct StepsizeAdapter {
    pub target: f64,
    pub shrink_to: f64,
    pub iteration: u64,
    pub mean_error: f64,
    pub log_eps: f64,
    pub log_eps_avg: f64,
}

impl StepsizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(initial: f64, target: f64) -> Self {
        Self {
            target,
            shrink_to: (10.0 * initial).ln(),
            iteration: 0,
            mean_error: 0.0,
            log_eps: initial.ln(),
            log_eps_avg: 0.0,
        }
    }

    /// Stepsize for the next transition.
    pub fn stepsize(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Record one transition's acceptance probability.
    pub fn update(&mut self, accept_prob: f64) {
        self.iteration += 1;
        let t = self.iteration as f64;
        let w = 1.0 / (t + Self::T0);
        self.mean_error = (1.0 - w) * self.mean_error + w * (self.target - accept_prob);
        self.log_eps = self.shrink_to - t.sqrt() / Self::GAMMA * self.mean_error;
        let eta = t.powf(-Self::KAPPA);
        self.log_eps_avg = eta * self.log_eps + (1.0 - eta) * self.log_eps_avg;
    }

    /// Stepsize to freeze once adaptation ends.
    pub fn final_stepsize(&self) -> f64 {
        if self.iteration == 0 {
            self.stepsize()
        } else {
            self.log_eps_avg.exp()
        }
    }
}

/// One HMC chain: `burn_in` iterations (with stepsize tuning when
/// `cfg.adapt`), then `n · thinning` iterations recording every
/// `thinning`-th position.
///
/// Tuning uses [`StepsizeAdapter`] on the Metropolis acceptance
/// probability; its averaged stepsize is frozen after burn-in.
pub fn hmc_sample<T: LogDensity + ?Sized>(
    target: &T,
    z0: &[f64],
    cfg: &HmcConfig,
    n: usize,
    rng: &mut RngState,
) -> Result<HmcRun> {
    cfg.validate()?;
    let mut point = HmcPoint::new(target, z0)?;

    let mut adapter = StepsizeAdapter::new(cfg.stepsize, cfg.target_acceptance);
    let mut divergent_run = 0usize;
    let mut stepsize = cfg.stepsize;

    let mut samples = Vec::with_capacity(n);
    let mut accepted = 0usize;
    let mut accept_prob_sum = 0.0;

    for it in 0..cfg.burn_in + n * cfg.thinning {
        let burning = it < cfg.burn_in;
        if it == cfg.burn_in && cfg.adapt && cfg.burn_in > 0 {
            stepsize = adapter.final_stepsize();
        }
        let eps_now = if burning && cfg.adapt { adapter.stepsize() } else { stepsize };
        let t = hmc_transition(target, &mut point, eps_now, cfg.leapfrog_steps, rng);
        if t.finite {
            divergent_run = 0;
        } else {
            divergent_run += 1;
            if divergent_run >= MAX_DIVERGENT_RUN {
                return Err(AevbError::Divergence(format!(
                    "{MAX_DIVERGENT_RUN} consecutive non-finite proposals at stepsize {eps_now}"
                )));
            }
        }
        if burning {
            if cfg.adapt {
                adapter.update(t.accept_prob);
            }
        } else {
            accepted += t.accepted as usize;
            accept_prob_sum += t.accept_prob;
            if (it - cfg.burn_in + 1) % cfg.thinning == 0 {
                samples.push(point.z.clone());
            }
        }
    }
    if cfg.adapt && cfg.burn_in > 0 && n == 0 {
        stepsize = adapter.final_stepsize();
    }
    let recorded = (n * cfg.thinning).max(1) as f64;
    Ok(HmcRun {
        samples,
        acceptance_rate: accepted as f64 / recorded,
        mean_accept_prob: accept_prob_sum / recorded,
        stepsize,
        last: point.z,
    })
}

/// Full-covariance Gaussian fitted by moments.
#[derive(Clone, Debug)]
pub struct FittedDensity {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    chol: DMatrix<f64>,
    log_det: f64,
}

impl FittedDensity {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let diff = DVector::from_iterator(d, z.iter().zip(&self.mean).map(|(a, b)| a - b));
        let y = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a nonzero diagonal");
        -0.5 * (d as f64 * LN_2PI + self.log_det + y.norm_squared())
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }
}

/// Sample mean and covariance (divisor `n − 1`) plus `COV_JITTER · I`.
pub fn fit_density(samples: &[Vec<f64>]) -> Result<FittedDensity> {
    let d = samples.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(AevbError::Param("no samples to fit".into()));
    }
    if samples.len() < d + 2 {
        return Err(AevbError::Param(format!(
            "density fit needs at least {} samples in {d} dimensions, got {}",
            d + 2,
            samples.len()
        )));
    }
    if samples.iter().any(|s| s.len() != d) {
        return Err(AevbError::shape("fit_density", format!("dim {d}"), "ragged samples"));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in 0..=i {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
        cov[(i, i)] += COV_JITTER;
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(AevbError::non_finite("fitted covariance"));
    }
    let chol = nalgebra::Cholesky::new(cov.clone())
        .ok_or_else(|| AevbError::Format("fitted covariance is not positive definite".into()))?
        .l();
    let log_det = 2.0 * chol.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let covariance = Matrix::new(d, d, cov.transpose().as_slice().to_vec())?;
    Ok(FittedDensity {
        mean,
        covariance,
        chol,
        log_det,
    })
}

/// A generative model `p(z) p(x|z)` with `p(z) = N(0, I)`.
pub trait LatentModel {
    fn latent_dim(&self) -> usize;
    fn log_lik(&self, x: &[f64], z: &[f64]) -> Result<f64>;
    /// `log p(x|z)`, writing `∇_z log p(x|z)` into `d_z`.
    fn log_lik_grad_z(&self, x: &[f64], z: &[f64], d_z: &mut [f64]) -> Result<f64>;
}

impl LatentModel for Decoder {
    fn latent_dim(&self) -> usize {
        Decoder::latent_dim(self)
    }

    fn log_lik(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        Decoder::log_lik(self, x, z)
    }

    fn log_lik_grad_z(&self, x: &[f64], z: &[f64], d_z: &mut [f64]) -> Result<f64> {
        Decoder::log_lik_grad_z(self, x, z, d_z)
    }
}

/// `p(x|z) = N(x; W z + bias, noise_var · I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianDecoder {
    pub w: Matrix,
    pub bias: Vec<f64>,
    pub noise_var: f64,
}

impl LinearGaussianDecoder {
    pub fn new(w: Matrix, bias: Vec<f64>, noise_var: f64) -> Result<Self> {
        if bias.len() != w.rows() {
            return Err(AevbError::shape("LinearGaussianDecoder", format!("w {}x{}", w.rows(), w.cols()), format!("bias {}", bias.len())));
        }
        if !(noise_var > 0.0) {
            return Err(AevbError::Param(format!("noise_var must be positive, got {noise_var}")));
        }
        Ok(Self { w, bias, noise_var })
    }

    fn residual(&self, x: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.w.rows() || z.len() != self.w.cols() {
            return Err(AevbError::shape(
                "LinearGaussianDecoder",
                format!("x {}, z {}", x.len(), z.len()),
                format!("w {}x{}", self.w.rows(), self.w.cols()),
            ));
        }
        let mut r = vec![0.0; x.len()];
        crate::numkit::affine(&self.w, z, &self.bias, &mut r);
        for (ri, xi) in r.iter_mut().zip(x) {
            *ri = xi - *ri;
        }
        Ok(r)
    }
}

impl LatentModel for LinearGaussianDecoder {
    fn latent_dim(&self) -> usize {
        self.w.cols()
    }

    fn log_lik(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let r = self.residual(x, z)?;
        let d = x.len() as f64;
        Ok(-0.5 * (d * (LN_2PI + self.noise_var.ln()) + r.iter().map(|v| v * v).sum::<f64>() / self.noise_var))
    }

    fn log_lik_grad_z(&self, x: &[f64], z: &[f64], d_z: &mut [f64]) -> Result<f64> {
        let mut r = self.residual(x, z)?;
        let d = x.len() as f64;
        let value = -0.5 * (d * (LN_2PI + self.noise_var.ln()) + r.iter().map(|v| v * v).sum::<f64>() / self.noise_var);
        r.iter_mut().for_each(|v| *v /= self.noise_var);
        d_z.fill(0.0);
        crate::numkit::add_transpose_product(&self.w, &r, d_z);
        Ok(value)
    }
}

/// Trainable blocks are `w` and `bias`; the noise variance stays fixed.
impl Parameters for LinearGaussianDecoder {
    fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        vec![("w", self.w.as_slice()), ("bias", &self.bias)]
    }

    fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![("w", self.w.as_mut_slice()), ("bias", &mut self.bias)]
    }
}

/// The unnormalized posterior `log p(z) + log p(x|z)` as an HMC target.
pub struct Posterior<'a, M: ?Sized> {
    pub model: &'a M,
    pub x: &'a [f64],
}

impl<M: LatentModel + ?Sized> LogDensity for Posterior<'_, M> {
    fn dim(&self) -> usize {
        self.model.latent_dim()
    }

    fn log_density_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        match self.model.log_lik_grad_z(self.x, z, grad) {
            Ok(ll) => {
                for (g, v) in grad.iter_mut().zip(z) {
                    *g -= v;
                }
                ll - 0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * LN_2PI
            }
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MllEstimate {
    pub log_marginal: f64,
    /// Set when the latent space is too large for a reliable estimate.
    pub warning: Option<String>,
    pub stepsize: f64,
    pub acceptance_rate: f64,
}

/// `log p(x)` from posterior samples: run HMC, fit a Gaussian `q` to
/// `fit_samples` draws, then continue the chain for `eval_samples` more and
/// return `−log( (1/L) Σ q(z) / (p(z) p(x|z)) )`.
///
/// The stepsize tuned during the first chain's burn-in is reused for the
/// second chain.
pub fn marginal_loglik_estimate_with<M: LatentModel + ?Sized>(
    model: &M,
    x: &[f64],
    fit_samples: usize,
    eval_samples: usize,
    cfg: &HmcConfig,
    rng: &mut RngState,
) -> Result<MllEstimate> {
    if eval_samples == 0 {
        return Err(AevbError::Param("at least one evaluation sample is required".into()));
    }
    let j = model.latent_dim();
    let warning = (j > MAX_RELIABLE_LATENT_DIM).then(|| {
        format!("latent dimension {j} exceeds {MAX_RELIABLE_LATENT_DIM}; the marginal likelihood estimate may be unreliable")
    });
    let target = Posterior { model, x };
    let stage1 = hmc_sample(&target, &vec![0.0; j], cfg, fit_samples, rng)?;
    let q = fit_density(&stage1.samples)?;
    let cfg3 = HmcConfig {
        stepsize: stage1.stepsize,
        burn_in: 0,
        adapt: false,
        ..*cfg
    };
    let stage3 = hmc_sample(&target, &stage1.last, &cfg3, eval_samples, rng)?;
    let mut terms = Vec::with_capacity(eval_samples);
    for z in &stage3.samples {
        let log_prior = -0.5 * (j as f64 * LN_2PI + z.iter().map(|v| v * v).sum::<f64>());
        terms.push(q.log_density(z) - log_prior - model.log_lik(x, z)?);
    }
    let log_marginal = -(log_sum_exp(&terms) - (eval_samples as f64).ln());
    if !log_marginal.is_finite() {
        return Err(AevbError::non_finite("marginal likelihood estimate"));
    }
    Ok(MllEstimate {
        log_marginal,
        warning,
        stepsize: stage1.stepsize,
        acceptance_rate: stage3.acceptance_rate,
    })
}

/// [`marginal_loglik_estimate_with`] using `L` samples for both the fit
/// (at least `J + 2`) and the estimate.
pub fn marginal_loglik_estimate<M: LatentModel + ?Sized>(
    model: &M,
    x: &[f64],
    l: usize,
    cfg: &HmcConfig,
    rng: &mut RngState,
) -> Result<MllEstimate> {
    let fit = l.max(model.latent_dim() + 2);
    marginal_loglik_estimate_with(model, x, fit, l, cfg, rng)
}

/// HMC settings of the marginal-likelihood protocol: 4 leapfrog steps,
/// keeping every third transition.
pub fn mll_hmc_config() -> HmcConfig {
    HmcConfig {
        leapfrog_steps: 4,
        thinning: 3,
        ..HmcConfig::default()
    }
}

/// `log N(x; 0, W Wᵀ + noise_var · I)`.
pub fn ppca_loglik(w: &Matrix, noise_var: f64, x: &[f64]) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(AevbError::Param(format!("noise_var must be positive, got {noise_var}")));
    }
    let d = w.rows();
    if x.len() != d {
        return Err(AevbError::shape("ppca_loglik", format!("x of length {}", x.len()), format!("W {}x{}", d, w.cols())));
    }
    let wm = DMatrix::from_row_slice(d, w.cols(), w.as_slice());
    let mut c = &wm * wm.transpose();
    for i in 0..d {
        c[(i, i)] += noise_var;
    }
    let chol = nalgebra::Cholesky::new(c).ok_or_else(|| AevbError::Format("covariance not positive definite".into()))?;
    let l = chol.l();
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let y = l
        .solve_lower_triangular(&DVector::from_column_slice(x))
        .expect("nonzero diagonal");
    Ok(-0.5 * (d as f64 * LN_2PI + log_det + y.norm_squared()))
}

/// Maximum-likelihood probabilistic PCA.
#[derive(Clone, Debug)]
pub struct PpcaFit {
    pub mean: Vec<f64>,
    pub w: Matrix,
    pub noise_var: f64,
}

impl PpcaFit {
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        ppca_loglik(&self.w, self.noise_var, &centered)
    }

    /// Average log-likelihood over the rows of `data`.
    pub fn mean_loglik(&self, data: &Matrix) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..data.rows() {
            total += self.loglik(data.row(i))?;
        }
        Ok(total / data.rows() as f64)
    }

    pub fn decoder(&self) -> Result<LinearGaussianDecoder> {
        LinearGaussianDecoder::new(self.w.clone(), self.mean.clone(), self.noise_var)
    }
}

/// Closed-form ML fit with `q` latent dimensions from the eigendecomposition
/// of the sample covariance: `σ²` is the mean of the discarded eigenvalues
/// and `W = U_q (Λ_q − σ² I)^½`.
pub fn ppca_ml_fit(data: &Matrix, q: usize) -> Result<PpcaFit> {
    let (n, d) = data.shape();
    if q == 0 || q >= d {
        return Err(AevbError::Param(format!("latent dim {q} must be in 1..{d}")));
    }
    let x = DMatrix::from_row_slice(n, d, data.as_slice());
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let noise_var = order[q..].iter().map(|&i| eig.eigenvalues[i]).sum::<f64>() / (d - q) as f64;
    if !(noise_var > 0.0) {
        return Err(AevbError::Format("degenerate data: zero residual variance".into()));
    }
    let mut w = Matrix::zeros(d, q);
    for (k, &i) in order[..q].iter().enumerate() {
        let s = (eig.eigenvalues[i] - noise_var).max(0.0).sqrt();
        for r in 0..d {
            w.set(r, k, eig.eigenvectors[(r, i)] * s);
        }
    }
    Ok(PpcaFit { mean, w, noise_var })
}

/// Draw `n` points from `x = W z + mean + √noise_var · e` with `z, e ~ N(0, I)`.
pub fn sample_linear_gaussian(w: &Matrix, mean: &[f64], noise_var: f64, n: usize, rng: &mut RngState) -> Matrix {
    let (d, q) = w.shape();
    let mut out = Matrix::zeros(n, d);
    let sd = noise_var.sqrt();
    for i in 0..n {
        let z = rng.standard_normal_vec(q);
        let e = rng.standard_normal_vec(d);
        let row = out.row_mut(i);
        crate::numkit::affine(w, &z, mean, row);
        for (r, ei) in row.iter_mut().zip(&e) {
            *r += sd * ei;
        }
    }
    out
}

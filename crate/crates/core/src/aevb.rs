//! Minibatch training of the encoder and decoder by stochastic ascent on the
//! lower bound, plus the shared driver used by the baseline algorithms.
//!
//! Minibatches are consecutive slices of a per-epoch shuffle. The shuffle
//! for epoch `e` is a pure function of `(seed, e)` and evaluation noise is a
//! pure function of `(seed, examples_seen)`, so a run restored from a
//! checkpoint (model, optimizer, noise generator, example counter) continues
//! exactly as the uninterrupted run would.

use std::io::Write;
use std::str::FromStr;

use crate::baselines::{mcem_eval, mcem_step, wake_sleep_step, McemConfig, McemState};
use crate::error::{AevbError, Result};
use crate::networks::{vae_backward_into, ModelShape, Parameters, VaeModel};
use crate::numkit::{Matrix, RngState};
use crate::objective::{sgvb_b, Estimator};

pub const STEPSIZE_CANDIDATES: [f64; 3] = [0.01, 0.02, 0.1];
pub const INIT_STD: f64 = 0.01;
pub const ADAGRAD_EPSILON: f64 = 1e-8;

const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4521;
const EVAL_SALT: u64 = 0x4556_414c_5541_5445;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
}

impl FromStr for OptimizerKind {
    type Err = AevbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            other => Err(AevbError::Param(format!("unknown optimizer '{other}' (expected sgd or adagrad)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Algorithm {
    Aevb,
    WakeSleep,
    Mcem(McemConfig),
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Aevb => "aevb",
            Algorithm::WakeSleep => "wake_sleep",
            Algorithm::Mcem(_) => "mcem",
        }
    }
}

impl FromStr for Algorithm {
    type Err = AevbError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aevb" => Ok(Algorithm::Aevb),
            "wake_sleep" => Ok(Algorithm::WakeSleep),
            "mcem" => Ok(Algorithm::Mcem(McemConfig::default())),
            other => Err(AevbError::Param(format!(
                "unknown algorithm '{other}' (expected aevb, wake_sleep or mcem)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub minibatch_size: usize,
    pub samples_per_point: usize,
    pub optimizer: OptimizerKind,
    pub stepsize: f64,
    pub epochs: u64,
    /// Stop after this many training examples even if epochs remain.
    pub max_examples: Option<u64>,
    pub seed: u64,
    pub weight_decay: bool,
    pub eval_every: u64,
    /// Points from each split used for the logged bound; `None` uses all.
    pub eval_points: Option<usize>,
    /// Noise draws per point when evaluating the logged bound.
    pub eval_samples: usize,
    pub estimator: Estimator,
    pub algorithm: Algorithm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 100,
            samples_per_point: 1,
            optimizer: OptimizerKind::Adagrad,
            stepsize: 0.02,
            epochs: 1,
            max_examples: None,
            seed: 0,
            weight_decay: true,
            eval_every: 10_000,
            eval_points: Some(1000),
            eval_samples: 1,
            estimator: Estimator::B,
            algorithm: Algorithm::Aevb,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 {
            return Err(AevbError::Param("minibatch_size must be positive".into()));
        }
        if self.samples_per_point == 0 {
            return Err(AevbError::Param("samples_per_point must be positive".into()));
        }
        if !(self.stepsize >= 0.0 && self.stepsize.is_finite()) {
            return Err(AevbError::Param(format!("stepsize must be finite and nonnegative, got {}", self.stepsize)));
        }
        if self.eval_every == 0 {
            return Err(AevbError::Param("eval_every must be positive".into()));
        }
        if self.eval_samples == 0 {
            return Err(AevbError::Param("eval_samples must be positive".into()));
        }
        if self.eval_points == Some(0) {
            return Err(AevbError::Param("eval_points must be positive".into()));
        }
        if let Algorithm::Mcem(m) = &self.algorithm {
            m.validate()?;
        }
        Ok(())
    }

    fn budget(&self, n: usize) -> u64 {
        let by_epochs = self.epochs.saturating_mul(n as u64);
        self.max_examples.map_or(by_epochs, |m| m.min(by_epochs))
    }
}

/// Per-entry Adagrad for gradient ascent.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub accum: Vec<f64>,
    pub epsilon: f64,
    pub stepsize: f64,
}

impl AdagradState {
    pub fn new(num_params: usize, stepsize: f64) -> Self {
        Self {
            accum: vec![0.0; num_params],
            epsilon: ADAGRAD_EPSILON,
            stepsize,
        }
    }

    /// `accum += g²; param += factor · η · g / (√accum + ε)`.
    pub fn step_flat(&mut self, params: &mut [f64], grad: &[f64], factor: f64) -> Result<()> {
        if params.len() != self.accum.len() || grad.len() != self.accum.len() {
            return Err(AevbError::shape(
                "adagrad_step",
                format!("{} accumulators", self.accum.len()),
                format!("{} params, {} grads", params.len(), grad.len()),
            ));
        }
        let eta = factor * self.stepsize;
        for ((p, &g), a) in params.iter_mut().zip(grad).zip(self.accum.iter_mut()) {
            *a += g * g;
            *p += eta * g / (a.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grad: &P, factor: f64) -> Result<()> {
        if params.num_params() != self.accum.len() || grad.num_params() != self.accum.len() {
            return Err(AevbError::shape(
                "adagrad_step",
                format!("{} accumulators", self.accum.len()),
                format!("{} params", params.num_params()),
            ));
        }
        let eta = factor * self.stepsize;
        let mut offset = 0;
        for ((_, p), (_, g)) in params.blocks_mut().into_iter().zip(grad.blocks()) {
            let acc = &mut self.accum[offset..offset + p.len()];
            for ((pi, &gi), ai) in p.iter_mut().zip(g).zip(acc.iter_mut()) {
                *ai += gi * gi;
                *pi += eta * gi / (ai.sqrt() + self.epsilon);
            }
            offset += p.len();
        }
        Ok(())
    }
}

/// Adagrad: the free-function form of [`AdagradState::step_flat`].
pub fn adagrad_step(state: &mut AdagradState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    state.step_flat(params, grad, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerState {
    Sgd { stepsize: f64 },
    Adagrad(AdagradState),
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_params: usize, stepsize: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd { stepsize },
            OptimizerKind::Adagrad => OptimizerState::Adagrad(AdagradState::new(num_params, stepsize)),
        }
    }

    pub fn stepsize(&self) -> f64 {
        match self {
            OptimizerState::Sgd { stepsize } => *stepsize,
            OptimizerState::Adagrad(a) => a.stepsize,
        }
    }

    /// Ascent step with the stepsize multiplied by `factor`.
    pub fn apply<P: Parameters>(&mut self, params: &mut P, grad: &P, factor: f64) -> Result<()> {
        match self {
            OptimizerState::Sgd { stepsize } => {
                if params.num_params() != grad.num_params() {
                    return Err(AevbError::shape("sgd_step", params.num_params(), grad.num_params()));
                }
                params.add_scaled(grad, factor * *stepsize);
                Ok(())
            }
            OptimizerState::Adagrad(a) => a.step(params, grad, factor),
        }
    }
}

/// Every weight and bias drawn i.i.d. from `N(0, 0.01²)`.
pub fn init_params(shape: &ModelShape, rng: &mut RngState) -> Result<VaeModel> {
    let mut model = VaeModel::zeros(shape)?;
    let mut flat = rng.standard_normal_vec(model.num_params());
    flat.iter_mut().for_each(|v| *v *= INIT_STD);
    model.set_flat(&flat)?;
    Ok(model)
}

/// Gradient of `log N(θ; 0, I)`: `−θ`, added into the decoder part of `grad`.
pub fn map_prior_grad(model: &VaeModel, grad: &mut VaeModel) {
    grad.decoder.add_scaled(&model.decoder, -1.0);
}

/// Draw `L` standard-normal noise vectors of length `j`.
pub fn draw_noise(rng: &mut RngState, l: usize, j: usize) -> Vec<Vec<f64>> {
    (0..l).map(|_| rng.standard_normal_vec(j)).collect()
}

/// Gradient of the minibatch bound `(N / M) Σᵢ L̃(xᵢ)` added into `grad`;
/// returns the mean per-point bound over the minibatch.
pub fn minibatch_gradient(
    model: &VaeModel,
    data: &Matrix,
    batch: &[usize],
    noise: &[Vec<Vec<f64>>],
    n_total: usize,
    estimator: Estimator,
    grad: &mut VaeModel,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(AevbError::Param("empty minibatch".into()));
    }
    let scale = n_total as f64 / batch.len() as f64;
    let mut total = 0.0;
    for (&i, eps) in batch.iter().zip(noise) {
        total += vae_backward_into(model, data.row(i), eps, estimator, scale, grad)?;
    }
    Ok(total / batch.len() as f64)
}

/// One training step of the recognition-model algorithm on `batch`.
pub fn aevb_step(
    model: &mut VaeModel,
    optimizer: &mut OptimizerState,
    data: &Matrix,
    batch: &[usize],
    config: &TrainConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let j = model.latent_dim();
    let noise: Vec<Vec<Vec<f64>>> = batch
        .iter()
        .map(|_| draw_noise(rng, config.samples_per_point, j))
        .collect();
    let mut grad = model.zeros_like();
    let bound = minibatch_gradient(model, data, batch, &noise, data.rows(), config.estimator, &mut grad)?;
    if config.weight_decay {
        map_prior_grad(model, &mut grad);
    }
    if !bound.is_finite() {
        return Err(AevbError::non_finite("minibatch bound"));
    }
    if let Some(block) = grad.non_finite_block() {
        return Err(AevbError::non_finite(format!("gradient of {block}")));
    }
    optimizer.apply(model, &grad, 1.0)?;
    Ok(bound)
}

/// Average per-point bound (estimator B, `samples` noise draws per point)
/// over the first `n_points` rows of `data`.
pub fn evaluate_bound(
    model: &VaeModel,
    data: &Matrix,
    n_points: Option<usize>,
    samples: usize,
    rng: &mut RngState,
) -> Result<f64> {
    let n = n_points.map_or(data.rows(), |p| p.min(data.rows()));
    let j = model.latent_dim();
    let mut total = 0.0;
    for i in 0..n {
        let eps = draw_noise(rng, samples, j);
        total += sgvb_b(model, data.row(i), &eps)?.value;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricRow {
    pub examples_seen: u64,
    pub train: f64,
    pub test: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    /// CSV with header `examples_seen,split,bound_per_point`, or with a leading
    /// `algorithm` column when `algorithm` is given.
    pub fn write_csv<W: Write>(&self, out: &mut W, algorithm: Option<&str>, header: bool) -> std::io::Result<()> {
        if header {
            match algorithm {
                Some(_) => writeln!(out, "algorithm,examples_seen,split,bound_per_point")?,
                None => writeln!(out, "examples_seen,split,bound_per_point")?,
            }
        }
        let prefix = algorithm.map(|a| format!("{a},")).unwrap_or_default();
        for row in &self.rows {
            writeln!(out, "{prefix}{},train,{}", row.examples_seen, row.train)?;
            if let Some(t) = row.test {
                writeln!(out, "{prefix}{},test,{t}", row.examples_seen)?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self, algorithm: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, algorithm, true).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: VaeModel,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    pub examples_seen: u64,
    pub log: MetricLog,
    pub mcem: Option<McemState>,
}

impl TrainState {
    pub fn epoch(&self, n: usize) -> u64 {
        self.examples_seen / n as u64
    }
}

/// Drives any of the three algorithms over a train split, logging the
/// per-point bound on the train and (optional) test splits.
pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub state: TrainState,
    train: &'a Matrix,
    test: Option<&'a Matrix>,
    epoch_order: Option<(u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(train: &'a Matrix, test: Option<&'a Matrix>, shape: &ModelShape, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_data(train, test, shape.data_dim)?;
        let mut init_rng = RngState::split(config.seed, 0);
        let model = init_params(shape, &mut init_rng)?;
        // Monte Carlo EM fits the decoder only.
        let trainable = match config.algorithm {
            Algorithm::Mcem(_) => model.decoder.num_params(),
            _ => model.num_params(),
        };
        let optimizer = OptimizerState::new(config.optimizer, trainable, config.stepsize);
        let mcem = match &config.algorithm {
            Algorithm::Mcem(m) => Some(McemState::new(train.rows(), shape.latent_dim, m, &mut init_rng)),
            _ => None,
        };
        let state = TrainState {
            model,
            optimizer,
            rng: RngState::split(config.seed, 1),
            examples_seen: 0,
            log: MetricLog::default(),
            mcem,
        };
        Ok(Self {
            config,
            state,
            train,
            test,
            epoch_order: None,
        })
    }

    /// Continue from a saved state.
    pub fn resume(state: TrainState, train: &'a Matrix, test: Option<&'a Matrix>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_data(train, test, state.model.data_dim())?;
        if matches!(config.algorithm, Algorithm::Mcem(_)) && state.mcem.is_none() {
            return Err(AevbError::Param("resuming mcem requires saved chain state".into()));
        }
        Ok(Self {
            config,
            state,
            train,
            test,
            epoch_order: None,
        })
    }

    pub fn finished(&self) -> bool {
        self.state.examples_seen >= self.config.budget(self.train.rows())
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.train.rows();
        let epoch = self.state.epoch(n);
        if self.epoch_order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..n).collect();
            RngState::split(self.config.seed ^ SHUFFLE_SALT, epoch).shuffle(&mut order);
            self.epoch_order = Some((epoch, order));
        }
        let cursor = (self.state.examples_seen % n as u64) as usize;
        let remaining_budget = self.config.budget(n) - self.state.examples_seen;
        let end = (cursor + self.config.minibatch_size)
            .min(n)
            .min(cursor + remaining_budget as usize);
        self.epoch_order.as_ref().unwrap().1[cursor..end].to_vec()
    }

    /// Evaluate and append a log row for the current `examples_seen`.
    pub fn evaluate(&mut self) -> Result<MetricRow> {
        let seen = self.state.examples_seen;
        let mut rng = RngState::split(self.config.seed ^ EVAL_SALT, seen);
        let cfg = &self.config;
        let eval = |data: &Matrix, rng: &mut RngState| -> Result<f64> {
            match (&cfg.algorithm, &self.state.mcem) {
                (Algorithm::Mcem(m), Some(_)) => mcem_eval(&self.state.model.decoder, data, cfg.eval_points, m, rng),
                _ => evaluate_bound(&self.state.model, data, cfg.eval_points, cfg.eval_samples, rng),
            }
        };
        let train = eval(self.train, &mut rng)?;
        let test = match self.test {
            Some(t) => Some(eval(t, &mut rng)?),
            None => None,
        };
        let last_good = self.state.log.last().map(|r| r.examples_seen);
        if !train.is_finite() || test.is_some_and(|t| !t.is_finite()) {
            return Err(AevbError::NonFinite {
                context: format!("bound at {seen} examples"),
                last_good,
            });
        }
        let row = MetricRow {
            examples_seen: seen,
            train,
            test,
        };
        if self.state.log.last().is_none_or(|r| r.examples_seen < seen) {
            self.state.log.rows.push(row);
        }
        Ok(row)
    }

    /// One minibatch step. Returns the minibatch's mean per-point objective.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch();
        let st = &mut self.state;
        let result = match &self.config.algorithm {
            Algorithm::Aevb => aevb_step(&mut st.model, &mut st.optimizer, self.train, &batch, &self.config, &mut st.rng),
            Algorithm::WakeSleep => wake_sleep_step(
                &mut st.model,
                &mut st.optimizer,
                self.train,
                &batch,
                self.config.weight_decay,
                &mut st.rng,
            )
            .map(|d| d.wake),
            Algorithm::Mcem(m) => mcem_step(
                &mut st.model.decoder,
                &mut st.optimizer,
                st.mcem.as_mut().expect("mcem state"),
                self.train,
                &batch,
                m,
                self.config.weight_decay,
                &mut st.rng,
            ),
        };
        let value = result.map_err(|e| match e {
            AevbError::NonFinite { context, .. } => AevbError::NonFinite {
                context,
                last_good: Some(st.examples_seen),
            },
            other => other,
        })?;
        st.examples_seen += batch.len() as u64;
        Ok(value)
    }

    /// Train until the budget is exhausted, calling `on_eval` after each
    /// logged evaluation.
    pub fn run_with(&mut self, mut on_eval: impl FnMut(&TrainState) -> Result<()>) -> Result<()> {
        if self.state.log.rows.is_empty() && self.state.examples_seen == 0 {
            self.evaluate()?;
            on_eval(&self.state)?;
        }
        let every = self.config.eval_every;
        while !self.finished() {
            let before = self.state.examples_seen;
            self.step()?;
            let after = self.state.examples_seen;
            if after / every > before / every || self.finished() {
                self.evaluate()?;
                on_eval(&self.state)?;
            }
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }
}

fn check_data(train: &Matrix, test: Option<&Matrix>, data_dim: usize) -> Result<()> {
    if train.cols() != data_dim {
        return Err(AevbError::shape(
            "train",
            format!("data of width {}", train.cols()),
            format!("model data dim {data_dim}"),
        ));
    }
    if let Some(t) = test {
        if t.cols() != data_dim {
            return Err(AevbError::shape(
                "train",
                format!("test data of width {}", t.cols()),
                format!("model data dim {data_dim}"),
            ));
        }
    }
    Ok(())
}

/// Train from scratch and return the final state.
pub fn train(train: &Matrix, test: Option<&Matrix>, shape: &ModelShape, config: TrainConfig) -> Result<TrainState> {
    let mut t = Trainer::new(train, test, shape, config)?;
    t.run()?;
    Ok(t.into_state())
}

/// Try each candidate stepsize for ten evaluations and return the one with
/// the highest train bound at the tenth, together with every candidate's log.
pub fn select_stepsize(
    train_data: &Matrix,
    shape: &ModelShape,
    config: &TrainConfig,
    candidates: &[f64],
) -> Result<(f64, Vec<(f64, MetricLog)>)> {
    if candidates.is_empty() {
        return Err(AevbError::Param("no stepsize candidates".into()));
    }
    let mut results = Vec::with_capacity(candidates.len());
    let mut best: Option<(f64, f64)> = None;
    for &eta in candidates {
        let mut cfg = config.clone();
        cfg.stepsize = eta;
        cfg.epochs = u64::MAX;
        cfg.max_examples = Some(9 * cfg.eval_every);
        let state = train(train_data, None, shape, cfg)?;
        let score = state.log.last().map_or(f64::NEG_INFINITY, |r| r.train);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((eta, score));
        }
        results.push((eta, state.log));
    }
    Ok((best.unwrap().0, results))
}

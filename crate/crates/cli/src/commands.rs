//! Command implementations.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use aevb::aevb::{select_stepsize, Algorithm, MetricLog, OptimizerKind, TrainConfig, TrainState, Trainer};
use aevb::baselines::McemConfig;
use aevb::dataio::{default_image_shape, load_checkpoint, load_dataset, manifold_grid, sample_grid, save_checkpoint, Dataset};
use aevb::evalkit::{marginal_loglik_estimate, HmcConfig};
use aevb::networks::{DecoderFamily, ModelShape, VaeModel};
use aevb::numkit::{Matrix, RngState};
use aevb::objective::Estimator;
use aevb::AevbError;

use crate::{
    Command, CompareArgs, DataArgs, HmcArgs, ImageArgs, ManifoldArgs, MllArgs, ModelArgs, OptimArgs, SampleArgs, TrainArgs,
    EXIT_NUMERIC, EXIT_USAGE,
};

#[derive(Debug)]
pub struct CliError {
    message: String,
    numeric: bool,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { message: message.into(), numeric: false }
    }

    pub fn exit_code(&self) -> u8 {
        if self.numeric {
            EXIT_NUMERIC
        } else {
            EXIT_USAGE
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<AevbError> for CliError {
    fn from(e: AevbError) -> Self {
        let numeric = e.is_numeric();
        let message = match &e {
            AevbError::NonFinite { last_good: Some(n), .. } => format!("{e} (last finite state at {n} examples)"),
            _ => e.to_string(),
        };
        Self { message, numeric }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Mll(a) => cmd_mll(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Manifold(a) => cmd_manifold(&a),
    }
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let mut ds = load_dataset(&args.dataset, None)?;
    if let Some(n) = args.limit {
        ds = ds.truncate(n)?;
    }
    if let Some(t) = args.binarize {
        if !(0.0..1.0).contains(&t) {
            return Err(CliError::usage(format!("--binarize threshold must lie in [0, 1), got {t}")));
        }
        ds = ds.binarize(t);
    }
    if let Some(n) = args.n_train {
        ds = ds.with_split(n)?;
    }
    Ok(ds)
}

fn parse_family(m: &ModelArgs) -> Result<DecoderFamily> {
    match m.family.as_str() {
        "bernoulli" => Ok(DecoderFamily::Bernoulli),
        "gaussian" => Ok(DecoderFamily::Gaussian { clamp_mean: m.clamp_mean }),
        other => Err(CliError::usage(format!("unknown family '{other}' (expected bernoulli or gaussian)"))),
    }
}

fn shape_for(m: &ModelArgs, data_dim: usize) -> Result<ModelShape> {
    let shape = ModelShape {
        data_dim,
        encoder_hidden: m.encoder_hidden,
        decoder_hidden: m.decoder_hidden,
        latent_dim: m.latent_dim,
        family: parse_family(m)?,
    };
    shape.validate()?;
    Ok(shape)
}

fn algorithm_for(name: &str, hmc: &HmcArgs) -> Result<Algorithm> {
    Ok(match name.parse::<Algorithm>()? {
        Algorithm::Mcem(defaults) => Algorithm::Mcem(McemConfig {
            hmc: HmcConfig {
                leapfrog_steps: hmc.leapfrog_steps,
                stepsize: hmc.hmc_stepsize,
                target_acceptance: hmc.target_acceptance,
                burn_in: hmc.burn_in,
                thinning: hmc.thinning,
                adapt: hmc.adapt,
            },
            weight_updates: hmc.weight_updates,
            ..defaults
        }),
        other => other,
    })
}

fn train_config(o: &OptimArgs, algorithm: Algorithm) -> Result<TrainConfig> {
    let eval_points = match o.eval_points.as_str() {
        "all" => None,
        n => Some(
            n.parse::<usize>()
                .map_err(|_| CliError::usage(format!("--eval-points must be a count or 'all', got '{n}'")))?,
        ),
    };
    let cfg = TrainConfig {
        minibatch_size: o.minibatch_size,
        samples_per_point: o.samples_per_point,
        optimizer: o.optimizer.parse::<OptimizerKind>()?,
        stepsize: o.stepsize,
        epochs: o.epochs,
        max_examples: o.max_examples,
        seed: o.seed,
        weight_decay: o.weight_decay,
        eval_every: o.eval_every,
        eval_points,
        eval_samples: o.eval_samples,
        estimator: o.estimator.parse::<Estimator>()?,
        algorithm,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| CliError::usage(format!("bad {what} '{}'", s.trim()))))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

/// Apply `--select-stepsize` if given.
fn choose_stepsize(cfg: &mut TrainConfig, o: &OptimArgs, train: &Matrix, shape: &ModelShape) -> Result<()> {
    if let Some(list) = &o.select_stepsize {
        let candidates: Vec<f64> = parse_list(list, "stepsize")?;
        let (best, _) = select_stepsize(train, shape, cfg, &candidates)?;
        eprintln!("selected stepsize {best}");
        cfg.stepsize = best;
    }
    Ok(())
}

/// Run to completion, checkpointing to `ckpt` after every evaluation.
fn drive(trainer: &mut Trainer, ckpt: &Path) -> Result<()> {
    let result = trainer.run_with(|state| save_checkpoint(state, ckpt));
    result.map_err(CliError::from)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let (train, test) = (ds.train_matrix(), ds.test_matrix());
    let algorithm = algorithm_for(&a.algorithm, &a.hmc)?;
    let mut cfg = train_config(&a.optim, algorithm)?;
    create_dir(&a.output_dir)?;
    let ckpt = a.output_dir.join("checkpoint.ckpt");
    let mut trainer = match &a.resume {
        Some(path) => {
            let state: TrainState = load_checkpoint(path)?;
            Trainer::resume(state, &train, test.as_ref(), cfg)?
        }
        None => {
            let shape = shape_for(&a.model, ds.dim())?;
            choose_stepsize(&mut cfg, &a.optim, &train, &shape)?;
            Trainer::new(&train, test.as_ref(), &shape, cfg)?
        }
    };
    let outcome = drive(&mut trainer, &ckpt);
    // Metrics up to the last good evaluation are written even on failure.
    write_file(&a.output_dir.join("metrics.csv"), trainer.state.log.to_csv(None).as_bytes())?;
    outcome
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let (train, test) = (ds.train_matrix(), ds.test_matrix());
    let shape = shape_for(&a.model, ds.dim())?;
    let names: Vec<String> = parse_list(&a.algorithms, "algorithm")?;
    if names.is_empty() {
        return Err(CliError::usage("--algorithms is empty"));
    }
    create_dir(&a.output_dir)?;
    let mut merged = Vec::new();
    let mut first_error = None;
    for (i, name) in names.iter().enumerate() {
        let algorithm = algorithm_for(name, &a.hmc)?;
        let mut cfg = train_config(&a.optim, algorithm)?;
        choose_stepsize(&mut cfg, &a.optim, &train, &shape)?;
        let mut trainer = Trainer::new(&train, test.as_ref(), &shape, cfg)?;
        let outcome = drive(&mut trainer, &a.output_dir.join(format!("{name}.ckpt")));
        let log: &MetricLog = &trainer.state.log;
        log.write_csv(&mut merged, Some(name), i == 0)
            .map_err(|e| CliError::usage(e.to_string()))?;
        if let Err(e) = outcome {
            eprintln!("{name}: {e}");
            first_error.get_or_insert(e);
        }
    }
    write_file(&a.output_dir.join("compare.csv"), &merged)?;
    first_error.map_or(Ok(()), Err)
}

fn cmd_mll(a: &MllArgs) -> Result<()> {
    if a.num_points == 0 {
        return Err(CliError::usage("--num-points must be positive"));
    }
    let state = load_checkpoint(&a.checkpoint)?;
    let ds = load_data(&a.data)?;
    if ds.dim() != state.model.data_dim() {
        return Err(CliError::usage(format!(
            "dataset has {} columns but the model expects {}",
            ds.dim(),
            state.model.data_dim()
        )));
    }
    let cfg = HmcConfig {
        leapfrog_steps: a.leapfrog_steps,
        stepsize: a.hmc_stepsize,
        target_acceptance: a.target_acceptance,
        burn_in: a.burn_in,
        thinning: a.thinning,
        adapt: a.adapt,
    };
    cfg.validate()?;
    if a.samples == 0 {
        return Err(CliError::usage("--samples must be positive"));
    }
    let n = a.num_points.min(ds.len());
    let mut out = String::from("datapoint_index,log_marginal_estimate\n");
    let mut warned = false;
    for i in 0..n {
        let mut rng = RngState::split(a.seed, i as u64);
        let est = marginal_loglik_estimate(&state.model.decoder, ds.x.row(i), a.samples, &cfg, &mut rng)?;
        if let (Some(w), false) = (&est.warning, warned) {
            eprintln!("warning: {w}");
            warned = true;
        }
        out.push_str(&format!("{i},{}\n", est.log_marginal));
    }
    match &a.output {
        Some(path) => write_file(path, out.as_bytes()),
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| CliError::usage(e.to_string())),
    }
}

fn image_shape(model: &VaeModel, img: &ImageArgs) -> Result<(usize, usize)> {
    let d = model.data_dim();
    let (h, w) = match (img.image_height, img.image_width) {
        (Some(h), Some(w)) => (h, w),
        (Some(h), None) if h > 0 && d % h == 0 => (h, d / h),
        (None, Some(w)) if w > 0 && d % w == 0 => (d / w, w),
        (None, None) => default_image_shape(d),
        _ => return Err(CliError::usage(format!("image dimensions do not divide the data dimension {d}"))),
    };
    if h * w != d {
        return Err(CliError::usage(format!("{h}x{w} images do not match the data dimension {d}")));
    }
    Ok((h, w))
}

fn output_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let (h, w) = image_shape(&state.model, &a.image)?;
    let mut rng = RngState::from_seed(a.seed);
    let grid = sample_grid(&state.model, a.num_samples, &mut rng, h, w)?;
    output_parent(&a.output)?;
    Ok(grid.save_pgm(&a.output)?)
}

fn cmd_manifold(a: &ManifoldArgs) -> Result<()> {
    let state = load_checkpoint(&a.checkpoint)?;
    let (h, w) = image_shape(&state.model, &a.image)?;
    let grid = manifold_grid(&state.model, a.grid, h, w)?;
    output_parent(&a.output)?;
    Ok(grid.save_pgm(&a.output)?)
}


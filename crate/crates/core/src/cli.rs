//! Command-line front end: `train`, `prune`, `eval` and `gen-bas`.
//!
//! Settings come from flags (or `RBM_PRUNE_*` environment variables), then an
//! optional TOML or JSON file given by `--config`, then dataset-dependent
//! defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{bas_exact_distribution, bas_sample, binarize_stochastic, load_idx, write_idx, BasSpec, DataSource};
use crate::error::{Error, Result};
use crate::model::{exact_log_partition, BinaryVector, DiscreteDistribution, RbmParams, MAX_ENUMERABLE_VISIBLE};
use crate::objective::{d_tilde, exact_kld, reconstruction_error, EmpiricalSource};
use crate::persist::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MetricsHeader, MetricsLog, MetricsRecord, Phase,
    ResumeState,
};
use crate::pruning::{NoHooks, PruneConfig, PruneState};
use crate::rng::{derive_seed, stream_rng, streams};
use crate::sampling::{ais_log_partition, AisConfig, ChainPool, TemperedSchedule};
use crate::training::{TrainConfig, Trainer};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

/// Size of the fixed batch used for reconstruction-error monitoring.
const EVAL_BATCH: usize = 1000;

#[derive(Debug, Parser)]
#[command(name = "rbm-prune", version, about = "Train binary RBMs and prune hidden units by removal cost")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Maximum-likelihood training with PCD.
    Train(TrainArgs),
    /// Remove hidden units from a trained model.
    Prune(PruneArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Write Bars-and-Stripes samples and their exact distribution.
    GenBas(GenBasArgs),
}

/// Flags shared by every command. Each command reads the ones it needs.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// `bas:A` for A x A Bars-and-Stripes, or `idx:PATH` for an IDX image file (gzip allowed).
    #[arg(long, env = "RBM_PRUNE_DATA")]
    pub data: Option<String>,
    /// Held-out IDX images for D̃ and NLL.
    #[arg(long, env = "RBM_PRUNE_TEST_DATA")]
    pub test_data: Option<String>,
    /// Hidden units of a fresh model.
    #[arg(long, env = "RBM_PRUNE_HIDDEN")]
    pub hidden: Option<usize>,
    /// Learning rate λ.
    #[arg(long, env = "RBM_PRUNE_LR")]
    pub lr: Option<f64>,
    /// Parameter change rate ν during pruning.
    #[arg(long, env = "RBM_PRUNE_NU")]
    pub nu: Option<f64>,
    /// Confidence multiplier of the removal criterion.
    #[arg(long, env = "RBM_PRUNE_A")]
    pub a: Option<f64>,
    /// Minibatch size; also the number of persistent chains.
    #[arg(long, env = "RBM_PRUNE_BATCH")]
    pub batch: Option<usize>,
    /// Gibbs sweeps per PCD draw.
    #[arg(long, env = "RBM_PRUNE_PCD")]
    pub pcd: Option<usize>,
    /// Lowest inverse temperature of the tempered transitions.
    #[arg(long, env = "RBM_PRUNE_BETA1")]
    pub beta1: Option<f64>,
    /// Rungs of the tempered-transition ladder.
    #[arg(long, env = "RBM_PRUNE_TEMPER_STEPS")]
    pub temper_steps: Option<usize>,
    /// AIS runs.
    #[arg(long, env = "RBM_PRUNE_AIS_SAMPLES")]
    pub ais_samples: Option<usize>,
    /// AIS inverse-temperature intervals.
    #[arg(long, env = "RBM_PRUNE_AIS_INTERVALS")]
    pub ais_intervals: Option<usize>,
    /// Total steps of the run.
    #[arg(long, env = "RBM_PRUNE_STEPS")]
    pub steps: Option<u64>,
    /// Metrics cadence in steps.
    #[arg(long, env = "RBM_PRUNE_EVAL_EVERY")]
    pub eval_every: Option<u64>,
    /// AIS-based D̃ cadence in training steps; 0 disables it.
    #[arg(long, env = "RBM_PRUNE_AIS_EVERY")]
    pub ais_every: Option<u64>,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    #[arg(long, env = "RBM_PRUNE_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
    #[arg(long, env = "RBM_PRUNE_SEED")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "RBM_PRUNE_OUT")]
    pub out: Option<PathBuf>,
}

impl Settings {
    /// Fields set here win over those of `lower`.
    fn over(self, lower: Settings) -> Settings {
        Settings {
            data: self.data.or(lower.data),
            test_data: self.test_data.or(lower.test_data),
            hidden: self.hidden.or(lower.hidden),
            lr: self.lr.or(lower.lr),
            nu: self.nu.or(lower.nu),
            a: self.a.or(lower.a),
            batch: self.batch.or(lower.batch),
            pcd: self.pcd.or(lower.pcd),
            beta1: self.beta1.or(lower.beta1),
            temper_steps: self.temper_steps.or(lower.temper_steps),
            ais_samples: self.ais_samples.or(lower.ais_samples),
            ais_intervals: self.ais_intervals.or(lower.ais_intervals),
            steps: self.steps.or(lower.steps),
            eval_every: self.eval_every.or(lower.eval_every),
            ais_every: self.ais_every.or(lower.ais_every),
            checkpoint_every: self.checkpoint_every.or(lower.checkpoint_every),
            seed: self.seed.or(lower.seed),
            out: self.out.or(lower.out),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[command(flatten)]
    pub settings: Settings,
    /// TOML (or `.json`) file with the same keys as the flags.
    #[arg(long, env = "RBM_PRUNE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Add elapsed seconds to metrics records.
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PruneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Trained model; its chain pool seeds the sampler when present.
    #[arg(long, required_unless_present = "resume")]
    pub model: Option<PathBuf>,
    /// Continue from a pruning checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Exact,
    Ais,
    Recon,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub mode: EvalMode,
}

#[derive(Debug, Clone, Args)]
pub struct GenBasArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Image side A.
    #[arg(long)]
    pub side: usize,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFinite(_) | Error::ClampViolation { .. } => EXIT_NUMERICAL,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::DimensionOverflow(_)
        | Error::UnsupportedVersion { .. }
        | Error::Format(_)
        | Error::Json(_)
        | Error::DimensionMismatch { .. } => EXIT_DATA,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Errors go to stderr.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> ExitCode {
    ExitCode::from(main_with_args(std::env::args_os()))
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Prune(args) => cmd_prune(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::GenBas(args) => cmd_gen_bas(&args),
    }
}

fn load_settings(common: &CommonArgs) -> Result<Settings> {
    let file = match &common.config {
        None => Settings::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
            } else {
                toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
            };
            parsed?
        }
    };
    Ok(common.settings.clone().over(file))
}

/// A parsed `--data` value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSpec {
    Bas(usize),
    Idx(PathBuf),
}

impl DataSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(side) = s.strip_prefix("bas:") {
            let side = side
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad Bars-and-Stripes side in {s:?}")))?;
            return Ok(DataSpec::Bas(side));
        }
        let path = s.strip_prefix("idx:").unwrap_or(s);
        if path.is_empty() {
            return Err(Error::InvalidArgument("empty data path".into()));
        }
        Ok(DataSpec::Idx(PathBuf::from(path)))
    }

    fn is_bas(&self) -> bool {
        matches!(self, DataSpec::Bas(_))
    }
}

/// Loads IDX images and binarizes them once with the run's binarization stream.
fn load_items(path: &Path, seed: u64) -> Result<Vec<BinaryVector>> {
    let images = load_idx(path)?;
    let mut rng = stream_rng(seed, streams::BINARIZE);
    let bits = binarize_stochastic(&images, &mut rng)?;
    Ok(bits.items)
}

fn open_data(spec: &DataSpec, seed: u64) -> Result<DataSource> {
    match spec {
        DataSpec::Bas(side) => Ok(DataSource::Bas(BasSpec::new(*side)?)),
        DataSpec::Idx(path) => Ok(DataSource::Items(load_items(path, seed)?)),
    }
}

fn require_data(settings: &Settings) -> Result<DataSpec> {
    DataSpec::parse(
        settings
            .data
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("--data is required".into()))?,
    )
}

fn require_out(settings: &Settings) -> Result<PathBuf> {
    let out = settings
        .out
        .clone()
        .ok_or_else(|| Error::InvalidArgument("--out is required".into()))?;
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

/// Exact target distribution: the known one for Bars-and-Stripes, the
/// empirical one for small item sets.
fn target_distribution(source: &DataSource) -> Result<Option<DiscreteDistribution>> {
    match source {
        DataSource::Bas(_) => Ok(source.exact_distribution()),
        DataSource::Items(items) => {
            let m = source.num_visible();
            if m <= MAX_ENUMERABLE_VISIBLE {
                Ok(Some(DiscreteDistribution::empirical(m, items)?))
            } else {
                Ok(None)
            }
        }
    }
}

/// Fixed monitoring quantities for one run.
struct Monitor {
    target: Option<DiscreteDistribution>,
    eval_batch: Vec<BinaryVector>,
    start: Instant,
    wall_clock: bool,
}

impl Monitor {
    fn new(source: &DataSource, seed: u64, wall_clock: bool) -> Result<Self> {
        let eval_batch = match source {
            DataSource::Items(items) if items.len() <= EVAL_BATCH => items.clone(),
            _ => source.sample_batch(EVAL_BATCH, &mut stream_rng(seed, streams::EVAL))?,
        };
        Ok(Self {
            target: target_distribution(source)?,
            eval_batch,
            start: Instant::now(),
            wall_clock,
        })
    }

    fn fill(&self, rec: &mut MetricsRecord, params: &RbmParams) -> Result<()> {
        if !params.is_finite() {
            return Err(Error::NonFinite("model parameters"));
        }
        rec.exact_kld = self.target.as_ref().map(|q| exact_kld(q, params)).transpose()?;
        rec.reconstruction_error = Some(reconstruction_error(&self.eval_batch, params)?);
        if self.wall_clock {
            rec.wall_clock = Some(self.start.elapsed().as_secs_f64());
        }
        Ok(())
    }
}

fn cadence(step: u64, every: u64) -> bool {
    every > 0 && step % every == 0
}

fn checkpoint_path(out: &Path, step: u64) -> PathBuf {
    out.join(format!("ckpt-{step:09}.rbmp"))
}

/// Effective training configuration, echoed into metrics and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub data: String,
    pub test_data: Option<String>,
    pub train: TrainConfig,
    pub eval_every: u64,
    pub ais_every: u64,
    pub ais_samples: usize,
    pub ais_intervals: usize,
    pub checkpoint_every: u64,
}

impl TrainRun {
    pub fn resolve(s: &Settings) -> Result<Self> {
        let spec = require_data(s)?;
        let bas = spec.is_bas();
        let train = TrainConfig {
            num_hidden: s.hidden.unwrap_or(if bas { 30 } else { 400 }),
            learning_rate: s.lr.unwrap_or(1e-2),
            batch_size: s.batch.unwrap_or(if bas { 100 } else { 1000 }),
            num_chains: 0,
            pcd_steps: s.pcd.unwrap_or(if bas { 5 } else { 1 }),
            steps: s.steps.unwrap_or(if bas { 50_000 } else { 200_000 }),
            init_std: 0.01,
            seed: s.seed.unwrap_or(0),
        };
        train.validate()?;
        Ok(Self {
            data: s.data.clone().unwrap_or_default(),
            test_data: s.test_data.clone(),
            train,
            eval_every: s.eval_every.unwrap_or(1000),
            ais_every: s.ais_every.unwrap_or(0),
            ais_samples: s.ais_samples.unwrap_or(100),
            ais_intervals: s.ais_intervals.unwrap_or(10_000),
            checkpoint_every: s.checkpoint_every.unwrap_or(0),
        })
    }
}

fn header<T: Serialize>(command: &str, config: &T) -> Result<MetricsHeader> {
    let meta = CheckpointMeta::new(config, 0, 0)?;
    Ok(MetricsHeader {
        command: command.into(),
        config_hash: meta.config_hash,
        config: meta.config,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let settings = load_settings(&args.common)?;
    let run = TrainRun::resolve(&settings)?;
    let out = require_out(&settings)?;
    let cfg = run.train;
    let source = open_data(&DataSpec::parse(&run.data)?, cfg.seed)?;
    let test_items = run
        .test_data
        .as_deref()
        .map(|t| match DataSpec::parse(t)? {
            DataSpec::Idx(path) => load_items(&path, derive_seed(cfg.seed, streams::EVAL)),
            DataSpec::Bas(_) => Err(Error::InvalidArgument("--test-data must be an IDX file".into())),
        })
        .transpose()?;

    let mut trainer = match &args.resume {
        None => Trainer::new(source.num_visible(), &cfg)?,
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            match &ckpt.state {
                ResumeState::Train(snap) => Trainer::restore(ckpt.params.clone(), snap)?,
                _ => return Err(Error::InvalidArgument(format!("{} is not a training checkpoint", path.display()))),
            }
        }
    };
    if trainer.params().num_hidden() != cfg.num_hidden && args.resume.is_none() {
        return Err(Error::dims("hidden units", cfg.num_hidden, trainer.params().num_hidden()));
    }

    let monitor = Monitor::new(&source, cfg.seed, args.common.wall_clock)?;
    let mut log = MetricsLog::create(out.join("metrics.jsonl"), &header("train", &run)?)?;
    let save = |trainer: &Trainer, path: PathBuf| -> Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                params: trainer.params().clone(),
                state: ResumeState::Train(trainer.snapshot()),
                meta: CheckpointMeta::new(&run, trainer.step(), 0)?,
            },
        )
    };
    let record = |trainer: &Trainer, log: &mut MetricsLog| -> Result<()> {
        let step = trainer.step();
        let mut rec = MetricsRecord::new(step, Phase::Train, trainer.params().num_hidden());
        monitor.fill(&mut rec, trainer.params())?;
        if cadence(step, run.ais_every) {
            let ais = ais_log_partition(
                trainer.params(),
                &AisConfig {
                    num_samples: run.ais_samples,
                    num_intervals: run.ais_intervals,
                    seed: derive_seed(cfg.seed ^ step, streams::AIS),
                },
            )?;
            let empirical = match (&test_items, &source) {
                (Some(items), _) => EmpiricalSource::Samples(items),
                (None, DataSource::Items(items)) => EmpiricalSource::Samples(items),
                (None, DataSource::Bas(_)) => EmpiricalSource::Distribution(
                    monitor.target.as_ref().expect("Bars-and-Stripes target is enumerable"),
                ),
            };
            let dt = d_tilde(empirical, trainer.params(), ais.log_z)?;
            rec.d_tilde = Some(dt.d_tilde);
            rec.d_tilde_std = Some(ais.log_z_std);
            rec.nll = Some(dt.nll);
        }
        log.append(&rec)
    };

    if trainer.step() == 0 {
        record(&trainer, &mut log)?;
    }
    while trainer.step() < cfg.steps {
        trainer.step_once(&cfg, &source, &mut ())?;
        let step = trainer.step();
        if cadence(step, run.eval_every) || step == cfg.steps {
            record(&trainer, &mut log)?;
        }
        if cadence(step, run.checkpoint_every) {
            save(&trainer, checkpoint_path(&out, step))?;
        }
    }
    save(&trainer, out.join("model.rbmp"))
}

/// Effective pruning configuration, echoed into metrics and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRun {
    pub data: String,
    pub prune: PruneConfig,
    pub eval_every: u64,
    pub checkpoint_every: u64,
}

impl PruneRun {
    pub fn resolve(s: &Settings) -> Result<Self> {
        let spec = require_data(s)?;
        let bas = spec.is_bas();
        let prune = PruneConfig {
            a: s.a.unwrap_or(if bas { 3.0 } else { 1.0 }),
            nu: s.nu.unwrap_or(1e-2),
            samples_per_step: s.batch.unwrap_or(1000),
            pcd_steps: s.pcd.unwrap_or(if bas { 5 } else { 1 }),
            tempered: TemperedSchedule::new(s.beta1.unwrap_or(0.9), s.temper_steps.unwrap_or(100))?,
            tempered_refreshes: 1,
            retarget_burn_in: PruneConfig::default().retarget_burn_in,
            max_steps: s.steps.unwrap_or(if bas { 500_000 } else { 800_000 }),
            seed: s.seed.unwrap_or(0),
        };
        prune.validate()?;
        Ok(Self {
            data: s.data.clone().unwrap_or_default(),
            prune,
            eval_every: s.eval_every.unwrap_or(1000),
            checkpoint_every: s.checkpoint_every.unwrap_or(0),
        })
    }
}

fn cmd_prune(args: &PruneArgs) -> Result<()> {
    let settings = load_settings(&args.common)?;
    let run = PruneRun::resolve(&settings)?;
    let out = require_out(&settings)?;
    let cfg = run.prune;
    let source = open_data(&DataSpec::parse(&run.data)?, cfg.seed)?;

    let (mut state, train_steps) = match (&args.resume, &args.model) {
        (Some(path), _) => {
            let ckpt = load_checkpoint(path)?;
            match &ckpt.state {
                ResumeState::Prune(snap) => (PruneState::restore(ckpt.params.clone(), snap)?, ckpt.meta.train_steps),
                _ => return Err(Error::InvalidArgument(format!("{} is not a pruning checkpoint", path.display()))),
            }
        }
        (None, Some(path)) => {
            let ckpt = load_checkpoint(path)?;
            let pool = match &ckpt.state {
                ResumeState::Train(snap) => Some(ChainPool::restore(&snap.pool)?),
                _ => None,
            };
            (PruneState::new(ckpt.params.clone(), pool.as_ref(), &cfg)?, ckpt.meta.train_steps)
        }
        (None, None) => return Err(Error::InvalidArgument("--model or --resume is required".into())),
    };
    if state.params().num_visible() != source.num_visible() {
        return Err(Error::dims("data dimension", state.params().num_visible(), source.num_visible()));
    }

    let monitor = Monitor::new(&source, cfg.seed, args.common.wall_clock)?;
    let mut log = MetricsLog::create(out.join("metrics.jsonl"), &header("prune", &run)?)?;
    let save = |state: &PruneState, path: PathBuf| -> Result<()> {
        save_checkpoint(
            path,
            &Checkpoint {
                params: state.params().clone(),
                state: ResumeState::Prune(state.snapshot()),
                meta: CheckpointMeta::new(&run, train_steps, state.step())?,
            },
        )
    };

    if state.step() == 0 {
        let mut rec = MetricsRecord::new(0, Phase::Prune, state.params().num_hidden());
        monitor.fill(&mut rec, state.params())?;
        log.append(&rec)?;
    }
    while state.step() < cfg.max_steps && !state.is_finished() {
        let step_rec = state.step_once(&cfg, &source, &mut NoHooks)?;
        let step = state.step();
        let last = step == cfg.max_steps || state.is_finished();
        if !step_rec.removals.is_empty() || cadence(step, run.eval_every) || last {
            let mut rec = MetricsRecord::new(step, Phase::Prune, state.params().num_hidden());
            rec.min_cost = step_rec.cost_mean;
            rec.min_cost_std = step_rec.cost_std;
            rec.removals = step_rec.removals;
            monitor.fill(&mut rec, state.params())?;
            log.append(&rec)?;
        }
        if cadence(step, run.checkpoint_every) {
            save(&state, checkpoint_path(&out, step))?;
        }
    }
    save(&state, out.join("model.rbmp"))
}

/// What `eval` prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub num_visible: usize,
    pub num_hidden: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_kld: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_log_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_z_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_tilde: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nll: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstruction_error: Option<f64>,
}

pub fn evaluate(params: &RbmParams, source: &DataSource, mode: EvalMode, s: &Settings) -> Result<EvalReport> {
    if params.num_visible() != source.num_visible() {
        return Err(Error::dims("data dimension", params.num_visible(), source.num_visible()));
    }
    let seed = s.seed.unwrap_or(0);
    let mut report = EvalReport {
        mode,
        num_visible: params.num_visible(),
        num_hidden: params.num_hidden(),
        exact_kld: None,
        exact_log_z: None,
        log_z: None,
        log_z_std: None,
        d_tilde: None,
        nll: None,
        reconstruction_error: None,
    };
    match mode {
        EvalMode::Exact => {
            let q = target_distribution(source)?.ok_or(Error::TooLarge {
                what: "M",
                size: params.num_visible(),
                limit: MAX_ENUMERABLE_VISIBLE,
            })?;
            report.exact_kld = Some(exact_kld(&q, params)?);
            report.exact_log_z = Some(exact_log_partition(params)?);
        }
        EvalMode::Ais => {
            let ais = ais_log_partition(
                params,
                &AisConfig {
                    num_samples: s.ais_samples.unwrap_or(100),
                    num_intervals: s.ais_intervals.unwrap_or(10_000),
                    seed: derive_seed(seed, streams::AIS),
                },
            )?;
            let q = match source {
                DataSource::Bas(_) => source.exact_distribution(),
                DataSource::Items(_) => None,
            };
            let empirical = match (source, &q) {
                (DataSource::Items(items), _) => EmpiricalSource::Samples(items),
                (_, Some(q)) => EmpiricalSource::Distribution(q),
                (_, None) => return Err(Error::Empty("evaluation data")),
            };
            let dt = d_tilde(empirical, params, ais.log_z)?;
            report.log_z = Some(ais.log_z);
            report.log_z_std = Some(ais.log_z_std);
            report.d_tilde = Some(dt.d_tilde);
            report.nll = Some(dt.nll);
            if params.num_visible() <= MAX_ENUMERABLE_VISIBLE {
                report.exact_log_z = Some(exact_log_partition(params)?);
            }
        }
        EvalMode::Recon => {
            let batch = match source {
                DataSource::Items(items) => items.clone(),
                DataSource::Bas(_) => {
                    source.sample_batch(s.batch.unwrap_or(EVAL_BATCH), &mut stream_rng(seed, streams::EVAL))?
                }
            };
            report.reconstruction_error = Some(reconstruction_error(&batch, params)?);
        }
    }
    Ok(report)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let settings = load_settings(&args.common)?;
    let spec = require_data(&settings)?;
    let ckpt = load_checkpoint(&args.model)?;
    let source = open_data(&spec, settings.seed.unwrap_or(0))?;
    let report = evaluate(&ckpt.params, &source, args.mode, &settings)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

/// One entry of the distribution dump written by `gen-bas`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternProbability {
    pub index: usize,
    pub pattern: String,
    pub probability: f64,
}

fn cmd_gen_bas(args: &GenBasArgs) -> Result<()> {
    let settings = load_settings(&args.common)?;
    let out = require_out(&settings)?;
    let spec = BasSpec::new(args.side)?;
    let mut rng = stream_rng(settings.seed.unwrap_or(0), streams::MINIBATCH);
    let mut pixels = Vec::with_capacity(args.count * spec.num_visible());
    let mut distinct = std::collections::BTreeSet::new();
    for _ in 0..args.count {
        let v = bas_sample(&spec, &mut rng);
        pixels.extend(v.as_slice().iter().map(|&b| b * 255));
        distinct.insert(v.to_index());
    }
    let images = out.join(format!("bas-{}.idx", args.side));
    write_idx(&images, args.side, args.side, &pixels)?;
    let m = spec.num_visible();
    if m <= MAX_ENUMERABLE_VISIBLE {
        let q = bas_exact_distribution(&spec)?;
        let table: Vec<PatternProbability> = q
            .support()
            .map(|(index, probability)| PatternProbability {
                index,
                pattern: BinaryVector::from_index(index, m)
                    .as_slice()
                    .iter()
                    .map(|b| char::from(b'0' + b))
                    .collect(),
                probability,
            })
            .collect();
        let path = out.join(format!("bas-{}-distribution.json", args.side));
        fs::write(&path, serde_json::to_vec_pretty(&table)?).map_err(|e| Error::io(&path, e))?;
    }
    println!(
        "{}",
        serde_json::json!({"images": images, "count": args.count, "distinct": distinct.len()})
    );
    Ok(())
}

//! The `downscale` command line.
//!
//! Exit codes: 0 on success, 2 for usage or data errors, 3 when training
//! diverges.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{Datelike, NaiveDate};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::data::{generate_synthetic, load_grd, save_grd, ClimateSample, Dataset, Period, SynthConfig};
use crate::error::Error;
use crate::eval::{default_probs, evaluate, write_extremes_csv, write_overall_csv, write_periods_csv, write_qq_csv, write_seasons_csv, Series, DEFAULT_THRESHOLDS};
use crate::model::ModelConfig;
use crate::optim::{write_loss_log, FitError, TrainConfig, TrainState};
use crate::pipeline::{fit_qmap_baseline, predict, predict_qmap, prepare_period, train_period, Prediction};
use crate::tensor::Grid;

#[derive(Debug, Parser)]
#[command(name = "downscale", version, about = "Statistical downscaling of daily precipitation")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic GRD1 dataset.
    Synth(SynthArgs),
    /// Train the ConvLSTM network on one period.
    Train(TrainArgs),
    /// Predict fine-grid precipitation with a trained checkpoint.
    Downscale(DownscaleArgs),
    /// Fit or apply the quantile-mapping baseline.
    Qmap {
        #[command(subcommand)]
        action: QmapCommand,
    },
    /// Score predictions against observations.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output GRD1 path.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid rows.
    #[arg(long, default_value_t = 16)]
    pub height: usize,
    /// Grid columns.
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Number of consecutive days.
    #[arg(long, default_value_t = 730)]
    pub days: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// First day (YYYY-MM-DD).
    #[arg(long, default_value = "1999-01-01")]
    pub start: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PeriodArg {
    Monsoon,
    NonMonsoon,
    All,
}

impl From<PeriodArg> for Period {
    fn from(p: PeriodArg) -> Self {
        match p {
            PeriodArg::Monsoon => Period::Monsoon,
            PeriodArg::NonMonsoon => Period::NonMonsoon,
            PeriodArg::All => Period::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Architecture {
    /// The published layer widths.
    Canonical,
    /// Narrow layers for desk-scale runs.
    Compact,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset (GRD1).
    #[arg(long)]
    pub data: PathBuf,
    /// Days whose target falls in this period are trained on.
    #[arg(long, value_enum)]
    pub period: PeriodArg,
    /// TOML file with training options; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint path, rewritten after every epoch.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log CSV (default: the checkpoint path with a `.loss.csv` suffix).
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    /// Continue from the checkpoint at `--out` if it exists.
    #[arg(long)]
    pub resume: bool,
    /// Ignore days after this year.
    #[arg(long)]
    pub until_year: Option<i32>,
    /// Network architecture.
    #[arg(long, value_enum)]
    pub arch: Option<Architecture>,
    /// Total number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial Adam learning rate.
    #[arg(long)]
    pub initial_lr: Option<f64>,
    /// Learning-rate decay factor applied on a plateau.
    #[arg(long)]
    pub lr_decay_alpha: Option<f64>,
    /// Plateau patience in epochs.
    #[arg(long)]
    pub decay_trigger: Option<usize>,
    /// L2 weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Dropout rate on recurrent states.
    #[arg(long)]
    pub recurrent_dropout: Option<f64>,
    /// Dropout rate between ConvLSTM layers.
    #[arg(long)]
    pub inter_layer_dropout: Option<f64>,
    /// Windows per mini-batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DownscaleArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input dataset (GRD1).
    #[arg(long)]
    pub data: PathBuf,
    /// Output GRD1 path for the predictions.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum QmapCommand {
    /// Fit per-point maps from the interpolated precipitation input to the target.
    Fit {
        /// Training dataset (GRD1).
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to store the map in; created if missing.
        #[arg(long)]
        ckpt: PathBuf,
        /// Fit on the days of this period only.
        #[arg(long, value_enum, default_value = "all")]
        period: PeriodArg,
        /// Ignore days after this year.
        #[arg(long)]
        until_year: Option<i32>,
    },
    /// Map every day with the map of its period, falling back to the `all` map.
    Apply {
        /// Checkpoint holding fitted maps.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input dataset (GRD1).
        #[arg(long)]
        data: PathBuf,
        /// Output GRD1 path for the mapped series.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions (GRD1, first input channel).
    #[arg(long)]
    pub pred: PathBuf,
    /// Observations (GRD1 targets).
    #[arg(long)]
    pub obs: PathBuf,
    /// GRD1 file whose dates are evaluated (default: the prediction dates).
    #[arg(long)]
    pub dates_from: Option<PathBuf>,
    /// Output directory for the CSV tables and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated extreme percentiles.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    pub extremes: Vec<f64>,
    /// Method name written to the overall table.
    #[arg(long, default_value = "prediction")]
    pub method: String,
}

/// A failure carrying its process exit code.
#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::usage(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

/// Runs a parsed command inside a pool sized by `--threads`.
pub fn run(cli: Cli) -> CliResult {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Downscale(a) => cmd_downscale(&a),
        Command::Qmap { action } => cmd_qmap(&action),
        Command::Eval(a) => cmd_eval(&a),
    })
}

/// The clap command tree, for help-text checks.
pub fn command() -> clap::Command {
    Cli::command()
}

fn cmd_synth(a: &SynthArgs) -> CliResult {
    let ds = generate_synthetic(&SynthConfig::new(a.height, a.width, a.days, a.seed).starting(a.start))?;
    save_grd(&ds, &a.out)?;
    log::info!("wrote {} days of {}x{} to {}", a.days, a.height, a.width, a.out.display());
    Ok(())
}

fn until(ds: Dataset, year: Option<i32>) -> Dataset {
    match year {
        Some(y) => ds.filter(|s| s.date.year() <= y),
        None => ds,
    }
}

/// Reads the TOML config: [`TrainConfig`] keys plus an optional `arch`.
pub fn read_train_config(text: &str) -> Result<(TrainConfig, Option<Architecture>), Error> {
    let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    let arch = match table.remove("arch") {
        None => None,
        Some(toml::Value::String(s)) => Some(Architecture::from_str(&s, true).map_err(|_| Error::Config(format!("unknown arch `{s}`")))?),
        Some(other) => return Err(Error::Config(format!("arch must be a string, got {other}"))),
    };
    let cfg: TrainConfig = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
    Ok((cfg, arch))
}

fn train_config(a: &TrainArgs) -> CliResult<(TrainConfig, Architecture)> {
    let (mut cfg, arch) = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            read_train_config(&text)?
        }
        None => (TrainConfig::default(), None),
    };
    macro_rules! overlay {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        )*};
    }
    overlay!(epochs, initial_lr, lr_decay_alpha, decay_trigger, weight_decay, recurrent_dropout, inter_layer_dropout, batch_size, seed);
    cfg.validate()?;
    Ok((cfg, a.arch.or(arch).unwrap_or(Architecture::Compact)))
}

fn loss_log_path(a: &TrainArgs) -> PathBuf {
    a.loss_log.clone().unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), Error> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| std::io::Write::flush(&mut w)).map_err(|e| Error::io(path, e))
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let (cfg, arch) = train_config(a)?;
    let period = Period::from(a.period);
    let ds = until(load_grd(&a.data)?, a.until_year);
    let shape = ds.input_shape().ok_or_else(|| CliError::usage("empty partition: the dataset has no days"))?;
    let mut model = match arch {
        Architecture::Canonical => ModelConfig::canonical(shape.height, shape.width),
        Architecture::Compact => ModelConfig::compact(shape.height, shape.width),
    };
    model.input_channels = shape.channels;
    let prepared = prepare_period(&ds, period, model.window)?;

    let resume = if a.resume && a.out.exists() {
        let ck = load_checkpoint(&a.out)?;
        if ck.meta.period != Some(period) {
            return Err(CliError::usage(format!("checkpoint {} was trained on another period", a.out.display())));
        }
        let state = ck.train_state().ok_or_else(|| CliError::usage("checkpoint holds no training state"))?;
        log::info!("resuming from epoch {}", state.epoch);
        Some(state)
    } else {
        None
    };
    if let Some(s) = &resume {
        model = s.params.config.clone();
    }

    let log_path = loss_log_path(a);
    let norm = prepared.normalization.clone();
    let persist = |state: &TrainState| -> Result<(), Error> {
        save_checkpoint(&Checkpoint::from_training(state, &cfg, Some(norm.clone()), period), &a.out)?;
        write_file(&log_path, |w| write_loss_log(&state.log, w))
    };
    let mut io_error = None;
    let outcome = train_period(&prepared, &model, &cfg, resume, |state| {
        if let Some(r) = state.log.last() {
            log::info!("epoch {} train {:.6} lr {}", r.epoch, r.train_loss, r.lr);
        }
        if io_error.is_none() {
            io_error = persist(state).err();
        }
    });
    if let Some(e) = io_error {
        return Err(e.into());
    }
    match outcome {
        Ok(state) => {
            persist(&state)?;
            Ok(())
        }
        Err(FitError::Invalid(e)) => Err(e.into()),
        Err(FitError::Diverged { epoch, reason, last_good }) => {
            persist(&last_good)?;
            Err(CliError {
                code: 3,
                message: format!("training diverged at epoch {epoch}: {reason}; kept the checkpoint from epoch {}", last_good.epoch),
            })
        }
    }
}

/// Writes a single-channel prediction series; the grid is stored as both input and target.
pub fn save_predictions(preds: &[Prediction], path: &Path) -> Result<(), Error> {
    let samples = preds
        .iter()
        .map(|p| ClimateSample {
            date: p.date,
            input: p.grid.clone(),
            target: p.grid.clone(),
        })
        .collect();
    save_grd(&Dataset::new(vec!["precipitation".into()], samples)?, path)
}

fn cmd_downscale(a: &DownscaleArgs) -> CliResult {
    let ck = load_checkpoint(&a.ckpt)?;
    let params = ck.params.as_ref().ok_or_else(|| CliError::usage(format!("{} holds no trained network", a.ckpt.display())))?;
    let norm = ck
        .meta
        .normalization
        .as_ref()
        .ok_or_else(|| CliError::usage("checkpoint has no normalization"))?;
    let ds = load_grd(&a.data)?;
    if let Some(shape) = ds.input_shape() {
        let expected = params.config.input_shape();
        if shape != expected {
            return Err(Error::shape("downscale", format!("checkpoint expects {expected}"), format!("data has {shape}")).into());
        }
    }
    let preds = predict(&ds.samples, params, norm)?;
    save_predictions(&preds, &a.out)?;
    log::info!("wrote {} predicted days to {}", preds.len(), a.out.display());
    Ok(())
}

fn cmd_qmap(action: &QmapCommand) -> CliResult {
    match action {
        QmapCommand::Fit {
            data,
            ckpt,
            period,
            until_year,
        } => {
            let period = Period::from(*period);
            let ds = until(load_grd(data)?, *until_year);
            let days: Vec<ClimateSample> = ds.samples.into_iter().filter(|s| period.contains(s.date)).collect();
            if days.len() < 2 {
                return Err(CliError::usage(format!("empty partition: fewer than 2 {} days", period.label())));
            }
            let qm = fit_qmap_baseline(&days)?;
            let mut ck = if ckpt.exists() { load_checkpoint(ckpt)? } else { Checkpoint::empty() };
            ck.set_qmap(period, qm);
            save_checkpoint(&ck, ckpt)?;
            Ok(())
        }
        QmapCommand::Apply { ckpt, data, out } => {
            let ck = load_checkpoint(ckpt)?;
            let ds = load_grd(data)?;
            let mut preds = Vec::with_capacity(ds.samples.len());
            for s in &ds.samples {
                let qm = ck
                    .qmap(Period::of(s.date))
                    .or_else(|| ck.qmap(Period::All))
                    .ok_or_else(|| CliError::usage(format!("no fitted map for {} in {}", s.date, ckpt.display())))?;
                preds.extend(predict_qmap(std::slice::from_ref(s), qm)?);
            }
            save_predictions(&preds, out)?;
            Ok(())
        }
    }
}

fn by_date(ds: &Dataset, pick: impl Fn(&ClimateSample) -> Result<Grid, Error>) -> Result<HashMap<NaiveDate, Grid>, Error> {
    ds.samples.iter().map(|s| Ok((s.date, pick(s)?))).collect()
}

fn aligned(dates: &[NaiveDate], series: &HashMap<NaiveDate, Grid>, what: &str, path: &Path) -> CliResult<Vec<Grid>> {
    dates
        .iter()
        .map(|d| {
            series.get(d).cloned().ok_or_else(|| {
                CliError::usage(format!("date mismatch: {d} is not in the {what} file {}", path.display()))
            })
        })
        .collect()
}

fn cmd_eval(a: &EvalArgs) -> CliResult {
    let pred_ds = load_grd(&a.pred)?;
    let obs_ds = load_grd(&a.obs)?;
    let dates = match &a.dates_from {
        Some(p) => load_grd(p)?.dates(),
        None => pred_ds.dates(),
    };
    if dates.is_empty() {
        return Err(CliError::usage("no dates to evaluate"));
    }
    let preds = aligned(&dates, &by_date(&pred_ds, |s| s.input.slice_channels(0, 1))?, "prediction", &a.pred)?;
    let obs = aligned(&dates, &by_date(&obs_ds, |s| Ok(s.target.clone()))?, "observation", &a.obs)?;
    let (ps, os) = (preds[0].shape(), obs[0].shape());
    if ps != os {
        return Err(Error::shape("eval", format!("predictions {ps}"), format!("observations {os}")).into());
    }
    let report = evaluate(
        &a.method,
        &Series::mm_per_day(preds)?,
        &Series::mm_per_day(obs)?,
        &dates,
        &a.extremes,
        &default_probs(),
    )?;

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let dir = &a.out;
    write_file(&dir.join("overall.csv"), |w| write_overall_csv(std::slice::from_ref(&report), w))?;
    write_file(&dir.join("periods.csv"), |w| write_periods_csv(&report.seasons, w))?;
    write_file(&dir.join("seasons.csv"), |w| write_seasons_csv(&report.seasons, w))?;
    write_file(&dir.join("extremes.csv"), |w| write_extremes_csv(&report.extremes, w))?;
    write_file(&dir.join("qq.csv"), |w| write_qq_csv(&report.qq_pooled, w))?;
    write_file(&dir.join("qq_time_mean.csv"), |w| write_qq_csv(&report.qq_time_mean, w))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::usage(format!("summary: {e}")))?;
    fs::write(dir.join("summary.json"), json).map_err(|e| Error::io(dir.join("summary.json"), e))?;
    Ok(())
}

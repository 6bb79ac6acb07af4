//! The `lunet` command: train, cross-validate, evaluate and gradient-check.
//!
//! Exit status: 0 success, 1 other failure, 2 configuration error, 3 data
//! error, 4 non-finite value during training, 5 gradient check failure.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lunet_core::eval::{render_report, ReportFormat};
use lunet_core::nn::LayerKind;

use commands::{cmd_crossval, cmd_evaluate, cmd_gradcheck, cmd_train, gradcheck_table, GradScale};
use config::{parse_pairs, RunConfig};
use error::{CliError, Failure};

#[derive(Debug, Parser)]
#[command(name = "lunet", version, about = "LuNet intrusion-detection network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a 5-fold split (fold 0 held out) and save a checkpoint.
    Train(RunArgs),
    /// Stratified k-fold cross-validation.
    Crossval(RunArgs),
    /// Evaluate a checkpoint in inference mode.
    Evaluate(EvaluateArgs),
    /// Finite-difference gradient checks of every layer and a small model.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// nsl-kdd, unsw-nb15 or synthetic.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Data file(s), comma separated; several files are concatenated.
    #[arg(long)]
    pub data_path: Option<String>,
    /// binary or multi.
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub folds: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// RMSprop learning rate.
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
    /// Stratified sample size drawn from the data before splitting.
    #[arg(long)]
    pub subsample: Option<String>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(String, String)> {
        [
            ("dataset", &self.dataset),
            ("data_path", &self.data_path),
            ("task", &self.task),
            ("folds", &self.folds),
            ("seed", &self.seed),
            ("train.epochs", &self.epochs),
            ("train.batch_size", &self.batch_size),
            ("optimizer.learning_rate", &self.lr),
            ("output_dir", &self.output_dir),
            ("checkpoint", &self.checkpoint),
            ("data.subsample", &self.subsample),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_owned(), v.clone())))
        .collect()
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config("config", format!("cannot read {}: {e}", path.display())))?;
            cfg.apply(&parse_pairs(&text)?)?;
        }
        cfg.apply(&self.pairs())?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Rows to evaluate: all, or the train/holdout side of the `train` split.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Layers,
    Model,
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scale: ScaleArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt one layer type's backward pass (conv1d, lstm, ...).
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn layer_kind(name: &str) -> Result<LayerKind, CliError> {
    use LayerKind::*;
    [Conv1d, Relu, MaxPool1d, BatchNorm, Lstm, Reshape, Dropout, GlobalAvgPool, Dense, Softmax]
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| CliError::config("config", format!("unknown layer type '{name}'")))
}

/// Runs one command, writing logs and tables to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::new(Failure::Other, "write output", e.to_string());
    match cli.command {
        Command::Train(args) => {
            let outcome = cmd_train(&args.resolve()?, out)?;
            writeln!(out, "{{\"record\":\"checkpoint\",\"path\":{:?}}}", outcome.checkpoint.display().to_string()).map_err(io)?;
            write!(out, "{}", render_report(&outcome.report, ReportFormat::PrettyTable)).map_err(io)?;
        }
        Command::Crossval(args) => {
            let report = cmd_crossval(&args.resolve()?, out)?;
            write!(out, "{}", render_report(&report, ReportFormat::PrettyTable)).map_err(io)?;
        }
        Command::Evaluate(args) => {
            let mut cfg = args.run.resolve()?;
            if let Some(split) = &args.split {
                cfg.set("split", split)?;
            }
            let report = cmd_evaluate(&cfg)?;
            write!(out, "{}", render_report(&report, ReportFormat::JsonLines)).map_err(io)?;
            write!(out, "{}", render_report(&report, ReportFormat::PrettyTable)).map_err(io)?;
        }
        Command::Gradcheck(args) => {
            let scale = match args.scale {
                ScaleArg::Layers => GradScale::Layers,
                ScaleArg::Model => GradScale::Model,
                ScaleArg::All => GradScale::All,
            };
            let fault = args.inject_fault.as_deref().map(layer_kind).transpose()?;
            let reports = cmd_gradcheck(scale, fault, args.seed)?;
            write!(out, "{}", gradcheck_table(&reports)).map_err(io)?;
            let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.target.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::new(Failure::Gradcheck, "gradcheck", format!("failed: {}", failed.join(", "))));
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the command; errors go to standard error.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(Failure::Config as u8) } else { ExitCode::SUCCESS };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end: configuration, file glue and visualization around
//! the core pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod imageio;
pub mod manifest;
pub mod pca;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use m3_core::attention::Temperature;
use m3_core::metrics::Pooling;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "m3", version, about = "Gaussian scene memory: build, train, render and query")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reduce raw features to a memory bank and initialize its projection.
    Reduce(Overrides),
    /// Fit colors and opacities to posed images.
    FitRgb(Overrides),
    /// Fit principal queries and memory projections to posed features.
    Train(Overrides),
    /// Render RGB and feature maps.
    Render {
        #[command(flatten)]
        overrides: Overrides,
        /// Camera index; all views when omitted.
        #[arg(long)]
        view: Option<usize>,
        /// Also write a PCA false-color PNG per feature map.
        #[arg(long)]
        pca: bool,
    },
    /// Score renders or feature files.
    Eval(Overrides),
    /// Similarity heatmap of a query embedding over one rendered view.
    Query {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// PCA false-color image of a feature file.
    Pca {
        /// Feature file (M3FT).
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a small generated dataset with a ready-to-run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Settings shared by the pipeline commands. Each flag overrides the config
/// key of the same name.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `model=path`, repeatable.
    #[arg(long = "features", value_parser = parse_kv::<PathBuf>)]
    pub features: Vec<(String, PathBuf)>,
    /// `model=path`, repeatable.
    #[arg(long = "bank", value_parser = parse_kv::<PathBuf>)]
    pub bank: Vec<(String, PathBuf)>,
    /// `model=path`, repeatable.
    #[arg(long = "pred", value_parser = parse_kv::<PathBuf>)]
    pub pred: Vec<(String, PathBuf)>,
    /// `model=degree`, repeatable.
    #[arg(long = "degree", value_parser = parse_kv::<usize>)]
    pub degrees: Vec<(String, usize)>,
    #[arg(long)]
    pub theta: Option<f32>,
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub rgb_iters: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub lambda_cos: Option<f64>,
    #[arg(long)]
    pub lambda_l2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `none`, `inv_sqrt_d`, `fixed:<c>` or `learned:<lambda>`.
    #[arg(long, value_parser = parse_temperature)]
    pub temperature: Option<Temperature>,
    /// Comma-separated camera indices kept out of training.
    #[arg(long, value_delimiter = ',')]
    pub holdout: Option<Vec<usize>>,
    /// Embedding-list file (M3FT) holding query vectors.
    #[arg(long)]
    pub query: Option<PathBuf>,
    #[arg(long)]
    pub query_row: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub retrieval: Option<PathBuf>,
    #[arg(long)]
    pub grounding: Option<PathBuf>,
    /// `mean` or `center_crop`.
    #[arg(long, value_parser = parse_pooling)]
    pub pooling: Option<Pooling>,
}

fn parse_kv<T: std::str::FromStr>(s: &str) -> Result<(String, T), String>
where
    T::Err: std::fmt::Display,
{
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected model=value, got '{s}'"))?;
    if k.is_empty() {
        return Err(format!("empty model name in '{s}'"));
    }
    Ok((k.to_string(), v.parse().map_err(|e| format!("'{v}': {e}"))?))
}

fn parse_temperature(s: &str) -> Result<Temperature, String> {
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("'{v}': {e}"));
    match s.split_once(':') {
        None if s == "none" => Ok(Temperature::None),
        None if s == "inv_sqrt_d" => Ok(Temperature::InvSqrtD),
        Some(("fixed", v)) => Ok(Temperature::Fixed(num(v)?)),
        Some(("learned", v)) => Ok(Temperature::Learned(num(v)?)),
        _ => Err(format!("unknown temperature '{s}'")),
    }
}

fn parse_pooling(s: &str) -> Result<Pooling, String> {
    match s {
        "mean" => Ok(Pooling::Mean),
        "center_crop" => Ok(Pooling::CenterCrop),
        _ => Err(format!("unknown pooling '{s}'")),
    }
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Reduce(o) => commands::reduce::run(&o.settings()?),
        Command::FitRgb(o) => commands::fit_rgb::run(&o.settings()?),
        Command::Train(o) => commands::train::run(&o.settings()?),
        Command::Render { overrides, view, pca } => commands::render::run(&overrides.settings()?, view, pca),
        Command::Eval(o) => commands::eval::run(&o.settings()?),
        Command::Query { overrides, view } => commands::query::run(&overrides.settings()?, view),
        Command::Pca { input, view, output } => commands::pca::run(&input, view, &output),
        Command::Synth { out, seed } => commands::synth::run(&out, seed),
    }
}

/// Sets the worker count from `M3_THREADS`, if present.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("M3_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("M3_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot configure {threads} threads: {e}")))
}

impl Overrides {
    /// The config file (if any) with every given flag applied on top.
    pub fn settings(&self) -> CliResult<config::RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => config::RunConfig::load(path)?,
            None => config::RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = &self.$field { cfg.$field = Some(v.clone()); } )* };
        }
        set!(
            scene,
            cameras,
            out,
            theta,
            chunk,
            points,
            lambda_cos,
            lambda_l2,
            seed,
            temperature,
            holdout,
            query,
            query_row,
            model,
            retrieval,
            grounding,
            pooling
        );
        if let Some(v) = self.iters {
            cfg.iters = Some(v);
        }
        if let Some(v) = self.rgb_iters {
            cfg.rgb_iters = Some(v);
        }
        cfg.features.extend(self.features.iter().cloned());
        cfg.bank.extend(self.bank.iter().cloned());
        cfg.pred.extend(self.pred.iter().cloned());
        cfg.degrees.extend(self.degrees.iter().cloned());
        Ok(cfg)
    }
}

//! Command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, save_dataset, Dataset, GenConfig, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, predict_export, run_maskout, weekly_csv, weekly_eval, MASKOUT_VARIANTS};
use crate::model::{Model, ModelConfig};
use crate::train::{train, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "cmavit", about = "Multimodal vineyard yield transformer")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for data generation, initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset into --out.
    Synth,
    /// Train on --dataset and write a checkpoint and history.csv to --out.
    Train,
    /// Evaluate --ckpt on a split of --dataset; writes eval_<split>.json.
    Eval {
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
    /// Per-week metrics of --ckpt; writes weekly_<split>.csv.
    Weekly {
        #[arg(long, default_value = "val")]
        split: SplitArg,
    },
    /// Train the four modality variants; writes maskout.csv and maskout.json.
    Maskout,
    /// Export per-pixel predictions of --ckpt into --out.
    Predict {
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Contents of the `train`/`maskout` config file: training fields at the top
/// level plus an optional `model` section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub model: ModelConfig,
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))
}

fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Usage(format!("--{flag} is required")))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn out_dir(g: &Global) -> Result<&Path> {
    let out = require(&g.out, "out")?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    Ok(out)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn run_config(g: &Global) -> Result<RunConfig> {
    let mut rc: RunConfig = read_config(g.config.as_deref())?;
    if let Some(seed) = g.seed {
        rc.train.seed = seed;
    }
    rc.train.validate()?;
    rc.model.validate()?;
    Ok(rc)
}

fn load_inputs(g: &Global) -> Result<(Model, Dataset)> {
    let model = Model::load(require(&g.ckpt, "ckpt")?)?;
    let ds = load_dataset(require(&g.dataset, "dataset")?)?;
    Ok((model, ds))
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth => {
            let cfg: GenConfig = read_config(g.config.as_deref())?;
            cfg.validate()?;
            let ds = Dataset::synthesize(g.seed.unwrap_or(0), cfg)?;
            save_dataset(out_dir(g)?, &ds)
        }
        Command::Train => {
            let rc = run_config(g)?;
            let ds = load_dataset(require(&g.dataset, "dataset")?)?;
            let (model, history) = train(rc.model.clone(), rc.train.seed, &ds, &rc.train)?;
            let out = out_dir(g)?;
            model.save(out)?;
            write(out, "history.csv", &history.to_csv())
        }
        Command::Eval { split } => {
            let (model, ds) = load_inputs(g)?;
            let split = Split::from(*split);
            let report = evaluate_split(&model, &ds, split)?;
            write(out_dir(g)?, &format!("eval_{}.json", split.name()), &to_json(&report)?)
        }
        Command::Weekly { split } => {
            let (model, ds) = load_inputs(g)?;
            let split = Split::from(*split);
            let points = weekly_eval(&model, &ds.samples_in(split))?;
            write(out_dir(g)?, &format!("weekly_{}.csv", split.name()), &weekly_csv(&points))
        }
        Command::Maskout => {
            let rc = run_config(g)?;
            let ds = load_dataset(require(&g.dataset, "dataset")?)?;
            let run = run_maskout(&rc.model, rc.train.seed, &ds, &rc.train, &MASKOUT_VARIANTS);
            let out = out_dir(g)?;
            write(out, "maskout.csv", &run.csv())?;
            write(out, "maskout.json", &to_json(&run.rows)?)
        }
        Command::Predict { split } => {
            let (model, ds) = load_inputs(g)?;
            let (files, summary) = predict_export(&model, &ds.samples_in(Split::from(*split)))?;
            let out = out_dir(g)?;
            for (name, csv) in &files {
                write(out, name, csv)?;
            }
            write(out, "summary.json", &to_json(&summary)?)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

//! `strokediff`: dataset generation, training, sampling, the downstream
//! applications, evaluation and the HTTP service.
//!
//! Exit status is 0 on success, 1 on a domain error (bad data, missing
//! checkpoint, malformed config) and 2 on a usage error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strokediff::apps::MixMode;
use strokediff::diffusion::SamplerKind;
use strokediff::model::ConditionMode;
use strokediff::toy::ToyKind;
use strokediff_service::{ModelSource, ServiceConfig};

use commands::Run;
use config::{resolve, Flags};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
}

impl From<strokediff::Error> for CliError {
    fn from(e: strokediff::Error) -> Self {
        Self::Domain(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "strokediff", version, about = "Diffusion models for stroke-sequence sketches")]
struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for outputs and the resolved-config snapshot.
    #[arg(long, global = true, env = "STROKEDIFF_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    /// JSON config file, or a snapshot from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset directory.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Draw unconditional samples, or implicitly conditioned ones with --condition.
    Sample(SampleArgs),
    /// Redraw sketches from their own latent, optionally at a higher point count.
    Reconstruct(ReconstructArgs),
    /// Project corrupted sketches back toward the data.
    Heal(HealArgs),
    /// Latent interpolation or low-pass mixing of two sketches.
    Mix(MixArgs),
    /// Stroke sequences for the point sets of the input sketches.
    Vectorize(VectorizeArgs),
    /// Samples with a scaled reverse variance.
    Abstract(AbstractArgs),
    /// Metric report for a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// circles, zigzags, two-class, lines or polygons.
    #[arg(long)]
    spec: Option<ToyKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    len: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// none, sequence-encoder or set-encoder.
    #[arg(long)]
    mode: Option<ConditionMode>,
    /// Diffusion length T.
    #[arg(long = "T", visible_alias = "steps")]
    steps: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    condition: Option<PathBuf>,
    #[arg(long)]
    tc_frac: Option<f64>,
    #[arg(long)]
    resample: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    length_factor: Option<f64>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    resample: Option<usize>,
}

#[derive(Args)]
struct HealArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    th_frac: Option<f64>,
    #[arg(long)]
    resample: Option<usize>,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long)]
    reference: Option<PathBuf>,
    /// latent-ddim or ilvr.
    #[arg(long, value_parser = parse_mix_mode)]
    mode: Option<MixMode>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    omega: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct VectorizeArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args)]
struct AbstractArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    max_items: Option<usize>,
    #[arg(long)]
    n_per_item: Option<usize>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    step_budget: Option<usize>,
    /// `id=path` of a checkpoint to load at start-up. Repeatable.
    #[arg(long = "model", value_name = "ID=PATH")]
    models: Vec<String>,
}

fn parse_mix_mode(s: &str) -> Result<MixMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown mix mode '{s}'"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = cli.config.as_deref();
    let sets = &cli.sets;
    let seed = Flags::default().opt("seed", &cli.seed);
    let run = |command| Run { command, out_dir: cli.out_dir.clone() };
    match cli.command {
        Command::GenData(a) => {
            let f = seed.opt("spec", &a.spec).opt("n", &a.n).opt("len", &a.len).opt("noise", &a.noise);
            commands::gen_data(&run("gen-data"), &resolve("gen-data", file, f.done(), sets)?)
        }
        Command::Train(a) => {
            let f = Flags::default()
                .opt("train.seed", &cli.seed)
                .opt("data", &a.data)
                .opt("train.epochs", &a.epochs)
                .opt("train.batch_size", &a.batch_size)
                .opt("train.lr0", &a.lr)
                .opt("train.model.mode", &a.mode)
                .opt("T", &a.steps);
            let c: commands::TrainCmdConfig = resolve("train", file, f.done(), sets)?;
            commands::train(&run("train"), &c.finish())
        }
        Command::Sample(a) => {
            let f = seed
                .opt("ckpt", &a.ckpt)
                .opt("n", &a.n)
                .opt("length", &a.length)
                .opt("sampler", &a.sampler)
                .opt("steps", &a.steps)
                .opt("condition", &a.condition)
                .opt("tc_frac", &a.tc_frac)
                .opt("resample", &a.resample);
            commands::sample(&run("sample"), &resolve("sample", file, f.done(), sets)?)
        }
        Command::Reconstruct(a) => {
            let f = seed
                .opt("ckpt", &a.ckpt)
                .opt("input", &a.input)
                .opt("length_factor", &a.length_factor)
                .opt("sampler", &a.sampler)
                .opt("steps", &a.steps)
                .opt("resample", &a.resample);
            commands::reconstruct(&run("reconstruct"), &resolve("reconstruct", file, f.done(), sets)?)
        }
        Command::Heal(a) => {
            let f = seed.opt("ckpt", &a.ckpt).opt("input", &a.input).opt("th_frac", &a.th_frac).opt("resample", &a.resample);
            commands::heal(&run("heal"), &resolve("heal", file, f.done(), sets)?)
        }
        Command::Mix(a) => {
            let f = seed
                .opt("ckpt", &a.ckpt)
                .opt("base", &a.base)
                .opt("reference", &a.reference)
                .opt("mode", &a.mode)
                .opt("delta", &a.delta)
                .opt("omega", &a.omega)
                .opt("steps", &a.steps);
            commands::mix(&run("mix"), &resolve("mix", file, f.done(), sets)?)
        }
        Command::Vectorize(a) => {
            let f = seed.opt("ckpt", &a.ckpt).opt("input", &a.input).opt("n", &a.n).opt("length", &a.length);
            commands::vectorize(&run("vectorize"), &resolve("vectorize", file, f.done(), sets)?)
        }
        Command::Abstract(a) => {
            let f = seed.opt("ckpt", &a.ckpt).opt("k", &a.k).opt("n", &a.n).opt("length", &a.length);
            commands::abstract_(&run("abstract"), &resolve("abstract", file, f.done(), sets)?)
        }
        Command::Eval(a) => {
            let f = seed
                .opt("ckpt", &a.ckpt)
                .opt("data", &a.data)
                .opt("max_items", &a.max_items)
                .opt("n_per_item", &a.n_per_item);
            commands::evaluate(&run("eval"), &resolve("eval", file, f.done(), sets)?)
        }
        Command::Serve(a) => {
            let f = Flags::default().opt("bind", &a.bind).opt("step_budget", &a.step_budget);
            let mut c: ServiceConfig = resolve("serve", file, f.done(), sets)?;
            for m in &a.models {
                let (id, path) =
                    m.split_once('=').ok_or_else(|| CliError::Usage(format!("--model '{m}' is not of the form id=path")))?;
                c.models.push(ModelSource { id: id.into(), path: path.into() });
            }
            commands::serve(&run("serve"), &c)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

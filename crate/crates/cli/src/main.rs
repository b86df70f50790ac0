//! `splatsem`: the splat segmentation pipeline as subcommands driven by TOML configs.

mod commands;
mod failure;
mod run;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use commands::{Command, CurateConfig, EvalConfig, FuseConfig, InferConfig, LiftConfig, QueryConfig, RenderConfig, Training, TRAIN_AE, TRAIN_SSL, TRAIN_VL};
use failure::Failure;
use run::Run;

#[derive(Parser)]
#[command(name = "splatsem", version, about = "Open-vocabulary segmentation of Gaussian splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuse segment feature triples into per-frame feature maps
    Fuse(Common),
    /// Lift per-frame feature maps onto a scene's Gaussians
    Lift(Common),
    /// Render a scene from every camera to PNG
    Render(Common),
    /// Decide whether a capture is kept for training
    Curate(Common),
    /// Train the feature autoencoder and compress every scene's features
    TrainAe(Common),
    /// Train the feature predictor on lifted language features
    TrainVl(Common),
    /// Self-supervised pretraining with masked modeling and distillation
    TrainSsl(Common),
    /// Predict a feature field for a scene from a checkpoint
    Infer(Common),
    /// Zero-shot segmentation metrics against labeled points
    Eval(Common),
    /// Highlight the splats closest to a text embedding
    Query(Common),
}

#[derive(Args)]
struct Common {
    /// Subcommand config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Output directory; receives the artifacts and manifest.json
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for rasterization and neighbour search
    #[arg(long)]
    threads: Option<usize>,
    /// Validate the config and inputs without writing anything
    #[arg(long)]
    dry_run: bool,
}

fn drive<C: Command>(args: &Common) -> Result<(), Failure> {
    let bytes = fs::read(&args.config).map_err(|e| Failure::input(format!("config {}: {e}", args.config.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Failure::input(format!("config {} is not UTF-8", args.config.display())))?;
    let mut cmd = C::parse(text, &args.config)?;
    if let Some(s) = args.seed {
        cmd.set_seed(s);
    }
    for p in cmd.required_inputs() {
        if !p.exists() {
            return Err(Failure::input(format!("missing input {}", p.display())));
        }
    }
    if args.dry_run {
        println!("{}: {} is valid", C::NAME, args.config.display());
        return Ok(());
    }
    let mut run = Run::new(C::NAME, &args.config, &bytes, args.out.clone());
    run.seed = cmd.seed().or(args.seed);
    cmd.execute(&mut run)?;
    let manifest = run.finish()?;
    info!("wrote {}", manifest.display());
    Ok(())
}

fn dispatch(cmd: &Cmd) -> Result<(), Failure> {
    let common = match cmd {
        Cmd::Fuse(c) | Cmd::Lift(c) | Cmd::Render(c) | Cmd::Curate(c) | Cmd::TrainAe(c) | Cmd::TrainVl(c) | Cmd::TrainSsl(c) | Cmd::Infer(c) | Cmd::Eval(c) | Cmd::Query(c) => c,
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::runtime(format!("thread pool: {e}")))?;
    }
    match cmd {
        Cmd::Fuse(c) => drive::<FuseConfig>(c),
        Cmd::Lift(c) => drive::<LiftConfig>(c),
        Cmd::Render(c) => drive::<RenderConfig>(c),
        Cmd::Curate(c) => drive::<CurateConfig>(c),
        Cmd::TrainAe(c) => drive::<Training<TRAIN_AE>>(c),
        Cmd::TrainVl(c) => drive::<Training<TRAIN_VL>>(c),
        Cmd::TrainSsl(c) => drive::<Training<TRAIN_SSL>>(c),
        Cmd::Infer(c) => drive::<InferConfig>(c),
        Cmd::Eval(c) => drive::<EvalConfig>(c),
        Cmd::Query(c) => drive::<QueryConfig>(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPLATSEM_LOG", "info"))
        .format_timestamp(None)
        .init();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

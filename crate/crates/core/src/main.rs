use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use landslide_core::pipeline::{run_to, RunConfig, Stage};
use landslide_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "landslide", version, about = "Annual landslide mapping from seasonal composites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, env = "LANDSLIDE_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "LANDSLIDE_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world from the config's `world` section.
    Simulate(Common),
    /// Seasonal composites for every processed year.
    Composite(Common),
    /// Slope from the DEM.
    Slope(Common),
    /// Harmonize nighttime lights across sensors.
    CalibrateNtl(Common),
    /// Draw training and validation pools.
    Sample(Common),
    /// Sweep the class ratio and pick the UA/PA crossing.
    SweepBeta(Common),
    /// Train the final forest.
    Train(Common),
    /// Classify every processed year.
    Classify(Common),
    /// Replicated accuracy assessment per year.
    Assess(Common),
    /// Chronology metrics and area composition.
    Metrics(Common),
    /// Every stage.
    Run(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn execute(stage: Stage, name: &'static str, args: &Common) -> Result<(), Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
    if let Some(n) = cfg.workers {
        if n == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    }
    let manifest = run_to(&cfg, &out, stage, name).map_err(|e| e.in_stage(name))?;
    log::info!("{name}: wrote {} files under {}", manifest.files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (stage, name, args) = match &cli.command {
        Command::Simulate(a) => (Stage::Simulate, "simulate", a),
        Command::Composite(a) => (Stage::Composite, "composite", a),
        Command::Slope(a) => (Stage::Slope, "slope", a),
        Command::CalibrateNtl(a) => (Stage::CalibrateNtl, "calibrate-ntl", a),
        Command::Sample(a) => (Stage::Sample, "sample", a),
        Command::SweepBeta(a) => (Stage::SweepBeta, "sweep-beta", a),
        Command::Train(a) => (Stage::Train, "train", a),
        Command::Classify(a) => (Stage::Classify, "classify", a),
        Command::Assess(a) => (Stage::Assess, "assess", a),
        Command::Metrics(a) => (Stage::Metrics, "metrics", a),
        Command::Run(a) => (Stage::Metrics, "run", a),
    };
    match execute(stage, name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!(": {text}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}

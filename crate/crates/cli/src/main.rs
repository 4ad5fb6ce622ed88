use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use canestat_core::pipeline::{
    run_pipeline, write_fixture_files, write_scene_files, PipelineConfig,
};
use canestat_core::synthetic::{
    generate_scene, generate_zone_fixture, yield_noise_for_r_squared, SceneSpec, ZoneFixtureOptions,
};

#[derive(Parser)]
#[command(
    name = "canestat",
    version,
    about = "Sugarcane height and yield analysis from a single DSM"
)]
struct Cli {
    /// Log progress and per-block decisions.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline described by a config file.
    Run(RunArgs),
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Process blocks in parallel (overrides the config).
    #[arg(long, overrides_with = "no_parallel")]
    parallel: bool,
    /// Process blocks one at a time (overrides the config).
    #[arg(long = "no-parallel", overrides_with = "parallel")]
    no_parallel: bool,
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Render a scene spec to dsm.asc, masks.json and truth.json.
    Scene {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a runnable treatment-zone fixture with a known yield law.
    Fixture {
        #[arg(long, allow_hyphen_values = true)]
        slope: f64,
        #[arg(long, allow_hyphen_values = true)]
        intercept: f64,
        /// Yield noise standard deviation, t/acre.
        #[arg(long, default_value_t = 0.0, conflicts_with = "target_r2")]
        noise: f64,
        /// Pick the yield noise so the zone-level population R² is about this value.
        #[arg(long)]
        target_r2: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Run(args) => run(&args),
        Command::Synth(cmd) => synth(cmd).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let report = serde_json::json!({
                "status": "error",
                "errors": [{ "kind": "Fatal", "message": format!("{e:#}") }],
            });
            eprintln!("{report}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &RunArgs) -> Result<ExitCode> {
    let mut cfg = PipelineConfig::load(&args.config)?.with_env_overrides();
    if args.parallel {
        cfg.parallel = true;
    }
    if args.no_parallel {
        cfg.parallel = false;
    }
    let outcome = run_pipeline(&cfg)?;
    if let Some(error) = &outcome.error {
        let report = serde_json::json!({
            "status": "failed",
            "error": error,
            "failures": outcome.failures,
        });
        eprintln!("{report}");
        return Ok(ExitCode::from(1));
    }
    let r = &outcome.regression.as_ref().expect("successful run").result;
    println!(
        "{} blocks accepted, {} rejected, {} zones",
        outcome.estimates.len(),
        outcome.failures.len(),
        outcome.zones.len()
    );
    println!(
        "yield = {:.4} * height + {:.4}  (R² = {:.4})",
        r.slope, r.intercept, r.r_squared
    );
    println!("outputs in {}", cfg.output_dir.display());
    Ok(ExitCode::SUCCESS)
}

fn read_scene_spec(path: &Path) -> Result<SceneSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn synth(cmd: SynthCommand) -> Result<()> {
    match cmd {
        SynthCommand::Scene { spec, out } => {
            let spec = read_scene_spec(&spec)?;
            let scene = generate_scene(&spec)?;
            write_scene_files(&out, &scene)?;
            log::info!("wrote {} blocks to {}", scene.masks.len(), out.display());
        }
        SynthCommand::Fixture {
            slope,
            intercept,
            noise,
            target_r2,
            seed,
            out,
        } => {
            anyhow::ensure!(
                slope.is_finite() && intercept.is_finite(),
                "slope and intercept must be finite"
            );
            let noise = match target_r2 {
                Some(r2) => {
                    anyhow::ensure!(r2 > 0.0 && r2 <= 1.0, "--target-r2 must lie in (0, 1]");
                    yield_noise_for_r_squared(&ZoneFixtureOptions::default(), slope, r2)
                }
                None => noise,
            };
            anyhow::ensure!(noise >= 0.0 && noise.is_finite(), "--noise must be >= 0");
            let fixture = generate_zone_fixture(slope, intercept, noise, seed);
            write_fixture_files(&out, &fixture)?;
            log::info!(
                "wrote {} blocks (yield noise {noise}) to {}",
                fixture.metadata.len(),
                out.display()
            );
        }
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use robust_inversion::bench::{run_benchmark, BenchmarkPlan};
use robust_inversion::degrade::{compose_true, CompositionSpec};
use robust_inversion::gradcheck::run_gradcheck;
use robust_inversion::inversion::{Inverter, PhaseSchedule};
use robust_inversion::rng::Stream;
use robust_inversion::{GeneratorConfig, GeneratorWeights, Image, Latent, Result};

/// Image restoration by generator inversion.
#[derive(Debug, Parser)]
#[command(name = "rgi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random generator checkpoint.
    GenWeights {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 64)]
        latent_dim: usize,
        #[arg(long, default_value_t = 8)]
        mapping_layers: usize,
    },
    /// Synthesize one image from a seeded latent.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the true degradation chain to an image.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        /// Inline JSON or a path to a JSON file.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restore a degraded image.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// Inline JSON or a path to a JSON file.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// CSV with columns step, phase, loss.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a benchmark plan and write metric CSVs and images.
    Benchmark {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference and surrogate checks of every differentiable op.
    Gradcheck,
}

fn read_spec(arg: &str) -> Result<CompositionSpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        std::fs::read_to_string(Path::new(arg))?
    };
    CompositionSpec::from_json(&text)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenWeights {
            seed,
            out,
            resolution,
            channels,
            latent_dim,
            mapping_layers,
        } => {
            let config = GeneratorConfig {
                latent_dim,
                channels,
                resolution,
                mapping_layers,
                ..GeneratorConfig::default()
            };
            GeneratorWeights::generate(config, seed)?.save(&out)?;
        }
        Command::Sample { ckpt, seed, out } => {
            let w = GeneratorWeights::load(&ckpt)?;
            let latent = w.sample_latent(&mut Stream::new(seed))?;
            w.synthesize(&Latent::Global(latent))?.save(&out)?;
        }
        Command::Degrade { input, spec, out } => {
            let spec = read_spec(&spec)?;
            let img = Image::load(&input)?;
            compose_true(&spec, &img)?.save(&out)?;
        }
        Command::Restore {
            ckpt,
            target,
            spec,
            seed,
            out,
            trace,
        } => {
            let spec = read_spec(&spec)?;
            let w = GeneratorWeights::load(&ckpt)?;
            let target = Image::load(&target)?;
            let inv = Inverter::new(&w, PhaseSchedule::default())?;
            let run = inv.invert(&target, &spec, seed)?;
            run.x_plus_plus.save(&out)?;
            if let Some(path) = trace {
                run.write_trace_csv(path)?;
            }
            eprintln!(
                "objective {:.6} -> {:.6} after {} steps",
                run.initial_objective,
                run.phase_objectives[2],
                run.trace.len()
            );
        }
        Command::Benchmark { ckpt, plan, out } => {
            let plan = BenchmarkPlan::load(&plan)?;
            let w = GeneratorWeights::load(&ckpt)?;
            let outcome = run_benchmark(&plan, &w, &out)?;
            for c in &outcome.report.summary {
                println!(
                    "{:<10} {:<2} accuracy {:.5} fidelity {:.5} patch-FID {:.5} ({} ok, {} failed)",
                    c.task, c.level, c.accuracy_mean, c.fidelity_mean, c.patch_fid, c.images, c.failures
                );
            }
        }
        Command::Gradcheck => {
            let report = run_gradcheck()?;
            print!("{report}");
            if !report.all_passed() {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

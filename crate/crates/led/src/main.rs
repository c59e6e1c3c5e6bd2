use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use led::error::exit;
use led::{CliError, Mode, Overrides, RunConfig};
use led_core::diffusion::SamplerKind;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sampler {
    Ddpm,
    Ddim,
}

/// Conditional diffusion enhancement of fundus-like images.
#[derive(Debug, Parser)]
#[command(name = "led", version)]
struct Cli {
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Noise depth T_m for enhance/refine.
    #[arg(long)]
    tm: Option<usize>,
    #[arg(long, value_enum)]
    sampler: Option<Sampler>,
    /// DDIM stride.
    #[arg(long)]
    stride: Option<usize>,
}

fn threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("LED_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| CliError::Usage(format!("LED_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { 0 });
        }
    };
    let result = threads().and_then(|_| {
        let overrides = Overrides {
            seed: cli.seed,
            out: cli.out.clone(),
            noise_depth: cli.tm,
            sampler: cli.sampler.map(|s| match s {
                Sampler::Ddpm => SamplerKind::Ddpm,
                Sampler::Ddim => SamplerKind::Ddim,
            }),
            stride: cli.stride,
        };
        let config = RunConfig::load(&cli.config)?.resolve(cli.mode, &overrides);
        led::run(&config)
    });
    match result {
        Ok(outcome) => {
            log::info!("{}", outcome.summary);
            ExitCode::from(exit::SUCCESS as u8)
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

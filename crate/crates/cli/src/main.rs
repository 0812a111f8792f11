use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shelab::config::{ExperimentConfig, DEFAULT_CONFIG};
use shelab::{Command, Error, RunOptions};

/// Batch experiments for the stochastic heat equation with half-Lipschitz drift.
///
/// Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure, 3 I/O error.
#[derive(Parser, Debug)]
#[command(name = "shelab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Parse a configuration and run every check on it.
    Validate(Common),
    /// Solve one path and write its fields, final slice and Picard trace.
    Simulate(Common),
    /// Picard convergence over paths, Lipschitz ratios of the map and map-method comparison.
    PicardStudy(Common),
    /// Yosida approximation curves and the randomized property sweep.
    YosidaStudy(Common),
    /// Directional derivatives along the probe ladder and the linearization check.
    Malliavin(Common),
    /// Ensemble of u(t0, x0), kernel density estimate and atom test.
    Density(Common),
    /// Print the shipped default configuration.
    DefaultConfig,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (TOML); the shipped default is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set grid.n_t=256` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Number of paths (overrides run.n_paths).
    #[arg(long)]
    paths: Option<usize>,
    /// Base seed (overrides run.base_seed); at most 2^63 - 1 so that it fits a TOML integer.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Output directory (overrides run.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Also render SVG plots from the tables.
    #[arg(long)]
    plots: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut overrides = self.overrides.clone();
        if let Some(n) = self.paths {
            overrides.push(format!("run.n_paths={n}"));
        }
        if let Some(s) = self.seed {
            overrides.push(format!("run.base_seed={s}"));
        }
        if let Some(o) = &self.out {
            let quoted = o.to_string_lossy().replace('\\', "\\\\").replace('"', "\\\"");
            overrides.push(format!("run.output_dir=\"{quoted}\""));
        }
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::parse_with_overrides(DEFAULT_CONFIG, &overrides),
        }
    }

    fn init_threads(&self) -> Result<(), Error> {
        if let Some(n) = self.threads {
            if n == 0 {
                return Err(Error::config("--threads", "must be at least 1"));
            }
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::config("--threads", e.to_string()))?;
        }
        Ok(())
    }
}

fn validate(common: &Common) -> Result<(), Error> {
    let cfg = common.load()?;
    let report = cfg.validate();
    if let Some(i) = report.dalang_integral {
        println!("dalang integral: {i:.6e}");
    }
    if report.is_valid() {
        println!("configuration is valid (hash {})", cfg.hash());
        return Ok(());
    }
    for issue in &report.issues {
        eprintln!("invalid `{}`: {}", issue.key, issue.message);
    }
    report.into_result()
}

fn run(command: Command, common: &Common) -> Result<(), Error> {
    common.init_threads()?;
    let cfg = common.load()?;
    let opts = RunOptions::from_config(&cfg, common.plots);
    let outcome = command.run(&cfg, &opts)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    println!(
        "wrote {} files and manifest.json to {}",
        outcome.manifest.outputs.len(),
        opts.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Cmd::Validate(c) => validate(c),
        Cmd::Simulate(c) => run(Command::Simulate, c),
        Cmd::PicardStudy(c) => run(Command::PicardStudy, c),
        Cmd::YosidaStudy(c) => run(Command::YosidaStudy, c),
        Cmd::Malliavin(c) => run(Command::Malliavin, c),
        Cmd::Density(c) => run(Command::Density, c),
        Cmd::DefaultConfig => {
            print!("{DEFAULT_CONFIG}");
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pqlab::experiment::{refinement_sweep, report, run, ExperimentConfig, RunManifest};
use pqlab::LabError;

#[derive(Parser)]
#[command(name = "pqlab", version, about = "Run (p,q)-growth experiments and inspect their manifests")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for randomized checks (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Euler-Lagrange residual tolerance (overrides the config).
    #[arg(long = "tol-el", global = true, value_name = "F")]
    tol_el: Option<f64>,

    /// Worker threads; all cores by default.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured stage.
    Run { config: PathBuf },
    /// Refinement sweep: solves plus integrability and V-field scans.
    Sweep { config: PathBuf },
    /// Verify a manifest's artifacts and print a summary.
    Report { manifest: PathBuf },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, LabError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.tol_el {
        cfg.tolerances.tol_el = Some(t);
    }
    Ok(cfg)
}

fn finish(manifest: &RunManifest) -> ExitCode {
    for s in &manifest.stages {
        let detail = s.detail.as_deref().unwrap_or("");
        println!("{:<14} {:?} {detail}", s.name, s.status);
    }
    if manifest.ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => load(&cli, config).and_then(|c| run(&c, cli.out.as_deref())).map(|m| finish(&m)),
        Command::Sweep { config } => {
            load(&cli, config).and_then(|c| refinement_sweep(&c, cli.out.as_deref())).map(|m| finish(&m))
        }
        Command::Report { manifest } => report(manifest).map(|r| {
            for line in &r.lines {
                println!("{line}");
            }
            if r.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

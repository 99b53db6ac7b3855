//! Runs a bundled config end to end and verifies its manifest.

use std::path::Path;

use pqlab::experiment::{report, run, ExperimentConfig, MANIFEST_FILE};

fn main() -> pqlab::Result<()> {
    let cfg = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/quadratic.toml"))?;
    let out = std::env::temp_dir().join("pqlab-example-run");
    let manifest = run(&cfg, Some(&out))?;
    println!("wrote {} artifacts to {}", manifest.artifacts.len(), out.display());
    for line in report(&out.join(MANIFEST_FILE))?.lines {
        println!("{line}");
    }
    Ok(())
}

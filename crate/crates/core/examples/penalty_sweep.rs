//! The higher-order penalty: as `eps` shrinks the penalized minimizers
//! approach the plain one.

use pqlab::grid::Lattice;
use pqlab::integrands::IntegrandSpec;
use pqlab::regularity::penalty_sweep;
use pqlab::solver::{minimize, sample_datum, BoundaryCatalog, SolverOptions};

fn main() -> pqlab::Result<()> {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0)?;
    let g =
        BoundaryCatalog::Oscillatory { slope: vec![1.0, 0.0], amplitude: 0.1, frequency: vec![1.0, 1.0], phase: 0.0 };
    let lat = Lattice::unit_cube(2, 33, 1)?;
    let opts = SolverOptions::default();
    let plain = minimize(&spec, &g, &lat, &opts)?;
    let base = sample_datum(&g, &lat)?;
    let rows = penalty_sweep(&spec, &base, 2, &[1e-2, 1e-3, 1e-4, 0.0], &opts)?;
    println!("plain energy {:.10}", plain.energy);
    for r in rows {
        println!(
            "eps {:>6.0e}: energy {:.10}  penalty {:.3e}  relative gap {:.2e}",
            r.eps_tilde,
            r.energy,
            r.penalty_share,
            (r.energy - plain.energy).abs() / plain.energy
        );
    }
    Ok(())
}

//! Primal solve followed by the dual certificate: solenoidal residual,
//! extremality gaps and the duality gap.

use pqlab::duality::{certificate, DualEvaluator};
use pqlab::grid::Lattice;
use pqlab::integrands::IntegrandSpec;
use pqlab::solver::{minimize, BoundaryCatalog, SolverOptions};

fn main() -> pqlab::Result<()> {
    let lat = Lattice::unit_cube(2, 33, 1)?;
    let cases = [
        ("quadratic, g = x1", IntegrandSpec::quadratic(1.0, 0.0)?, BoundaryCatalog::first_coordinate(2)),
        (
            "(2,4) sum, oscillating g",
            IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0)?,
            BoundaryCatalog::Oscillatory {
                slope: vec![1.0, 0.0],
                amplitude: 0.1,
                frequency: vec![1.0, 1.0],
                phase: 0.0,
            },
        ),
    ];
    for (name, spec, g) in &cases {
        let sol = minimize(spec, g, &lat, &SolverOptions::default())?;
        let ev = DualEvaluator::for_spec(spec)?;
        let cert = certificate(&ev, &sol.u_h, g, sol.tol_el)?;
        println!("{name}");
        println!("  primal {:.10}  dual {:.10}  gap {:.2e}", cert.primal_value, cert.dual_value, cert.duality_gap);
        println!(
            "  solenoidal residual {:.2e}  extremality gap max {:.2e}  weak duality {}",
            cert.solenoidal_residual,
            cert.extremality_gap_max,
            cert.weak_duality_holds()
        );
        println!("  |sigma|_(L^q') = {:.4} <= bound {:.4}", cert.qprime_norm, cert.qprime_bound);
    }
    Ok(())
}

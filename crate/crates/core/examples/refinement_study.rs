//! Local integrability and `V`-field scans across three refinements of an
//! anisotropic problem.

use pqlab::grid::{BallRegion, GridField, Lattice};
use pqlab::integrands::{AxisTerm, IntegrandSpec};
use pqlab::regularity::{integrability_scan, vfield_w12_estimate};
use pqlab::solver::{minimize, BoundaryCatalog, SolverOptions};

fn main() -> pqlab::Result<()> {
    let spec = IntegrandSpec::separable(
        2.0,
        1.0,
        vec![AxisTerm { coeff: 1.0, exponent: 3.0 }, AxisTerm { coeff: 0.0, exponent: 2.0 }],
        0.0,
    )?;
    let g =
        BoundaryCatalog::Oscillatory { slope: vec![1.0, 0.5], amplitude: 0.2, frequency: vec![1.0, 2.0], phase: 0.0 };
    let ball = BallRegion::new(vec![0.5, 0.5], 0.25)?;
    let sols = [17, 33, 65]
        .iter()
        .map(|&m| minimize(&spec, &g, &Lattice::unit_cube(2, m, 1)?, &SolverOptions::default()))
        .collect::<pqlab::Result<Vec<_>>>()?;
    for row in integrability_scan(&sols, &ball, &[2.0, 3.0])? {
        println!("h {:.5}  r {}  local mean norm {:.6}  slope {:+.4}", row.h, row.r, row.norm, row.slope);
    }
    let fields: Vec<GridField> = sols.iter().map(|s| s.u_h.clone()).collect();
    for row in vfield_w12_estimate(&fields, &ball, spec.p, spec.mu)? {
        println!("h {:.5}  |D V(Du)|_(L2) {:.6}  growth {:?}", row.h, row.seminorm, row.growth);
    }
    Ok(())
}

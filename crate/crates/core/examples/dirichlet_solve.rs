//! A p-harmonic function in the plane: `|x|^{2/3}` for `p = 4`, recovered by
//! the discrete solver at three resolutions.

use pqlab::grid::Lattice;
use pqlab::integrands::IntegrandSpec;
use pqlab::solver::{minimize, sample_datum, BoundaryCatalog, SolverOptions};

fn main() -> pqlab::Result<()> {
    let spec = IntegrandSpec::radial_power(4.0, 1.0, 0.0)?;
    let g = BoundaryCatalog::RadialPower { exponent: 2.0 / 3.0, coeff: 1.0, center: vec![] };
    let mut prev: Option<f64> = None;
    for nodes in [17, 33, 65] {
        let lat = Lattice::square(0.5, 1.5, nodes, 1)?;
        let sol = minimize(&spec, &g, &lat, &SolverOptions::default())?;
        let exact = sample_datum(&g, &lat)?;
        let sq: f64 = sol.u_h.values().iter().zip(exact.values()).map(|(a, b)| (a - b) * (a - b)).sum();
        let err = (sq * lat.cell_volume()).sqrt();
        let ratio = prev.map_or(String::new(), |p| format!("  ratio {:.2}", p / err));
        println!(
            "h = 1/{:<3} energy {:.8}  residual {:.1e}  iterations {:>4}  L2 error {err:.3e}{ratio}",
            nodes - 1,
            sol.energy,
            sol.el_residual,
            sol.iterations
        );
        prev = Some(err);
    }
    Ok(())
}

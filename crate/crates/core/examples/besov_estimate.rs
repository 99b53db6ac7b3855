//! Nikolskii exponents of a jump and of an affine field.

use pqlab::grid::{BallRegion, GridField, Lattice};
use pqlab::regularity::{besov_seminorm, DYADIC_STEPS};

fn main() -> pqlab::Result<()> {
    let lat = Lattice::unit_cube(2, 257, 1)?;
    let ball = BallRegion::new(vec![0.5, 0.5], 0.3)?;
    let step = GridField::from_fn(lat.clone(), |x, out| out[0] = if x[0] < 0.5 { 0.0 } else { 1.0 })?;
    let affine = GridField::from_fn(lat, |x, out| out[0] = 2.0 * x[0] - x[1])?;
    for (name, w) in [("step", &step), ("affine", &affine)] {
        let e = besov_seminorm(w, &ball, 2.0, &DYADIC_STEPS, None)?;
        println!("{name:<7} alpha = {:.4}  integrals per step {:?}", e.alpha_fit, e.integrals);
    }
    Ok(())
}

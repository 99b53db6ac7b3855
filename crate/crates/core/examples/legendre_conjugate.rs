//! Numerical conjugates of `|t|^p / p` against the closed form, and the
//! convex envelope of a double well.

use std::time::Instant;

use pqlab::legendre::{conjugate_profile, conjugate_profile_with, ConjugateOptions, DualGrid, Profile};

fn main() -> pqlab::Result<()> {
    for p in [1.5, 2.0, 3.0] {
        let pp = p / (p - 1.0);
        // every |s| <= 3 has its maximizer |s|^(1/(p-1)) inside the primal range
        let radius = 3.0f64.powf(1.0 / (p - 1.0)) * 1.05;
        let t0 = Instant::now();
        let f = Profile::sample(|t| t.abs().powf(p) / p, radius, 1 << 16)?;
        let refine = ConjugateOptions { refine: true, ..Default::default() };
        let g = conjugate_profile_with(&f, DualGrid { radius: 3.0, points: 601 }, refine)?;
        let err = (0..g.len()).map(|i| (g.values()[i] - g.t(i).abs().powf(pp) / pp).abs()).fold(0.0, f64::max);
        println!("p = {p}: max |f* - |s|^p'/p'| = {err:.2e} ({:.1?})", t0.elapsed());
    }

    let well = |t: f64| t.powi(4) - t * t;
    let f = Profile::sample(well, 2.0, 4001)?;
    let g = conjugate_profile(&f, DualGrid { radius: 24.0, points: 4001 })?;
    let back = conjugate_profile(&g, DualGrid { radius: 1.5, points: 3001 })?;
    let above = (0..back.len()).map(|i| back.values()[i] - well(back.t(i))).fold(f64::NEG_INFINITY, f64::max);
    println!("double well: bipolar convex = {}, max(f** - f) = {above:.2e}", back.is_convex());
    println!("f**(0) = {:.6} (the well has f(0) = 0, envelope value -1/4)", back.interpolate(0.0).unwrap_or(f64::NAN));
    Ok(())
}

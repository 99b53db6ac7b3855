//! Randomized structural checks for a few catalog integrands.

use pqlab::integrands::{check_hypotheses, AxisTerm, IntegrandSpec};

fn main() -> pqlab::Result<()> {
    let specs = [
        IntegrandSpec::quadratic(1.0, 0.0)?,
        IntegrandSpec::radial_power(3.0, 1.0, 0.5)?,
        IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0)?,
        IntegrandSpec::separable(
            2.0,
            1.0,
            vec![AxisTerm { coeff: 1.0, exponent: 3.0 }, AxisTerm { coeff: 0.0, exponent: 2.0 }],
            0.0,
        )?,
    ];
    for spec in &specs {
        let r = check_hypotheses(spec, 5000, 42)?;
        println!(
            "{:<22} p={} q={} growth ok={} convexity flagged={} monotonicity ratio={:.3} envelope c={:.3}",
            r.kind, spec.p, spec.q, r.h1_ok, r.h2_flagged, r.h2pp_ratio_min, r.envelope_c
        );
    }
    Ok(())
}

//! Builds the ladder `F_k` for a (2,4) sum and reports how it approaches `F`.

use pqlab::approximation::{build_ladder, default_probes, ladder_report_from};
use pqlab::integrands::IntegrandSpec;

fn main() -> pqlab::Result<()> {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0)?;
    let ks = [4, 8, 16, 32];
    let levels = build_ladder(&spec, &ks)?;
    for l in &levels {
        println!(
            "k = {:>2}: m_k = {:>3}  delta_k = {}  mu_k = {}  switch radius {:.3}",
            l.k,
            l.m_k,
            l.delta_exact(),
            l.mu_exact(),
            l.r_k
        );
    }
    let probes = default_probes(1, 2, 1000, 3.0, 1);
    let rep = ladder_report_from(&spec, &levels, &probes, 2);
    println!("sup_(|xi|<=2) (F - F_k): {:?}", rep.sup_gap);
    println!("monotonicity violations: {:?}", rep.monotone_violation);
    println!("slack m_k delta_k:       {:?}", rep.slack);
    Ok(())
}

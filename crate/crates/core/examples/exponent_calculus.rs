//! Critical exponents in floating point and exact rational arithmetic.

use num_rational::BigRational;
use pqlab::regularity::{exact_exponents, exponent_report, p_bar_endpoint_limit};

fn main() -> pqlab::Result<()> {
    for (n, p, q) in [(3, 2.0, 3.0), (3, 2.0, 4.0), (3, 2.0, 2.5), (2, 2.0, 3.0)] {
        let r = exponent_report(n, p, q)?;
        println!(
            "n={n} p={p} q={q}: regime {:?}, p_bar {:?}, theta {:?}, trace length {}",
            r.regime,
            r.p_bar,
            r.theta,
            r.trace.len()
        );
    }
    let (p, q) = (BigRational::from_integer(2.into()), BigRational::new(5.into(), 2.into()));
    let ex = exact_exponents(3, &p, &q, 6)?;
    println!("exact, n=3 p=2 q=5/2: {}", serde_json::to_string_pretty(&ex).expect("serializes"));
    println!("limit of p_bar as q -> p for n=3, p=4: {}", p_bar_endpoint_limit(3, 4.0));
    Ok(())
}

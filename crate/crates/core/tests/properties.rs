use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

use pqlab::approximation::{build_level, schedule};
use pqlab::duality::solenoidal_residual;
use pqlab::grid::{
    adjoint_divergence, delta_sh, forward_gradient, local_mean_norm, local_norm, BallRegion, GradientField, GridField,
    Lattice,
};
use pqlab::integrands::{evaluate_with_derivative, v_ratio_extremes, v_slice, Integrand, IntegrandSpec, MatrixPoint};
use pqlab::legendre::{conjugate_profile, young_gap, DualGrid, Profile};
use pqlab::regularity::{exact_exponents, exact_trace_monotone, formulas, p_bar_endpoint_limit};

fn lattice(m: usize) -> Lattice {
    Lattice::unit_cube(2, m, 1).unwrap()
}

fn field(lat: &Lattice, vals: &[f64]) -> GridField {
    GridField::new(lat.clone(), vals.to_vec()).unwrap()
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gradient_is_linear(
        u in prop::collection::vec(-5.0..5.0f64, 81),
        v in prop::collection::vec(-5.0..5.0f64, 81),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let lat = lattice(9);
        let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let (du, dv, dw) = (
            forward_gradient(&field(&lat, &u)).unwrap(),
            forward_gradient(&field(&lat, &v)).unwrap(),
            forward_gradient(&field(&lat, &w)).unwrap(),
        );
        for i in 0..dw.values().len() {
            let lin = a * du.values()[i] + b * dv.values()[i];
            prop_assert!((dw.values()[i] - lin).abs() <= 1e-14 * (1.0 + lin.abs()) * 64.0);
        }
    }

    #[test]
    fn shifts_telescope(ints in prop::collection::vec(-4096i32..4096, 289), axis in 0usize..2, m in 1isize..4) {
        // dyadic values keep every difference exact
        let vals: Vec<f64> = ints.iter().map(|&k| k as f64 / 1024.0).collect();
        let lat = lattice(17);
        let w = field(&lat, &vals);
        let two = delta_sh(&w, axis, 2 * m).unwrap();
        let one = delta_sh(&w, axis, m).unwrap();
        for j in 0..two.lattice().node_count() {
            let mut mm = two.lattice().node_multi(j);
            let i0 = one.lattice().node_index(&mm);
            mm[axis] += m as usize;
            let i1 = one.lattice().node_index(&mm);
            prop_assert_eq!(two.values()[j], one.values()[i0] + one.values()[i1]);
        }
    }

    #[test]
    fn mean_norm_grows_with_r(vals in prop::collection::vec(-3.0..3.0f64, 289), r in 1.0..6.0f64, dr in 0.0..4.0f64) {
        let w = forward_gradient(&field(&lattice(17), &vals)).unwrap();
        let ball = BallRegion::new(vec![0.5, 0.5], 0.4).unwrap();
        let a = local_mean_norm(&w, &ball, r).unwrap();
        let b = local_mean_norm(&w, &ball, r + dr).unwrap();
        prop_assert!(a <= b * (1.0 + 1e-12));
        prop_assert_eq!(local_norm(&w, &ball, r).unwrap().to_bits(), local_norm(&w, &ball, r).unwrap().to_bits());
    }

    #[test]
    fn envelope_and_lipschitz_bounds(kind in 0usize..3, x in prop::collection::vec(-4.0..4.0f64, 2)) {
        let spec = match kind {
            0 => IntegrandSpec::quadratic(1.0, 0.5).unwrap(),
            1 => IntegrandSpec::radial_power(3.0, 1.0, 0.0).unwrap(),
            _ => IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap(),
        };
        let c = spec.envelope_constant();
        let t: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (f, df) = evaluate_with_derivative(&spec, &MatrixPoint::row(&x).unwrap()).unwrap();
        prop_assert!(t.powf(spec.p) / c - c <= f * (1.0 + 1e-12) + 1e-12);
        prop_assert!(f <= c * (t.powf(spec.q) + 1.0) * (1.0 + 1e-12));
        let bound = 2f64.powf(spec.q) * spec.big_l * (t.powf(spec.q - 1.0) + 1.0);
        prop_assert!(df.norm() <= bound);
    }

    #[test]
    fn v_is_odd(x in prop::collection::vec(-10.0..10.0f64, 4), p in 1.1..5.0f64, mu in 0.0..1.0f64) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let (mut a, mut b) = (vec![0.0; 4], vec![0.0; 4]);
        v_slice(&x, p, mu, &mut a);
        v_slice(&neg, p, mu, &mut b);
        for (s, t) in a.iter().zip(&b) {
            prop_assert_eq!(*s, -*t);
        }
    }

    #[test]
    fn conjugation_reverses_order(a in 0.5..2.0f64, shift in 0.0..1.0f64, bump in 0.0..0.5f64) {
        let f = Profile::sample(|t| a * t * t, 4.0, 2001).unwrap();
        let g = Profile::sample(|t| a * t * t + shift + bump * (t * 0.7).cos().powi(2), 4.0, 2001).unwrap();
        let d = DualGrid { radius: 2.0, points: 201 };
        let (fs, gs) = (conjugate_profile(&f, d).unwrap(), conjugate_profile(&g, d).unwrap());
        for (x, y) in fs.values().iter().zip(gs.values()) {
            prop_assert!(*x >= *y - 1e-12);
        }
    }

    #[test]
    fn conjugate_scaling(lambda in 0.25..4.0f64, p in 1.5..4.0f64) {
        let m = 8193;
        let f = Profile::sample(|t| t.abs().powf(p) / p, 3.0, m).unwrap();
        let lf = Profile::sample(|t| lambda * t.abs().powf(p) / p, 3.0, m).unwrap();
        let s_max = 1.0f64.min(lambda);
        let scaled = conjugate_profile(&lf, DualGrid { radius: s_max, points: 101 }).unwrap();
        let base = conjugate_profile(&f, DualGrid { radius: s_max / lambda, points: 101 }).unwrap();
        let tol = 1e-5 * (1.0 + lambda);
        for i in 0..101 {
            prop_assert!((scaled.values()[i] - lambda * base.values()[i]).abs() <= tol);
        }
    }

    #[test]
    fn young_equality_at_the_derivative(x in prop::collection::vec(-2.0..2.0f64, 2)) {
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let (_, df) = evaluate_with_derivative(&spec, &MatrixPoint::row(&x).unwrap()).unwrap();
        let gap = young_gap(&spec, &x, df.as_slice(), 2).unwrap();
        let scale = spec.value(&x, 2) + df.norm() * x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(gap.abs() <= 1e-7 * (1.0 + scale), "gap {gap}");
    }

    #[test]
    fn schedule_identities(k in 2u64..200, extra in 0u64..50) {
        let m_k = k + extra;
        let (delta, mu) = schedule(k, m_k).unwrap();
        let one = num_rational::Ratio::<i64>::one();
        prop_assert_eq!(delta * num_rational::Ratio::from_integer((m_k * k * k) as i64), one);
        prop_assert_eq!(mu * num_rational::Ratio::from_integer(k as i64 - 1), one);
    }

    #[test]
    fn exponent_algebra(n in 2u32..6, pn in 11i64..40, pd in 1i64..10) {
        let p = rat(pn, 10) + rat(pd - 1, 10 * pd);
        let n_r = BigRational::from_integer(BigInt::from(n));
        let q = n_r.clone() * p.clone() / (n_r.clone() - BigRational::one());
        let f = formulas(n, &p, &q);
        prop_assert_eq!(f.p_bar.clone(), Some(q.clone()));
        prop_assert_eq!(f.p_bar_alt, Some(q.clone()));
        // p < q < np/(n-1) forces theta into (0,1); q = p gives theta = 0
        for (num, den) in [(0i64, 1i64), (1, 4), (1, 2), (3, 4)] {
            let qq = p.clone() + (q.clone() - p.clone()) * rat(num, den);
            let th = formulas(n, &p, &qq).theta;
            let in_range = th.map(|t| t > BigRational::zero() && t < BigRational::one()).unwrap_or(false);
            prop_assert_eq!(qq > p, in_range, "q = {}", qq);
        }
    }

    #[test]
    fn trace_is_monotone(n in 2u32..5, pn in 11i64..30, frac in 1i64..9) {
        let p = rat(pn, 10);
        let n_r = BigRational::from_integer(BigInt::from(n));
        let lo = n_r.clone() * p.clone() / (n_r.clone() - BigRational::one());
        let q = lo.clone() + rat(frac, 10);
        let f = formulas(n, &p, &q);
        if let (Some(_), Some(ps)) = (f.p_bar.as_ref(), f.p_star.as_ref()) {
            prop_assume!(q < *ps);
        }
        if let Ok(ex) = exact_exponents(n, &p, &q, 8) {
            if ex.formulas.p_bar.is_some() {
                prop_assert!(exact_trace_monotone(&ex));
            }
        }
    }
}

#[test]
fn p_bar_decreases_in_q() {
    let (n, p) = (3u32, 2.0f64);
    let (lo, hi) = (3.0, 6.0);
    let mut prev = f64::INFINITY;
    for i in 1..40 {
        let q = lo + (hi - lo) * i as f64 / 40.0;
        let pb = formulas(n, &p, &q).p_bar.unwrap();
        assert!(pb < prev, "q = {q}");
        prev = pb;
    }
    // p < n: p̄ → p as q → p*; p ≥ n: p̄ → n(p-1)/(n-1) as q → ∞
    let near = formulas(3, &2.0, &(6.0 - 1e-6)).p_bar.unwrap();
    assert!((near - p_bar_endpoint_limit(3, 2.0)).abs() <= 1e-3);
    let far = formulas(2, &3.0, &1e9).p_bar.unwrap();
    assert!((far - p_bar_endpoint_limit(2, 3.0)).abs() <= 1e-3);
}

#[test]
fn v_ratio_constant_depends_only_on_p() {
    for p in [1.5, 2.0, 3.0] {
        let ratios: Vec<(f64, f64)> =
            [0.0, 0.3, 0.7, 1.0].iter().map(|&mu| v_ratio_extremes(p, mu, 1, 2, 4000, 9)).collect();
        let c = |(lo, hi): (f64, f64)| hi.max(1.0 / lo);
        let cs: Vec<f64> = ratios.iter().map(|&r| c(r)).collect();
        let (min, max) = cs.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(max <= 2.0 * min, "p = {p}: {cs:?}");
    }
}

#[test]
fn ladder_rungs_are_uniformly_convex_and_lipschitz() {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
    for k in [4, 8, 16] {
        let level = build_level(&spec, k).unwrap();
        let lp = level.p;
        let shifted =
            |x: &[f64]| level.value(x, 2) - 0.5 * level.ell * x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(lp);
        let mut worst: f64 = 0.0;
        for i in 0..400 {
            let a = [(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos() * 3.0];
            let b = [(i as f64 * 1.3).cos() * 3.0, (i as f64 * 0.23).sin() * 3.0];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let defect = shifted(&mid) - 0.5 * (shifted(&a) + shifted(&b));
            worst = worst.max(defect / (1.0 + shifted(&a).abs() + shifted(&b).abs()));
        }
        assert!(worst <= 1e-9, "k = {k}: midpoint defect {worst:e}");
        for prof in level.profiles() {
            for i in 0..2000 {
                let t = i as f64 * 0.05;
                assert!(prof.h_deriv(t).abs() <= level.m_k as f64 + 1e-9);
            }
        }
    }
}

#[test]
fn manufactured_solenoidal_fields_pair_with_boundary_data_only() {
    let lat = lattice(17);
    let cells = lat.cell_count();
    let mut vals = vec![0.0; cells * 2];
    for c in 0..cells {
        let [i, j] = lat.cell_multi(c);
        vals[2 * c] = (j as f64 * 0.7).sin() + 0.3;
        vals[2 * c + 1] = (i as f64 * 1.1).cos() - 0.2;
    }
    let sigma = GradientField::new(lat.clone(), vals).unwrap();
    assert!(solenoidal_residual(&sigma, &lat).unwrap() <= 1e-12);
    let div = adjoint_divergence(&sigma);
    for i in lat.interior_nodes() {
        assert!(div[i].abs() <= 1e-12);
    }
    let g = GridField::from_fn(lat.clone(), |x, o| o[0] = x[0] * x[0] - 0.5 * x[1]).unwrap();
    let mut u = g.clone();
    for i in lat.interior_nodes() {
        u.values_mut()[i] += (i as f64 * 0.123).sin();
    }
    let pair = |w: &GridField| -> f64 {
        let d = forward_gradient(w).unwrap();
        d.values().iter().zip(sigma.values()).map(|(a, b)| a * b).sum::<f64>() * lat.cell_volume()
    };
    let (a, b) = (pair(&u), pair(&g));
    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
}

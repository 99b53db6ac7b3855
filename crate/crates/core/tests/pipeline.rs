use std::collections::BTreeSet;
use std::path::Path;

use pqlab::approximation::build_level;
use pqlab::duality::{certificate, dual_field, extremality_gaps, DualEvaluator};
use pqlab::experiment::{refinement_sweep, report, run, ExperimentConfig, MANIFEST_FILE};
use pqlab::grid::{forward_gradient, Lattice};
use pqlab::integrands::IntegrandSpec;
use pqlab::regularity::penalty_sweep;
use pqlab::solver::{minimize, sample_datum, w1p_distance, BoundaryCatalog, SolverOptions, StartKind};

fn wave() -> BoundaryCatalog {
    BoundaryCatalog::Oscillatory { slope: vec![1.0, 0.0], amplitude: 0.1, frequency: vec![1.0, 1.0], phase: 0.0 }
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)).unwrap()
}

#[test]
fn independent_starts_agree_and_boundary_stays_pinned() {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
    let lat = Lattice::unit_cube(2, 17, 1).unwrap();
    let g = wave();
    let a = minimize(&spec, &g, &lat, &SolverOptions::default()).unwrap();
    let zero = SolverOptions { start: StartKind::Zero, ..Default::default() };
    let b = minimize(&spec, &g, &lat, &zero).unwrap();
    assert!(a.converged && b.converged);
    let d = w1p_distance(&a.u_h, &b.u_h, spec.p).unwrap();
    assert!(d <= 10.0 * a.tol_el.max(b.tol_el), "distance {d:e}");
    let exact = sample_datum(&g, &lat).unwrap();
    for i in (0..lat.node_count()).filter(|&i| lat.is_boundary_node(i)) {
        assert_eq!(a.u_h.values()[i], exact.values()[i]);
        assert_eq!(b.u_h.values()[i], exact.values()[i]);
    }
    let e = b.energies();
    assert!(e.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn certificate_gap_is_controlled_by_the_residual() {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
    let lat = Lattice::unit_cube(2, 17, 1).unwrap();
    let g = wave();
    let sol = minimize(&spec, &g, &lat, &SolverOptions::default()).unwrap();
    let ev = DualEvaluator::for_spec(&spec).unwrap();
    let cert = certificate(&ev, &sol.u_h, &g, sol.tol_el).unwrap();
    assert!(cert.weak_duality_holds());
    assert!(cert.young_holds());
    assert!(cert.qprime_bound_holds());
    assert!(cert.duality_gap.abs() <= cert.tau_cert);
}

#[test]
fn ladder_stresses_approach_extremality() {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
    let lat = Lattice::unit_cube(2, 17, 1).unwrap();
    let g = wave();
    let ev = DualEvaluator::for_spec(&spec).unwrap();
    let mut gaps = Vec::new();
    for k in [4, 8, 16] {
        let level = build_level(&spec, k).unwrap();
        let sol = minimize(&level, &g, &lat, &SolverOptions::default()).unwrap();
        let du = forward_gradient(&sol.u_h).unwrap();
        let sigma = dual_field(&level, &du).unwrap();
        let worst = extremality_gaps(&ev, &du, &sigma).unwrap().into_iter().fold(0.0, f64::max);
        gaps.push(worst);
    }
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
}

#[test]
fn penalty_share_shrinks_with_eps() {
    let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
    let lat = Lattice::unit_cube(2, 17, 1).unwrap();
    let base = sample_datum(&wave(), &lat).unwrap();
    let rows = penalty_sweep(&spec, &base, 2, &[1e-1, 1e-2, 1e-3, 1e-4], &SolverOptions::default()).unwrap();
    assert!(rows.iter().all(|r| r.converged));
    assert!(rows.windows(2).all(|w| w[1].penalty_share <= w[0].penalty_share));
}

#[test]
fn runs_are_deterministic_and_manifests_complete() {
    let cfg = config("quadratic.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = run(&cfg, Some(a.path())).unwrap();
    let mb = run(&cfg, Some(b.path())).unwrap();
    assert!(ma.ok);
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.config_hash, mb.config_hash);

    let on_disk: BTreeSet<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST_FILE)
        .collect();
    let listed: BTreeSet<String> = ma.artifacts.iter().map(|x| x.path.clone()).collect();
    assert_eq!(on_disk, listed);

    let cert: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("certificate_m65.json")).unwrap()).unwrap();
    let gap = cert["duality_gap"].as_f64().unwrap();
    let energy = cert["primal_value"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-8 * (1.0 + energy));
    assert!(report(&a.path().join(MANIFEST_FILE)).unwrap().ok);
}

#[test]
fn affine_sweep_has_flat_slopes() {
    let cfg = config("quadratic.toml");
    let dir = tempfile::tempdir().unwrap();
    let man = refinement_sweep(&cfg, Some(dir.path())).unwrap();
    assert!(man.ok);
    let mut rdr = csv::Reader::from_path(dir.path().join("scan.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * cfg.r_values(&cfg.validate().unwrap()).len());
    for r in &rows {
        let slope: f64 = r[3].parse().unwrap();
        assert!(slope.abs() <= 1e-10, "slope {slope}");
    }
}

#[test]
fn failing_stage_marks_the_manifest() {
    let mut cfg = config("pq_ladder.toml");
    cfg.tolerances.max_iter = 2;
    cfg.ladder.clear();
    let dir = tempfile::tempdir().unwrap();
    let man = run(&cfg, Some(dir.path())).unwrap();
    assert!(!man.ok);
    let solve = man.stage("solve").unwrap();
    assert_eq!(solve.status, pqlab::experiment::StageStatus::Failed);
    assert_eq!(man.stage("certificates").unwrap().status, pqlab::experiment::StageStatus::Skipped);
}

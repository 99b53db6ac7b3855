//! Config-driven runs: hypothesis checks, ladder builds, solves, certificates,
//! refinement scans and penalty sweeps, with a manifest of hashed artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approximation::build_ladder;
use crate::duality::{certificate, DualEvaluator};
use crate::error::{LabError, Result};
use crate::grid::{BallRegion, GridField, Lattice};
use crate::integrands::{check_hypotheses, IntegrandKind, IntegrandSpec};
use crate::regularity::{integrability_scan, penalty_sweep, vfield_w12_estimate, write_scan_csv, ScanRow};
use crate::solver::{
    minimize, sample_datum, solve_ladder, BoundaryCatalog, DiscreteMinimizer, LadderOptions, SolverOptions,
};

fn cfg_err(field: impl Into<String>, reason: impl Into<String>) -> LabError {
    LabError::Config { field: field.into(), reason: reason.into() }
}

/// The integrand as written in a config: structural constants are derived
/// unless `ell` is given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandConfig {
    #[serde(flatten)]
    pub kind: IntegrandKind,
    pub p: f64,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub ell: Option<f64>,
}

impl IntegrandConfig {
    pub fn build(&self) -> Result<IntegrandSpec> {
        if !(self.p > 1.0) {
            return Err(cfg_err("integrand.p", "p must exceed 1"));
        }
        let wrap = |e: LabError| match e {
            LabError::Config { .. } => e,
            other => cfg_err("integrand", other.to_string()),
        };
        let spec = match &self.kind {
            IntegrandKind::RadialPower { coeff } => IntegrandSpec::radial_power(self.p, *coeff, self.mu),
            IntegrandKind::RadialPqSum { p_coeff, q_coeff } => {
                let q = self.q.ok_or_else(|| cfg_err("integrand.q", "radial-pq-sum needs q"))?;
                IntegrandSpec::radial_pq_sum_with(self.p, q, *p_coeff, *q_coeff, self.mu)
            }
            IntegrandKind::SeparableAnisotropic { base_coeff, axis_terms } => {
                IntegrandSpec::separable(self.p, *base_coeff, axis_terms.clone(), self.mu)
            }
            IntegrandKind::Quadratic { coeff } => {
                if self.p != 2.0 {
                    return Err(cfg_err("integrand.p", "quadratic integrand needs p = 2"));
                }
                IntegrandSpec::quadratic(*coeff, self.mu)
            }
        }
        .map_err(wrap)?;
        let spec = match self.ell {
            Some(ell) => spec.declared(self.p, ell),
            None => spec,
        };
        spec.validate().map_err(wrap)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    #[serde(default)]
    pub tol_el: Option<f64>,
    #[serde(default = "default_tol_e")]
    pub tol_e: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol_e() -> f64 {
    1e-12
}

fn default_max_iter() -> usize {
    20_000
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { tol_el: None, tol_e: default_tol_e(), max_iter: default_max_iter() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySweepConfig {
    #[serde(default = "default_k_order")]
    pub k_order: usize,
    pub eps_tilde: Vec<f64>,
    /// Nodes per axis of the sweep lattice; the smallest configured size by default.
    #[serde(default)]
    pub lattice: Option<usize>,
}

fn default_k_order() -> usize {
    2
}

fn default_lower() -> Vec<f64> {
    vec![0.0, 0.0]
}

fn default_upper() -> Vec<f64> {
    vec![1.0, 1.0]
}

fn default_target_dim() -> usize {
    1
}

fn default_samples() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub integrand: IntegrandConfig,
    pub boundary: BoundaryCatalog,
    #[serde(default = "default_lower")]
    pub domain_lower: Vec<f64>,
    #[serde(default = "default_upper")]
    pub domain_upper: Vec<f64>,
    #[serde(default = "default_target_dim")]
    pub target_dim: usize,
    /// Nodes per axis, `2^m + 1`, strictly increasing.
    pub lattice_sizes: Vec<usize>,
    #[serde(default)]
    pub ladder: Vec<u64>,
    #[serde(default)]
    pub ladder_lattice: Option<usize>,
    #[serde(default)]
    pub ball: Option<BallRegion>,
    #[serde(default)]
    pub r_list: Vec<f64>,
    #[serde(default)]
    pub penalty: Option<PenaltySweepConfig>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_samples")]
    pub hypothesis_samples: usize,
}

impl ExperimentConfig {
    /// Reads TOML, falling back to JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        match toml::from_str::<ExperimentConfig>(text) {
            Ok(c) => Ok(c),
            Err(toml_err) => serde_json::from_str::<ExperimentConfig>(text).map_err(|json_err| {
                let looks_json = text.trim_start().starts_with('{');
                let reason = if looks_json { json_err.to_string() } else { toml_err.to_string() };
                cfg_err("config", reason)
            }),
        }
    }

    pub fn lattice(&self, nodes: usize) -> Result<Lattice> {
        let dim = self.domain_lower.len();
        Lattice::new(self.domain_lower.clone(), self.domain_upper.clone(), vec![nodes; dim], self.target_dim)
            .map_err(|e| cfg_err("domain", e.to_string()))
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol_el: self.tolerances.tol_el,
            tol_e: self.tolerances.tol_e,
            max_iter: self.tolerances.max_iter,
            ..Default::default()
        }
    }

    /// Effective norm exponents: the configured list, or `{2, q}`.
    pub fn r_values(&self, spec: &IntegrandSpec) -> Vec<f64> {
        if !self.r_list.is_empty() {
            return self.r_list.clone();
        }
        if spec.q == 2.0 {
            vec![2.0]
        } else {
            vec![2.0, spec.q]
        }
    }

    /// Checks every field; returns the built integrand.
    pub fn validate(&self) -> Result<IntegrandSpec> {
        let spec = self.integrand.build()?;
        let dim = self.domain_lower.len();
        if !(1..=2).contains(&dim) || self.domain_upper.len() != dim {
            return Err(cfg_err("domain", "domain_lower and domain_upper need 1 or 2 equal-length entries"));
        }
        if self.lattice_sizes.is_empty() {
            return Err(cfg_err("lattice_sizes", "at least one lattice size is required"));
        }
        for &m in &self.lattice_sizes {
            let cells = m.saturating_sub(1);
            if m < 3 || !cells.is_power_of_two() {
                return Err(cfg_err("lattice_sizes", format!("{m} is not of the form 2^m + 1 with m >= 1")));
            }
        }
        if self.lattice_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(cfg_err("lattice_sizes", "sizes must be strictly increasing"));
        }
        let lat = self.lattice(self.lattice_sizes[0])?;
        self.boundary.validate(&lat)?;
        if !self.ladder.is_empty() && (self.ladder[0] < 2 || self.ladder.windows(2).any(|w| w[0] >= w[1])) {
            return Err(cfg_err("ladder", "k list must be strictly increasing with k >= 2"));
        }
        if let Some(m) = self.ladder_lattice {
            if !self.lattice_sizes.contains(&m) {
                return Err(cfg_err("ladder_lattice", "must be one of lattice_sizes"));
            }
        }
        if let Some(b) = &self.ball {
            BallRegion::new(b.center.clone(), b.radius).map_err(|e| cfg_err("ball", e.to_string()))?;
            if b.center.len() != dim {
                return Err(cfg_err("ball.center", format!("need {dim} entries")));
            }
        }
        if self.r_list.iter().any(|r| !(*r >= 1.0)) {
            return Err(cfg_err("r_list", "norm exponents must be at least 1"));
        }
        if let Some(pen) = &self.penalty {
            if pen.k_order < 1 {
                return Err(cfg_err("penalty.k_order", "need k_order >= 1"));
            }
            if pen.eps_tilde.is_empty() || pen.eps_tilde.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
                return Err(cfg_err("penalty.eps_tilde", "need a nonempty list of finite values >= 0"));
            }
            if let Some(m) = pen.lattice {
                if !self.lattice_sizes.contains(&m) {
                    return Err(cfg_err("penalty.lattice", "must be one of lattice_sizes"));
                }
            }
        }
        if let Some(t) = self.tolerances.tol_el {
            if !(t > 0.0) {
                return Err(cfg_err("tolerances.tol_el", "must be positive"));
            }
        }
        if !(self.tolerances.tol_e >= 0.0) || self.tolerances.max_iter == 0 {
            return Err(cfg_err("tolerances", "tol_e must be >= 0 and max_iter positive"));
        }
        if self.hypothesis_samples < 100 {
            return Err(cfg_err("hypothesis_samples", "need at least 100 samples"));
        }
        Ok(spec)
    }

    /// SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    #[serde(default)]
    pub detail: Option<String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactRecord>,
    pub stages: Vec<StageRecord>,
    pub versions: BTreeMap<String, String>,
    pub ok: bool,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| cfg_err(path.display().to_string(), e.to_string()))
    }

    pub fn artifact(&self, path: &str) -> Option<&ArtifactRecord> {
        self.artifacts.iter().find(|a| a.path == path)
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Runner {
    out: PathBuf,
    artifacts: Vec<ArtifactRecord>,
    stages: Vec<StageRecord>,
    failed: bool,
}

impl Runner {
    fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out)?;
        Ok(Self { out: out.to_path_buf(), artifacts: Vec::new(), stages: Vec::new(), failed: false })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.out.join(rel), bytes)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(ArtifactRecord {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// Runs a stage unless an earlier one failed.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Runner) -> Result<T>) -> Option<T> {
        if self.failed {
            self.stages.push(StageRecord {
                name: name.into(),
                status: StageStatus::Skipped,
                detail: Some("earlier stage failed".into()),
                wall_seconds: 0.0,
            });
            return None;
        }
        let t = Instant::now();
        let result = f(self);
        let wall_seconds = t.elapsed().as_secs_f64();
        match result {
            Ok(v) => {
                self.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Ok,
                    detail: None,
                    wall_seconds,
                });
                Some(v)
            }
            Err(e) => {
                self.failed = true;
                self.stages.push(StageRecord {
                    name: name.into(),
                    status: StageStatus::Failed,
                    detail: Some(e.to_string()),
                    wall_seconds,
                });
                None
            }
        }
    }

    fn skip(&mut self, name: &str, why: &str) {
        self.stages.push(StageRecord {
            name: name.into(),
            status: StageStatus::Skipped,
            detail: Some(why.into()),
            wall_seconds: 0.0,
        });
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<RunManifest> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let mut versions = BTreeMap::new();
        versions.insert("pqlab".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let manifest = RunManifest {
            command: command.into(),
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            artifacts: self.artifacts,
            stages: self.stages,
            versions,
            ok: !self.failed,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(self.out.join(MANIFEST_FILE), bytes)?;
        Ok(manifest)
    }
}

/// Per-size solve summary written to `solves.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub nodes: usize,
    pub h: f64,
    pub energy: f64,
    pub el_residual: f64,
    pub tol_el: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn solve_all(r: &mut Runner, cfg: &ExperimentConfig, spec: &IntegrandSpec) -> Result<Vec<DiscreteMinimizer>> {
    let opts = cfg.solver_options();
    let mut sols = Vec::new();
    let mut summary = Vec::new();
    for &m in &cfg.lattice_sizes {
        let lat = cfg.lattice(m)?;
        let sol = minimize(spec, &cfg.boundary, &lat, &opts)?;
        r.write(&format!("solution_m{m}.csv"), &csv_bytes(|b| sol.u_h.write_csv(b))?)?;
        r.write(&format!("solver_m{m}.jsonl"), &csv_bytes(|b| sol.write_log(b))?)?;
        summary.push(SolveSummary {
            nodes: m,
            h: lat.spacing(0),
            energy: sol.energy,
            el_residual: sol.el_residual,
            tol_el: sol.tol_el,
            iterations: sol.iterations,
            converged: sol.converged,
        });
        sols.push(sol);
    }
    r.write_json("solves.json", &summary)?;
    if let Some(bad) = summary.iter().find(|s| !s.converged) {
        return Err(LabError::Numeric {
            stage: "solve".into(),
            reason: format!("{} nodes: residual {:e} above tolerance {:e}", bad.nodes, bad.el_residual, bad.tol_el),
        });
    }
    Ok(sols)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub r: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, Serialize)]
struct SlopeReport {
    integrability: Vec<SlopeRow>,
    vfield: Vec<crate::regularity::VFieldRow>,
}

fn scans(
    r: &mut Runner,
    cfg: &ExperimentConfig,
    spec: &IntegrandSpec,
    sols: &[DiscreteMinimizer],
    ball: &BallRegion,
) -> Result<()> {
    let rows: Vec<ScanRow> = integrability_scan(sols, ball, &cfg.r_values(spec))?;
    r.write("scan.csv", &csv_bytes(|b| write_scan_csv(&rows, b))?)?;
    let fields: Vec<GridField> = sols.iter().map(|s| s.u_h.clone()).collect();
    let vrows = vfield_w12_estimate(&fields, ball, spec.p, spec.mu)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["h", "seminorm", "growth"])?;
    for v in &vrows {
        let g = v.growth.map_or(String::new(), crate::grid::fmt_f64);
        w.write_record([crate::grid::fmt_f64(v.h), crate::grid::fmt_f64(v.seminorm), g])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    r.write("vfield.csv", &bytes)?;
    let mut slopes: Vec<SlopeRow> = Vec::new();
    for row in &rows {
        if !slopes.iter().any(|s| s.r == row.r) {
            slopes.push(SlopeRow { r: row.r, slope: row.slope });
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["r", "slope"])?;
    for s in &slopes {
        w.write_record([crate::grid::fmt_f64(s.r), crate::grid::fmt_f64(s.slope)])?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    r.write("slopes.csv", &bytes)?;
    r.write_json("slopes.json", &SlopeReport { integrability: slopes, vfield: vrows })?;
    Ok(())
}

fn resolved_out(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("pqlab-out"))
}

/// All stages: hypotheses, ladder, solves, ladder solves, certificates,
/// scans and the penalty sweep. Stage failures are recorded in the manifest
/// (`ok = false`); only configuration and I/O problems return `Err`.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunManifest> {
    let spec = cfg.validate()?;
    let out = resolved_out(cfg, out);
    let mut r = Runner::new(&out)?;
    r.write_json("config.json", &{
        let mut c = cfg.clone();
        c.output_dir = None;
        c
    })?;

    r.stage("hypotheses", |r| {
        let rep = check_hypotheses(&spec, cfg.hypothesis_samples, cfg.seed)?;
        r.write_json("hypotheses.json", &rep)
    });

    if cfg.ladder.is_empty() {
        r.skip("ladder", "no k list configured");
    } else {
        r.stage("ladder", |r| {
            let levels = build_ladder(&spec, &cfg.ladder)?;
            let summaries: Vec<_> = levels.iter().map(|l| l.summary()).collect();
            r.write_json("ladder.json", &summaries)?;
            for l in &levels {
                r.write(&format!("ladder_k{}.csv", l.k), &csv_bytes(|b| l.write_csv(b, 257))?)?;
            }
            Ok(())
        });
    }

    let sols = r.stage("solve", |r| solve_all(r, cfg, &spec));

    if cfg.ladder.is_empty() {
        r.skip("ladder-solve", "no k list configured");
    } else {
        r.stage("ladder-solve", |r| {
            let m = cfg.ladder_lattice.unwrap_or(cfg.lattice_sizes[0]);
            let lat = cfg.lattice(m)?;
            let opts = LadderOptions { solver: cfg.solver_options(), seed: cfg.seed, ..Default::default() };
            let lad = solve_ladder(&spec, &cfg.boundary, &lat, &cfg.ladder, &opts)?;
            let rows = lad.rows();
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
            r.write("ladder_solution.csv", &bytes)?;
            let summary = serde_json::json!({
                "nodes": m,
                "reference_energy": lad.reference_energy(),
                "c_emp": lad.c_emp,
                "monotonicity_violation": lad.monotonicity_violation(),
                "converged": lad.converged,
                "rungs": rows,
            });
            r.write_json("ladder_solution.json", &summary)?;
            if !lad.converged {
                return Err(LabError::Numeric {
                    stage: "ladder-solve".into(),
                    reason: "a rung did not converge".into(),
                });
            }
            Ok(())
        });
    }

    match &sols {
        Some(sols) => {
            r.stage("certificates", |r| {
                let ev = match DualEvaluator::for_spec(&spec) {
                    Ok(ev) => ev,
                    Err(LabError::Unsupported(why)) => {
                        r.write_json("certificates.json", &serde_json::json!({ "unsupported": why }))?;
                        return Ok(());
                    }
                    Err(e) => return Err(e),
                };
                for (m, sol) in cfg.lattice_sizes.iter().zip(sols) {
                    let cert = certificate(&ev, &sol.u_h, &cfg.boundary, sol.tol_el)?;
                    r.write(&format!("certificate_m{m}.json"), &csv_bytes(|b| cert.write_json(b))?)?;
                    r.write(&format!("gap_m{m}.csv"), &csv_bytes(|b| cert.write_gap_csv(b))?)?;
                }
                Ok(())
            });
        }
        None => r.skip("certificates", "no solutions"),
    }

    match (&sols, &cfg.ball) {
        (Some(sols), Some(ball)) if sols.len() >= 3 => {
            r.stage("scans", |r| scans(r, cfg, &spec, sols, ball));
        }
        _ => r.skip("scans", "needs three lattice sizes, a ball and solutions"),
    }

    match &cfg.penalty {
        Some(pen) => {
            r.stage("penalty", |r| {
                let m = pen.lattice.unwrap_or(cfg.lattice_sizes[0]);
                let lat = cfg.lattice(m)?;
                let base = sample_datum(&cfg.boundary, &lat)?;
                let rows = penalty_sweep(&spec, &base, pen.k_order, &pen.eps_tilde, &cfg.solver_options())?;
                let mut w = csv::Writer::from_writer(Vec::new());
                for row in &rows {
                    w.serialize(row)?;
                }
                let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
                r.write("penalty.csv", &bytes)
            });
        }
        None => r.skip("penalty", "no sweep configured"),
    }

    r.finish("run", cfg)
}

/// Solves at every size and runs the integrability and `V`-field scans.
pub fn refinement_sweep(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunManifest> {
    let spec = cfg.validate()?;
    let Some(ball) = cfg.ball.clone() else {
        return Err(cfg_err("ball", "ball required for sweep"));
    };
    if cfg.lattice_sizes.len() < 3 {
        return Err(cfg_err("lattice_sizes", "sweep needs at least three nested sizes"));
    }
    let out = resolved_out(cfg, out);
    let mut r = Runner::new(&out)?;
    r.write_json("config.json", &{
        let mut c = cfg.clone();
        c.output_dir = None;
        c
    })?;
    let sols = r.stage("solve", |r| solve_all(r, cfg, &spec));
    match &sols {
        Some(sols) => {
            r.stage("scans", |r| scans(r, cfg, &spec, sols, &ball));
        }
        None => r.skip("scans", "no solutions"),
    }
    r.finish("sweep", cfg)
}

/// Result of re-reading a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub ok: bool,
    pub lines: Vec<String>,
}

/// Verifies the hashes of every listed artifact and summarizes the stages.
pub fn report(manifest_path: &Path) -> Result<Report> {
    let man = RunManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut lines =
        vec![format!("{} `{}` config {}", man.command, man.name, &man.config_hash[..12.min(man.config_hash.len())])];
    let mut ok = man.ok;
    for s in &man.stages {
        let status = match s.status {
            StageStatus::Ok => "ok",
            StageStatus::Failed => "FAILED",
            StageStatus::Skipped => "skipped",
        };
        let detail = s.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default();
        lines.push(format!("stage {:<14} {status:<8} {:>8.3}s{detail}", s.name, s.wall_seconds));
    }
    let mut bad = 0;
    for a in &man.artifacts {
        match std::fs::read(dir.join(&a.path)) {
            Ok(bytes) if sha256_hex(&bytes) == a.sha256 => {}
            Ok(_) => {
                bad += 1;
                lines.push(format!("hash mismatch: {}", a.path));
            }
            Err(_) => {
                bad += 1;
                lines.push(format!("missing: {}", a.path));
            }
        }
    }
    if bad > 0 {
        ok = false;
    }
    lines.push(format!("{} artifacts, {} verified", man.artifacts.len(), man.artifacts.len() - bad));
    if let Ok(text) = std::fs::read_to_string(dir.join("solves.json")) {
        if let Ok(solves) = serde_json::from_str::<Vec<SolveSummary>>(&text) {
            for s in solves {
                lines.push(format!(
                    "solve {:>5} nodes  energy {:.12e}  residual {:.3e}  iterations {}",
                    s.nodes, s.energy, s.el_residual, s.iterations
                ));
            }
        }
    }
    Ok(Report { ok, lines })
}

/// Reads a stored solution back from a run directory.
pub fn load_solution(dir: &Path, cfg: &ExperimentConfig, nodes: usize) -> Result<GridField> {
    let lat = cfg.lattice(nodes)?;
    let file = std::fs::File::open(dir.join(format!("solution_m{nodes}.csv")))?;
    GridField::read_csv(lat, file)
}

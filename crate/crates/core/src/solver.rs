//! Discrete Dirichlet problems `min Σ_cells F(D_h v)·vol` with pinned boundary
//! nodes, solved by limited-memory quasi-Newton descent with Armijo
//! backtracking, and the ladder study `u_k → u`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approximation::{build_ladder, LevelSummary, RegularizationLevel};
use crate::error::{LabError, Result};
use crate::grid::{adjoint_divergence_into, forward_gradient_into, GridField, Lattice};
use crate::integrands::{bregman_v_constant, v_slice, Integrand, IntegrandSpec};
use crate::numeric::{compensated_sum, dot, CompensatedSum};

/// Boundary data `g`, evaluated at node coordinates.
pub trait BoundaryDatum: Sync {
    /// Writes `g(x) ∈ R^N` into `out`.
    fn eval(&self, x: &[f64], out: &mut [f64]);
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> BoundaryDatum for F {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        self(x, out)
    }
}

fn one() -> f64 {
    1.0
}

/// Boundary data that can be named in a configuration file. Scalar-valued
/// entries are copied to every component of `R^N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BoundaryCatalog {
    /// `b + A x` with `A` row-major `N × n`.
    Affine {
        #[serde(default)]
        offset: Vec<f64>,
        slope: Vec<f64>,
    },
    /// `coeff·|x - center|^exponent`.
    RadialPower {
        exponent: f64,
        #[serde(default = "one")]
        coeff: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `a·x + amplitude·sin(2π ω·x + phase)`.
    Oscillatory {
        #[serde(default)]
        slope: Vec<f64>,
        amplitude: f64,
        frequency: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
}

impl BoundaryCatalog {
    pub fn affine(offset: Vec<f64>, slope: Vec<f64>) -> Self {
        BoundaryCatalog::Affine { offset, slope }
    }

    /// The scalar datum `x_1`.
    pub fn first_coordinate(dim: usize) -> Self {
        let mut slope = vec![0.0; dim];
        slope[0] = 1.0;
        BoundaryCatalog::Affine { offset: vec![], slope }
    }

    pub fn validate(&self, lattice: &Lattice) -> Result<()> {
        let n = lattice.dim();
        let big_n = lattice.target_dim();
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            BoundaryCatalog::Affine { offset, slope } => {
                if !(offset.is_empty() || offset.len() == big_n) {
                    return Err(LabError::Config {
                        field: "boundary.offset".into(),
                        reason: format!("need {big_n} entries"),
                    });
                }
                if !(slope.len() == n || slope.len() == n * big_n) {
                    return Err(LabError::Config {
                        field: "boundary.slope".into(),
                        reason: format!("need {n} or {} entries", n * big_n),
                    });
                }
                if !finite(offset) || !finite(slope) {
                    return Err(LabError::Config { field: "boundary".into(), reason: "non-finite coefficient".into() });
                }
            }
            BoundaryCatalog::RadialPower { exponent, coeff, center } => {
                if !(center.is_empty() || center.len() == n) {
                    return Err(LabError::Config {
                        field: "boundary.center".into(),
                        reason: format!("need {n} entries"),
                    });
                }
                if !exponent.is_finite() || !coeff.is_finite() || !finite(center) {
                    return Err(LabError::Config { field: "boundary".into(), reason: "non-finite coefficient".into() });
                }
                if *exponent < 0.0 {
                    let c: Vec<f64> = if center.is_empty() { vec![0.0; n] } else { center.clone() };
                    let inside = (0..n).all(|a| lattice.lower()[a] <= c[a] && c[a] <= lattice.upper()[a]);
                    if inside {
                        return Err(LabError::Config {
                            field: "boundary.center".into(),
                            reason: "negative exponent with the center inside the domain".into(),
                        });
                    }
                }
            }
            BoundaryCatalog::Oscillatory { slope, amplitude, frequency, phase } => {
                if !(slope.is_empty() || slope.len() == n) || frequency.len() != n {
                    return Err(LabError::Config {
                        field: "boundary".into(),
                        reason: format!("slope and frequency need {n} entries"),
                    });
                }
                if !finite(slope) || !finite(frequency) || !amplitude.is_finite() || !phase.is_finite() {
                    return Err(LabError::Config { field: "boundary".into(), reason: "non-finite coefficient".into() });
                }
            }
        }
        Ok(())
    }
}

impl BoundaryDatum for BoundaryCatalog {
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BoundaryCatalog::Affine { offset, slope } => {
                let n = x.len();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = if slope.len() == n { &slope[..] } else { &slope[r * n..(r + 1) * n] };
                    *o = offset.get(r).copied().unwrap_or(0.0) + dot(row, x);
                }
            }
            BoundaryCatalog::RadialPower { exponent, coeff, center } => {
                let d2: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(a, xa)| {
                        let d = xa - center.get(a).copied().unwrap_or(0.0);
                        d * d
                    })
                    .sum();
                out.fill(coeff * d2.sqrt().powf(*exponent));
            }
            BoundaryCatalog::Oscillatory { slope, amplitude, frequency, phase } => {
                let lin = if slope.is_empty() { 0.0 } else { dot(slope, x) };
                let arg = 2.0 * std::f64::consts::PI * dot(frequency, x) + phase;
                out.fill(lin + amplitude * arg.sin());
            }
        }
    }
}

/// Samples `g` on every node; interior values are kept for callers that want
/// `g` itself as a comparison field.
pub fn sample_datum(g: &dyn BoundaryDatum, lattice: &Lattice) -> Result<GridField> {
    GridField::from_fn(lattice.clone(), |x, out| g.eval(x, out))
}

/// Start iterate of the descent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartKind {
    /// Discrete harmonic extension of the boundary data.
    #[default]
    Harmonic,
    /// Zero in the interior.
    Zero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Absolute Euler–Lagrange tolerance; `None` means `1e-8 (1 + |E|)`.
    pub tol_el: Option<f64>,
    /// Relative energy decrease per accepted step.
    pub tol_e: f64,
    pub max_iter: usize,
    /// Number of stored curvature pairs.
    pub memory: usize,
    pub start: StartKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol_el: None, tol_e: 1e-12, max_iter: 20_000, memory: 8, start: StartKind::Harmonic }
    }
}

impl SolverOptions {
    pub fn effective_tol_el(&self, energy: f64) -> f64 {
        self.tol_el.unwrap_or(1e-8 * (1.0 + energy.abs()))
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol_el {
            if !(t > 0.0 && t.is_finite()) {
                return Err(LabError::param("tol_el", "must be positive"));
            }
        }
        if !(self.tol_e >= 0.0 && self.tol_e.is_finite()) {
            return Err(LabError::param("tol_e", "must be non-negative"));
        }
        if self.max_iter == 0 {
            return Err(LabError::param("max_iter", "must be positive"));
        }
        Ok(())
    }
}

/// One accepted step, written as a JSON line by [`DiscreteMinimizer::write_log`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: f64,
    pub residual: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteMinimizer {
    pub u_h: GridField,
    pub energy: f64,
    /// `(Σ_interior |D_h^* F'(D_h u)|² vol)^{1/2}`.
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The Euler–Lagrange tolerance in force at termination.
    pub tol_el: f64,
    /// Energy and residual after every accepted step; entry 0 is the start.
    pub history: Vec<IterationRecord>,
}

impl DiscreteMinimizer {
    pub fn energies(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.energy).collect()
    }

    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in &self.history {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A smooth objective over node values, some of which are frozen.
pub(crate) trait Objective: Sync {
    fn free(&self) -> &[bool];
    fn term_count(&self) -> usize;
    /// Weight turning the raw gradient into the residual norm:
    /// `residual = |grad| / sqrt(weight)`.
    fn residual_weight(&self) -> f64;
    /// Per-term energies and, when requested, the gradient (zero on frozen entries).
    fn eval(&self, x: &[f64], terms: &mut [f64], grad: Option<&mut [f64]>) -> Result<()>;
}

/// `Σ_c F(D_h u)_c vol` with all boundary nodes frozen.
pub(crate) struct DirichletObjective<'a> {
    pub lattice: &'a Lattice,
    pub integrand: &'a dyn Integrand,
    pub free: Vec<bool>,
}

impl<'a> DirichletObjective<'a> {
    pub fn new(lattice: &'a Lattice, integrand: &'a dyn Integrand) -> Self {
        let big_n = lattice.target_dim();
        let free = (0..lattice.node_count() * big_n).map(|i| !lattice.is_boundary_node(i / big_n)).collect();
        Self { lattice, integrand, free }
    }
}

/// Per-cell `F(ξ_c)·vol` and optionally `F'(ξ_c)` from cell gradients `du`.
pub(crate) fn cell_terms(
    integrand: &dyn Integrand,
    lattice: &Lattice,
    du: &[f64],
    terms: &mut [f64],
    sigma: Option<&mut [f64]>,
) -> Result<()> {
    let cols = lattice.dim();
    let block = cols * lattice.target_dim();
    let vol = lattice.cell_volume();
    match sigma {
        Some(sigma) => terms
            .par_iter_mut()
            .zip(sigma.par_chunks_mut(block))
            .zip(du.par_chunks(block))
            .for_each(|((t, s), xi)| *t = integrand.value_grad(xi, cols, s) * vol),
        None => terms.par_iter_mut().zip(du.par_chunks(block)).for_each(|(t, xi)| *t = integrand.value(xi, cols) * vol),
    }
    if let Some(c) = terms.iter().position(|t| !t.is_finite()) {
        return Err(LabError::NonFinite { what: "cell energy", index: c });
    }
    Ok(())
}

impl Objective for DirichletObjective<'_> {
    fn free(&self) -> &[bool] {
        &self.free
    }

    fn term_count(&self) -> usize {
        self.lattice.cell_count()
    }

    fn residual_weight(&self) -> f64 {
        self.lattice.cell_volume()
    }

    fn eval(&self, x: &[f64], terms: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        let lat = self.lattice;
        let block = lat.dim() * lat.target_dim();
        let mut du = vec![0.0; lat.cell_count() * block];
        forward_gradient_into(lat, x, &mut du);
        match grad {
            None => cell_terms(self.integrand, lat, &du, terms, None),
            Some(g) => {
                let mut sigma = vec![0.0; du.len()];
                cell_terms(self.integrand, lat, &du, terms, Some(&mut sigma))?;
                adjoint_divergence_into(lat, &sigma, g);
                let vol = lat.cell_volume();
                for (gi, &f) in g.iter_mut().zip(&self.free) {
                    *gi = if f { *gi * vol } else { 0.0 };
                }
                Ok(())
            }
        }
    }
}

pub(crate) struct DescentOutcome {
    pub x: Vec<f64>,
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tol_el: f64,
    pub history: Vec<IterationRecord>,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// L-BFGS two-loop direction `-H g`; `None` when the memory is empty.
fn lbfgs_direction(g: &[f64], pairs: &[(Vec<f64>, Vec<f64>, f64)]) -> Option<Vec<f64>> {
    let (s_last, y_last, _) = pairs.last()?;
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[i] = rho * dot(s, &q);
        for (qj, yj) in q.iter_mut().zip(y) {
            *qj -= alpha[i] * yj;
        }
    }
    let gamma = dot(s_last, y_last) / dot(y_last, y_last);
    for qj in q.iter_mut() {
        *qj *= gamma;
    }
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qj, sj) in q.iter_mut().zip(s) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    for qj in q.iter_mut() {
        *qj = -*qj;
    }
    Some(q)
}

/// `E(x_new) - E(x)`. Direct term differences are used while they stand well
/// above the rounding level of the terms; below it the trapezoid identity
/// `½⟨g + g_new, x_new - x⟩`, exact for quadratics, resolves the decrement.
fn energy_decrement(terms: &[f64], terms_new: &[f64], g: &[f64], g_new: &[f64], x: &[f64], x_new: &[f64]) -> f64 {
    let direct = compensated_sum(terms_new.iter().zip(terms).map(|(a, b)| a - b));
    let noise = 8.0 * f64::EPSILON * terms.iter().map(|t| t.abs()).sum::<f64>();
    if direct.abs() >= 100.0 * noise {
        return direct;
    }
    0.5 * compensated_sum((0..x.len()).map(|i| (g[i] + g_new[i]) * (x_new[i] - x[i])))
}

/// Quasi-Newton descent with monotone Armijo backtracking. The reported
/// energy is the start energy plus the accepted decrements, so the trace is
/// nonincreasing by construction.
pub(crate) fn descend(obj: &dyn Objective, x0: Vec<f64>, opts: &SolverOptions) -> Result<DescentOutcome> {
    opts.validate()?;
    let free = obj.free().to_vec();
    let sqrt_w = obj.residual_weight().sqrt();
    let n_terms = obj.term_count();
    let mut x = x0;
    let mut terms = vec![0.0; n_terms];
    let mut g = vec![0.0; x.len()];
    obj.eval(&x, &mut terms, Some(&mut g))?;
    let mut energy = compensated_sum(terms.iter().copied());
    let mut residual = dot(&g, &g).sqrt() / sqrt_w;
    let mut history = vec![IterationRecord { iteration: 0, energy, residual, step: 0.0 }];
    let mut pairs: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    let mut last_decrease = 0.0;
    let mut converged = false;
    let mut iterations = 0;

    let mut x_new = vec![0.0; x.len()];
    let mut terms_new = vec![0.0; n_terms];
    let mut g_new = vec![0.0; x.len()];

    while iterations < opts.max_iter {
        let tol = opts.effective_tol_el(energy);
        if residual <= tol && last_decrease <= opts.tol_e {
            converged = true;
            break;
        }
        let mut accepted = None;
        for use_memory in [true, false] {
            if !use_memory && pairs.is_empty() {
                continue;
            }
            let mut d = if use_memory { lbfgs_direction(&g, &pairs) } else { None }.unwrap_or_else(|| {
                // Steepest descent, first step capped to unit length.
                let gn = dot(&g, &g).sqrt();
                let scale = if gn > 1.0 { 1.0 / gn } else { 1.0 };
                g.iter().map(|v| -v * scale).collect()
            });
            let mut gd = dot(&g, &d);
            if !(gd < 0.0) {
                if use_memory && !pairs.is_empty() {
                    continue;
                }
                d = g.iter().map(|v| -v).collect();
                gd = dot(&g, &d);
                if !(gd < 0.0) {
                    break;
                }
            }
            let mut alpha = 1.0;
            for _ in 0..MAX_HALVINGS {
                for i in 0..x.len() {
                    x_new[i] = if free[i] { x[i] + alpha * d[i] } else { x[i] };
                }
                if obj.eval(&x_new, &mut terms_new, Some(&mut g_new)).is_ok() {
                    let de = energy_decrement(&terms, &terms_new, &g, &g_new, &x, &x_new);
                    if de <= ARMIJO * alpha * gd && de <= 0.0 {
                        accepted = Some((alpha, de, energy + de));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            pairs.clear();
        }
        let Some((alpha, de, e_new)) = accepted else {
            // No representable decrease left: stationary up to rounding.
            converged = residual <= tol;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory.max(1) {
                pairs.remove(0);
            }
            pairs.push((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut terms, &mut terms_new);
        std::mem::swap(&mut g, &mut g_new);
        last_decrease = -de / (1.0 + e_new.abs());
        energy = e_new;
        residual = dot(&g, &g).sqrt() / sqrt_w;
        history.push(IterationRecord { iteration: iterations, energy, residual, step: alpha });
    }
    if !converged && iterations >= opts.max_iter {
        let tol = opts.effective_tol_el(energy);
        converged = residual <= tol && last_decrease <= opts.tol_e;
    }
    let tol_el = opts.effective_tol_el(energy);
    Ok(DescentOutcome { x, energy, residual, iterations, converged, tol_el, history })
}

/// `Σ_c F((D_h u)_c)·vol`, summed in cell order with compensation.
pub fn energy(evaluator: &dyn Integrand, u: &GridField) -> Result<f64> {
    let lat = u.lattice();
    if let Some(i) = u.values().iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite { what: "node field", index: i / lat.target_dim() });
    }
    let mut du = vec![0.0; lat.cell_count() * lat.dim() * lat.target_dim()];
    forward_gradient_into(lat, u.values(), &mut du);
    let mut terms = vec![0.0; lat.cell_count()];
    cell_terms(evaluator, lat, &du, &mut terms, None)?;
    Ok(compensated_sum(terms.iter().copied()))
}

/// Discrete harmonic extension: interior values solving `D_h^* D_h u = 0`
/// with the boundary nodes of `field` kept, by conjugate gradients.
pub fn harmonic_extension(field: &GridField) -> Result<GridField> {
    let lat = field.lattice().clone();
    let big_n = lat.target_dim();
    let free: Vec<bool> = (0..lat.node_count() * big_n).map(|i| !lat.is_boundary_node(i / big_n)).collect();
    let mut du = vec![0.0; lat.cell_count() * lat.dim() * big_n];
    let apply = |v: &[f64], out: &mut [f64], du: &mut [f64]| {
        forward_gradient_into(&lat, v, du);
        adjoint_divergence_into(&lat, du, out);
        for (o, &f) in out.iter_mut().zip(&free) {
            if !f {
                *o = 0.0;
            }
        }
    };
    let mut x: Vec<f64> = field.values().iter().zip(&free).map(|(v, &f)| if f { 0.0 } else { *v }).collect();
    let len = x.len();
    let mut r = vec![0.0; len];
    apply(&x, &mut r, &mut du);
    for v in r.iter_mut() {
        *v = -*v;
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; len];
    let mut p_full = vec![0.0; len];
    let mut rr = dot(&r, &r);
    let r0 = rr.sqrt();
    let max_iter = 10 * len + 10;
    for _ in 0..max_iter {
        if rr.sqrt() <= 1e-14 * r0 || rr == 0.0 {
            break;
        }
        // Frozen entries of p are zero, so A acts on the free block only.
        p_full.copy_from_slice(&p);
        apply(&p_full, &mut ap, &mut du);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let a = rr / pap;
        for i in 0..len {
            x[i] += a * p[i];
            r[i] -= a * ap[i];
        }
        let rr_new = dot(&r, &r);
        let b = rr_new / rr;
        rr = rr_new;
        for i in 0..len {
            p[i] = r[i] + b * p[i];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric { stage: "harmonic extension".into(), reason: "non-finite iterate".into() });
    }
    GridField::new(lat, x)
}

/// Start field for the given boundary data and start rule.
pub fn start_field(g: &dyn BoundaryDatum, lattice: &Lattice, start: StartKind) -> Result<GridField> {
    let sampled = sample_datum(g, lattice)?;
    let big_n = lattice.target_dim();
    let pinned: Vec<f64> = sampled
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| if lattice.is_boundary_node(i / big_n) { *v } else { 0.0 })
        .collect();
    let pinned = GridField::new(lattice.clone(), pinned)?;
    match start {
        StartKind::Zero => Ok(pinned),
        StartKind::Harmonic => harmonic_extension(&pinned),
    }
}

/// Minimizes `Σ_c F(D_h v)·vol` over node fields equal to `g` on the boundary.
pub fn minimize(
    evaluator: &dyn Integrand,
    g: &dyn BoundaryDatum,
    lattice: &Lattice,
    opts: &SolverOptions,
) -> Result<DiscreteMinimizer> {
    let start = start_field(g, lattice, opts.start)?;
    minimize_from(evaluator, start, opts)
}

/// Minimizes starting from `start`, whose boundary nodes stay fixed.
pub fn minimize_from(evaluator: &dyn Integrand, start: GridField, opts: &SolverOptions) -> Result<DiscreteMinimizer> {
    let lattice = start.lattice().clone();
    let obj = DirichletObjective::new(&lattice, evaluator);
    let out = descend(&obj, start.into_values(), opts)?;
    Ok(DiscreteMinimizer {
        u_h: GridField::new(lattice, out.x)?,
        energy: out.energy,
        el_residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
        tol_el: out.tol_el,
        history: out.history,
    })
}

/// Euler–Lagrange residual of an arbitrary field.
pub fn el_residual(evaluator: &dyn Integrand, u: &GridField) -> Result<f64> {
    let lat = u.lattice();
    let obj = DirichletObjective::new(lat, evaluator);
    let mut terms = vec![0.0; lat.cell_count()];
    let mut g = vec![0.0; u.values().len()];
    obj.eval(u.values(), &mut terms, Some(&mut g))?;
    Ok(dot(&g, &g).sqrt() / lat.cell_volume().sqrt())
}

fn same_lattice(a: &GridField, b: &GridField) -> Result<()> {
    if a.lattice() != b.lattice() {
        return Err(LabError::ShapeMismatch("fields live on different lattices".into()));
    }
    Ok(())
}

fn cell_gradients(u: &GridField) -> Vec<f64> {
    let lat = u.lattice();
    let mut du = vec![0.0; lat.cell_count() * lat.dim() * lat.target_dim()];
    forward_gradient_into(lat, u.values(), &mut du);
    du
}

/// `(Σ_c |D_h a - D_h b|^p vol + Σ_x |a - b|^p vol)^{1/p}`.
pub fn w1p_distance(a: &GridField, b: &GridField, p: f64) -> Result<f64> {
    same_lattice(a, b)?;
    let lat = a.lattice();
    let vol = lat.cell_volume();
    let block = lat.dim() * lat.target_dim();
    let (da, db) = (cell_gradients(a), cell_gradients(b));
    let mut acc = CompensatedSum::new();
    for (x, y) in da.chunks_exact(block).zip(db.chunks_exact(block)) {
        let d: f64 = x.iter().zip(y).map(|(s, t)| (s - t) * (s - t)).sum();
        acc.add(d.sqrt().powf(p) * vol);
    }
    let big_n = lat.target_dim();
    for (x, y) in a.values().chunks_exact(big_n).zip(b.values().chunks_exact(big_n)) {
        let d: f64 = x.iter().zip(y).map(|(s, t)| (s - t) * (s - t)).sum();
        acc.add(d.sqrt().powf(p) * vol);
    }
    Ok(acc.value().max(0.0).powf(1.0 / p))
}

/// `(Σ_c |D_h a - D_h b|² vol)^{1/2}`.
pub fn gradient_l2_distance(a: &GridField, b: &GridField) -> Result<f64> {
    same_lattice(a, b)?;
    let vol = a.lattice().cell_volume();
    let (da, db) = (cell_gradients(a), cell_gradients(b));
    Ok(compensated_sum(da.iter().zip(&db).map(|(s, t)| (s - t) * (s - t) * vol)).sqrt())
}

/// `Σ_c |V_{p,0}(D_h a) - V_{p,0}(D_h b)|² vol`.
pub fn v_distance(a: &GridField, b: &GridField, p: f64) -> Result<f64> {
    same_lattice(a, b)?;
    let lat = a.lattice();
    let vol = lat.cell_volume();
    let block = lat.dim() * lat.target_dim();
    let (da, db) = (cell_gradients(a), cell_gradients(b));
    let (mut va, mut vb) = (vec![0.0; block], vec![0.0; block]);
    let mut acc = CompensatedSum::new();
    for (x, y) in da.chunks_exact(block).zip(db.chunks_exact(block)) {
        v_slice(x, p, 0.0, &mut va);
        v_slice(y, p, 0.0, &mut vb);
        acc.add(va.iter().zip(&vb).map(|(s, t)| (s - t) * (s - t)).sum::<f64>() * vol);
    }
    Ok(acc.value())
}

/// `Σ_c ⟨F'(D_h u), D_h(v - u)⟩ vol`, which vanishes when `u` is stationary.
fn linear_term(evaluator: &dyn Integrand, u: &GridField, v: &GridField) -> Result<f64> {
    let lat = u.lattice();
    let cols = lat.dim();
    let block = cols * lat.target_dim();
    let vol = lat.cell_volume();
    let (du, dv) = (cell_gradients(u), cell_gradients(v));
    let mut grad = vec![0.0; block];
    let mut acc = CompensatedSum::new();
    for (x, y) in du.chunks_exact(block).zip(dv.chunks_exact(block)) {
        evaluator.value_grad(x, cols, &mut grad);
        acc.add(grad.iter().zip(y.iter().zip(x)).map(|(g, (b, a))| g * (b - a)).sum::<f64>() * vol);
    }
    let out = acc.value();
    if !out.is_finite() {
        return Err(LabError::Numeric { stage: "linear term".into(), reason: "non-finite".into() });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LadderOptions {
    pub solver: SolverOptions,
    /// Pairs sampled for the Bregman/`V` constant.
    pub bregman_samples: usize,
    pub seed: u64,
}

impl Default for LadderOptions {
    fn default() -> Self {
        Self { solver: SolverOptions::default(), bregman_samples: 20_000, seed: 7 }
    }
}

/// One solved rung.
#[derive(Debug, Clone)]
pub struct LadderRung {
    pub k: u64,
    pub level: LevelSummary,
    pub minimizer: DiscreteMinimizer,
    /// `∫F_k(Du_k)`.
    pub energy: f64,
    /// `∫F_k(Du_ref)`.
    pub energy_at_reference: f64,
    /// `∫|V(Du_ref) - V(Du_k)|²`.
    pub v_distance: f64,
    pub w1p_distance: f64,
    pub gradient_l2_distance: f64,
    /// `∫⟨F_k'(Du_k), D(u_ref - u_k)⟩`, zero up to the solver tolerance.
    pub linear_term: f64,
}

impl LadderRung {
    /// `∫(F_k(Du_ref) - F_k(Du_k))`.
    pub fn energy_gap(&self) -> f64 {
        self.energy_at_reference - self.energy
    }
}

#[derive(Debug, Clone)]
pub struct LadderSolution {
    pub reference: DiscreteMinimizer,
    pub rungs: Vec<LadderRung>,
    /// `(ℓ/2)·min Bregman_{|·|^p} / |ΔV|²` over sampled pairs.
    pub c_emp: f64,
    pub p: f64,
    /// False when any member, reference included, failed to converge.
    pub converged: bool,
}

/// Per-rung diagnostics of a ladder run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub k: u64,
    pub energy: f64,
    pub energy_at_reference: f64,
    pub v_distance: f64,
    pub w1p_distance: f64,
    pub gradient_l2_distance: f64,
    pub linear_term: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `c_emp·v_distance ≤ gap + |linear_term|`.
    pub surrogate_ok: bool,
}

impl LadderSolution {
    pub fn reference_energy(&self) -> f64 {
        self.reference.energy
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rungs.iter().map(|r| r.energy).collect()
    }

    /// Largest violation of `E_k ≤ E_{k'}` for consecutive rungs and of
    /// `E_k ≤ E_ref`; zero when the chain is monotone.
    pub fn monotonicity_violation(&self) -> f64 {
        let mut e = self.energies();
        e.push(self.reference.energy);
        e.windows(2).map(|w| (w[0] - w[1]).max(0.0)).fold(0.0, f64::max)
    }

    pub fn surrogate_ok(&self, rung: &LadderRung) -> bool {
        self.c_emp * rung.v_distance <= rung.energy_gap() + rung.linear_term.abs() + 1e-14
    }

    pub fn rows(&self) -> Vec<LadderRow> {
        self.rungs
            .iter()
            .map(|r| LadderRow {
                k: r.k,
                energy: r.energy,
                energy_at_reference: r.energy_at_reference,
                v_distance: r.v_distance,
                w1p_distance: r.w1p_distance,
                gradient_l2_distance: r.gradient_l2_distance,
                linear_term: r.linear_term,
                el_residual: r.minimizer.el_residual,
                iterations: r.minimizer.iterations,
                converged: r.minimizer.converged,
                surrogate_ok: self.surrogate_ok(r),
            })
            .collect()
    }
}

fn solve_rung(
    level: &RegularizationLevel,
    reference: &DiscreteMinimizer,
    p: f64,
    opts: &SolverOptions,
) -> Result<LadderRung> {
    // Warm start from the reference: same boundary values, nearby minimizer.
    let min = minimize_from(level, reference.u_h.clone(), opts)?;
    let energy_at_reference = energy(level, &reference.u_h)?;
    Ok(LadderRung {
        k: level.k,
        level: level.summary(),
        energy: min.energy,
        energy_at_reference,
        v_distance: v_distance(&reference.u_h, &min.u_h, p)?,
        w1p_distance: w1p_distance(&reference.u_h, &min.u_h, p)?,
        gradient_l2_distance: gradient_l2_distance(&reference.u_h, &min.u_h)?,
        linear_term: linear_term(level, &min.u_h, &reference.u_h)?,
        minimizer: min,
    })
}

/// Solves the raw problem and every rung `F_k` on the same lattice.
pub fn solve_ladder(
    spec: &IntegrandSpec,
    g: &dyn BoundaryDatum,
    lattice: &Lattice,
    k_list: &[u64],
    opts: &LadderOptions,
) -> Result<LadderSolution> {
    spec.validate()?;
    let levels = build_ladder(spec, k_list)?;
    let reference = minimize(spec, g, lattice, &opts.solver)?;
    let rungs =
        levels.par_iter().map(|lvl| solve_rung(lvl, &reference, spec.p, &opts.solver)).collect::<Result<Vec<_>>>()?;
    let c_emp = spec.ell / 2.0
        * bregman_v_constant(spec.p, lattice.target_dim(), lattice.dim(), opts.bregman_samples, opts.seed);
    let converged = reference.converged && rungs.iter().all(|r| r.minimizer.converged);
    Ok(LadderSolution { reference, rungs, c_emp, p: spec.p, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x1() -> BoundaryCatalog {
        BoundaryCatalog::first_coordinate(2)
    }

    #[test]
    fn energy_of_affine_field() {
        let lat = Lattice::unit_cube(2, 9, 1).unwrap();
        let u = sample_datum(&x1(), &lat).unwrap();
        let q = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        assert!((energy(&q, &u).unwrap() - 1.0).abs() <= 1e-14);
        let spec = IntegrandSpec::radial_power(3.0, 1.0, 0.5).unwrap();
        let zero = GridField::zeros(lat.clone());
        assert!((energy(&spec, &zero).unwrap() - 0.5f64.powi(3)).abs() <= 1e-15);
    }

    #[test]
    fn energy_matches_resummation() {
        let lat = Lattice::unit_cube(2, 11, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..lat.node_count() * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = GridField::new(lat.clone(), vals).unwrap();
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let e = energy(&spec, &u).unwrap();
        let grad = crate::grid::forward_gradient(&u).unwrap();
        let mut brute = 0.0f64;
        for c in grad.cells() {
            let t2: f64 = c.iter().map(|v| v * v).sum();
            brute += (t2 + t2 * t2) * lat.cell_volume();
        }
        assert!((e - brute).abs() <= 1e-14 * (1.0 + brute.abs()) * 10.0);
    }

    #[test]
    fn non_finite_energy_reports_cell() {
        let lat = Lattice::unit_cube(2, 5, 1).unwrap();
        let mut u = GridField::zeros(lat.clone());
        u.values_mut()[6] = 1e200;
        let spec = IntegrandSpec::radial_power(4.0, 1.0, 0.0).unwrap();
        match energy(&spec, &u) {
            Err(LabError::NonFinite { index, .. }) => assert!(index < lat.cell_count()),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn affine_data_is_exact_for_quadratic() {
        let lat = Lattice::unit_cube(2, 17, 1).unwrap();
        let q = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        for start in [StartKind::Harmonic, StartKind::Zero] {
            let opts = SolverOptions { start, tol_el: Some(1e-11), ..Default::default() };
            let m = minimize(&q, &x1(), &lat, &opts).unwrap();
            assert!(m.converged);
            assert!(m.el_residual <= 1e-10, "{}", m.el_residual);
            for i in 0..lat.node_count() {
                assert!((m.u_h.values()[i] - lat.node_coords(i)[0]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn energy_trace_is_nonincreasing_and_boundary_pinned() {
        let lat = Lattice::unit_cube(2, 13, 1).unwrap();
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let g = BoundaryCatalog::Oscillatory {
            slope: vec![1.0, 0.0],
            amplitude: 0.3,
            frequency: vec![1.0, 1.0],
            phase: 0.0,
        };
        let opts = SolverOptions { start: StartKind::Zero, ..Default::default() };
        let m = minimize(&spec, &g, &lat, &opts).unwrap();
        assert!(m.converged);
        let e = m.energies();
        assert!(e.windows(2).all(|w| w[1] <= w[0]));
        let s = sample_datum(&g, &lat).unwrap();
        for i in 0..lat.node_count() {
            if lat.is_boundary_node(i) {
                assert_eq!(m.u_h.values()[i], s.values()[i]);
            }
        }
        assert!((el_residual(&spec, &m.u_h).unwrap() - m.el_residual).abs() <= 1e-12);
    }

    #[test]
    fn iteration_cap_is_reported() {
        let lat = Lattice::unit_cube(2, 13, 1).unwrap();
        let spec = IntegrandSpec::radial_power(4.0, 1.0, 0.0).unwrap();
        let opts = SolverOptions { max_iter: 2, start: StartKind::Zero, ..Default::default() };
        let m = minimize(&spec, &x1(), &lat, &opts).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 2);
    }

    #[test]
    fn harmonic_extension_of_affine_data() {
        let lat = Lattice::unit_cube(2, 9, 2).unwrap();
        let g = BoundaryCatalog::affine(vec![0.5, -1.0], vec![1.0, 2.0, -3.0, 0.25]);
        let h = start_field(&g, &lat, StartKind::Harmonic).unwrap();
        let s = sample_datum(&g, &lat).unwrap();
        for (a, b) in h.values().iter().zip(s.values()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_is_json_lines() {
        let lat = Lattice::unit_cube(2, 9, 1).unwrap();
        let spec = IntegrandSpec::radial_power(3.0, 1.0, 0.0).unwrap();
        let m = minimize(&spec, &x1(), &lat, &SolverOptions::default()).unwrap();
        let mut buf = Vec::new();
        m.write_log(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), m.history.len());
        let rec: IterationRecord = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(rec.iteration, 0);
    }

    #[test]
    fn boundary_catalog_round_trip() {
        let g = BoundaryCatalog::RadialPower { exponent: 2.0 / 3.0, coeff: 1.0, center: vec![] };
        let s = serde_json::to_string(&g).unwrap();
        assert!(s.contains("radial-power"));
        let back: BoundaryCatalog = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        let mut out = [0.0];
        back.eval(&[3.0, 4.0], &mut out);
        assert!((out[0] - 5f64.powf(2.0 / 3.0)).abs() < 1e-14);
    }
}

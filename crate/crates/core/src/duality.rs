//! Dual certificates for solved problems: the stress `σ = F'(D_h u)`, its
//! discrete divergence, cellwise extremality gaps `F*(σ) + F(ξ) - ⟨σ, ξ⟩`,
//! the dual objective and the `L^{q'}` bound on `σ`.

use std::io::Write;

use serde::Serialize;

use crate::approximation::RegularizationLevel;
use crate::error::{LabError, Result};
use crate::grid::{adjoint_divergence, forward_gradient, local_norm, BallRegion, GradientField, GridField, Lattice};
use crate::integrands::{Integrand, IntegrandSpec};
use crate::legendre::{column_norm, polar, ConjugateEvaluator, Lift, PolarSpec};
use crate::numeric::{compensated_sum, norm, CompensatedSum};
use crate::solver::{start_field, BoundaryDatum, StartKind};

/// A primal integrand paired with its polar.
pub enum DualEvaluator<'a> {
    Spec {
        spec: &'a IntegrandSpec,
        polar: PolarSpec,
    },
    /// A ladder rung; the growth constants are those of the spec it
    /// approximates, valid because `F_k ≤ F` gives `F_k* ≥ F*`.
    Level {
        level: &'a RegularizationLevel,
        polar: PolarSpec,
    },
}

impl<'a> DualEvaluator<'a> {
    pub fn for_spec(spec: &'a IntegrandSpec) -> Result<Self> {
        Ok(DualEvaluator::Spec { spec, polar: polar(spec)? })
    }

    pub fn for_level(level: &'a RegularizationLevel, spec: &IntegrandSpec) -> Result<Self> {
        Ok(DualEvaluator::Level { level, polar: polar(spec)? })
    }

    pub fn primal(&self) -> &dyn Integrand {
        match self {
            DualEvaluator::Spec { spec, .. } => *spec,
            DualEvaluator::Level { level, .. } => *level,
        }
    }

    /// Growth data of the polar shared by both variants.
    pub fn polar(&self) -> &PolarSpec {
        match self {
            DualEvaluator::Spec { polar, .. } | DualEvaluator::Level { polar, .. } => polar,
        }
    }

    /// `F*(ζ)` for a flat `N × cols` matrix.
    pub fn conjugate(&self, zeta: &[f64], cols: usize) -> Result<f64> {
        match self {
            DualEvaluator::Spec { polar, .. } => polar.value(zeta, cols),
            DualEvaluator::Level { level, .. } => {
                if let Some(i) = zeta.iter().position(|v| !v.is_finite()) {
                    return Err(LabError::NonFinite { what: "dual matrix", index: i });
                }
                match level.lift() {
                    Lift::Radial(f) => ConjugateEvaluator::new(f).value(norm(zeta)),
                    Lift::Separable(fs) => {
                        let mut total = 0.0;
                        for (j, f) in fs.iter().enumerate() {
                            total += ConjugateEvaluator::new(f).value(column_norm(zeta, cols, j))?;
                        }
                        Ok(total)
                    }
                }
            }
        }
    }
}

/// Cellwise `σ = F'(D_h u)`.
pub fn dual_field(evaluator: &dyn Integrand, du: &GradientField) -> Result<GradientField> {
    let cols = du.lattice().dim();
    let mut out = vec![0.0; du.values().len()];
    for (c, (xi, s)) in du.cells().zip(out.chunks_exact_mut(du.block())).enumerate() {
        evaluator.value_grad(xi, cols, s);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "dual field", index: c });
        }
    }
    GradientField::new(du.lattice().clone(), out)
}

/// `(Σ_interior |D_h^* σ|² vol)^{1/2}`: the dual norm of `φ ↦ Σ_c ⟨σ, D_h φ⟩ vol`
/// over fields vanishing on the boundary.
pub fn solenoidal_residual(sigma: &GradientField, lattice: &Lattice) -> Result<f64> {
    if sigma.lattice() != lattice {
        return Err(LabError::ShapeMismatch("stress field lives on another lattice".into()));
    }
    let div = adjoint_divergence(sigma);
    let big_n = lattice.target_dim();
    let vol = lattice.cell_volume();
    let sum = compensated_sum(
        lattice
            .interior_nodes()
            .into_iter()
            .flat_map(|i| div[i * big_n..(i + 1) * big_n].iter().map(move |v| v * v * vol)),
    );
    Ok(sum.sqrt())
}

/// Tolerance of a single conjugate evaluation at a cell of size `scale`.
pub fn conjugate_tolerance(scale: f64) -> f64 {
    1e-12 * (1.0 + scale)
}

/// `F*(σ_c) + F(ξ_c) - ⟨σ_c, ξ_c⟩` on every cell.
pub fn extremality_gaps(evaluator: &DualEvaluator, du: &GradientField, sigma: &GradientField) -> Result<Vec<f64>> {
    if du.lattice() != sigma.lattice() {
        return Err(LabError::ShapeMismatch("gradient and stress on different lattices".into()));
    }
    let cols = du.lattice().dim();
    let primal = evaluator.primal();
    du.cells()
        .zip(sigma.cells())
        .map(|(xi, s)| {
            let pair: f64 = xi.iter().zip(s).map(|(a, b)| a * b).sum();
            Ok(evaluator.conjugate(s, cols)? + primal.value(xi, cols) - pair)
        })
        .collect()
}

/// Primal/dual bookkeeping of a discrete solution.
#[derive(Debug, Clone, Serialize)]
pub struct DualCertificate {
    #[serde(skip)]
    pub sigma: GradientField,
    #[serde(skip)]
    pub extremality_gap: Vec<f64>,
    pub solenoidal_residual: f64,
    pub extremality_gap_max: f64,
    pub extremality_gap_mean: f64,
    /// Most negative gap; Young's inequality keeps it above `-τ_conj`.
    pub extremality_gap_min: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub duality_gap: f64,
    /// `(Σ |σ|^{q'} vol)^{1/q'}`.
    pub qprime_norm: f64,
    pub q_prime: f64,
    /// Right-hand side of the `L^{q'}` bound on `Σ |σ|^{q'} vol`.
    pub qprime_bound: f64,
    /// `Σ |D g_h|^q vol` for the harmonic boundary extension `g_h`.
    pub boundary_q_energy: f64,
    /// `Σ ⟨σ, D_h(u_h - g_h)⟩ vol`, zero for a solenoidal `σ`.
    pub pairing_defect: f64,
    pub tau_conj: f64,
    pub tau_cert: f64,
    /// `duality_gap / el_residual`, the measured gap constant.
    pub gap_per_residual: Option<f64>,
}

impl DualCertificate {
    /// Weak duality up to `τ_cert`.
    pub fn weak_duality_holds(&self) -> bool {
        self.dual_value <= self.primal_value + self.tau_cert
    }

    pub fn young_holds(&self) -> bool {
        self.extremality_gap_min >= -self.tau_conj
    }

    pub fn qprime_bound_holds(&self) -> bool {
        self.qprime_norm.powf(self.q_prime) <= self.qprime_bound
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Gap per cell as `x,y,gap` heatmap rows.
    pub fn write_gap_csv<W: Write>(&self, w: W) -> Result<()> {
        GradientField::write_scalar_csv(self.sigma.lattice(), &self.extremality_gap, "gap", w)
    }
}

fn check_pinned(u_h: &GridField, g_h: &GridField) -> Result<()> {
    let lat = u_h.lattice();
    let big_n = lat.target_dim();
    for (i, (a, b)) in u_h.values().iter().zip(g_h.values()).enumerate() {
        if lat.is_boundary_node(i / big_n) && (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
            return Err(LabError::param("u_h", format!("boundary node {} is not pinned to g", i / big_n)));
        }
    }
    Ok(())
}

/// Certificate for `u_h`, whose boundary nodes must carry `g`. `tol_el` is
/// the Euler–Lagrange tolerance the field was solved to.
pub fn certificate(
    evaluator: &DualEvaluator,
    u_h: &GridField,
    g: &dyn BoundaryDatum,
    tol_el: f64,
) -> Result<DualCertificate> {
    let lat = u_h.lattice();
    let g_h = start_field(g, lat, StartKind::Harmonic)?;
    check_pinned(u_h, &g_h)?;
    let cols = lat.dim();
    let vol = lat.cell_volume();
    let primal = evaluator.primal();
    let du = forward_gradient(u_h)?;
    let dg = forward_gradient(&g_h)?;
    let sigma = dual_field(primal, &du)?;
    let solenoidal = solenoidal_residual(&sigma, lat)?;

    let mut gaps = Vec::with_capacity(lat.cell_count());
    let (mut primal_sum, mut dual_sum, mut gap_sum, mut pairing, mut dg_q) = (
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
        CompensatedSum::new(),
    );
    let q = evaluator.polar().q;
    let mut scale: f64 = 0.0;
    for ((xi, s), dgc) in du.cells().zip(sigma.cells()).zip(dg.cells()) {
        let f = primal.value(xi, cols);
        let fs = evaluator.conjugate(s, cols)?;
        let su: f64 = xi.iter().zip(s).map(|(a, b)| a * b).sum();
        let sg: f64 = dgc.iter().zip(s).map(|(a, b)| a * b).sum();
        let gap = fs + f - su;
        scale = scale.max(norm(s) * norm(xi) + f.abs());
        gaps.push(gap);
        primal_sum.add(f * vol);
        dual_sum.add((sg - fs) * vol);
        gap_sum.add(gap * vol);
        pairing.add((su - sg) * vol);
        dg_q.add(norm(dgc).powf(q) * vol);
    }
    let primal_value = primal_sum.value();
    let dual_value = dual_sum.value();
    let tau_conj = conjugate_tolerance(scale);
    let tau_cert = 10.0 * tau_conj + 10.0 * tol_el * (1.0 + primal_value.abs());

    let pol = evaluator.polar();
    let q_prime = pol.q_prime;
    let qprime_norm = local_norm(&sigma, &BallRegion::covering(lat), q_prime)?;
    // c3 |σ|^{q'} - c2 ≤ F*(σ) = ⟨σ, Dg⟩ + pairing - F + gap, then Young with
    // half of c3 absorbed: ⟨σ, Dg⟩ ≤ (c3/2)|σ|^{q'} + C |Dg|^q.
    let lambda = (pol.c3 * q_prime / 2.0).powf(1.0 / q_prime);
    let young_c = lambda.powf(-q) / q;
    let qprime_bound = 2.0 / pol.c3
        * (young_c * dg_q.value() + pol.c2 * lat.volume() - primal_value
            + pairing.value().abs()
            + gap_sum.value().max(0.0));

    let (mut gmax, mut gmin) = (f64::NEG_INFINITY, f64::INFINITY);
    for &v in &gaps {
        gmax = gmax.max(v);
        gmin = gmin.min(v);
    }
    let gmean = compensated_sum(gaps.iter().copied()) / gaps.len() as f64;
    let duality_gap = primal_value - dual_value;
    Ok(DualCertificate {
        sigma,
        extremality_gap: gaps,
        solenoidal_residual: solenoidal,
        extremality_gap_max: gmax,
        extremality_gap_mean: gmean,
        extremality_gap_min: gmin,
        primal_value,
        dual_value,
        duality_gap,
        qprime_norm,
        q_prime,
        qprime_bound,
        boundary_q_energy: dg_q.value(),
        pairing_defect: pairing.value(),
        tau_conj,
        tau_cert,
        gap_per_residual: if solenoidal > 0.0 { Some(duality_gap / solenoidal) } else { None },
    })
}

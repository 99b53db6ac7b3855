//! Measurements behind the regularity statements: exponent calculus,
//! Besov–Nikolskii difference integrals, higher-integrability scans, the
//! higher-order penalty solver, mollification and `W^{1,2}` bounds of the
//! `V`-field.

use std::collections::BTreeMap;
use std::io::Write;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{LabError, Result};
use crate::grid::{
    delta_sh, fmt_f64, forward_gradient, forward_gradient_into, local_mean_norm, local_norm, BallRegion, CellSampled,
    GridField, Lattice,
};
use crate::integrands::{v_slice, Integrand};
use crate::numeric::{compensated_sum, dot, ls_slope, CompensatedSum};
use crate::solver::{cell_terms, descend, harmonic_extension, DiscreteMinimizer, Objective, SolverOptions, StartKind};

/// An exponent that may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    /// `x < self`, with every finite `x` below infinity.
    pub fn exceeds(&self, x: f64) -> bool {
        match self {
            Extended::Finite(v) => x < *v,
            Extended::Infinite => true,
        }
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `q < np/(n-1)`: `u ∈ W^{1,q}_loc`.
    FullW1q,
    /// `np/(n-1) ≤ q < p*`: `u ∈ W^{1,r}_loc` for `r < p̄`.
    BelowPBar,
    /// `q ≥ p*`.
    OutOfRange,
}

/// The closed-form exponents, generic so that the same algebra runs in
/// floating point and in exact rationals.
#[derive(Debug, Clone, PartialEq)]
pub struct Formulas<T> {
    /// `None` encodes `p* = ∞`.
    pub p_star: Option<T>,
    pub np_over_nminus1: T,
    /// `np / (n - p/(p-1)·(1 - n(1/p - 1/q)))`, `None` for a nonpositive denominator.
    pub p_bar: Option<T>,
    /// `n(p-1) / (n - 1 - n/q)`.
    pub p_bar_alt: Option<T>,
    pub alpha: T,
    pub theta: Option<T>,
    pub d: Option<T>,
    pub d_prime: Option<T>,
}

fn positive_div<T: Num + Clone + PartialOrd>(num: T, den: T) -> Option<T> {
    if den > T::zero() {
        Some(num / den)
    } else {
        None
    }
}

fn nonzero_div<T: Num + Clone + PartialOrd>(num: T, den: T) -> Option<T> {
    if den.is_zero() {
        None
    } else {
        Some(num / den)
    }
}

pub fn formulas<T: Num + Clone + PartialOrd + FromPrimitive>(n: u32, p: &T, q: &T) -> Formulas<T> {
    let c = |v: u32| T::from_u32(v).expect("small integer");
    let (nn, one) = (c(n), T::one());
    let (p, q) = (p.clone(), q.clone());
    let np = nn.clone() * p.clone();
    let p_star = if p < nn { Some(np.clone() / (nn.clone() - p.clone())) } else { None };
    let np1 = np.clone() / (nn.clone() - one.clone());
    let alpha = one.clone() - nn.clone() * (one.clone() / p.clone() - one.clone() / q.clone());
    let p_bar = positive_div(np.clone(), nn.clone() - p.clone() / (p.clone() - one.clone()) * alpha.clone());
    let p_bar_alt =
        positive_div(nn.clone() * (p.clone() - one.clone()), nn.clone() - one.clone() - nn.clone() / q.clone());
    let pn = p.clone() * nn.clone();
    let s2 = pn.clone() - q.clone() * (nn.clone() - c(2));
    let s1 = pn.clone() - q.clone() * (nn.clone() - one.clone());
    let two_q_p = c(2) * q.clone() - p.clone();
    let theta = nonzero_div(q.clone() - p.clone(), two_q_p.clone())
        .and_then(|a| nonzero_div(pn.clone(), s2.clone()).map(|b| a * b));
    let d = nonzero_div(s2.clone(), (q.clone() - p.clone()) * nn.clone());
    let d_prime = nonzero_div(s2, c(2) * s1);
    Formulas { p_star, np_over_nminus1: np1, p_bar, p_bar_alt, alpha, theta, d, d_prime }
}

/// `p_j = np / (n - 1 + n(1/p_{j-1} - 1/q))`.
pub fn trace_step<T: Num + Clone + FromPrimitive>(n: u32, p: &T, q: &T, prev: &T) -> T {
    let nn = T::from_u32(n).expect("small integer");
    let one = T::one();
    nn.clone() * p.clone() / (nn.clone() - one.clone() + nn * (one.clone() / prev.clone() - one / q.clone()))
}

/// The exponents in exact arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactExponents {
    pub p: BigRational,
    pub q: BigRational,
    pub formulas: Formulas<BigRational>,
    pub trace: Vec<BigRational>,
}

impl Serialize for ExactExponents {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let f = &self.formulas;
        let show = |v: &Option<BigRational>| v.as_ref().map_or("none".to_string(), |r| r.to_string());
        let mut m = BTreeMap::new();
        m.insert("p", self.p.to_string());
        m.insert("q", self.q.to_string());
        m.insert("p_star", f.p_star.as_ref().map_or("inf".to_string(), |r| r.to_string()));
        m.insert("np_over_nminus1", f.np_over_nminus1.to_string());
        m.insert("p_bar", show(&f.p_bar));
        m.insert("p_bar_alt", show(&f.p_bar_alt));
        m.insert("alpha", f.alpha.to_string());
        m.insert("theta", show(&f.theta));
        m.insert("d", show(&f.d));
        m.insert("d_prime", show(&f.d_prime));
        let head: Vec<String> = self.trace.iter().take(4).map(|r| r.to_string()).collect();
        m.insert("trace_head", head.join(" "));
        m.serialize(s)
    }
}

/// `x` as a fraction with denominator at most `10^6` whose nearest double is
/// `x`, if one exists.
pub fn rational_from_f64(x: f64) -> Option<BigRational> {
    if !x.is_finite() {
        return None;
    }
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let a_i = a as i128;
        let h = a_i * h1 + h0;
        let k = a_i * k1 + k0;
        if k > 1_000_000 {
            return None;
        }
        if h as f64 / k as f64 == x {
            return Some(BigRational::new(BigInt::from(h), BigInt::from(k)));
        }
        (h0, h1, k0, k1) = (h1, h, k1, k);
        let frac = r - a;
        if frac == 0.0 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

pub fn exact_exponents(n: u32, p: &BigRational, q: &BigRational, trace_len: usize) -> Result<ExactExponents> {
    let one = BigRational::one();
    if n < 2 || *p <= one || q < p {
        return Err(LabError::param("exponents", "need n >= 2 and 1 < p <= q"));
    }
    let formulas = formulas(n, p, q);
    let mut trace = vec![p.clone()];
    while trace.len() < trace_len.max(1) {
        let next = trace_step(n, p, q, trace.last().expect("nonempty"));
        trace.push(next);
    }
    Ok(ExactExponents { p: p.clone(), q: q.clone(), formulas, trace })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentReport {
    pub n: u32,
    pub p: f64,
    pub q: f64,
    pub p_star: Extended,
    pub np_over_nminus1: f64,
    pub p_bar: Option<f64>,
    pub p_bar_alt: Option<f64>,
    /// `|p_bar - p_bar_alt|` when both exist.
    pub p_bar_discrepancy: Option<f64>,
    pub regime: Regime,
    /// `p_0 = p, p_1, ...` until within `1e-10` of `p̄` or 200 steps.
    pub trace: Vec<f64>,
    pub alpha: f64,
    pub theta: Option<f64>,
    pub d: Option<f64>,
    pub d_prime: Option<f64>,
    /// Present when `p` and `q` are short fractions.
    pub exact: Option<ExactExponents>,
}

pub const TRACE_CAP: usize = 200;

pub fn exponent_report(n: u32, p: f64, q: f64) -> Result<ExponentReport> {
    if n < 2 {
        return Err(LabError::param("n", "need n >= 2"));
    }
    if !(p > 1.0) || !p.is_finite() {
        return Err(LabError::param("p", "need p > 1"));
    }
    if !(q >= p) || !q.is_finite() {
        return Err(LabError::param("q", "need q >= p"));
    }
    let f = formulas(n, &p, &q);
    let p_star = f.p_star.map_or(Extended::Infinite, Extended::Finite);
    let regime = if q < f.np_over_nminus1 {
        Regime::FullW1q
    } else if p_star.exceeds(q) {
        Regime::BelowPBar
    } else {
        Regime::OutOfRange
    };
    let mut trace = vec![p];
    while trace.len() <= TRACE_CAP {
        let last = *trace.last().expect("nonempty");
        if let Some(pb) = f.p_bar {
            if (last - pb).abs() < 1e-10 {
                break;
            }
        }
        let next = trace_step(n, &p, &q, &last);
        if !next.is_finite() || next <= 0.0 {
            break;
        }
        trace.push(next);
    }
    let exact = match (rational_from_f64(p), rational_from_f64(q)) {
        (Some(pr), Some(qr)) => Some(exact_exponents(n, &pr, &qr, trace.len())?),
        _ => None,
    };
    Ok(ExponentReport {
        n,
        p,
        q,
        p_star,
        np_over_nminus1: f.np_over_nminus1,
        p_bar: f.p_bar,
        p_bar_alt: f.p_bar_alt,
        p_bar_discrepancy: f.p_bar.zip(f.p_bar_alt).map(|(a, b)| (a - b).abs()),
        regime,
        trace,
        alpha: f.alpha,
        theta: f.theta,
        d: f.d,
        d_prime: f.d_prime,
        exact,
    })
}

/// Endpoint value of `p̄(q)`: `p` as `q → p*` when `p < n`, `n(p-1)/(n-1)` as
/// `q → ∞` otherwise.
pub fn p_bar_endpoint_limit(n: u32, p: f64) -> f64 {
    let nf = n as f64;
    if p < nf {
        p
    } else {
        nf * (p - 1.0) / (nf - 1.0)
    }
}

/// Difference integrals `∫_B |Δ_{s,h} w|^q` over dyadic steps.
#[derive(Debug, Clone, Serialize)]
pub struct BesovEstimate {
    pub directions: Vec<usize>,
    /// Steps in lattice units.
    pub steps: Vec<usize>,
    pub step_lengths: Vec<f64>,
    pub q: f64,
    pub ball: BallRegion,
    /// Max over directions, per step.
    pub integrals: Vec<f64>,
    pub slope: f64,
    pub alpha_fit: f64,
    /// `α` used for `M`: the caller's or the fitted one.
    pub alpha_used: f64,
    /// `max_h ∫|Δ_h w|^q / |h|^{qα}`.
    pub seminorm: f64,
}

/// Node quadrature `Σ_{x ∈ B} |w(x)|^q vol`; nodes, unlike cell averages, see
/// a jump's difference band at its exact width.
fn node_integral(w: &GridField, ball: &BallRegion, q: f64) -> f64 {
    let lat = w.lattice();
    let vol = lat.cell_volume();
    let big_n = lat.target_dim();
    let mut acc = CompensatedSum::new();
    for i in 0..lat.node_count() {
        let x = lat.node_coords(i);
        if ball.contains(&x[..lat.dim()]) {
            let v = &w.values()[i * big_n..(i + 1) * big_n];
            acc.add(dot(v, v).sqrt().powf(q) * vol);
        }
    }
    acc.value()
}

pub const DYADIC_STEPS: [usize; 4] = [1, 2, 4, 8];

/// Estimates the Nikolskii exponent of `w` on `ball` at integrability `q`.
pub fn besov_seminorm(
    w: &GridField,
    ball: &BallRegion,
    q: f64,
    steps: &[usize],
    alpha: Option<f64>,
) -> Result<BesovEstimate> {
    if !(q >= 1.0 && q.is_finite()) {
        return Err(LabError::param("q", "need 1 <= q < inf"));
    }
    if steps.len() < 4 || steps.contains(&0) {
        return Err(LabError::param("steps", "need at least 4 positive steps"));
    }
    let (smin, smax) = (*steps.iter().min().expect("nonempty"), *steps.iter().max().expect("nonempty"));
    if smax < 4 * smin {
        return Err(LabError::param("steps", "steps must span at least two octaves"));
    }
    let lat = w.lattice();
    let h = (0..lat.dim()).map(|a| lat.spacing(a)).fold(0.0, f64::max);
    if ball.clearance(lat) <= smax as f64 * h {
        return Err(LabError::BallTooClose { step: smax });
    }
    let directions: Vec<usize> = (0..lat.dim()).collect();
    let integrals = steps
        .iter()
        .map(|&k| {
            let mut best: f64 = 0.0;
            for &s in &directions {
                let d = delta_sh(w, s, k as isize)?;
                best = best.max(node_integral(&d, ball, q));
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    let step_lengths: Vec<f64> = steps.iter().map(|&k| k as f64 * h).collect();
    if integrals.iter().any(|v| !(*v > 0.0)) {
        return Err(LabError::Numeric { stage: "besov".into(), reason: "vanishing difference integral".into() });
    }
    let lx: Vec<f64> = step_lengths.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = integrals.iter().map(|v| v.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    if !slope.is_finite() {
        return Err(LabError::Numeric { stage: "besov".into(), reason: "non-finite slope".into() });
    }
    let alpha_fit = slope / q;
    let alpha_used = alpha.unwrap_or(alpha_fit);
    let seminorm = integrals.iter().zip(&step_lengths).map(|(i, l)| i / l.powf(q * alpha_used)).fold(0.0, f64::max);
    Ok(BesovEstimate {
        directions,
        steps: steps.to_vec(),
        step_lengths,
        q,
        ball: ball.clone(),
        integrals,
        slope,
        alpha_fit,
        alpha_used,
        seminorm,
    })
}

/// One `(h, r)` entry of a scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub h: f64,
    pub r: f64,
    pub norm: f64,
    /// Slope of `log norm` against `log(1/h)` over all levels of this `r`.
    pub slope: f64,
}

fn check_nested(lattices: &[&Lattice]) -> Result<()> {
    if lattices.len() < 3 {
        return Err(LabError::NotNested("need at least three refinement levels".into()));
    }
    for w in lattices.windows(2) {
        if !w[0].is_refined_by(w[1]) || w[0] == w[1] {
            return Err(LabError::NotNested("each lattice must strictly refine the previous one".into()));
        }
    }
    Ok(())
}

/// `L^r(B)` norms of cell fields across nested refinements, divided by the
/// discrete measure of the ball so that resolving `B` more finely does not
/// register as growth.
pub fn integrability_scan_fields<F: CellSampled + Sync>(
    fields: &[F],
    ball: &BallRegion,
    r_list: &[f64],
) -> Result<Vec<ScanRow>> {
    let lats: Vec<&Lattice> = fields.iter().map(|f| f.lattice()).collect();
    check_nested(&lats)?;
    let hs: Vec<f64> = lats.iter().map(|l| l.spacing(0)).collect();
    let mut rows = Vec::new();
    for &r in r_list {
        let norms = fields.iter().map(|f| local_mean_norm(f, ball, r)).collect::<Result<Vec<_>>>()?;
        let lx: Vec<f64> = hs.iter().map(|h| (1.0 / h).ln()).collect();
        let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
        let slope = if norms.iter().all(|v| *v > 0.0) {
            ls_slope(&lx, &ly)
        } else if norms.iter().all(|v| *v == 0.0) {
            0.0
        } else {
            f64::INFINITY
        };
        for (h, norm) in hs.iter().zip(norms) {
            rows.push(ScanRow { h: *h, r, norm, slope });
        }
    }
    Ok(rows)
}

/// Scan of `D u_h` for solutions on nested lattices.
pub fn integrability_scan(solutions: &[DiscreteMinimizer], ball: &BallRegion, r_list: &[f64]) -> Result<Vec<ScanRow>> {
    let grads = solutions.iter().map(|s| forward_gradient(&s.u_h)).collect::<Result<Vec<_>>>()?;
    integrability_scan_fields(&grads, ball, r_list)
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["h", "r", "norm", "slope"])?;
    for row in rows {
        wr.write_record([fmt_f64(row.h), fmt_f64(row.r), fmt_f64(row.norm), fmt_f64(row.slope)])?;
    }
    wr.flush()?;
    Ok(())
}

/// Parameters of the penalized problem `Σ (F(D_h v) + (ε̃/2)|D_h^k v|²) vol`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub k_order: usize,
    pub eps_tilde: f64,
    /// Mollification radius applied to the base field; `0` disables it.
    #[serde(default)]
    pub mollify_radius: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self { k_order: 2, eps_tilde: 1e-3, mollify_radius: 0.0 }
    }
}

impl PenaltyConfig {
    pub fn validate(&self, lattice: &Lattice) -> Result<()> {
        if self.k_order < 1 {
            return Err(LabError::param("k_order", "need k_order >= 1"));
        }
        if !(self.eps_tilde >= 0.0 && self.eps_tilde.is_finite()) {
            return Err(LabError::param("eps_tilde", "need a finite eps_tilde >= 0"));
        }
        if !(self.mollify_radius >= 0.0 && self.mollify_radius.is_finite()) {
            return Err(LabError::param("mollify_radius", "need a finite radius >= 0"));
        }
        if (0..lattice.dim()).any(|a| self.k_order + 1 > lattice.cells(a)) {
            return Err(LabError::StencilOverflow { order: self.k_order });
        }
        Ok(())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The composed forward stencils of order `k`: for each split `(c_0, c_1)` of
/// `k` across the axes, the multinomial weight and the offset/coefficient list.
struct HigherStencil {
    parts: Vec<(f64, Vec<(usize, f64)>)>,
    /// Nodes whose stencils fit, i.e. `m_a + k < nodes_a`.
    anchors: Vec<usize>,
}

impl HigherStencil {
    fn new(lat: &Lattice, k: usize) -> Self {
        let dim = lat.dim();
        let splits: Vec<Vec<usize>> =
            if dim == 1 { vec![vec![k]] } else { (0..=k).map(|c0| vec![c0, k - c0]).collect() };
        let mut parts = Vec::new();
        for c in splits {
            let weight = if dim == 1 { 1.0 } else { binomial(k, c[0]) };
            let mut taps: Vec<(usize, f64)> = vec![(0, 1.0)];
            for (a, &ca) in c.iter().enumerate() {
                let h = lat.spacing(a);
                let stride = lat.node_stride(a);
                for _ in 0..ca {
                    let mut next: BTreeMap<usize, f64> = BTreeMap::new();
                    for &(off, coef) in &taps {
                        *next.entry(off + stride).or_default() += coef / h;
                        *next.entry(off).or_default() -= coef / h;
                    }
                    taps = next.into_iter().collect();
                }
            }
            parts.push((weight, taps));
        }
        let anchors = (0..lat.node_count())
            .filter(|&i| {
                let m = lat.node_multi(i);
                (0..dim).all(|a| m[a] + k < lat.nodes(a))
            })
            .collect();
        Self { parts, anchors }
    }

    /// `(|D^k v|²)` at every anchor, per component summed.
    fn squares(&self, v: &[f64], big_n: usize, out: &mut [f64]) {
        for (slot, &m) in out.iter_mut().zip(&self.anchors) {
            let mut acc = 0.0;
            for (w, taps) in &self.parts {
                for r in 0..big_n {
                    let d: f64 = taps.iter().map(|(off, c)| c * v[(m + off) * big_n + r]).sum();
                    acc += w * d * d;
                }
            }
            *slot = acc;
        }
    }

    /// Adds `scale · ∇_v Σ_anchors |D^k v|²` into `grad`.
    fn add_gradient(&self, v: &[f64], big_n: usize, scale: f64, grad: &mut [f64]) {
        for &m in &self.anchors {
            for (w, taps) in &self.parts {
                for r in 0..big_n {
                    let d: f64 = taps.iter().map(|(off, c)| c * v[(m + off) * big_n + r]).sum();
                    for (off, c) in taps {
                        grad[(m + off) * big_n + r] += scale * 2.0 * w * d * c;
                    }
                }
            }
        }
    }
}

/// `Σ |D_h^k u|² vol` over the nodes where the stencil fits.
pub fn higher_order_energy(u: &GridField, k_order: usize) -> Result<f64> {
    let lat = u.lattice();
    if (0..lat.dim()).any(|a| k_order + 1 > lat.cells(a)) || k_order == 0 {
        return Err(LabError::StencilOverflow { order: k_order });
    }
    let st = HigherStencil::new(lat, k_order);
    let mut sq = vec![0.0; st.anchors.len()];
    st.squares(u.values(), lat.target_dim(), &mut sq);
    Ok(compensated_sum(sq.iter().map(|v| v * lat.cell_volume())))
}

struct PenaltyObjective<'a> {
    lattice: &'a Lattice,
    integrand: &'a dyn Integrand,
    free: Vec<bool>,
    eps_tilde: f64,
    stencil: HigherStencil,
}

impl Objective for PenaltyObjective<'_> {
    fn free(&self) -> &[bool] {
        &self.free
    }

    fn term_count(&self) -> usize {
        self.lattice.cell_count() + self.stencil.anchors.len()
    }

    fn residual_weight(&self) -> f64 {
        self.lattice.cell_volume()
    }

    fn eval(&self, x: &[f64], terms: &mut [f64], grad: Option<&mut [f64]>) -> Result<()> {
        let lat = self.lattice;
        let big_n = lat.target_dim();
        let vol = lat.cell_volume();
        let block = lat.dim() * big_n;
        let (cells, pen) = terms.split_at_mut(lat.cell_count());
        let mut du = vec![0.0; lat.cell_count() * block];
        forward_gradient_into(lat, x, &mut du);
        self.stencil.squares(x, big_n, pen);
        for t in pen.iter_mut() {
            *t *= 0.5 * self.eps_tilde * vol;
        }
        match grad {
            None => cell_terms(self.integrand, lat, &du, cells, None),
            Some(g) => {
                let mut sigma = vec![0.0; du.len()];
                cell_terms(self.integrand, lat, &du, cells, Some(&mut sigma))?;
                crate::grid::adjoint_divergence_into(lat, &sigma, g);
                for gi in g.iter_mut() {
                    *gi *= vol;
                }
                if self.eps_tilde > 0.0 {
                    self.stencil.add_gradient(x, big_n, 0.5 * self.eps_tilde * vol, g);
                }
                for (gi, &f) in g.iter_mut().zip(&self.free) {
                    if !f {
                        *gi = 0.0;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Minimizes the penalized energy with boundary nodes pinned to `base`
/// (mollified first when `cfg.mollify_radius > 0`, which shrinks the lattice).
/// The returned energy is the full penalized objective.
pub fn penalty_minimize(
    integrand: &dyn Integrand,
    base: &GridField,
    cfg: &PenaltyConfig,
    opts: &SolverOptions,
) -> Result<DiscreteMinimizer> {
    if let Some(i) = base.values().iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite { what: "base field", index: i });
    }
    let base = if cfg.mollify_radius > 0.0 { mollify(base, cfg.mollify_radius)? } else { base.clone() };
    let lattice = base.lattice().clone();
    cfg.validate(&lattice)?;
    let big_n = lattice.target_dim();
    let free: Vec<bool> = (0..lattice.node_count() * big_n).map(|i| !lattice.is_boundary_node(i / big_n)).collect();
    let start = match opts.start {
        StartKind::Harmonic => harmonic_extension(&base)?.into_values(),
        StartKind::Zero => base.values().iter().zip(&free).map(|(v, &f)| if f { 0.0 } else { *v }).collect(),
    };
    let obj = PenaltyObjective {
        lattice: &lattice,
        integrand,
        free,
        eps_tilde: cfg.eps_tilde,
        stencil: HigherStencil::new(&lattice, cfg.k_order),
    };
    let out = descend(&obj, start, opts)?;
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRow {
    pub eps_tilde: f64,
    /// `Σ F(D_h u_ε) vol`.
    pub energy: f64,
    /// `ε̃ Σ |D^k u_ε|² vol`.
    pub penalty_share: f64,
    pub el_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs [`penalty_minimize`] for each `ε̃`, in parallel, reporting rows in
/// input order.
pub fn penalty_sweep(
    integrand: &dyn Integrand,
    base: &GridField,
    k_order: usize,
    eps_list: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<PenaltyRow>> {
    eps_list
        .par_iter()
        .map(|&eps| {
            let cfg = PenaltyConfig { k_order, eps_tilde: eps, mollify_radius: 0.0 };
            let m = penalty_minimize(integrand, base, &cfg, opts)?;
            Ok(PenaltyRow {
                eps_tilde: eps,
                energy: crate::solver::energy(integrand, &m.u_h)?,
                penalty_share: eps * higher_order_energy(&m.u_h, k_order)?,
                el_residual: m.el_residual,
                iterations: m.iterations,
                converged: m.converged,
            })
        })
        .collect()
}

/// The standard bump `exp(1/(ρ² - 1))` on the unit ball.
fn bump(rho2: f64) -> f64 {
    if rho2 < 1.0 {
        (1.0 / (rho2 - 1.0)).exp()
    } else {
        0.0
    }
}

/// Discrete convolution with the bump of radius `eps`, weights normalized to
/// unit mass. The result lives on the lattice shrunk by the kernel's reach.
pub fn mollify(u: &GridField, eps: f64) -> Result<GridField> {
    let lat = u.lattice();
    let dim = lat.dim();
    let hmax = (0..dim).map(|a| lat.spacing(a)).fold(0.0, f64::max);
    if !(eps >= 2.0 * hmax * (1.0 - 1e-12)) || !eps.is_finite() {
        return Err(LabError::param("eps", "mollification radius must be at least two lattice spacings"));
    }
    let reach: Vec<usize> = (0..dim).map(|a| (eps / lat.spacing(a) * (1.0 + 1e-12)).floor() as usize).collect();
    let mut first = vec![0; dim];
    let mut count = vec![0; dim];
    for a in 0..dim {
        if lat.nodes(a) < 2 * reach[a] + 3 {
            return Err(LabError::param("eps", "mollification radius too large for the lattice"));
        }
        first[a] = reach[a];
        count[a] = lat.nodes(a) - 2 * reach[a];
    }
    let sub = lat.sub_lattice(&first, &count)?;
    let mut taps: Vec<(isize, f64)> = Vec::new();
    let ry = if dim == 2 { reach[1] as isize } else { 0 };
    for j in -ry..=ry {
        for i in -(reach[0] as isize)..=(reach[0] as isize) {
            let mut rho2 = (i as f64 * lat.spacing(0) / eps).powi(2);
            if dim == 2 {
                rho2 += (j as f64 * lat.spacing(1) / eps).powi(2);
            }
            let w = bump(rho2);
            if w > 0.0 {
                let off = i + j * lat.node_stride(dim - 1) as isize * (dim == 2) as isize;
                taps.push((off, w));
            }
        }
    }
    let mass: f64 = taps.iter().map(|t| t.1).sum();
    for t in taps.iter_mut() {
        t.1 /= mass;
    }
    let big_n = lat.target_dim();
    let mut out = Vec::with_capacity(sub.node_count() * big_n);
    for s in 0..sub.node_count() {
        let mut m = sub.node_multi(s);
        for a in 0..dim {
            m[a] += first[a];
        }
        let centre = lat.node_index(&m[..dim]) as isize;
        for r in 0..big_n {
            let v = compensated_sum(taps.iter().map(|(off, w)| w * u.values()[(centre + off) as usize * big_n + r]));
            out.push(v);
        }
    }
    GridField::new(sub, out)
}

/// `V_{p,μ}(D_h u)` as a node field on the lattice of cell centers.
pub fn v_field(u: &GridField, p: f64, mu: f64) -> Result<GridField> {
    let lat = u.lattice();
    let du = forward_gradient(u)?;
    let dim = lat.dim();
    let lower: Vec<f64> = (0..dim).map(|a| lat.lower()[a] + 0.5 * lat.spacing(a)).collect();
    let upper: Vec<f64> = (0..dim).map(|a| lat.upper()[a] - 0.5 * lat.spacing(a)).collect();
    let nodes: Vec<usize> = (0..dim).map(|a| lat.cells(a)).collect();
    let centers = Lattice::new(lower, upper, nodes, du.block())?;
    let mut vals = vec![0.0; du.values().len()];
    for (xi, out) in du.cells().zip(vals.chunks_exact_mut(du.block())) {
        v_slice(xi, p, mu, out);
    }
    GridField::new(centers, vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VFieldRow {
    pub h: f64,
    /// `‖D_h V(D_h u)‖_{L²(B)}`.
    pub seminorm: f64,
    /// Ratio to the previous level's seminorm.
    pub growth: Option<f64>,
}

/// Discrete `W^{1,2}(B)` seminorms of `V(D_h u)` across nested refinements.
pub fn vfield_w12_estimate(fields: &[GridField], ball: &BallRegion, p: f64, mu: f64) -> Result<Vec<VFieldRow>> {
    let lats: Vec<&Lattice> = fields.iter().map(|f| f.lattice()).collect();
    check_nested(&lats)?;
    let mut rows: Vec<VFieldRow> = Vec::new();
    for f in fields {
        let v = v_field(f, p, mu)?;
        let dv = forward_gradient(&v)?;
        let seminorm = local_norm(&dv, ball, 2.0)?;
        let growth = rows.last().map(|r| if r.seminorm > 0.0 { seminorm / r.seminorm } else { f64::NAN });
        rows.push(VFieldRow { h: f.lattice().spacing(0), seminorm, growth });
    }
    Ok(rows)
}

/// Outcome of the pointwise bound `|D[V(Du)]|² ≤ (|p-2|/2 + 1)² ⟨Du⟩^{p-2} |D²u|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBoundCheck {
    pub cells: usize,
    pub violations: usize,
    /// `max lhs / rhs` over cells with a positive right-hand side.
    pub worst_ratio: f64,
}

/// Evaluates the bound at every cell center of `lattice` from analytic
/// derivatives: `derivs(x)` returns `Du(x)` (flat `N × n`) and the `n`
/// partial derivatives `∂_s Du(x)`, concatenated.
pub fn v_bound_check(
    lattice: &Lattice,
    p: f64,
    mu: f64,
    derivs: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
) -> Result<VBoundCheck> {
    let dim = lattice.dim();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for c in 0..lattice.cell_count() {
        let x = lattice.cell_center(c);
        let (xi, d2) = derivs(&x[..dim]);
        let len = xi.len();
        if d2.len() != len * dim {
            return Err(LabError::ShapeMismatch("second derivatives need n blocks of N × n".into()));
        }
        let bracket2 = mu * mu + dot(&xi, &xi);
        let e = (p - 2.0) / 2.0;
        let scale = bracket2.powf(e / 2.0);
        let mut lhs = 0.0;
        let mut hess2 = 0.0;
        for s in 0..dim {
            let ds = &d2[s * len..(s + 1) * len];
            // DV(ξ)η = ⟨ξ⟩^{e} (η + e ⟨ξ,η⟩ ξ / ⟨ξ⟩²)
            let proj = if bracket2 > 0.0 { e * dot(&xi, ds) / bracket2 } else { 0.0 };
            lhs += xi
                .iter()
                .zip(ds)
                .map(|(a, b)| {
                    let v = scale * (b + proj * a);
                    v * v
                })
                .sum::<f64>();
            hess2 += dot(ds, ds);
        }
        let rhs = ((p - 2.0).abs() / 2.0 + 1.0).powi(2) * bracket2.powf(e) * hess2;
        if !lhs.is_finite() || !rhs.is_finite() {
            return Err(LabError::NonFinite { what: "V bound", index: c });
        }
        if lhs > rhs * (1.0 + 1e-12) + 1e-300 {
            violations += 1;
        }
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
    }
    Ok(VBoundCheck { cells: lattice.cell_count(), violations, worst_ratio: worst })
}

/// Exact check of `p_{j-1} < p_j < p̄` along a rational trace.
pub fn exact_trace_monotone(ex: &ExactExponents) -> bool {
    let Some(pb) = ex.formulas.p_bar.as_ref() else {
        return false;
    };
    ex.trace.windows(2).all(|w| if w[0] < *pb { w[0] < w[1] && w[1] < *pb } else { true })
}

/// `1/d + 1/d' - 1`, exactly zero in rational arithmetic.
pub fn conjugacy_defect(ex: &ExactExponents) -> Option<BigRational> {
    let f = &ex.formulas;
    let (d, dp) = (f.d.as_ref()?, f.d_prime.as_ref()?);
    if d.is_zero() || dp.is_zero() {
        return None;
    }
    Some(d.recip() + dp.recip() - BigRational::one())
}

/// Lossy view of an exact value.
pub fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

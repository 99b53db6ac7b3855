//! The integrand catalog, the auxiliary function `V_{p,μ}` and randomized
//! hypothesis checks.
//!
//! Every catalog integrand is built from radial terms
//! `c (μ² + |ξ|²)^{e/2}` with `⟨ξ⟩ := (μ² + |ξ|²)^{1/2}`, plus, for the
//! separable kind, column terms `b_j |ξ e_j|^{r_j}` acting on the entries
//! along axis `j`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::numeric::{dot, norm};

/// A real `N × n` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixPoint {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatrixPoint {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(LabError::ShapeMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "matrix point", index: i });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// A `1 × n` matrix.
    pub fn row(data: &[f64]) -> Result<Self> {
        Self::new(1, data.len(), data.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn dot(&self, other: &MatrixPoint) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn scaled(&self, s: f64) -> MatrixPoint {
        MatrixPoint { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn sub(&self, other: &MatrixPoint) -> MatrixPoint {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        MatrixPoint { rows: self.rows, cols: self.cols, data }
    }

    pub fn add(&self, other: &MatrixPoint) -> MatrixPoint {
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        MatrixPoint { rows: self.rows, cols: self.cols, data }
    }
}

/// `f(t) = Σ_i c_i (μ² + t²)^{e_i/2}`, the radial profile of a catalog integrand.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub mu: f64,
    /// Pairs `(c_i, e_i)`.
    pub terms: Vec<(f64, f64)>,
}

/// A scalar even function of one variable together with its derivative.
pub trait Radial1d: Sync {
    fn value(&self, t: f64) -> f64;
    /// Derivative for `t ≥ 0`; odd extension for negative `t`.
    fn deriv(&self, t: f64) -> f64;
}

impl<R: Radial1d + ?Sized> Radial1d for &R {
    fn value(&self, t: f64) -> f64 {
        (**self).value(t)
    }

    fn deriv(&self, t: f64) -> f64 {
        (**self).deriv(t)
    }
}

impl RadialProfile {
    /// `f'(t)/t`, the factor with `F'(ξ) = (f'(|ξ|)/|ξ|) ξ`.
    /// Returns 0 at `t = 0` when the limit blows up (one-sided convention at the origin).
    pub fn deriv_over_t(&self, t: f64) -> f64 {
        let s = self.mu * self.mu + t * t;
        if s == 0.0 {
            let finite: f64 = self.terms.iter().filter(|(_, e)| *e == 2.0).map(|(c, e)| c * e).sum();
            return finite;
        }
        self.terms.iter().map(|(c, e)| c * e * s.powf(e / 2.0 - 1.0)).sum()
    }

    pub fn second(&self, t: f64) -> f64 {
        let s = self.mu * self.mu + t * t;
        self.terms
            .iter()
            .map(|(c, e)| c * e * (s.powf(e / 2.0 - 1.0) + (e - 2.0) * t * t * s.powf(e / 2.0 - 2.0)))
            .sum()
    }
}

impl Radial1d for RadialProfile {
    fn value(&self, t: f64) -> f64 {
        let s = self.mu * self.mu + t * t;
        self.terms.iter().map(|(c, e)| c * s.powf(e / 2.0)).sum()
    }

    fn deriv(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        self.deriv_over_t(t.abs()) * t
    }
}

/// One column term `b |ξ e_j|^r` of a separable integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisTerm {
    pub coeff: f64,
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

/// Kind-specific profile parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "profile", rename_all = "kebab-case")]
pub enum IntegrandKind {
    /// `coeff · ⟨ξ⟩^p`.
    RadialPower {
        #[serde(default = "one")]
        coeff: f64,
    },
    /// `p_coeff · ⟨ξ⟩^p + q_coeff · ⟨ξ⟩^q`.
    RadialPqSum {
        #[serde(default = "one")]
        p_coeff: f64,
        #[serde(default = "one")]
        q_coeff: f64,
    },
    /// `base_coeff · ⟨ξ⟩^p + Σ_j b_j |ξ e_j|^{r_j}`, one term per axis.
    SeparableAnisotropic {
        #[serde(default = "one")]
        base_coeff: f64,
        axis_terms: Vec<AxisTerm>,
    },
    /// `coeff · (μ² + |ξ|²)`.
    Quadratic {
        #[serde(default = "one")]
        coeff: f64,
    },
}

/// A catalog integrand with its structural constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    #[serde(flatten)]
    pub kind: IntegrandKind,
    pub p: f64,
    pub q: f64,
    pub ell: f64,
    #[serde(rename = "L")]
    pub big_l: f64,
    #[serde(default)]
    pub mu: f64,
}

impl IntegrandSpec {
    fn assemble(kind: IntegrandKind, p: f64, q: f64, mu: f64) -> Result<Self> {
        let mut spec = IntegrandSpec { kind, p, q, ell: 0.0, big_l: 0.0, mu };
        spec.ell = spec.certified_ell();
        spec.big_l = spec.growth_bound();
        spec.validate()?;
        Ok(spec)
    }

    /// `coeff · ⟨ξ⟩^p` with `q = p`.
    pub fn radial_power(p: f64, coeff: f64, mu: f64) -> Result<Self> {
        Self::assemble(IntegrandKind::RadialPower { coeff }, p, p, mu)
    }

    /// `⟨ξ⟩^p + ⟨ξ⟩^q`.
    pub fn radial_pq_sum(p: f64, q: f64, mu: f64) -> Result<Self> {
        Self::radial_pq_sum_with(p, q, 1.0, 1.0, mu)
    }

    pub fn radial_pq_sum_with(p: f64, q: f64, p_coeff: f64, q_coeff: f64, mu: f64) -> Result<Self> {
        Self::assemble(IntegrandKind::RadialPqSum { p_coeff, q_coeff }, p, q, mu)
    }

    pub fn quadratic(coeff: f64, mu: f64) -> Result<Self> {
        Self::assemble(IntegrandKind::Quadratic { coeff }, 2.0, 2.0, mu)
    }

    /// `base_coeff · ⟨ξ⟩^p + Σ_j b_j |ξ e_j|^{r_j}`; `q` is the largest exponent.
    pub fn separable(p: f64, base_coeff: f64, axis_terms: Vec<AxisTerm>, mu: f64) -> Result<Self> {
        let q = axis_terms.iter().filter(|t| t.coeff > 0.0).map(|t| t.exponent).fold(p, f64::max);
        Self::assemble(IntegrandKind::SeparableAnisotropic { base_coeff, axis_terms }, p, q, mu)
    }

    /// Same integrand with a different declared `p` and `ℓ`, unchecked.
    /// Useful for probing hypotheses on combinations the catalog does not certify.
    pub fn declared(mut self, p: f64, ell: f64) -> Self {
        self.p = p;
        self.ell = ell;
        self
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            IntegrandKind::RadialPower { .. } => "radial-power",
            IntegrandKind::RadialPqSum { .. } => "radial-pq-sum",
            IntegrandKind::SeparableAnisotropic { .. } => "separable-anisotropic",
            IntegrandKind::Quadratic { .. } => "quadratic",
        }
    }

    pub fn is_radial(&self) -> bool {
        !matches!(self.kind, IntegrandKind::SeparableAnisotropic { .. })
    }

    /// The radial part `f` with `F(ξ) = f(|ξ|) + Σ_j b_j |ξ e_j|^{r_j}`.
    pub fn radial_part(&self) -> RadialProfile {
        let terms = match &self.kind {
            IntegrandKind::RadialPower { coeff } => vec![(*coeff, self.p)],
            IntegrandKind::RadialPqSum { p_coeff, q_coeff } => vec![(*p_coeff, self.p), (*q_coeff, self.q)],
            IntegrandKind::SeparableAnisotropic { base_coeff, .. } => vec![(*base_coeff, self.p)],
            IntegrandKind::Quadratic { coeff } => vec![(*coeff, 2.0)],
        };
        RadialProfile { mu: self.mu, terms: terms.into_iter().filter(|(c, _)| *c != 0.0).collect() }
    }

    pub fn axis_terms(&self) -> &[AxisTerm] {
        match &self.kind {
            IntegrandKind::SeparableAnisotropic { axis_terms, .. } => axis_terms,
            _ => &[],
        }
    }

    /// Radial minorant and majorant `f_lo(|ξ|) ≤ F(ξ) ≤ f_hi(|ξ|)`; equal for radial kinds.
    pub fn radial_bounds(&self) -> (RadialProfile, RadialProfile) {
        let lo = self.radial_part();
        let mut hi = lo.clone();
        for t in self.axis_terms() {
            if t.coeff != 0.0 {
                // |ξ e_j| ≤ |ξ| and the extra term carries no μ
                hi.terms.push((t.coeff, t.exponent));
            }
        }
        (lo, hi)
    }

    /// The largest `ℓ` for which the catalog certifies that `F - ℓ⟨·⟩^p` is convex.
    pub fn certified_ell(&self) -> f64 {
        match &self.kind {
            IntegrandKind::RadialPower { coeff } => *coeff,
            IntegrandKind::RadialPqSum { p_coeff, q_coeff } => {
                if self.p == self.q {
                    p_coeff + q_coeff
                } else {
                    *p_coeff
                }
            }
            IntegrandKind::SeparableAnisotropic { base_coeff, .. } => *base_coeff,
            IntegrandKind::Quadratic { coeff } => *coeff,
        }
    }

    /// An `L` with `F(ξ) ≤ L(|ξ|^q + 1)`, from
    /// `(μ² + t²)^{s/2} ≤ max(1, 2^{s/2-1})(μ^s + t^s)` and `t^s ≤ t^q + 1`.
    pub fn growth_bound(&self) -> f64 {
        let (_, hi) = self.radial_bounds();
        let mut total = 0.0;
        for (c, s) in &hi.terms {
            let k = (2f64).powf(s / 2.0 - 1.0).max(1.0);
            total += c.abs() * k * (self.mu.powf(*s) + 1.0);
        }
        total.max(f64::MIN_POSITIVE)
    }

    /// Checks the structural invariants of the catalog entry.
    pub fn validate(&self) -> Result<()> {
        let all = [self.p, self.q, self.ell, self.big_l, self.mu];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(LabError::param("spec", "all constants must be finite"));
        }
        if !(self.p > 1.0) {
            return Err(LabError::param("p", "need p > 1"));
        }
        if self.q < self.p {
            return Err(LabError::param("q", "need q >= p"));
        }
        if !(self.ell > 0.0) {
            return Err(LabError::param("ell", "need ell > 0"));
        }
        if !(self.big_l > 0.0) {
            return Err(LabError::param("L", "need L > 0"));
        }
        if self.mu < 0.0 {
            return Err(LabError::param("mu", "need mu >= 0"));
        }
        let cert = self.certified_ell();
        if self.ell > cert * (1.0 + 1e-12) {
            return Err(LabError::param("ell", format!("ell = {} exceeds certified margin {cert}", self.ell)));
        }
        match &self.kind {
            IntegrandKind::RadialPower { coeff } => {
                if !(*coeff > 0.0) {
                    return Err(LabError::param("coeff", "need coeff > 0"));
                }
            }
            IntegrandKind::RadialPqSum { p_coeff, q_coeff } => {
                if *p_coeff < 0.0 || *q_coeff < 0.0 {
                    return Err(LabError::param("profile", "coefficients must be nonnegative"));
                }
            }
            IntegrandKind::Quadratic { coeff } => {
                if !(*coeff > 0.0) {
                    return Err(LabError::param("coeff", "need coeff > 0"));
                }
                if self.p != 2.0 {
                    return Err(LabError::param("p", "quadratic integrand has p = 2"));
                }
            }
            IntegrandKind::SeparableAnisotropic { base_coeff, axis_terms } => {
                if !(*base_coeff > 0.0) {
                    return Err(LabError::param("base_coeff", "need base_coeff > 0"));
                }
                if axis_terms.is_empty() || axis_terms.len() > 2 {
                    return Err(LabError::param("axis_terms", "need one term per axis (1 or 2)"));
                }
                for t in axis_terms {
                    if t.coeff < 0.0 || !t.coeff.is_finite() {
                        return Err(LabError::param("axis_terms", "coefficients must be nonnegative"));
                    }
                    if t.coeff > 0.0 && (!(t.exponent > 1.0) || t.exponent > self.q) {
                        return Err(LabError::param("axis_terms", "need 1 < r_j <= q"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Polar growth exponents `(p', q')`.
    pub fn conjugate_exponents(&self) -> (f64, f64) {
        (self.p / (self.p - 1.0), self.q / (self.q - 1.0))
    }

    /// Smallest `c` with `|ξ|^p / c - c ≤ F(ξ) ≤ c(|ξ|^q + 1)` along rays,
    /// measured on the radial minorant and majorant.
    pub fn envelope_constant(&self) -> f64 {
        let (lo, hi) = self.radial_bounds();
        let tail = envelope_asymptote(&lo.terms, &hi.terms, self.p, self.q);
        envelope_constant_1d(|t| lo.value(t), |t| hi.value(t), self.p, self.q).max(tail)
    }

    fn check_shape(&self, cols: usize) -> Result<()> {
        let axes = self.axis_terms().len();
        if axes > 0 && axes != cols {
            return Err(LabError::ShapeMismatch(format!(
                "separable integrand has {axes} axis terms but the matrix has {cols} columns"
            )));
        }
        Ok(())
    }
}

/// Evaluation of an integrand and its gradient on flat row-major matrices.
pub trait Integrand: Sync {
    /// Value at `xi` (`N × cols`), gradient written into `grad`.
    fn value_grad(&self, xi: &[f64], cols: usize, grad: &mut [f64]) -> f64;

    fn value(&self, xi: &[f64], cols: usize) -> f64 {
        let mut g = vec![0.0; xi.len()];
        self.value_grad(xi, cols, &mut g)
    }

    /// `(p, q)` of the growth condition.
    fn exponents(&self) -> (f64, f64);
}

fn column_norm(xi: &[f64], cols: usize, j: usize) -> f64 {
    xi.iter().skip(j).step_by(cols).map(|v| v * v).sum::<f64>().sqrt()
}

impl Integrand for IntegrandSpec {
    fn value_grad(&self, xi: &[f64], cols: usize, grad: &mut [f64]) -> f64 {
        let f = self.radial_part();
        let t = norm(xi);
        let factor = if t == 0.0 { 0.0 } else { f.deriv_over_t(t) };
        for (g, x) in grad.iter_mut().zip(xi) {
            *g = factor * x;
        }
        let mut value = f.value(t);
        for (j, term) in self.axis_terms().iter().enumerate() {
            if term.coeff == 0.0 || j >= cols {
                continue;
            }
            let s = column_norm(xi, cols, j);
            value += term.coeff * s.powf(term.exponent);
            if s > 0.0 {
                let fac = term.coeff * term.exponent * s.powf(term.exponent - 2.0);
                for (g, x) in grad.iter_mut().zip(xi).skip(j).step_by(cols) {
                    *g += fac * x;
                }
            }
        }
        value
    }

    fn value(&self, xi: &[f64], cols: usize) -> f64 {
        let mut value = self.radial_part().value(norm(xi));
        for (j, term) in self.axis_terms().iter().enumerate() {
            if term.coeff != 0.0 && j < cols {
                value += term.coeff * column_norm(xi, cols, j).powf(term.exponent);
            }
        }
        value
    }

    fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }
}

/// Value and exact gradient of a catalog integrand.
pub fn evaluate_with_derivative(spec: &IntegrandSpec, xi: &MatrixPoint) -> Result<(f64, MatrixPoint)> {
    if let Some(i) = xi.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(LabError::NonFinite { what: "matrix point", index: i });
    }
    spec.check_shape(xi.cols())?;
    let mut grad = vec![0.0; xi.as_slice().len()];
    let v = spec.value_grad(xi.as_slice(), xi.cols(), &mut grad);
    Ok((v, MatrixPoint { rows: xi.rows(), cols: xi.cols(), data: grad }))
}

/// `V_{p,μ}(ξ) = (μ² + |ξ|²)^{(p-2)/4} ξ` on a flat slice, with `V(0) = 0`.
pub fn v_slice(xi: &[f64], p: f64, mu: f64, out: &mut [f64]) {
    let s = mu * mu + dot(xi, xi);
    let factor = if s == 0.0 { 0.0 } else { s.powf((p - 2.0) / 4.0) };
    for (o, x) in out.iter_mut().zip(xi) {
        *o = factor * x;
    }
}

pub fn v_function(xi: &MatrixPoint, p: f64, mu: f64) -> MatrixPoint {
    let mut out = vec![0.0; xi.as_slice().len()];
    v_slice(xi.as_slice(), p, mu, &mut out);
    MatrixPoint { rows: xi.rows(), cols: xi.cols(), data: out }
}

/// `(|V(ξ) - V(η)|² / |ξ - η|²) ÷ (μ² + |ξ|² + |η|²)^{(p-2)/2}`, the quantity
/// bounded above and below by the `V`-function estimate.
pub fn v_ratio(xi: &[f64], eta: &[f64], p: f64, mu: f64) -> Option<f64> {
    let mut vx = vec![0.0; xi.len()];
    let mut ve = vec![0.0; xi.len()];
    v_slice(xi, p, mu, &mut vx);
    v_slice(eta, p, mu, &mut ve);
    let dv: f64 = vx.iter().zip(&ve).map(|(a, b)| (a - b) * (a - b)).sum();
    let dx: f64 = xi.iter().zip(eta).map(|(a, b)| (a - b) * (a - b)).sum();
    let bracket = (mu * mu + dot(xi, xi) + dot(eta, eta)).powf((p - 2.0) / 2.0);
    if dx == 0.0 || !bracket.is_finite() || bracket == 0.0 {
        return None;
    }
    Some(dv / dx / bracket)
}

/// Smallest `c ≥ 1` such that `t^p / c - c ≤ lo(t)` and `hi(t) ≤ c (t^q + 1)` on
/// `t ∈ {0} ∪ [1e-6, 1e6]`: a logarithmic scan refined by golden-section
/// search around the largest grid value.
pub fn envelope_constant_1d(lo: impl Fn(f64) -> f64, hi: impl Fn(f64) -> f64, p: f64, q: f64) -> f64 {
    let at = |t: f64| envelope_pointwise(lo(t), hi(t), t.powf(p), t.powf(q));
    let step = 0.01;
    let n = 1200;
    let log_t = |i: usize| -6.0 + i as f64 * step;
    let mut best = (at(0.0), None);
    for i in 0..=n {
        let v = at(10f64.powf(log_t(i)));
        if v > best.0 {
            best = (v, Some(i));
        }
    }
    let mut c = best.0;
    if let Some(i) = best.1 {
        let (mut a, mut b) = (log_t(i.saturating_sub(1)), log_t((i + 1).min(n)));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if at(10f64.powf(x1)) >= at(10f64.powf(x2)) {
                b = x2;
            } else {
                a = x1;
            }
        }
        c = c.max(at(10f64.powf(0.5 * (a + b))));
    }
    // c ≥ 1 keeps 1/c ≤ c, so both sides of the envelope use one constant
    c.max(1.0)
}

/// Limits as `t → ∞` of both envelope requirements for power sums
/// `Σ c_i t^{e_i}` (up to lower-order terms), given as `(c_i, e_i)` pairs.
pub fn envelope_asymptote(lo_terms: &[(f64, f64)], hi_terms: &[(f64, f64)], p: f64, q: f64) -> f64 {
    let leading = |terms: &[(f64, f64)]| {
        let mut exps: Vec<f64> = terms.iter().map(|t| t.1).collect();
        exps.sort_by(|a, b| b.total_cmp(a));
        exps.dedup();
        for e in exps {
            let c: f64 = terms.iter().filter(|t| t.1 == e).map(|t| t.0).sum();
            if c.abs() > 1e-15 {
                return (c, e);
            }
        }
        (0.0, 0.0)
    };
    let (cl, el) = leading(lo_terms);
    let lower = if el > p {
        0.0
    } else if el == p && cl > 0.0 {
        1.0 / cl
    } else {
        f64::INFINITY
    };
    let (ch, eh) = leading(hi_terms);
    let upper = if eh < q {
        0.0
    } else if eh == q {
        ch
    } else {
        f64::INFINITY
    };
    lower.max(upper)
}

/// Pointwise envelope requirement: `c ≥ hi / (t^q + 1)` and `c² + c·lo ≥ t^p`.
pub fn envelope_pointwise(lo: f64, hi: f64, tp: f64, tq: f64) -> f64 {
    let upper = hi / (tq + 1.0);
    let lower = envelope_lower(lo, tp);
    upper.max(lower)
}

/// Positive root of `c² + c·lo - t^p = 0`, computed without cancellation.
fn envelope_lower(lo: f64, tp: f64) -> f64 {
    let root = (lo * lo + 4.0 * tp).sqrt();
    if lo > 0.0 {
        2.0 * tp / (lo + root)
    } else {
        (root - lo) / 2.0
    }
}

/// Matrix pair sampler: Gaussian entries and sphere shells at scales
/// `{0.1, 1, 10}`, symmetric pairs `η = -ξ` and close pairs `η = ξ + 0.01·scale·g`.
pub struct PairSampler {
    rng: ChaCha20Rng,
    rows: usize,
    cols: usize,
    counter: usize,
}

pub const SAMPLE_SCALES: [f64; 3] = [0.1, 1.0, 10.0];

impl PairSampler {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        Self { rng: ChaCha20Rng::seed_from_u64(seed), rows, cols, counter: 0 }
    }

    fn gaussian(&mut self, scale: f64) -> Vec<f64> {
        (0..self.rows * self.cols).map(|_| scale * self.rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn shell(&mut self, radius: f64) -> Vec<f64> {
        loop {
            let g = self.gaussian(1.0);
            let n = norm(&g);
            if n > 1e-12 {
                let r = radius * self.rng.random_range(0.5..1.5);
                return g.iter().map(|v| v * r / n).collect();
            }
        }
    }

    /// Next `(ξ, η, scale)`.
    pub fn next_pair(&mut self) -> (Vec<f64>, Vec<f64>, f64) {
        let i = self.counter;
        self.counter += 1;
        let scale = SAMPLE_SCALES[i % 3];
        match (i / 3) % 4 {
            0 => {
                let xi = self.gaussian(scale);
                let eta = self.gaussian(scale);
                (xi, eta, scale)
            }
            1 => {
                let xi = self.shell(scale);
                let eta = self.shell(scale);
                (xi, eta, scale)
            }
            2 => {
                let xi = self.gaussian(scale);
                let eta = xi.iter().map(|v| -v).collect();
                (xi, eta, scale)
            }
            _ => {
                let xi = self.shell(scale);
                let g = self.gaussian(0.01 * scale);
                let eta = xi.iter().zip(&g).map(|(a, b)| a + b).collect();
                (xi, eta, scale)
            }
        }
    }
}

/// Outcome of [`check_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub kind: String,
    pub rows: usize,
    pub cols: usize,
    /// `max F(ξ) / (|ξ|^q + 1)`; the growth bound holds when this is at most `L`.
    pub h1_margin: f64,
    pub h1_ok: bool,
    /// Worst normalized midpoint defect of `F - ℓ⟨·⟩^p`.
    pub h2_midpoint_violation: f64,
    pub h2_flagged: bool,
    /// Where the worst defect occurred (`|ξ|`, `|η|`).
    pub h2_worst_pair_norms: (f64, f64),
    /// `min ⟨F'(ξ) - F'(η), ξ - η⟩ / (ℓ (μ² + |ξ|² + |η|²)^{(p-2)/2} |ξ - η|²)`.
    pub h2pp_ratio_min: f64,
    /// `max |F'(ξ)| / (2^q L (|ξ|^{q-1} + 1))`; at most 1 under the growth bound.
    pub lipschitz_margin: f64,
    /// Envelope constant needed for the lower bound `|ξ|^p / c - c ≤ F`.
    pub envelope_lower_c: f64,
    /// Envelope constant needed for the upper bound `F ≤ c(|ξ|^q + 1)`.
    pub envelope_upper_c: f64,
    /// `max(envelope_lower_c, envelope_upper_c)`.
    pub envelope_c: f64,
    /// Extremes of the `V`-function ratio; absent when `μ > 1`.
    pub v_ratio_min: Option<f64>,
    pub v_ratio_max: Option<f64>,
    /// `max(ratio_max, 1 / ratio_min)`.
    pub v_ratio_constant: Option<f64>,
    pub sample_count: usize,
    pub seed: u64,
}

/// Randomized check of the growth, convexity, monotonicity, Lipschitz and
/// envelope hypotheses on `1 × 2` matrices (a scalar problem in the plane),
/// or `1 × n` for a separable integrand with `n` axis terms.
pub fn check_hypotheses(spec: &IntegrandSpec, sample_count: usize, seed: u64) -> Result<HypothesisReport> {
    let cols = match spec.axis_terms().len() {
        0 => 2,
        axes => axes,
    };
    check_hypotheses_shaped(spec, 1, cols, sample_count, seed)
}

/// [`check_hypotheses`] on `rows × cols` matrices.
pub fn check_hypotheses_shaped(
    spec: &IntegrandSpec,
    rows: usize,
    cols: usize,
    sample_count: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if sample_count < 100 {
        return Err(LabError::param("sample_count", "need at least 100 samples"));
    }
    if rows == 0 || cols == 0 {
        return Err(LabError::param("shape", "matrix shape must be nonempty"));
    }
    spec.check_shape(cols)?;
    let (p, q, ell, mu) = (spec.p, spec.q, spec.ell, spec.mu);
    let base = |x: &[f64]| ell * (mu * mu + dot(x, x)).powf(p / 2.0);
    let phi = |x: &[f64]| spec.value(x, cols) - base(x);
    let lip_c = 2f64.powf(q) * spec.big_l;

    let mut sampler = PairSampler::new(rows, cols, seed);
    let len = rows * cols;
    let (mut gx, mut ge) = (vec![0.0; len], vec![0.0; len]);
    let mut h1_margin: f64 = 0.0;
    let mut h2 = 0.0f64;
    let mut h2_pair = (0.0, 0.0);
    let mut h2pp = f64::INFINITY;
    let mut lip: f64 = 0.0;
    let mut env_lo: f64 = 0.0;
    let mut env_hi: f64 = 0.0;
    let mu_in_range = (0.0..=1.0).contains(&mu);
    let (mut vr_min, mut vr_max) = (f64::INFINITY, 0.0f64);

    let mut visit = |x: &[f64], fx: f64, gx: &[f64]| {
        let t = norm(x);
        h1_margin = h1_margin.max(fx / (t.powf(q) + 1.0));
        lip = lip.max(norm(gx) / (lip_c * (t.powf(q - 1.0) + 1.0)));
        env_hi = env_hi.max(fx / (t.powf(q) + 1.0));
        env_lo = env_lo.max(envelope_lower(fx, t.powf(p)));
    };

    for _ in 0..sample_count {
        let (xi, eta, scale) = sampler.next_pair();
        let fx = spec.value_grad(&xi, cols, &mut gx);
        let fe = spec.value_grad(&eta, cols, &mut ge);
        if !fx.is_finite() || !fe.is_finite() {
            return Err(LabError::Numeric {
                stage: "check_hypotheses".into(),
                reason: "non-finite integrand value".into(),
            });
        }
        visit(&xi, fx, &gx);
        visit(&eta, fe, &ge);

        let mid: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| 0.5 * (a + b)).collect();
        let defect = phi(&mid) - 0.5 * (phi(&xi) + phi(&eta));
        let scale_v = 1.0 + fx.abs() + fe.abs() + scale;
        let normalized = defect / scale_v;
        if normalized > h2 {
            h2 = normalized;
            h2_pair = (norm(&xi), norm(&eta));
        }

        let diff: Vec<f64> = xi.iter().zip(&eta).map(|(a, b)| a - b).collect();
        let d2 = dot(&diff, &diff);
        if d2 > 0.0 {
            let mono: f64 = gx.iter().zip(&ge).zip(&diff).map(|((a, b), d)| (a - b) * d).sum();
            let bracket = (mu * mu + dot(&xi, &xi) + dot(&eta, &eta)).powf((p - 2.0) / 2.0);
            if bracket.is_finite() && bracket > 0.0 {
                h2pp = h2pp.min(mono / (ell * bracket * d2));
            }
        }
        if mu_in_range {
            if let Some(r) = v_ratio(&xi, &eta, p, mu) {
                vr_min = vr_min.min(r);
                vr_max = vr_max.max(r);
            }
        }
    }
    let (vr_min, vr_max, vr_c) = if mu_in_range && vr_min.is_finite() {
        (Some(vr_min), Some(vr_max), Some(vr_max.max(1.0 / vr_min)))
    } else {
        (None, None, None)
    };
    Ok(HypothesisReport {
        kind: spec.kind_name().to_string(),
        rows,
        cols,
        h1_margin,
        h1_ok: h1_margin <= spec.big_l * (1.0 + 1e-12),
        h2_midpoint_violation: h2,
        h2_flagged: h2 > 1e-9,
        h2_worst_pair_norms: h2_pair,
        h2pp_ratio_min: h2pp,
        lipschitz_margin: lip,
        envelope_lower_c: env_lo,
        envelope_upper_c: env_hi,
        envelope_c: env_lo.max(env_hi),
        v_ratio_min: vr_min,
        v_ratio_max: vr_max,
        v_ratio_constant: vr_c,
        sample_count,
        seed,
    })
}

/// Extremes of [`v_ratio`] over `samples` pairs of `rows × cols` matrices.
pub fn v_ratio_extremes(p: f64, mu: f64, rows: usize, cols: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut sampler = PairSampler::new(rows, cols, seed);
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for _ in 0..samples {
        let (xi, eta, _) = sampler.next_pair();
        if let Some(r) = v_ratio(&xi, &eta, p, mu) {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    (lo, hi)
}

/// `min Bregman_{|·|^p}(ξ, η) / |V_{p,0}(ξ) - V_{p,0}(η)|²` over sampled pairs,
/// the constant relating Bregman distances of `|·|^p` to `V`-distances.
pub fn bregman_v_constant(p: f64, rows: usize, cols: usize, samples: usize, seed: u64) -> f64 {
    let mut sampler = PairSampler::new(rows, cols, seed);
    let len = rows * cols;
    let (mut vx, mut ve) = (vec![0.0; len], vec![0.0; len]);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let (xi, eta, _) = sampler.next_pair();
        let ne = norm(&eta);
        let grad_fac = if ne == 0.0 { 0.0 } else { p * ne.powf(p - 2.0) };
        let lin: f64 = xi.iter().zip(&eta).map(|(a, b)| grad_fac * b * (a - b)).sum();
        let breg = norm(&xi).powf(p) - ne.powf(p) - lin;
        v_slice(&xi, p, 0.0, &mut vx);
        v_slice(&eta, p, 0.0, &mut ve);
        let dv: f64 = vx.iter().zip(&ve).map(|(a, b)| (a - b) * (a - b)).sum();
        if dv > 1e-300 {
            best = best.min(breg / dv);
        }
    }
    best
}

//! Legendre–Fenchel transforms of even one-dimensional profiles and their
//! radial or separable lifts to matrix space.
//!
//! Two evaluation paths coexist. [`conjugate_profile`] transforms sampled
//! profiles in linear time (lower hull, then a merge against sorted dual
//! points) and is what the regularization ladder runs on. [`ConjugateEvaluator`]
//! evaluates `f*(s)` at arbitrary points by solving `f'(t) = s`; it is exact
//! to rounding and backs the pointwise certificates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::fmt_f64;
use crate::integrands::{IntegrandKind, IntegrandSpec, Radial1d, RadialProfile};
use crate::numeric::{dot, norm};

/// Samples of a scalar function on the symmetric uniform grid
/// `t_i = -T + 2T i / (m - 1)`, `i = 0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    radius: f64,
    values: Vec<f64>,
    tag: Option<String>,
}

pub const MIN_PROFILE_POINTS: usize = 65;

impl Profile {
    pub fn new(radius: f64, values: Vec<f64>) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(LabError::param("radius", "profile radius must be positive and finite"));
        }
        if values.len() < MIN_PROFILE_POINTS {
            return Err(LabError::param("m", format!("need at least {MIN_PROFILE_POINTS} points")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "profile", index: i });
        }
        Ok(Self { radius, values, tag: None })
    }

    /// Samples `f` on `m` points of `[-radius, radius]`.
    pub fn sample(f: impl Fn(f64) -> f64, radius: f64, m: usize) -> Result<Self> {
        if m < MIN_PROFILE_POINTS {
            return Err(LabError::param("m", format!("need at least {MIN_PROFILE_POINTS} points")));
        }
        let h = 2.0 * radius / (m - 1) as f64;
        let values = (0..m).map(|i| f(grid_point(radius, h, i, m))).collect();
        Self::new(radius, values)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn tag(&self) -> Option<&str> {
        self.tag.as_deref()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> f64 {
        2.0 * self.radius / (self.values.len() - 1) as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        grid_point(self.radius, self.step(), i, self.values.len())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest negative second difference, `max(0, -(f_{i+1} - 2f_i + f_{i-1}))`.
    pub fn convexity_defect(&self) -> f64 {
        self.values.windows(3).map(|w| -(w[2] - 2.0 * w[1] + w[0])).fold(0.0, f64::max)
    }

    /// Convex up to `1e-9 · scale`, with scale the largest magnitude sampled.
    pub fn is_convex(&self) -> bool {
        let scale = self.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        self.convexity_defect() <= 1e-9 * scale
    }

    /// Piecewise-linear interpolation; `None` outside the grid.
    pub fn interpolate(&self, t: f64) -> Option<f64> {
        if !(t.abs() <= self.radius) {
            return None;
        }
        let h = self.step();
        let x = (t + self.radius) / h;
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let w = x - i as f64;
        Some(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    /// Two-column CSV `t,f`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "f"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([fmt_f64(self.t(i)), fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a two-column CSV on a symmetric uniform grid.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut ts = Vec::new();
        let mut fs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| LabError::param("csv", e.to_string()));
            ts.push(parse(&rec[0])?);
            fs.push(parse(&rec[1])?);
        }
        let radius = ts.last().copied().unwrap_or(0.0);
        let profile = Self::new(radius, fs)?;
        for (i, t) in ts.iter().enumerate() {
            if (t - profile.t(i)).abs() > 1e-9 * (1.0 + radius) {
                return Err(LabError::ShapeMismatch("profile grid is not symmetric and uniform".into()));
            }
        }
        Ok(profile)
    }
}

#[inline]
fn grid_point(radius: f64, h: f64, i: usize, m: usize) -> f64 {
    // mirror the upper half so the grid is exactly symmetric
    if 2 * i + 1 >= m {
        radius - (m - 1 - i) as f64 * h
    } else {
        -radius + i as f64 * h
    }
}

/// Dual evaluation points: a symmetric uniform grid on `[-radius, radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualGrid {
    pub radius: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConjugateOptions {
    /// Accept dual points whose supremum sits at the primal boundary
    /// (the result is then the conjugate of the truncated profile).
    pub allow_boundary: bool,
    /// Refine each maximizer with the local parabola through the hull vertex
    /// and its grid neighbours, where the sampled profile is locally convex.
    pub refine: bool,
}

/// `g(s) = max_i (s t_i - f(t_i))` on the dual grid, in `O(m + k)`.
pub fn conjugate_profile(f: &Profile, dual: DualGrid) -> Result<Profile> {
    conjugate_profile_with(f, dual, ConjugateOptions::default())
}

pub fn conjugate_profile_with(f: &Profile, dual: DualGrid, opts: ConjugateOptions) -> Result<Profile> {
    let m = f.len();
    let h = f.step();
    let ts: Vec<f64> = (0..m).map(|i| f.t(i)).collect();
    let fv = f.values();

    // lower convex hull by monotone chain
    let mut hull: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (ts[b] - ts[a]) * (fv[i] - fv[a]) - (fv[b] - fv[a]) * (ts[i] - ts[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let slopes: Vec<f64> = hull.windows(2).map(|w| (fv[w[1]] - fv[w[0]]) / (ts[w[1]] - ts[w[0]])).collect();

    if dual.points < MIN_PROFILE_POINTS {
        return Err(LabError::param("dual points", format!("need at least {MIN_PROFILE_POINTS} points")));
    }
    let hs = 2.0 * dual.radius / (dual.points - 1) as f64;
    let mut out = Vec::with_capacity(dual.points);
    let mut j = 0usize;
    for k in 0..dual.points {
        let s = grid_point(dual.radius, hs, k, dual.points);
        if !opts.allow_boundary && (s < slopes[0] || s > slopes[slopes.len() - 1]) {
            return Err(LabError::TruncationRadius { dual_point: s });
        }
        // vertex j is optimal when slopes[j-1] <= s <= slopes[j]
        while j < slopes.len() && slopes[j] < s {
            j += 1;
        }
        let i = hull[j];
        let mut g = s * ts[i] - fv[i];
        if opts.refine
            && i > 0
            && i + 1 < m
            && j > 0
            && j + 1 < hull.len()
            && hull[j - 1] == i - 1
            && hull[j + 1] == i + 1
        {
            let a = (fv[i + 1] - 2.0 * fv[i] + fv[i - 1]) / (2.0 * h * h);
            let b = (fv[i + 1] - fv[i - 1]) / (2.0 * h);
            if a > 0.0 {
                let d = ((s - b) / (2.0 * a)).clamp(-h, h);
                let refined = s * (ts[i] + d) - (fv[i] + b * d + a * d * d);
                g = g.max(refined);
            }
        }
        out.push(g);
    }
    Profile::new(dual.radius, out)
}

/// `O(m k)` reference transform.
pub fn brute_force_conjugate(f: &Profile, dual: DualGrid) -> Vec<f64> {
    let hs = 2.0 * dual.radius / (dual.points - 1) as f64;
    (0..dual.points)
        .map(|k| {
            let s = grid_point(dual.radius, hs, k, dual.points);
            (0..f.len()).map(|i| s * f.t(i) - f.values()[i]).fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Pointwise conjugate of an even convex profile with strictly increasing
/// derivative on `t ≥ 0`: `f*(s) = s t* - f(t*)` where `f'(t*) = |s|`.
#[derive(Debug, Clone)]
pub struct ConjugateEvaluator<R> {
    f: R,
}

impl<R: Radial1d> ConjugateEvaluator<R> {
    pub fn new(f: R) -> Self {
        Self { f }
    }

    pub fn inner(&self) -> &R {
        &self.f
    }

    /// The maximizer `t* ≥ 0` for `|s|`, found by bracketing and bisection to
    /// adjacent floating-point numbers.
    pub fn argmax(&self, s: f64) -> Result<f64> {
        let s = s.abs();
        if !s.is_finite() {
            return Err(LabError::NonFinite { what: "dual point", index: 0 });
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.f.deriv(hi) < s {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 1100 || !hi.is_finite() {
                return Err(LabError::TruncationRadius { dual_point: s });
            }
        }
        for _ in 0..2200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.f.deriv(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // pick the endpoint with the larger objective
        let vl = s * lo - self.f.value(lo);
        let vh = s * hi - self.f.value(hi);
        Ok(if vh >= vl { hi } else { lo })
    }

    pub fn value(&self, s: f64) -> Result<f64> {
        let t = self.argmax(s)?;
        Ok(s.abs() * t - self.f.value(t))
    }

    /// Central difference of [`Self::value`] with step `1e-5 (1 + |s|)`.
    pub fn numerical_derivative(&self, s: f64) -> Result<f64> {
        let d = 1e-5 * (1.0 + s.abs());
        Ok((self.value(s + d)? - self.value(s - d)?) / (2.0 * d))
    }
}

/// How a matrix-space integrand is reduced to one-dimensional profiles.
#[derive(Debug, Clone, PartialEq)]
pub enum Lift<R> {
    /// `F(ξ) = f(|ξ|)`.
    Radial(R),
    /// `F(ξ) = Σ_j f_j(|ξ e_j|)`, one profile per column.
    Separable(Vec<R>),
}

impl<R: Radial1d> Lift<R> {
    pub fn value(&self, xi: &[f64], cols: usize) -> f64 {
        match self {
            Lift::Radial(f) => f.value(norm(xi)),
            Lift::Separable(fs) => fs.iter().enumerate().map(|(j, f)| f.value(column_norm(xi, cols, j))).sum(),
        }
    }

    pub fn value_grad(&self, xi: &[f64], cols: usize, grad: &mut [f64]) -> f64 {
        match self {
            Lift::Radial(f) => {
                let t = norm(xi);
                let d = f.deriv(t);
                let fac = if t > 0.0 { d / t } else { 0.0 };
                for (g, x) in grad.iter_mut().zip(xi) {
                    *g = fac * x;
                }
                f.value(t)
            }
            Lift::Separable(fs) => {
                let mut v = 0.0;
                for (j, f) in fs.iter().enumerate() {
                    let t = column_norm(xi, cols, j);
                    v += f.value(t);
                    let fac = if t > 0.0 { f.deriv(t) / t } else { 0.0 };
                    for (g, x) in grad.iter_mut().zip(xi).skip(j).step_by(cols) {
                        *g = fac * x;
                    }
                }
                v
            }
        }
    }

    pub fn profiles(&self) -> Vec<&R> {
        match self {
            Lift::Radial(f) => vec![f],
            Lift::Separable(fs) => fs.iter().collect(),
        }
    }
}

pub(crate) fn column_norm(xi: &[f64], cols: usize, j: usize) -> f64 {
    xi.iter().skip(j).step_by(cols).map(|v| v * v).sum::<f64>().sqrt()
}

/// Reduces a catalog integrand to profiles. Separable integrands reduce
/// columnwise only when `p = 2` and `μ = 0`, where `⟨ξ⟩^p = Σ_j |ξ e_j|²`.
pub fn profile_lift(spec: &IntegrandSpec) -> Result<Lift<RadialProfile>> {
    match &spec.kind {
        IntegrandKind::SeparableAnisotropic { base_coeff, axis_terms } => {
            if spec.p != 2.0 || spec.mu != 0.0 {
                return Err(LabError::Unsupported(
                    "separable integrands reduce to column profiles only for p = 2 and mu = 0".into(),
                ));
            }
            Ok(Lift::Separable(
                axis_terms
                    .iter()
                    .map(|t| {
                        let mut terms = vec![(*base_coeff, 2.0)];
                        if t.coeff != 0.0 {
                            terms.push((t.coeff, t.exponent));
                        }
                        RadialProfile { mu: 0.0, terms }
                    })
                    .collect(),
            ))
        }
        _ => Ok(Lift::Radial(spec.radial_part())),
    }
}

/// How the polar integrand is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolarRepresentation {
    /// `F = a|ξ|^p` gives `F*(ζ) = (1 - 1/p)(a p)^{-1/(p-1)} |ζ|^{p'}`.
    ClosedFormPower { coeff: f64, p: f64 },
    /// `F*(ζ) = f*(|ζ|)`.
    Radial,
    /// `F*(ζ) = Σ_j f_j*(|ζ e_j|)`.
    Separable,
}

/// The polar integrand `F*` with the growth constants of the polar envelope
/// `c3 |ζ|^{q'} - c2 ≤ F*(ζ) ≤ c4 |ζ|^{p'} + c2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolarSpec {
    pub representation: PolarRepresentation,
    pub p: f64,
    pub q: f64,
    pub p_prime: f64,
    pub q_prime: f64,
    /// Envelope of `F`: `c1 |ξ|^p - c2 ≤ F(ξ) ≤ c2 (|ξ|^q + 1)`.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    /// Largest `|F'(ξ)|` accepted by the gradient-inverse check.
    pub certified_radius: f64,
    #[serde(skip)]
    lift: Option<Lift<RadialProfile>>,
}

impl PolarSpec {
    /// Primal truncation radius with every maximizer for `|s| ≤ dual_radius`
    /// inside `[-T/2, T/2]`, from `f(t*) ≤ s t* + f(0)` and `f(t) ≥ c1 t^p - c2`.
    pub fn truncation_radius(&self, dual_radius: f64) -> f64 {
        let f0 = self.lift.as_ref().map_or(0.0, |l| l.profiles().iter().map(|f| f.value(0.0)).fold(0.0, f64::max));
        let r = ((dual_radius + self.c2 + f0) / self.c1).powf(1.0 / (self.p - 1.0));
        2.0 * r.max(1.0)
    }

    /// Conjugate of a single profile at `s`.
    fn profile_conjugate(&self, f: &RadialProfile, s: f64) -> Result<f64> {
        match self.representation {
            PolarRepresentation::ClosedFormPower { coeff, p } => {
                Ok((1.0 - 1.0 / p) * (coeff * p).powf(-1.0 / (p - 1.0)) * s.abs().powf(p / (p - 1.0)))
            }
            _ => ConjugateEvaluator::new(f.clone()).value(s),
        }
    }

    /// `F*(ζ)` for a flat `N × cols` matrix.
    pub fn value(&self, zeta: &[f64], cols: usize) -> Result<f64> {
        if let Some(i) = zeta.iter().position(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { what: "dual matrix", index: i });
        }
        match self.lift.as_ref().expect("polar built without lift") {
            Lift::Radial(f) => self.profile_conjugate(f, norm(zeta)),
            Lift::Separable(fs) => {
                let mut total = 0.0;
                for (j, f) in fs.iter().enumerate() {
                    total += self.profile_conjugate(f, column_norm(zeta, cols, j))?;
                }
                Ok(total)
            }
        }
    }

    /// `(F*)'(ζ)` by central differences of the profile conjugates.
    pub fn numerical_gradient(&self, zeta: &[f64], cols: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; zeta.len()];
        let lift = self.lift.as_ref().expect("polar built without lift");
        let deriv = |f: &RadialProfile, s: f64| -> Result<f64> {
            let d = 1e-5 * (1.0 + s.abs());
            Ok((self.profile_conjugate(f, s + d)? - self.profile_conjugate(f, s - d)?) / (2.0 * d))
        };
        match lift {
            Lift::Radial(f) => {
                let s = norm(zeta);
                if s > 0.0 {
                    let fac = deriv(f, s)? / s;
                    for (o, z) in out.iter_mut().zip(zeta) {
                        *o = fac * z;
                    }
                }
            }
            Lift::Separable(fs) => {
                for (j, f) in fs.iter().enumerate() {
                    let s = column_norm(zeta, cols, j);
                    if s > 0.0 {
                        let fac = deriv(f, s)? / s;
                        for (o, z) in out.iter_mut().zip(zeta).skip(j).step_by(cols) {
                            *o = fac * z;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Sampled conjugate profiles (one per lifted profile) on `[-dual_radius, dual_radius]`,
    /// computed by the discrete transform on a primal grid of radius
    /// [`Self::truncation_radius`].
    pub fn sampled_profiles(&self, dual_radius: f64, primal_points: usize, dual_points: usize) -> Result<Vec<Profile>> {
        let t = self.truncation_radius(dual_radius);
        let lift = self.lift.as_ref().expect("polar built without lift");
        lift.profiles()
            .into_iter()
            .map(|f| {
                let prof = Profile::sample(|x| f.value(x), t, primal_points)?;
                conjugate_profile_with(
                    &prof,
                    DualGrid { radius: dual_radius, points: dual_points },
                    ConjugateOptions { allow_boundary: false, refine: true },
                )
                .map(|p| p.with_tag("conjugate"))
            })
            .collect()
    }
}

/// The polar of a radial or (for `p = 2`, `μ = 0`) separable catalog integrand.
pub fn polar(spec: &IntegrandSpec) -> Result<PolarSpec> {
    spec.validate()?;
    let lift = profile_lift(spec)?;
    let representation = match (&spec.kind, spec.mu == 0.0) {
        (IntegrandKind::RadialPower { coeff }, true) => {
            PolarRepresentation::ClosedFormPower { coeff: *coeff, p: spec.p }
        }
        (IntegrandKind::Quadratic { coeff }, true) => PolarRepresentation::ClosedFormPower { coeff: *coeff, p: 2.0 },
        (IntegrandKind::SeparableAnisotropic { .. }, _) => PolarRepresentation::Separable,
        _ => PolarRepresentation::Radial,
    };
    let c = spec.envelope_constant();
    let (c1, c2) = (1.0 / c, c);
    let (p, q) = (spec.p, spec.q);
    let (c3, c4) = polar_growth_constants(c1, c2, p, q);
    let (p_prime, q_prime) = spec.conjugate_exponents();
    Ok(PolarSpec { representation, p, q, p_prime, q_prime, c1, c2, c3, c4, certified_radius: 1e6, lift: Some(lift) })
}

/// `c3 = c2^{-1/(q-1)} (1 - 1/q) q^{-1/(q-1)}`, `c4 = c1^{-1/(p-1)} (1 - 1/p) p^{-1/(p-1)}`.
pub fn polar_growth_constants(c1: f64, c2: f64, p: f64, q: f64) -> (f64, f64) {
    let c3 = c2.powf(-1.0 / (q - 1.0)) * (1.0 - 1.0 / q) * q.powf(-1.0 / (q - 1.0));
    let c4 = c1.powf(-1.0 / (p - 1.0)) * (1.0 - 1.0 / p) * p.powf(-1.0 / (p - 1.0));
    (c3, c4)
}

/// `F*(ζ) + F(ξ) - ⟨ζ, ξ⟩`, nonnegative up to the conjugate tolerance.
pub fn young_gap(spec: &IntegrandSpec, xi: &[f64], zeta: &[f64], cols: usize) -> Result<f64> {
    let pol = polar(spec)?;
    young_gap_with(&pol, spec, xi, zeta, cols)
}

pub fn young_gap_with(pol: &PolarSpec, spec: &IntegrandSpec, xi: &[f64], zeta: &[f64], cols: usize) -> Result<f64> {
    use crate::integrands::Integrand;
    if xi.len() != zeta.len() {
        return Err(LabError::ShapeMismatch("xi and zeta differ in size".into()));
    }
    Ok(pol.value(zeta, cols)? + spec.value(xi, cols) - dot(zeta, xi))
}

/// Tolerance of the gradient-inverse check at `ξ`.
pub fn inverse_gradient_tolerance(xi_norm: f64) -> f64 {
    1e-6 * (1.0 + xi_norm)
}

/// `|(F*)'(F'(ξ)) - ξ|` with `(F*)'` from central differences of the conjugate.
pub fn inverse_gradient_check(spec: &IntegrandSpec, xi: &[f64], cols: usize) -> Result<f64> {
    use crate::integrands::Integrand;
    let pol = polar(spec)?;
    let mut zeta = vec![0.0; xi.len()];
    spec.value_grad(xi, cols, &mut zeta);
    if norm(&zeta) > pol.certified_radius {
        return Err(LabError::param("xi", "F'(xi) lies outside the certified polar radius"));
    }
    let back = pol.numerical_gradient(&zeta, cols)?;
    Ok(back.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dual(radius: f64, points: usize) -> DualGrid {
        DualGrid { radius, points }
    }

    #[test]
    fn half_square_is_self_conjugate() {
        let f = Profile::sample(|t| 0.5 * t * t, 8.0, (1 << 16) + 1).unwrap();
        let g = conjugate_profile(&f, dual(4.0, 1025)).unwrap();
        for i in 0..g.len() {
            let s = g.t(i);
            assert!((g.values()[i] - 0.5 * s * s).abs() <= 1e-6);
        }
    }

    #[test]
    fn cubic_power_duality() {
        let f = Profile::sample(|t| t.abs().powi(3) / 3.0, 4.0, (1 << 16) + 1).unwrap();
        let g = conjugate_profile(&f, dual(4.0, 1025)).unwrap();
        for i in 0..g.len() {
            let s = g.t(i);
            let exact = s.abs().powf(1.5) / 1.5;
            assert!((g.values()[i] - exact).abs() <= 1e-6, "s={s}");
        }
    }

    #[test]
    fn quartic_at_four() {
        // argmax of 4t - t⁴ is t = 1
        let f = Profile::sample(|t| t.powi(4), 2.0, 4001).unwrap();
        let g = conjugate_profile(&f, dual(4.0, 65)).unwrap();
        assert!((g.values()[64] - 3.0).abs() < 1e-12);
        let brute = brute_force_conjugate(&f, dual(4.0, 65));
        assert!((brute[64] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn merge_matches_brute_force() {
        let f = Profile::sample(|t| (t - 0.3).powi(2) + (2.0 * t).cos() * 0.1 + t.abs(), 3.0, 401).unwrap();
        let d = dual(2.5, 301);
        let g = conjugate_profile(&f, d).unwrap();
        let brute = brute_force_conjugate(&f, d);
        for (a, b) in g.values().iter().zip(&brute) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn truncation_is_rejected() {
        let f = Profile::sample(|t| 0.5 * t * t, 1.0, 129).unwrap();
        let err = conjugate_profile(&f, dual(2.0, 65)).unwrap_err();
        assert!(matches!(err, LabError::TruncationRadius { .. }));
        assert!(err.to_string().contains("truncation radius too small"));
        let ok = conjugate_profile_with(&f, dual(2.0, 65), ConjugateOptions { allow_boundary: true, refine: false });
        assert!(ok.is_ok());
    }

    #[test]
    fn bipolar_of_nonconvex_is_convex_minorant() {
        let f = Profile::sample(|t| t.powi(4) - t * t, 2.0, 2001).unwrap();
        assert!(!f.is_convex());
        let g = conjugate_profile_with(&f, dual(24.0, 4001), ConjugateOptions { allow_boundary: true, refine: false })
            .unwrap();
        let ff = conjugate_profile_with(&g, dual(2.0, 2001), ConjugateOptions { allow_boundary: true, refine: false })
            .unwrap();
        for i in 0..ff.len() {
            assert!(ff.values()[i] <= f.values()[i] + 1e-9);
        }
        assert!(ff.is_convex());
        // the envelope is flat at its minimum -1/4 between ±1/√2
        let mid = ff.len() / 2;
        assert!((ff.values()[mid] + 0.25).abs() < 1e-3);
    }

    #[test]
    fn evaluator_matches_closed_forms() {
        let f = RadialProfile { mu: 0.0, terms: vec![(0.5, 2.0)] };
        let e = ConjugateEvaluator::new(f);
        for s in [-3.0, -0.2, 0.0, 0.7, 11.0] {
            assert!((e.value(s).unwrap() - 0.5 * s * s).abs() < 1e-13 * (1.0 + s * s));
        }
        let f = RadialProfile { mu: 0.0, terms: vec![(1.0, 4.0)] };
        let e = ConjugateEvaluator::new(f);
        assert!((e.value(4.0).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn polar_constants_for_quadratic_envelope() {
        let (c3, c4) = polar_growth_constants(1.0, 1.0, 2.0, 2.0);
        assert!((c3 - 0.25).abs() < 1e-15);
        assert!((c4 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn half_square_polar_and_young_gap() {
        let spec = IntegrandSpec::radial_power(2.0, 0.5, 0.0).unwrap();
        let pol = polar(&spec).unwrap();
        assert!(matches!(pol.representation, PolarRepresentation::ClosedFormPower { .. }));
        let z = [0.3, -1.1];
        assert!((pol.value(&z, 2).unwrap() - 0.5 * (0.09 + 1.21)).abs() < 1e-15);
        assert!(young_gap(&spec, &[1.0, 0.0], &[1.0, 0.0], 2).unwrap().abs() < 1e-15);
        assert!((young_gap(&spec, &[1.0, 0.0], &[0.0, 0.0], 2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separable_polar_requires_p2_mu0() {
        use crate::integrands::AxisTerm;
        let terms = vec![AxisTerm { coeff: 1.0, exponent: 3.0 }, AxisTerm { coeff: 0.0, exponent: 2.0 }];
        let spec = IntegrandSpec::separable(2.0, 1.0, terms.clone(), 0.0).unwrap();
        let pol = polar(&spec).unwrap();
        assert_eq!(pol.representation, PolarRepresentation::Separable);
        let spec =
            IntegrandSpec::separable(3.0, 1.0, vec![AxisTerm { coeff: 1.0, exponent: 3.5 }, terms[1]], 0.0).unwrap();
        assert!(matches!(polar(&spec), Err(LabError::Unsupported(_))));
    }

    #[test]
    fn inverse_gradient_examples() {
        let quad = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        assert!(inverse_gradient_check(&quad, &[0.4, -2.0], 2).unwrap() < 1e-8);
        let cubic = IntegrandSpec::radial_power(3.0, 1.0 / 3.0, 0.0).unwrap();
        assert!(inverse_gradient_check(&cubic, &[1.0, 0.0], 2).unwrap() < 1e-5);
        let p15 = IntegrandSpec::radial_power(1.5, 1.0, 0.0).unwrap();
        for r in [1e-2, 1e-3, 1e-4] {
            let d = inverse_gradient_check(&p15, &[r, 0.0], 2).unwrap();
            assert!(d <= inverse_gradient_tolerance(r), "r={r} d={d}");
        }
    }

    #[test]
    fn profile_csv_round_trip() {
        let f = Profile::sample(|t| t.cosh(), 1.5, 65).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = Profile::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.radius(), f.radius());
    }
}

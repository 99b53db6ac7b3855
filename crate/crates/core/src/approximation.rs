//! The ladder of regularized integrands `F_k ↗ F`.
//!
//! For `G = F - (ℓ/2)|·|^p` each rung is built as
//!
//! ```text
//! G_k   = sup_{|z| ≤ k} (⟨·, z⟩ - G*(z))          k-Lipschitz
//! G̃_k   = max(G_k, |·|^p / c - c)
//! H_k   = G̃_k on |ξ| ≤ r_k, tangent line of the coercive branch beyond
//! F_k   = Φ_{δ_k} * H_k - μ_k + (ℓ/2)|·|^p,   δ_k = 1/(k² m_k),  μ_k = 1/(k-1)
//! ```
//!
//! All stages run on one-dimensional profiles: the radial profile of a
//! radial integrand, or one profile per column for a separable integrand.
//! The mollification is the one-dimensional convolution of the even profile.
//!
//! `G_k` is evaluated in closed form from `t_k` with `g'(t_k) = k`: it is
//! `g(t)` for `|t| ≤ t_k` and `k|t| - g*(k)` beyond. At build time the closed
//! form is cross-checked against the discrete double transform of the
//! sampled `G`.

use std::io::Write;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::grid::fmt_f64;
use crate::integrands::{envelope_asymptote, envelope_constant_1d, Integrand, IntegrandSpec, Radial1d, RadialProfile};
use crate::legendre::{
    conjugate_profile_with, profile_lift, ConjugateEvaluator, ConjugateOptions, DualGrid, Lift, Profile,
};
use crate::numeric::{gauss_legendre_33, norm};

/// `∫_{-1}^{1} exp(1/(t² - 1)) dt`.
pub const KERNEL_INTEGRAL: f64 = 0.443_993_816_168_079_4;

/// Normalization of the one-dimensional kernel `Φ(t) = c_Φ exp(1/(t² - 1))`.
pub const KERNEL_NORMALIZATION: f64 = 1.0 / KERNEL_INTEGRAL;

/// The smooth bump `Φ(t) = c_Φ exp(1/(t² - 1))` on `|t| < 1`, zero elsewhere.
pub fn kernel(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        KERNEL_NORMALIZATION * (1.0 / (t * t - 1.0)).exp()
    }
}

/// Points per axis of the sampled profiles used for `G*` and the `G_k` cross-check.
pub const LADDER_PROFILE_POINTS: usize = (1 << 16) + 1;

/// Spacing of the grid on which `r_k` is located.
pub const SWITCH_GRID_STEP: f64 = 1.0 / 256.0;

/// `δ_k = 1/(k² m_k)` and `μ_k = 1/(k - 1)` as exact rationals.
pub fn schedule(k: u64, m_k: u64) -> Result<(Ratio<i64>, Ratio<i64>)> {
    if k < 2 || m_k == 0 {
        return Err(LabError::param("k", "need k >= 2 and m_k >= 1"));
    }
    let den = (k as i64)
        .checked_mul(k as i64)
        .and_then(|v| v.checked_mul(m_k as i64))
        .ok_or_else(|| LabError::param("k", "schedule overflows i64"))?;
    Ok((Ratio::new(1, den), Ratio::new(1, k as i64 - 1)))
}

/// `g(t) = f(|t|) - (ℓ/2)|t|^p`.
#[derive(Debug, Clone)]
struct GProfile {
    f: RadialProfile,
    half_ell: f64,
    p: f64,
}

impl Radial1d for GProfile {
    fn value(&self, t: f64) -> f64 {
        let a = t.abs();
        self.f.value(a) - self.half_ell * a.powf(self.p)
    }

    fn deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        let d = self.f.deriv(a) - self.half_ell * self.p * a.powf(self.p - 1.0);
        d.copysign(t)
    }
}

/// One ladder rung on a single profile.
#[derive(Debug, Clone)]
pub struct LevelProfile {
    g: GProfile,
    c: f64,
    k: f64,
    t_k: f64,
    gstar_k: f64,
    t_c: f64,
    t_cross: f64,
    r_k: f64,
    slope_out: f64,
    offset_out: f64,
    delta: f64,
    mu_k: f64,
    breakpoints: Vec<f64>,
    single_piece: Vec<(f64, f64)>,
    gstar: Profile,
    gk_check_error: f64,
}

/// Per-profile constants of a rung.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileConstants {
    /// `g'(t_k) = k`.
    pub t_k: f64,
    /// `g*(k)`.
    pub gstar_k: f64,
    /// Grid point from which the coercive branch wins for good.
    pub t_c: f64,
    /// Exact last crossing of `G_k` and the coercive branch.
    pub t_cross: f64,
    pub r_k: f64,
    /// Worst relative mismatch between the closed-form and the discrete `G_k`.
    pub gk_check_error: f64,
}

impl LevelProfile {
    fn coercive(&self, t: f64) -> f64 {
        t.abs().powf(self.g.p) / self.c - self.c
    }

    fn coercive_deriv(&self, t: f64) -> f64 {
        (self.g.p / self.c * t.abs().powf(self.g.p - 1.0)).copysign(t)
    }

    pub fn g(&self, t: f64) -> f64 {
        self.g.value(t)
    }

    pub fn g_star(&self, s: f64) -> f64 {
        self.gstar.interpolate(s).unwrap_or(f64::NAN)
    }

    pub fn g_k(&self, t: f64) -> f64 {
        let a = t.abs();
        if a <= self.t_k {
            self.g.value(a)
        } else {
            self.k * a - self.gstar_k
        }
    }

    fn g_k_deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        let d = if a <= self.t_k { self.g.deriv(a) } else { self.k };
        d.copysign(t)
    }

    pub fn g_tilde(&self, t: f64) -> f64 {
        self.g_k(t).max(self.coercive(t))
    }

    pub fn h(&self, t: f64) -> f64 {
        let a = t.abs();
        if a > self.r_k {
            self.slope_out * a - self.offset_out
        } else {
            self.g_tilde(a)
        }
    }

    pub fn h_deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        let d = if a > self.r_k {
            self.slope_out
        } else if self.coercive(a) > self.g_k(a) {
            self.coercive_deriv(a)
        } else {
            self.g_k_deriv(a)
        };
        d.copysign(t)
    }

    /// `(Φ_δ * H)(t)` and `(Φ_δ * H')(t)` by 33-point Gauss–Legendre on each
    /// piece of `[-1, 1]` between the (mirrored) kinks of `H`, with the
    /// weights renormalized to unit mass.
    fn convolve(&self, t: f64) -> (f64, f64) {
        let mut taus: Vec<f64> = Vec::new();
        for &b in &self.breakpoints {
            for bb in [b, -b] {
                let tau = (t - bb) / self.delta;
                if tau.abs() < 1.0 {
                    taus.push(tau);
                    taus.push(-tau);
                }
            }
        }
        let (mut v, mut d, mut mass) = (0.0, 0.0, 0.0);
        if taus.is_empty() {
            for &(x, w) in &self.single_piece {
                let s = t - self.delta * x;
                v += w * self.h(s);
                d += w * self.h_deriv(s);
                mass += w;
            }
        } else {
            taus.push(-1.0);
            taus.push(1.0);
            taus.sort_by(f64::total_cmp);
            taus.dedup();
            let (nodes, weights) = gauss_legendre_33();
            for ab in taus.windows(2) {
                let (a, b) = (ab[0], ab[1]);
                let half = 0.5 * (b - a);
                let mid = 0.5 * (a + b);
                for (xi, wi) in nodes.iter().zip(weights) {
                    let x = mid + half * xi;
                    let w = wi * half * kernel(x);
                    let s = t - self.delta * x;
                    v += w * self.h(s);
                    d += w * self.h_deriv(s);
                    mass += w;
                }
            }
        }
        (v / mass, d / mass)
    }

    /// `(Φ_{δ_k} * H_k)(t)`.
    pub fn mollified(&self, t: f64) -> f64 {
        self.convolve(t).0
    }

    pub fn constants(&self) -> ProfileConstants {
        ProfileConstants {
            t_k: self.t_k,
            gstar_k: self.gstar_k,
            t_c: self.t_c,
            t_cross: self.t_cross,
            r_k: self.r_k,
            gk_check_error: self.gk_check_error,
        }
    }

    /// The unmollified profile `H_k - μ_k + (ℓ/2)|t|^p`, which `F_k` exceeds by at most `m_k δ_k`.
    pub fn unmollified(&self, t: f64) -> f64 {
        self.h(t) - self.mu_k + self.g.half_ell * t.abs().powf(self.g.p)
    }
}

impl Radial1d for LevelProfile {
    fn value(&self, t: f64) -> f64 {
        self.convolve(t).0 - self.mu_k + self.g.half_ell * t.abs().powf(self.g.p)
    }

    fn deriv(&self, t: f64) -> f64 {
        let a = t.abs();
        let d = self.convolve(a).1 + self.g.half_ell * self.g.p * a.powf(self.g.p - 1.0);
        d.copysign(t)
    }
}

/// Stage results before the rung-wide `m_k` is known.
struct ProfileStages {
    g: GProfile,
    t_k: f64,
    gstar_k: f64,
    t_c: f64,
    t_cross: f64,
    r_k: f64,
    gstar: Profile,
    gk_check_error: f64,
}

fn profile_envelope(g: &GProfile, q: f64) -> f64 {
    let mut terms = g.f.terms.clone();
    terms.push((-g.half_ell, g.p));
    let tail = envelope_asymptote(&terms, &terms, g.p, q);
    envelope_constant_1d(|t| g.value(t), |t| g.value(t), g.p, q).max(tail)
}

fn run_stages(g: GProfile, k: u64, c: f64) -> Result<ProfileStages> {
    let kf = k as f64;
    let eval = ConjugateEvaluator::new(g.clone());
    let t_k = eval.argmax(kf)?;
    let gstar_k = kf * t_k - g.value(t_k);

    // G on a grid wide enough for every maximizer with |s| ≤ 2k, then G*.
    let t2k = eval.argmax(2.0 * kf)?;
    let radius = 2.0 * t2k.max(1.0);
    let gprof = Profile::sample(|t| g.value(t), radius, LADDER_PROFILE_POINTS)?.with_tag("G");
    let defect = gprof.convexity_defect();
    if !gprof.is_convex() {
        return Err(LabError::NonConvex { stage: "G", defect });
    }
    let refine = ConjugateOptions { allow_boundary: false, refine: true };
    let gstar = conjugate_profile_with(&gprof, DualGrid { radius: 2.0 * kf, points: LADDER_PROFILE_POINTS }, refine)?
        .with_tag("G*");

    // coercive branch vs G_k: last crossing, scanned downward on a dyadic grid
    let coercive = |t: f64| t.powf(g.p) / c - c;
    let g_k = |t: f64| if t <= t_k { g.value(t) } else { kf * t - gstar_k };
    let d = |t: f64| coercive(t) - g_k(t);
    let t_min = (kf * c / g.p).powf(1.0 / (g.p - 1.0));
    let mut top = t_k.max(t_min).max(1.0);
    let mut guard = 0;
    while d(top) < 0.0 {
        top *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(LabError::Numeric { stage: "r_k".into(), reason: "coercive branch never dominates".into() });
        }
    }
    let h = SWITCH_GRID_STEP;
    let mut j = (top / h).ceil() as u64;
    while j > 0 && d((j - 1) as f64 * h) >= 0.0 {
        j -= 1;
    }
    let t_c = j as f64 * h;
    let mut t_cross = t_c;
    if j > 0 {
        let (mut lo, mut hi) = (t_c - h, t_c);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if d(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        t_cross = hi;
    }
    let r_k = t_c + 1.0;

    // cross-check the closed-form G_k against the discrete transform of G* restricted to |z| ≤ k
    let quarter = (LADDER_PROFILE_POINTS - 1) / 4;
    let restricted = Profile::new(kf, gstar.values()[quarter..=3 * quarter].to_vec())?;
    let check_radius = (2.0 * t_k).max(r_k);
    let gk_num = conjugate_profile_with(
        &restricted,
        DualGrid { radius: check_radius, points: 4097 },
        ConjugateOptions { allow_boundary: true, refine: true },
    )?;
    let mut gk_check_error: f64 = 0.0;
    for (i, v) in gk_num.values().iter().enumerate() {
        let exact = g_k(gk_num.t(i).abs());
        gk_check_error = gk_check_error.max((v - exact).abs() / (1.0 + exact.abs()));
    }
    if gk_check_error > 1e-6 {
        return Err(LabError::Numeric {
            stage: "G_k".into(),
            reason: format!("closed form and discrete transform differ by {gk_check_error:e}"),
        });
    }
    Ok(ProfileStages { g, t_k, gstar_k, t_c, t_cross, r_k, gstar, gk_check_error })
}

fn finish_profile(st: ProfileStages, k: u64, c: f64, delta: f64, mu_k: f64) -> Result<LevelProfile> {
    let p = st.g.p;
    let r = st.r_k;
    let slope_out = p / c * r.powf(p - 1.0);
    let offset_out = (p - 1.0) / c * r.powf(p) + c;
    let mut breakpoints = vec![0.0, st.t_k, st.t_cross, st.r_k];
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let (nodes, weights) = gauss_legendre_33();
    let single_piece = nodes.iter().zip(weights).map(|(x, w)| (*x, w * kernel(*x))).collect();
    let level = LevelProfile {
        g: st.g,
        c,
        k: k as f64,
        t_k: st.t_k,
        gstar_k: st.gstar_k,
        t_c: st.t_c,
        t_cross: st.t_cross,
        r_k: st.r_k,
        slope_out,
        offset_out,
        delta,
        mu_k,
        breakpoints,
        single_piece,
        gstar: st.gstar,
        gk_check_error: st.gk_check_error,
    };
    // H_k must be convex; sample it across the switch radius
    let hprof = Profile::sample(|t| level.h(t), 2.0 * level.r_k, 4097)?;
    let scale = hprof.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let defect = hprof.convexity_defect();
    if defect > 1e-9 * scale {
        return Err(LabError::NonConvex { stage: "H_k", defect });
    }
    Ok(level)
}

/// One rung `F_k` with its constants.
#[derive(Debug, Clone)]
pub struct RegularizationLevel {
    pub k: u64,
    /// Lipschitz constant of `H_k`, an integer so that `δ_k` and `μ_k` are exact.
    pub m_k: u64,
    /// Largest switch radius over the lifted profiles.
    pub r_k: f64,
    pub delta_k: f64,
    pub mu_k: f64,
    /// Coercivity constant of `G`: `|ξ|^p / c - c ≤ G(ξ) ≤ c(|ξ|^q + 1)`.
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub ell: f64,
    lift: Lift<LevelProfile>,
}

/// JSON summary of a rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub k: u64,
    pub m_k: u64,
    pub r_k: f64,
    pub delta_k: f64,
    pub mu_k: f64,
    /// `δ_k` and `μ_k` as exact fractions.
    pub delta_k_exact: String,
    pub mu_k_exact: String,
    pub c: f64,
    pub p: f64,
    pub q: f64,
    pub ell: f64,
    pub profiles: Vec<ProfileConstants>,
}

impl RegularizationLevel {
    pub fn lift(&self) -> &Lift<LevelProfile> {
        &self.lift
    }

    pub fn profiles(&self) -> Vec<&LevelProfile> {
        self.lift.profiles()
    }

    pub fn delta_exact(&self) -> Ratio<i64> {
        schedule(self.k, self.m_k).expect("validated at build").0
    }

    pub fn mu_exact(&self) -> Ratio<i64> {
        schedule(self.k, self.m_k).expect("validated at build").1
    }

    /// `m_k δ_k = 1/k²`, the mollification slack.
    pub fn slack(&self) -> f64 {
        self.m_k as f64 * self.delta_k
    }

    pub fn summary(&self) -> LevelSummary {
        LevelSummary {
            k: self.k,
            m_k: self.m_k,
            r_k: self.r_k,
            delta_k: self.delta_k,
            mu_k: self.mu_k,
            delta_k_exact: self.delta_exact().to_string(),
            mu_k_exact: self.mu_exact().to_string(),
            c: self.c,
            p: self.p,
            q: self.q,
            ell: self.ell,
            profiles: self.profiles().iter().map(|p| p.constants()).collect(),
        }
    }

    /// Samples every stage of the first profile at `rows` points of
    /// `t ∈ [0, 2 r_k]` (and `s ∈ [0, 2k]` for `G*`).
    pub fn write_csv<W: Write>(&self, writer: W, rows: usize) -> Result<()> {
        let prof = self.profiles()[0];
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "G", "G_k", "G_tilde_k", "H_k", "F_k", "s", "G_star"])?;
        let rows = rows.max(2);
        for i in 0..rows {
            let t = 2.0 * self.r_k * i as f64 / (rows - 1) as f64;
            let s = 2.0 * self.k as f64 * i as f64 / (rows - 1) as f64;
            let rec = [t, prof.g(t), prof.g_k(t), prof.g_tilde(t), prof.h(t), prof.value(t), s, prof.g_star(s)];
            w.write_record(rec.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Integrand for RegularizationLevel {
    fn value_grad(&self, xi: &[f64], cols: usize, grad: &mut [f64]) -> f64 {
        self.lift.value_grad(xi, cols, grad)
    }

    fn value(&self, xi: &[f64], cols: usize) -> f64 {
        self.lift.value(xi, cols)
    }

    fn exponents(&self) -> (f64, f64) {
        (self.p, self.q)
    }
}

/// Builds rung `k` of the ladder for a radial (or `p = 2`, `μ = 0` separable) spec.
pub fn build_level(spec: &IntegrandSpec, k: u64) -> Result<RegularizationLevel> {
    if k < 2 {
        return Err(LabError::param("k", "need k >= 2"));
    }
    spec.validate()?;
    let lift = profile_lift(spec)?;
    let half_ell = spec.ell / 2.0;
    let gs: Vec<GProfile> =
        lift.profiles().into_iter().map(|f| GProfile { f: f.clone(), half_ell, p: spec.p }).collect();
    let c = gs.iter().map(|g| profile_envelope(g, spec.q)).fold(1.0, f64::max);
    if !c.is_finite() {
        return Err(LabError::Numeric { stage: "G".into(), reason: "G has no (p,q) envelope".into() });
    }
    let stages = gs.into_iter().map(|g| run_stages(g, k, c)).collect::<Result<Vec<_>>>()?;
    let r_k = stages.iter().map(|s| s.r_k).fold(0.0, f64::max);
    let lip = (spec.p / c * r_k.powf(spec.p - 1.0)).max(k as f64);
    let m_k = lip.ceil() as u64;
    let (delta, mu) = schedule(k, m_k)?;
    let delta_k = *delta.numer() as f64 / *delta.denom() as f64;
    let mu_k = *mu.numer() as f64 / *mu.denom() as f64;
    let mut profiles =
        stages.into_iter().map(|st| finish_profile(st, k, c, delta_k, mu_k)).collect::<Result<Vec<_>>>()?;
    let lift = match lift {
        Lift::Radial(_) => Lift::Radial(profiles.remove(0)),
        Lift::Separable(_) => Lift::Separable(profiles),
    };
    Ok(RegularizationLevel { k, m_k, r_k, delta_k, mu_k, c, p: spec.p, q: spec.q, ell: spec.ell, lift })
}

/// Builds several rungs in parallel.
pub fn build_ladder(spec: &IntegrandSpec, k_list: &[u64]) -> Result<Vec<RegularizationLevel>> {
    check_k_list(k_list)?;
    k_list.par_iter().map(|&k| build_level(spec, k)).collect()
}

fn check_k_list(k_list: &[u64]) -> Result<()> {
    if k_list.is_empty() || k_list[0] < 2 || k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(LabError::param("k_list", "need a strictly increasing list with k >= 2"));
    }
    Ok(())
}

/// Convergence diagnostics of a ladder at probe points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub k_list: Vec<u64>,
    /// `max (F_{k_i} - F_{k_{i+1}})⁺`; the last entry compares with `F`.
    pub monotone_violation: Vec<f64>,
    /// `max (F_k - F)⁺`.
    pub upper_violation: Vec<f64>,
    /// `max_{|ξ| ≤ 2} (F - F_k)`.
    pub sup_gap: Vec<f64>,
    /// `max |F_k'(ξ) - F'(ξ)|` over the probes with `|ξ| ≤ 2`.
    pub derivative_deviation: Vec<f64>,
    /// `m_k δ_k`.
    pub slack: Vec<f64>,
    pub probe_count: usize,
}

/// Probe matrices with radii uniform in `[0, radius]` and Gaussian directions.
pub fn default_probes(rows: usize, cols: usize, count: usize, radius: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let uni = Uniform::new_inclusive(0.0, radius).expect("valid range");
    (0..count)
        .map(|_| {
            let g: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&g).max(1e-300);
            let r = uni.sample(&mut rng);
            g.iter().map(|v| v * r / n).collect()
        })
        .collect()
}

pub fn ladder_report(
    spec: &IntegrandSpec,
    k_list: &[u64],
    probes: &[Vec<f64>],
    cols: usize,
) -> Result<MonotonicityReport> {
    let levels = build_ladder(spec, k_list)?;
    Ok(ladder_report_from(spec, &levels, probes, cols))
}

/// [`ladder_report`] for rungs that are already built.
pub fn ladder_report_from(
    spec: &IntegrandSpec,
    levels: &[RegularizationLevel],
    probes: &[Vec<f64>],
    cols: usize,
) -> MonotonicityReport {
    let n = levels.len();
    let mut mono = vec![0.0f64; n];
    let mut upper = vec![0.0f64; n];
    let mut gap = vec![f64::NEG_INFINITY; n];
    let mut dev = vec![0.0f64; n];
    for xi in probes {
        let mut gf = vec![0.0; xi.len()];
        let f = spec.value_grad(xi, cols, &mut gf);
        let inner = norm(xi) <= 2.0;
        let mut vals = Vec::with_capacity(n);
        for (i, lvl) in levels.iter().enumerate() {
            let mut gk = vec![0.0; xi.len()];
            let fk = lvl.value_grad(xi, cols, &mut gk);
            vals.push(fk);
            upper[i] = upper[i].max(fk - f);
            if inner {
                gap[i] = gap[i].max(f - fk);
                let d = gk.iter().zip(&gf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                dev[i] = dev[i].max(d);
            }
        }
        for i in 0..n {
            let next = if i + 1 < n { vals[i + 1] } else { f };
            mono[i] = mono[i].max(vals[i] - next);
        }
    }
    MonotonicityReport {
        k_list: levels.iter().map(|l| l.k).collect(),
        monotone_violation: mono,
        upper_violation: upper,
        sup_gap: gap,
        derivative_deviation: dev,
        slack: levels.iter().map(|l| l.slack()).collect(),
        probe_count: probes.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_has_unit_mass() {
        // adaptive Simpson oracle on [-1, 1]
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let whole = (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b));
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let left = (m - a) / 6.0 * (f(a) + 4.0 * f(lm) + f(m));
            let right = (b - m) / 6.0 * (f(m) + 4.0 * f(rm) + f(b));
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right
            } else {
                simpson(f, a, m, tol / 2.0, depth - 1) + simpson(f, m, b, tol / 2.0, depth - 1)
            }
        }
        let mass = simpson(&kernel, -1.0, 1.0, 1e-13, 40);
        assert!((mass - 1.0).abs() < 1e-8);
        assert!((KERNEL_NORMALIZATION - 2.252_283_6).abs() < 1e-6);
    }

    #[test]
    fn schedule_is_exact() {
        let (d, m) = schedule(2, 10).unwrap();
        assert_eq!(d, Ratio::new(1, 40));
        assert_eq!(m, Ratio::new(1, 1));
        assert_eq!(*d.numer() as f64 / *d.denom() as f64, 0.025);
        assert!(schedule(1, 3).is_err());
    }

    #[test]
    fn quadratic_ladder_constants() {
        let spec = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        for k in [2u64, 4, 8] {
            let lvl = build_level(&spec, k).unwrap();
            assert_eq!(lvl.c, 2.0);
            let pc = lvl.profiles()[0].constants();
            assert_eq!(pc.t_k, k as f64);
            assert_eq!(pc.t_c, k as f64 + 2.0);
            assert_eq!(lvl.r_k, k as f64 + 3.0);
            assert_eq!(lvl.m_k, k + 3);
            assert_eq!(lvl.delta_exact() * Ratio::from_integer((lvl.m_k * k * k) as i64), Ratio::from_integer(1));
            assert_eq!(lvl.mu_exact() * Ratio::from_integer(k as i64 - 1), Ratio::from_integer(1));
        }
    }

    #[test]
    fn quadratic_gk_matches_brute_force() {
        // G = t²/2: G_k(t) = t²/2 on |t| ≤ k, k|t| - k²/2 beyond
        let spec = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        let k = 3u64;
        let lvl = build_level(&spec, k).unwrap();
        let prof = lvl.profiles()[0];
        let zs: Vec<f64> = (0..=6000).map(|i| -3.0 + i as f64 * 1e-3).collect();
        for i in 0..=80 {
            let t = i as f64 * 0.1;
            let brute = zs.iter().map(|z| t * z - 0.5 * z * z).fold(f64::NEG_INFINITY, f64::max);
            let closed = if t <= 3.0 { 0.5 * t * t } else { 3.0 * t - 4.5 };
            assert!((prof.g_k(t) - closed).abs() < 1e-12);
            assert!((brute - closed).abs() < 1e-6);
        }
        assert!(prof.constants().gk_check_error < 1e-6);
    }

    #[test]
    fn mollification_sandwich() {
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let lvl = build_level(&spec, 4).unwrap();
        let prof = lvl.profiles()[0];
        let slack = lvl.m_k as f64 * lvl.delta_k;
        for i in 0..1000 {
            let t = -2.0 * prof.r_k + 4.0 * prof.r_k * i as f64 / 999.0;
            let h = prof.h(t);
            let mh = prof.mollified(t);
            assert!(mh >= h - 1e-10 * (1.0 + h.abs()), "t={t}");
            assert!(mh <= h + slack + 1e-10 * (1.0 + h.abs()), "t={t}");
        }
    }

    #[test]
    fn pq_sum_switch_points() {
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let l4 = build_level(&spec, 4).unwrap();
        let l32 = build_level(&spec, 32).unwrap();
        assert!((l4.profiles()[0].constants().t_k - 0.91).abs() < 0.01);
        assert!((l32.profiles()[0].constants().t_k - 1.96).abs() < 0.01);
        assert!(l4.r_k <= l32.r_k);
        assert!(l4.m_k as f64 >= 2.0 / l4.c * l4.r_k);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let spec = IntegrandSpec::radial_pq_sum(2.0, 4.0, 0.0).unwrap();
        let lvl = build_level(&spec, 8).unwrap();
        let prof = lvl.profiles()[0];
        for t in [0.0, 0.3, 1.1, 1.5, prof.r_k - 1e-3, prof.r_k + 0.5] {
            let h = 1e-5 * (1.0 + t);
            let fd = (prof.value(t + h) - prof.value(t - h)) / (2.0 * h);
            assert!((fd - prof.deriv(t)).abs() < 1e-5 * (1.0 + fd.abs()), "t={t} fd={fd} d={}", prof.deriv(t));
        }
    }

    #[test]
    fn rejects_small_k_and_nonconvex_g() {
        let spec = IntegrandSpec::quadratic(1.0, 0.0).unwrap();
        assert!(build_level(&spec, 1).is_err());
        // p < 2 with μ > 0: (μ² + t²)^{p/2} - |t|^p / 2 is concave at the origin
        let spec = IntegrandSpec::radial_power(1.5, 1.0, 1.0).unwrap();
        assert!(matches!(build_level(&spec, 4), Err(LabError::NonConvex { stage: "G", .. })));
    }
}

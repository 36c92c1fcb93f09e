//! Radial jump kernels, subordinators and the scale quantities `r^{d+2} j(r)`, `m₂(r)`, `r² λ(r)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::quad::{ln_add, End, LogQuad, QuadError, LN_CEIL, LN_FLOOR, LN_TAIL_WINDOW};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("second moment divergent at 0")]
    SecondMomentDivergent,
    #[error("tail divergent at ∞")]
    TailDivergent,
    #[error("drift present: SBM has diffusion part, not a pure jump kernel")]
    DriftPresent,
    #[error("subordinator has no Lévy density")]
    NoDensity,
    #[error("quadrature failed: {0}")]
    Quad(#[from] QuadError),
}

/// Surface area `ω_{d-1} = 2π^{d/2}/Γ(d/2)` of the unit sphere in ℝᵈ.
pub fn surface_area(d: usize) -> Result<f64, KernelError> {
    if d < 1 {
        return Err(KernelError::Domain("dimension must be at least 1".into()));
    }
    Ok(ln_surface_area(d).exp())
}

pub(crate) fn ln_surface_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    std::f64::consts::LN_2 + h * PI.ln() - ln_gamma(h)
}

/// Volume of the unit ball, `ω_{d-1}/d`.
pub fn unit_ball_volume(d: usize) -> f64 {
    (ln_surface_area(d) - (d as f64).ln()).exp()
}

/// `C₁(d) = 4/((1-2^{-d})|B(0,1)|)`, the constant in `r^{d+2} j(r) ≤ C₁ m₂(r)`.
pub fn c1(d: usize) -> f64 {
    4.0 / ((1.0 - 0.5f64.powi(d as i32)) * unit_ball_volume(d))
}

/// `C₂(c_j, d) = 1/((2^d-1)|B(0,1)| c_j)`, the constant in `r^{d+2} j(r) ≤ C₂ r² λ(r)`.
pub fn c2(c_j: f64, d: usize) -> f64 {
    1.0 / ((2.0f64.powi(d as i32) - 1.0) * unit_ball_volume(d) * c_j)
}

/// A radial density, evaluated on the log axis so that extreme radii never overflow.
pub trait RadialDensity: Send + Sync {
    /// `ln j(e^{ln_r})`; `-∞` where the density vanishes, NaN outside the evaluator's range.
    fn ln_j(&self, ln_r: f64) -> f64;
    /// Radius beyond which the density is identically zero.
    fn support(&self) -> Option<f64> {
        None
    }
    /// Radii where the density has kinks.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Range of `ln r` on which the evaluator is defined.
    fn ln_range(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

struct LnFn<F> {
    f: F,
    support: Option<f64>,
    breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Send + Sync> RadialDensity for LnFn<F> {
    fn ln_j(&self, ln_r: f64) -> f64 {
        if let Some(s) = self.support {
            if ln_r > s.ln() {
                return f64::NEG_INFINITY;
            }
        }
        (self.f)(ln_r)
    }
    fn support(&self) -> Option<f64> {
        self.support
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

struct Scaled {
    inner: Arc<dyn RadialDensity>,
    ln_kappa: f64,
}

impl RadialDensity for Scaled {
    fn ln_j(&self, ln_r: f64) -> f64 {
        self.inner.ln_j(ln_r) + self.ln_kappa
    }
    fn support(&self) -> Option<f64> {
        self.inner.support()
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.inner.breakpoints()
    }
    fn ln_range(&self) -> (f64, f64) {
        self.inner.ln_range()
    }
}

/// An isotropic jump kernel `j(|x|)` on ℝᵈ.
#[derive(Clone)]
pub struct RadialJumpKernel {
    pub dim: usize,
    density: Arc<dyn RadialDensity>,
    pub doubling_constant_hint: Option<f64>,
}

impl fmt::Debug for RadialJumpKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialJumpKernel")
            .field("dim", &self.dim)
            .field("support_hint", &self.support_hint())
            .field("doubling_constant_hint", &self.doubling_constant_hint)
            .finish()
    }
}

impl RadialJumpKernel {
    pub fn new(dim: usize, density: Arc<dyn RadialDensity>) -> Self {
        Self {
            dim,
            density,
            doubling_constant_hint: None,
        }
    }

    /// Kernel from `ln_r ↦ ln j(e^{ln_r})`.
    pub fn from_ln_fn<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            dim,
            Arc::new(LnFn {
                f,
                support: None,
                breaks: Vec::new(),
            }),
        )
    }

    /// Kernel from `ln j` on the log axis, vanishing beyond `support`, with kinks at `breaks`.
    pub fn from_ln_fn_with<F>(dim: usize, f: F, support: Option<f64>, breaks: Vec<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut breaks = breaks;
        breaks.extend(support);
        Self::new(dim, Arc::new(LnFn { f, support, breaks }))
    }

    /// Kernel from the plain density `r ↦ j(r)`.
    pub fn from_fn<F>(dim: usize, j: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::from_ln_fn(dim, move |u| j(u.exp()).ln())
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_ln_fn(dim, |_| f64::NEG_INFINITY)
    }

    /// The kernel `κ j`.
    pub fn scaled(&self, kappa: f64) -> Self {
        Self {
            dim: self.dim,
            density: Arc::new(Scaled {
                inner: self.density.clone(),
                ln_kappa: kappa.ln(),
            }),
            doubling_constant_hint: self.doubling_constant_hint,
        }
    }

    pub fn with_doubling_hint(mut self, c_j: f64) -> Self {
        self.doubling_constant_hint = Some(c_j);
        self
    }

    pub fn density(&self) -> &Arc<dyn RadialDensity> {
        &self.density
    }

    pub fn support_hint(&self) -> Option<f64> {
        self.density.support()
    }

    pub fn ln_j(&self, ln_r: f64) -> f64 {
        self.density.ln_j(ln_r)
    }

    pub fn j(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return f64::NAN;
        }
        self.ln_j(r.ln()).exp()
    }

    fn ln_breaks(&self) -> Vec<f64> {
        self.density
            .breakpoints()
            .into_iter()
            .filter(|b| *b > 0.0)
            .map(f64::ln)
            .collect()
    }

    fn floor(&self) -> f64 {
        self.density.ln_range().0.max(LN_FLOOR)
    }

    /// `ln m₂(r)` with `m₂(r) = ω_{d-1}∫₀^r s^{d+1} j(s) ds`.
    pub fn ln_m2(&self, ln_r: f64) -> Result<f64, KernelError> {
        let lw = ln_surface_area(self.dim);
        let k = (self.dim + 2) as f64;
        let g = |u: f64| lw + k * u + self.ln_j(u);
        LogQuad::default()
            .integrate_down(&g, ln_r, Some(self.floor()), &self.ln_breaks())
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::SecondMomentDivergent,
                other => other.into(),
            })
    }

    /// `ln λ(r)` with `λ(r) = ω_{d-1}∫_r^∞ s^{d-1} j(s) ds`.
    pub fn ln_tail(&self, ln_r: f64) -> Result<f64, KernelError> {
        let lw = ln_surface_area(self.dim);
        let k = self.dim as f64;
        let g = |u: f64| lw + k * u + self.ln_j(u);
        let top = self.density.ln_range().1;
        let ceiling = match self.support_hint() {
            Some(s) => Some(s.ln().min(top)),
            None if top.is_finite() => Some(top),
            None => None,
        };
        LogQuad::default()
            .integrate_up(&g, ln_r, ceiling, LN_TAIL_WINDOW, &self.ln_breaks())
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::TailDivergent,
                other => other.into(),
            })
    }

    pub fn m2(&self, r: f64) -> Result<f64, KernelError> {
        check_radius(r)?;
        Ok(self.ln_m2(r.ln())?.exp())
    }

    pub fn tail_lambda(&self, r: f64) -> Result<f64, KernelError> {
        check_radius(r)?;
        Ok(self.ln_tail(r.ln())?.exp())
    }

    /// `ln ∫_{ℝᵈ} w(|x|) j(|x|) dx` for a positive radial weight given as `ln w(e^u)`.
    pub fn ln_weighted_mass<W: Fn(f64) -> f64>(&self, ln_w: W) -> Result<f64, KernelError> {
        let lw = ln_surface_area(self.dim);
        let k = self.dim as f64;
        let g = |u: f64| lw + k * u + self.ln_j(u) + ln_w(u);
        let q = LogQuad::default();
        let breaks = self.ln_breaks();
        let lo = q
            .integrate_down(&g, 0.0, Some(self.floor()), &breaks)
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::SecondMomentDivergent,
                other => other.into(),
            })?;
        let ceiling = self.support_hint().map(f64::ln);
        let hi = q
            .integrate_up(&g, 0.0, ceiling, LN_TAIL_WINDOW, &breaks)
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::TailDivergent,
                other => other.into(),
            })?;
        Ok(ln_add(lo, hi))
    }
}

fn check_radius(r: f64) -> Result<(), KernelError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(KernelError::Domain(format!(
            "radius must be positive and finite, got {r}"
        )))
    }
}

/// The three scale quantities at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub r: f64,
    pub jd2: f64,
    pub m2: f64,
    pub tail2: f64,
}

/// Log-space scale profile, used internally where the plain values would over- or underflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LnProfile {
    pub ln_r: f64,
    pub ln_jd2: f64,
    pub ln_m2: f64,
    pub ln_tail2: f64,
}

impl LnProfile {
    pub fn to_profile(self) -> ScaleProfile {
        ScaleProfile {
            r: self.ln_r.exp(),
            jd2: self.ln_jd2.exp(),
            m2: self.ln_m2.exp(),
            tail2: self.ln_tail2.exp(),
        }
    }
}

pub fn ln_scale_profile(kernel: &RadialJumpKernel, ln_r: f64) -> Result<LnProfile, KernelError> {
    let d = kernel.dim as f64;
    let ln_j = kernel.ln_j(ln_r);
    if ln_j.is_nan() {
        return Err(KernelError::Domain(format!(
            "kernel not defined at r = {}",
            ln_r.exp()
        )));
    }
    Ok(LnProfile {
        ln_r,
        ln_jd2: (d + 2.0) * ln_r + ln_j,
        ln_m2: kernel.ln_m2(ln_r)?,
        ln_tail2: 2.0 * ln_r + kernel.ln_tail(ln_r)?,
    })
}

/// `(r^{d+2} j(r), m₂(r), r² λ(r))`.
pub fn scale_profile(kernel: &RadialJumpKernel, r: f64) -> Result<ScaleProfile, KernelError> {
    check_radius(r)?;
    Ok(ln_scale_profile(kernel, r.ln())?.to_profile())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublingEstimate {
    pub c_j: f64,
    /// Set when some sampled `j(2r)/j(r)` was zero.
    pub fails: bool,
}

/// Minimum of `j(2r)/j(r)` over `n_samples` log-spaced radii in `[r_min, r_max]`.
pub fn check_doubling(
    kernel: &RadialJumpKernel,
    r_min: f64,
    r_max: f64,
    n_samples: usize,
) -> Result<DoublingEstimate, KernelError> {
    if !(r_min > 0.0 && r_max > r_min) || n_samples < 2 {
        return Err(KernelError::Domain(
            "need 0 < r_min < r_max and at least 2 samples".into(),
        ));
    }
    let (a, b) = (r_min.ln(), r_max.ln());
    let mut c = 1.0f64;
    for k in 0..n_samples {
        let u = a + (b - a) * k as f64 / (n_samples - 1) as f64;
        let lj = kernel.ln_j(u);
        let lj2 = kernel.ln_j(u + std::f64::consts::LN_2);
        if lj.is_nan() || lj2.is_nan() {
            return Err(KernelError::Domain(format!(
                "kernel not defined near r = {}",
                u.exp()
            )));
        }
        let ratio = if lj == f64::NEG_INFINITY {
            1.0
        } else {
            (lj2 - lj).exp()
        };
        c = c.min(ratio);
    }
    let c = c.clamp(0.0, 1.0);
    Ok(DoublingEstimate {
        c_j: c,
        fails: c == 0.0,
    })
}

/// A Lévy density `m(t)` of a subordinator, on the log axis.
pub trait LevyDensity: Send + Sync {
    /// `ln m(e^{ln_t})`, `-∞` where it vanishes.
    fn ln_m(&self, ln_t: f64) -> f64;
    fn support(&self) -> Option<f64> {
        None
    }
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
    /// Closed-form `μ((s, ∞))` when available.
    fn tail_mass(&self, _s: f64) -> Option<f64> {
        None
    }
}

struct LevyLnFn<F> {
    f: F,
    support: Option<f64>,
    breaks: Vec<f64>,
}

impl<F: Fn(f64) -> f64 + Send + Sync> LevyDensity for LevyLnFn<F> {
    fn ln_m(&self, ln_t: f64) -> f64 {
        if let Some(s) = self.support {
            if ln_t > s.ln() {
                return f64::NEG_INFINITY;
            }
        }
        (self.f)(ln_t)
    }
    fn support(&self) -> Option<f64> {
        self.support
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.breaks.clone()
    }
}

/// Drift `γ` and Lévy density `m` of a subordinator.
#[derive(Clone)]
pub struct SubordinatorSpec {
    pub drift: f64,
    density: Option<Arc<dyn LevyDensity>>,
}

impl fmt::Debug for SubordinatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubordinatorSpec")
            .field("drift", &self.drift)
            .field("has_density", &self.density.is_some())
            .field("support", &self.support())
            .finish()
    }
}

impl SubordinatorSpec {
    pub fn new(drift: f64, density: Option<Arc<dyn LevyDensity>>) -> Self {
        Self { drift, density }
    }

    pub fn pure_drift(drift: f64) -> Self {
        Self {
            drift,
            density: None,
        }
    }

    pub fn from_ln_fn<F>(drift: f64, f: F, support: Option<f64>, breaks: Vec<f64>) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let mut breaks = breaks;
        breaks.extend(support);
        Self {
            drift,
            density: Some(Arc::new(LevyLnFn { f, support, breaks })),
        }
    }

    pub fn density(&self) -> Option<&Arc<dyn LevyDensity>> {
        self.density.as_ref()
    }

    pub fn ln_m(&self, ln_t: f64) -> f64 {
        match &self.density {
            Some(d) => d.ln_m(ln_t),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn m(&self, t: f64) -> f64 {
        self.ln_m(t.ln()).exp()
    }

    pub fn support(&self) -> Option<f64> {
        self.density.as_ref().and_then(|d| d.support())
    }

    pub(crate) fn ln_breaks(&self) -> Vec<f64> {
        self.density
            .as_ref()
            .map(|d| {
                d.breakpoints()
                    .into_iter()
                    .filter(|b| *b > 0.0)
                    .map(f64::ln)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// `ln ∫ exp(g(w)) dw` over the whole axis, splitting at `pivot`.
    pub(crate) fn ln_integral<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        pivot: f64,
    ) -> Result<f64, KernelError> {
        if self.density.is_none() {
            return Ok(f64::NEG_INFINITY);
        }
        let q = LogQuad::default();
        let breaks = self.ln_breaks();
        let ceiling = self.support().map(f64::ln);
        let pivot = match ceiling {
            Some(c) => pivot.min(c),
            None => pivot,
        };
        let lo = q.integrate_down(g, pivot, None, &breaks)?;
        let hi = q.integrate_up(g, pivot, ceiling, LN_CEIL - pivot, &breaks)?;
        Ok(ln_add(lo, hi))
    }

    /// `μ((s, ∞))`, closed form when the density supplies one, quadrature otherwise.
    pub fn tail_mass(&self, s: f64) -> Result<f64, KernelError> {
        check_radius(s)?;
        let Some(d) = &self.density else {
            return Ok(0.0);
        };
        if let Some(v) = d.tail_mass(s) {
            return Ok(v);
        }
        Ok(self.ln_tail_mass_quad(s.ln())?.exp())
    }

    pub(crate) fn ln_tail_mass_quad(&self, ln_s: f64) -> Result<f64, KernelError> {
        let g = |w: f64| self.ln_m(w) + w;
        let ceiling = self.support().map(f64::ln);
        LogQuad::default()
            .integrate_up(&g, ln_s, ceiling, LN_CEIL - ln_s, &self.ln_breaks())
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::TailDivergent,
                other => other.into(),
            })
    }

    /// `∫₀^s t m(t) dt`, the mass folded into drift when jumps below `s` are dropped.
    pub fn small_jump_mean(&self, s: f64) -> Result<f64, KernelError> {
        check_radius(s)?;
        if self.density.is_none() {
            return Ok(0.0);
        }
        let g = |w: f64| self.ln_m(w) + 2.0 * w;
        let v = LogQuad::default()
            .integrate_down(&g, s.ln(), None, &self.ln_breaks())
            .map_err(|e| match e {
                QuadError::Divergent(_) => KernelError::SecondMomentDivergent,
                other => other.into(),
            })?;
        Ok(v.exp())
    }
}

/// `(φ(λ), φ′(λ))` with `φ(λ) = γλ + ∫(1-e^{-λt}) m(t) dt`.
pub fn laplace_exponent(sub: &SubordinatorSpec, lam: f64) -> Result<(f64, f64), KernelError> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(KernelError::Domain(format!(
            "λ must be positive, got {lam}"
        )));
    }
    let pivot = -lam.ln();
    let g_phi = |w: f64| {
        let t = w.exp();
        sub.ln_m(w) + w + (-(-lam * t).exp_m1()).ln()
    };
    let g_dphi = |w: f64| sub.ln_m(w) + 2.0 * w - lam * w.exp();
    let phi = sub.ln_integral(&g_phi, pivot)?.exp() + sub.drift * lam;
    let dphi = sub.ln_integral(&g_dphi, pivot)?.exp() + sub.drift;
    Ok((phi, dphi))
}

/// Outcome of the Lévy–Khintchine integrability check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum LkVerdict {
    /// For kernels: `m₂(1)` and `λ(1)`. For subordinators: `∫₀¹ t m(t)dt` and `μ((1,∞))`.
    Valid {
        m2_at_1: f64,
        tail_at_1: f64,
    },
    Invalid {
        reason: String,
    },
}

impl LkVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, LkVerdict::Valid { .. })
    }
}

fn lk_from(m2: Result<f64, KernelError>, tail: Result<f64, KernelError>) -> LkVerdict {
    match (m2, tail) {
        (Ok(a), Ok(b)) => LkVerdict::Valid {
            m2_at_1: a,
            tail_at_1: b,
        },
        (Err(e), _) | (_, Err(e)) => LkVerdict::Invalid {
            reason: e.to_string(),
        },
    }
}

pub fn levy_khintchine_check(kernel: &RadialJumpKernel) -> LkVerdict {
    lk_from(kernel.m2(1.0), kernel.tail_lambda(1.0))
}

pub fn levy_khintchine_check_subordinator(sub: &SubordinatorSpec) -> LkVerdict {
    if sub.drift < 0.0 {
        return LkVerdict::Invalid {
            reason: "negative drift".into(),
        };
    }
    lk_from(sub.small_jump_mean(1.0), sub.tail_mass(1.0))
}

/// `ln j(r)` for the subordinate Brownian motion, by direct quadrature of
/// `∫(4πt)^{-d/2} exp(-r²/4t) m(t) dt` in `w = ln t`.
pub fn ln_sbm_density_direct(
    sub: &SubordinatorSpec,
    dim: usize,
    ln_r: f64,
) -> Result<f64, KernelError> {
    sbm_integral(sub, dim, ln_r, 0.0, 0.0)
}

/// `ln j(r)` and `d ln j / d ln r`, the latter from `-∫ (r²/2t) … dt / j(r)`.
pub fn ln_sbm_density_with_slope(
    sub: &SubordinatorSpec,
    dim: usize,
    ln_r: f64,
) -> Result<(f64, f64), KernelError> {
    let v = sbm_integral(sub, dim, ln_r, 0.0, 0.0)?;
    let s = sbm_integral(sub, dim, ln_r, -1.0, 2.0 * ln_r - 2f64.ln())?;
    Ok((v, -(s - v).exp()))
}

/// Integral of `e^{a w + b}` against the Gaussian-mixture integrand.
fn sbm_integral(
    sub: &SubordinatorSpec,
    dim: usize,
    ln_r: f64,
    a: f64,
    b: f64,
) -> Result<f64, KernelError> {
    let h = dim as f64 / 2.0;
    let c = -h * (4.0 * PI).ln() + b;
    let g = |w: f64| c + (a - h) * w - (2.0 * ln_r - w).exp() / 4.0 + sub.ln_m(w) + w;
    // below w_lo the Gaussian factor is below e^{-1000}
    let w_lo = 2.0 * ln_r - 4000.0f64.ln();
    let ceiling = sub.support().map(f64::ln);
    let breaks = sub.ln_breaks();
    let q = LogQuad::default();
    let v = q
        .integrate_up(&g, w_lo, ceiling, LN_CEIL - w_lo, &breaks)
        .map_err(|e| match e {
            QuadError::Divergent(End::Infinity) => KernelError::TailDivergent,
            other => other.into(),
        })?;
    Ok(v)
}

/// Memoized subordinate-Brownian-motion density on a uniform `ln r` grid with a
/// cubic Hermite interpolant in `(ln r, ln j)` through exact slopes.
pub struct SbmDensity {
    sub: SubordinatorSpec,
    dim: usize,
    ln_lo: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

/// Grid spacing in `ln r` of memoized kernels.
pub const MEMO_STEP: f64 = 0.125;
/// Tabulated range of memoized kernels: `r ∈ [1e-300, 1e30]`.
pub const MEMO_LN_RANGE: (f64, f64) = (LN_FLOOR, 69.077_552_789_821_37);

impl SbmDensity {
    pub fn build(sub: &SubordinatorSpec, dim: usize) -> Result<Self, KernelError> {
        let h = MEMO_STEP;
        let k_lo = (MEMO_LN_RANGE.0 / h).floor() as i64;
        let k_hi = (MEMO_LN_RANGE.1 / h).ceil() as i64;
        let nodes: Vec<(f64, f64)> = (k_lo..=k_hi)
            .into_par_iter()
            .map(|k| ln_sbm_density_with_slope(sub, dim, k as f64 * h))
            .collect::<Result<_, _>>()?;
        let values: Vec<f64> = nodes.iter().map(|n| n.0).collect();
        let slopes = clip_slopes(&values, nodes.iter().map(|n| n.1).collect(), h);
        Ok(Self {
            sub: sub.clone(),
            dim,
            ln_lo: k_lo as f64 * h,
            h,
            values,
            slopes,
        })
    }

    /// Non-memoized evaluation at any radius.
    pub fn evaluate_direct(&self, ln_r: f64) -> Result<f64, KernelError> {
        ln_sbm_density_direct(&self.sub, self.dim, ln_r)
    }

    pub fn node_values(&self) -> (f64, f64, &[f64]) {
        (self.ln_lo, self.h, &self.values)
    }
}

/// Clips slopes to the Fritsch–Carlson region so the cubic Hermite interpolant stays
/// monotone wherever the data are.
fn clip_slopes(y: &[f64], mut m: Vec<f64>, h: f64) -> Vec<f64> {
    for i in 0..y.len().saturating_sub(1) {
        if !y[i + 1].is_finite() {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let delta = (y[i + 1] - y[i]) / h;
        for k in [i, i + 1] {
            m[k] = if delta == 0.0 || m[k] * delta < 0.0 {
                0.0
            } else {
                m[k].clamp(-3.0 * delta.abs(), 3.0 * delta.abs())
            };
        }
    }
    m
}

impl RadialDensity for SbmDensity {
    fn ln_j(&self, ln_r: f64) -> f64 {
        let x = (ln_r - self.ln_lo) / self.h;
        let n = self.values.len();
        if !(x >= 0.0 && x <= (n - 1) as f64) {
            return f64::NAN;
        }
        let i = (x.floor() as usize).min(n - 2);
        let t = x - i as f64;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        // the Gaussian factor cuts the density off completely past the subordinator's support
        if y1 == f64::NEG_INFINITY {
            return if t == 0.0 { y0 } else { f64::NEG_INFINITY };
        }
        let (m0, m1) = (self.slopes[i] * self.h, self.slopes[i + 1] * self.h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1
    }

    fn ln_range(&self) -> (f64, f64) {
        (
            self.ln_lo,
            self.ln_lo + self.h * (self.values.len() - 1) as f64,
        )
    }
}

/// The jump kernel of the subordinate Brownian motion `B(S_t)` in ℝᵈ.
pub fn kernel_from_subordinator(
    sub: &SubordinatorSpec,
    dim: usize,
) -> Result<RadialJumpKernel, KernelError> {
    if dim < 1 {
        return Err(KernelError::Domain("dimension must be at least 1".into()));
    }
    if sub.drift > 0.0 {
        return Err(KernelError::DriftPresent);
    }
    if sub.density().is_none() {
        return Err(KernelError::NoDensity);
    }
    Ok(RadialJumpKernel::new(
        dim,
        Arc::new(SbmDensity::build(sub, dim)?),
    ))
}

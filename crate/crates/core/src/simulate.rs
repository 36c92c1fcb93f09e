//! Path simulation through Meyer decompositions: compound-Poisson big jumps from
//! tabulated radial laws plus a Gaussian (or deterministic) small-jump surrogate.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ProcessSpec;
use crate::kernels::{
    ln_surface_area, unit_ball_volume, KernelError, RadialJumpKernel, SubordinatorSpec,
};
use crate::probe::sample_heavy_tail_y;
use crate::quad::{ln_add, LogQuad, QuadError, LN_TAIL_WINDOW};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("process is not simulable: {0}")]
    NotSimulable(String),
    #[error("jump rate above the cutoff is infinite: {0}")]
    InfiniteRate(String),
    #[error("no big jumps: the tail beyond r0 vanishes")]
    NoBigJumps,
    #[error("degenerate split: {0}")]
    Degenerate(String),
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl From<QuadError> for SimError {
    fn from(e: QuadError) -> Self {
        SimError::Kernel(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Subordinator,
    Sbm,
    DirectKernel,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subordinator" => Ok(Self::Subordinator),
            "sbm" => Ok(Self::Sbm),
            "direct" | "direct_kernel" | "direct-kernel" => Ok(Self::DirectKernel),
            other => Err(format!(
                "unknown mode `{other}` (expected subordinator, sbm or direct)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Small-jump truncation ε.
    pub cutoff: f64,
    /// Surrogate time step h.
    pub step: f64,
    pub horizon: f64,
    pub seed: u64,
    pub gaussian_surrogate: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cutoff: 1e-2,
            step: 1e-3,
            horizon: 1.0,
            seed: 0,
            gaussian_surrogate: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(SimError::Config("cutoff must be positive".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SimError::Config("step must be positive".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(SimError::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Per-replica RNG, fully determined by `(seed, replica)`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

/// Inverse-CDF sampler for a positive density on the log axis, `ln f(e^u) + u`, on
/// `(lo, hi]` with an exponential-in-`u` continuation past `hi` when unbounded.
#[derive(Debug, Clone)]
pub struct TabulatedSampler {
    edges: Vec<f64>,
    cum: Vec<f64>,
    slopes: Vec<f64>,
    ln_mass: f64,
    /// `(probability, u_top, decay rate in u)` of the part beyond the table.
    tail: Option<(f64, f64, f64)>,
}

const CELLS_PER_EFOLD: f64 = 16.0;
const TABLE_SPAN: f64 = 40.0;

impl TabulatedSampler {
    pub fn new<G: Fn(f64) -> f64>(
        g: &G,
        lo: f64,
        support: Option<f64>,
        breaks: &[f64],
    ) -> Result<Self, SimError> {
        let hi = support.unwrap_or(lo + TABLE_SPAN);
        if !(hi > lo) {
            return Ok(Self::empty());
        }
        let n = ((hi - lo) * CELLS_PER_EFOLD).ceil() as usize;
        let mut edges: Vec<f64> = (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect();
        edges.extend(breaks.iter().copied().filter(|b| *b > lo && *b < hi));
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let q = LogQuad::default();
        let mut ln_cells = Vec::with_capacity(edges.len() - 1);
        let mut slopes = Vec::with_capacity(edges.len() - 1);
        for w in edges.windows(2) {
            ln_cells.push(q.integrate(g, w[0], w[1], &[])?);
            let eta = 1e-9 * (w[1] - w[0]);
            let (ga, gb) = (g(w[0] + eta), g(w[1] - eta));
            let k = (gb - ga) / (w[1] - w[0] - 2.0 * eta);
            slopes.push(if k.is_finite() { k } else { 0.0 });
        }
        let mut ln_mass = ln_cells
            .iter()
            .fold(f64::NEG_INFINITY, |a, b| ln_add(a, *b));
        let mut tail = None;
        if support.is_none() {
            let ln_tail = q
                .integrate_up(g, hi, None, LN_TAIL_WINDOW, breaks)
                .map_err(|e| SimError::InfiniteRate(e.to_string()))?;
            if ln_tail > f64::NEG_INFINITY {
                let h = 1.0 / CELLS_PER_EFOLD;
                let k = -(g(hi) - g(hi - h)) / h;
                if !(k > 0.0) {
                    return Err(SimError::InfiniteRate(
                        "density does not decay beyond the table".into(),
                    ));
                }
                ln_mass = ln_add(ln_mass, ln_tail);
                tail = Some(((ln_tail - ln_mass).exp(), hi, k));
            }
        }
        if ln_mass == f64::NEG_INFINITY {
            return Ok(Self::empty());
        }
        if !ln_mass.is_finite() {
            return Err(SimError::InfiniteRate(format!("total mass {ln_mass}")));
        }
        let mut acc = 0.0;
        let cum = ln_cells
            .iter()
            .map(|c| {
                acc += (c - ln_mass).exp();
                acc
            })
            .collect();
        Ok(Self {
            edges,
            cum,
            slopes,
            ln_mass,
            tail,
        })
    }

    fn empty() -> Self {
        Self {
            edges: vec![],
            cum: vec![],
            slopes: vec![],
            ln_mass: f64::NEG_INFINITY,
            tail: None,
        }
    }

    /// Total mass of the density (a jump rate).
    pub fn rate(&self) -> f64 {
        self.ln_mass.exp()
    }

    /// A draw of `e^u`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v: f64 = rng.random();
        if let Some((p, top, k)) = self.tail {
            if v >= 1.0 - p || self.cum.is_empty() {
                let e: f64 = rng.sample(Exp1);
                return (top + e / k).exp();
            }
        }
        let total = *self.cum.last().unwrap_or(&1.0);
        let target = v.min(total * (1.0 - 1e-16));
        let i = self
            .cum
            .partition_point(|c| *c <= target)
            .min(self.cum.len() - 1);
        let (a, b) = (self.edges[i], self.edges[i + 1]);
        let w: f64 = rng.random();
        let kd = self.slopes[i] * (b - a);
        let u = if kd.abs() < 1e-8 {
            a + w * (b - a)
        } else {
            a + (w * kd.exp_m1()).ln_1p() / self.slopes[i]
        };
        u.clamp(a, b).exp()
    }
}

/// Radial law of big jumps, optionally mixed with a uniform-on-ball component.
#[derive(Debug, Clone)]
pub struct RadialSampler {
    table: TabulatedSampler,
    /// `(rate, radius)` of a uniform-on-`B(0, radius)` component.
    flat: Option<(f64, f64)>,
    dim: usize,
    /// The table holds subordinator jump sizes `t`; the radius is `|√(2t) Z|`.
    subordinated: bool,
}

impl RadialSampler {
    pub fn rate(&self) -> f64 {
        self.table.rate() + self.flat.map_or(0.0, |f| f.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if let Some((flat_rate, radius)) = self.flat {
            let v: f64 = rng.random();
            if v * self.rate() < flat_rate {
                let w: f64 = rng.random();
                return radius * w.powf(1.0 / self.dim as f64);
            }
        }
        let t = self.table.sample(rng);
        if self.subordinated {
            let z2: f64 = (0..self.dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                .sum();
            (2.0 * t * z2).sqrt()
        } else {
            t
        }
    }
}

fn kernel_tail_sampler(kernel: &RadialJumpKernel, r0: f64) -> Result<TabulatedSampler, SimError> {
    let lw = ln_surface_area(kernel.dim);
    let k = kernel.dim as f64;
    let g = |u: f64| lw + k * u + kernel.ln_j(u);
    let support = kernel.support_hint().map(f64::ln);
    let breaks: Vec<f64> = kernel
        .density()
        .breakpoints()
        .into_iter()
        .filter(|b| *b > 0.0)
        .map(f64::ln)
        .collect();
    TabulatedSampler::new(&g, r0.ln(), support, &breaks)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SplitKind {
    SmallLarge { r0: f64 },
    SmallFlat { r0: f64 },
    Sbm { s: f64 },
}

/// A Meyer decomposition `j = j′ + ĵ′` with the big part as a finite-rate jump law.
#[derive(Debug, Clone)]
pub struct MeyerSplit {
    pub kind: SplitKind,
    pub small_kernel: RadialJumpKernel,
    pub big_kernel: RadialJumpKernel,
    pub big_rate: f64,
    pub m2_small: f64,
    sampler: Arc<RadialSampler>,
}

impl MeyerSplit {
    /// Radius of a big jump, distributed as `ω r^{d-1} ĵ′(r) / λ′`.
    pub fn sample_big_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sampler.sample(rng)
    }

    pub fn sampler(&self) -> &RadialSampler {
        &self.sampler
    }
}

/// Small/large split: `j′ = j 1{r ≤ r₀}`, `ĵ′ = j 1{r > r₀}`, `λ′ = λ(r₀)`.
pub fn small_large_split(kernel: &RadialJumpKernel, r0: f64) -> Result<MeyerSplit, SimError> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(SimError::Config("r0 must be positive".into()));
    }
    let big_rate = kernel.tail_lambda(r0).map_err(|e| match e {
        KernelError::TailDivergent => SimError::InfiniteRate("tail divergent".into()),
        other => other.into(),
    })?;
    if big_rate == 0.0 {
        return Err(SimError::NoBigJumps);
    }
    let m2_small = kernel.m2(r0)?;
    let table = kernel_tail_sampler(kernel, r0)?;
    let ln_r0 = r0.ln();
    let (a, b) = (kernel.clone(), kernel.clone());
    let mut small_breaks = kernel.density().breakpoints();
    small_breaks.push(r0);
    let small = RadialJumpKernel::from_ln_fn_with(
        kernel.dim,
        move |u| {
            if u <= ln_r0 {
                a.ln_j(u)
            } else {
                f64::NEG_INFINITY
            }
        },
        Some(kernel.support_hint().map_or(r0, |s| s.min(r0))),
        small_breaks.clone(),
    );
    let big = RadialJumpKernel::from_ln_fn_with(
        kernel.dim,
        move |u| {
            if u > ln_r0 {
                b.ln_j(u)
            } else {
                f64::NEG_INFINITY
            }
        },
        kernel.support_hint(),
        small_breaks,
    );
    Ok(MeyerSplit {
        kind: SplitKind::SmallLarge { r0 },
        small_kernel: small,
        big_kernel: big,
        big_rate,
        m2_small,
        sampler: Arc::new(RadialSampler {
            table,
            flat: None,
            dim: kernel.dim,
            subordinated: false,
        }),
    })
}

/// Small/flat split: `j′ = (j - ½ j(r₀)) 1{r ≤ r₀}`, `ĵ′ = ½ j(r₀)` on `(0, r₀]` and `j` beyond.
pub fn small_flat_split(kernel: &RadialJumpKernel, r0: f64) -> Result<MeyerSplit, SimError> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(SimError::Config("r0 must be positive".into()));
    }
    let ln_r0 = r0.ln();
    let ln_half = kernel.ln_j(ln_r0) - std::f64::consts::LN_2;
    if ln_half == f64::NEG_INFINITY || ln_half.is_nan() {
        return Err(SimError::Degenerate(format!("j({r0}) = 0")));
    }
    let half = ln_half.exp();
    let d = kernel.dim;
    let lambda = kernel.tail_lambda(r0).map_err(|e| match e {
        KernelError::TailDivergent => SimError::InfiniteRate("tail divergent".into()),
        other => other.into(),
    })?;
    let flat_rate = unit_ball_volume(d) * r0.powi(d as i32) * half;
    let big_rate = lambda + flat_rate;
    // ∫_{B(0,r₀)} |x|² ½ j(r₀) dx = ω r₀^{d+2} ½ j(r₀) / (d+2)
    let flat_m2 =
        (ln_surface_area(d) + (d as f64 + 2.0) * ln_r0 + ln_half).exp() / (d as f64 + 2.0);
    let m2_small = kernel.m2(r0)? - flat_m2;
    let table = kernel_tail_sampler(kernel, r0)?;
    let (a, b) = (kernel.clone(), kernel.clone());
    let mut breaks = kernel.density().breakpoints();
    breaks.push(r0);
    let small = RadialJumpKernel::from_ln_fn_with(
        d,
        move |u| {
            if u <= ln_r0 {
                let lj = a.ln_j(u);
                (lj.exp() - half).ln()
            } else {
                f64::NEG_INFINITY
            }
        },
        Some(r0),
        breaks.clone(),
    );
    let big = RadialJumpKernel::from_ln_fn_with(
        d,
        move |u| if u <= ln_r0 { ln_half } else { b.ln_j(u) },
        kernel.support_hint(),
        breaks,
    );
    Ok(MeyerSplit {
        kind: SplitKind::SmallFlat { r0 },
        small_kernel: small,
        big_kernel: big,
        big_rate,
        m2_small,
        sampler: Arc::new(RadialSampler {
            table,
            flat: Some((flat_rate, r0)),
            dim: d,
            subordinated: false,
        }),
    })
}

/// SBM split at subordinator jump size `s`: `μ^{[s]} = μ|_{(0,s]}`, `μ̂^{[s]} = μ|_{(s,∞)}`.
/// Both kernels are derived by quadrature; the big part's radial law is not tabulated.
pub fn sbm_split(sub: &SubordinatorSpec, dim: usize, s: f64) -> Result<MeyerSplit, SimError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(SimError::Config("s must be positive".into()));
    }
    let density = sub
        .density()
        .ok_or(SimError::NotSimulable("no Lévy density".into()))?
        .clone();
    let big_rate = sub.tail_mass(s)?;
    if big_rate == 0.0 {
        return Err(SimError::NoBigJumps);
    }
    let ln_s = s.ln();
    let mut breaks = density.breakpoints();
    breaks.push(s);
    let (d1, d2) = (density.clone(), density.clone());
    let small_sub = SubordinatorSpec::from_ln_fn(
        0.0,
        move |w| {
            if w <= ln_s {
                d1.ln_m(w)
            } else {
                f64::NEG_INFINITY
            }
        },
        Some(density.support().map_or(s, |x| x.min(s))),
        breaks.clone(),
    );
    let big_sub = SubordinatorSpec::from_ln_fn(
        0.0,
        move |w| {
            if w > ln_s {
                d2.ln_m(w)
            } else {
                f64::NEG_INFINITY
            }
        },
        density.support(),
        breaks,
    );
    let small_kernel = crate::kernels::kernel_from_subordinator(&small_sub, dim)?;
    let big_kernel = crate::kernels::kernel_from_subordinator(&big_sub, dim)?;
    // second moment of the small SBM: each coordinate has variance 2t per unit subordinator time
    let m2_small = 2.0 * dim as f64 * small_sub.small_jump_mean(s)?;
    let g = |w: f64| big_sub.ln_m(w) + w;
    let table = TabulatedSampler::new(
        &g,
        ln_s,
        big_sub.support().map(f64::ln),
        &big_sub.ln_breaks(),
    )?;
    Ok(MeyerSplit {
        kind: SplitKind::Sbm { s },
        small_kernel,
        big_kernel,
        big_rate,
        m2_small,
        sampler: Arc::new(RadialSampler {
            table,
            flat: None,
            dim,
            subordinated: true,
        }),
    })
}

/// Jump-size law of a compound Poisson mixture of scaled heavy-tailed marks: type `n`
/// fires at rate `H_n` with size `A_n Y`.
#[derive(Debug, Clone)]
pub struct TypeMixture {
    pub types: Vec<(u32, f64, f64)>,
    cum: Vec<f64>,
    total: f64,
}

impl TypeMixture {
    pub fn new(types: Vec<(u32, f64, f64)>) -> Self {
        let mut acc = 0.0;
        let cum = types
            .iter()
            .map(|t| {
                acc += t.1;
                acc
            })
            .collect();
        Self {
            types,
            cum,
            total: acc,
        }
    }

    pub fn rate(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, f64) {
        let v: f64 = rng.random::<f64>() * self.total;
        let i = self
            .cum
            .partition_point(|c| *c <= v)
            .min(self.types.len() - 1);
        let (n, _, a) = self.types[i];
        (n, a * sample_heavy_tail_y(rng))
    }
}

/// Where jump sizes come from.
#[derive(Debug, Clone)]
pub enum JumpSource {
    None,
    Radial(Arc<RadialSampler>),
    Types(Arc<TypeMixture>),
}

impl JumpSource {
    pub fn rate(&self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::Radial(s) => s.rate(),
            Self::Types(t) => t.rate(),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Tag, f64) {
        match self {
            Self::None => unreachable!("no jumps to sample"),
            Self::Radial(s) => (Tag::Big(0), s.sample(rng)),
            Self::Types(t) => {
                let (n, size) = t.sample(rng);
                (Tag::Type(n), size)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    SmallSurrogate,
    Big(u32),
    Type(u32),
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tag::SmallSurrogate => write!(f, "small_surrogate"),
            Tag::Big(i) => write!(f, "big({i})"),
            Tag::Type(n) => write!(f, "type_{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    /// Increment of the path since the previous event, continuous part included.
    pub dx: Vec<f64>,
    pub tag: Tag,
    /// Squared magnitude of the jump at `t` (zero for surrogate steps).
    pub jump_sq: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub start: Vec<f64>,
    pub horizon: f64,
    pub seed: u64,
    pub replica: u64,
    pub events: Vec<Event>,
    /// `E|continuous part of X_t|² / t`.
    pub surrogate_variance_rate: f64,
    /// Deterministic drift of a subordinator path.
    pub drift: f64,
    /// `m₂(ε) · horizon` when the small part was dropped instead of replaced.
    pub dropped_variance_bound: Option<f64>,
}

impl Trajectory {
    /// Position after the last event at or before `t`.
    pub fn position_at_events(&self, t: f64) -> Vec<f64> {
        let mut x = self.start.clone();
        for e in self.events.iter().take_while(|e| e.t <= t) {
            for (xi, di) in x.iter_mut().zip(&e.dx) {
                *xi += di;
            }
        }
        x
    }

    pub fn end(&self) -> Vec<f64> {
        self.position_at_events(self.horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticVariation {
    /// `Σ_{s ≤ t} |ΔX(s)|²` over recorded jumps.
    pub jumps: f64,
    /// Surrogate contribution `m₂(ε) · t`.
    pub surrogate: f64,
}

impl QuadraticVariation {
    pub fn total(&self) -> f64 {
        self.jumps + self.surrogate
    }
}

pub fn quadratic_variation(traj: &Trajectory, t: f64) -> Result<QuadraticVariation, SimError> {
    if t > traj.horizon * (1.0 + 1e-12) || t < 0.0 {
        return Err(SimError::Config(format!(
            "t = {t} outside [0, {}]",
            traj.horizon
        )));
    }
    let jumps = traj
        .events
        .iter()
        .take_while(|e| e.t <= t)
        .map(|e| e.jump_sq)
        .sum();
    Ok(QuadraticVariation {
        jumps,
        surrogate: traj.surrogate_variance_rate * t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Exited,
    ClockFired,
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCause {
    SmallPath,
    BigJump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Clock {
    None,
    /// An independent exponential time of the given rate.
    Exponential(f64),
    /// The first jump whose size (subordinator jump, or `|ΔX|` for kernels) exceeds the value.
    FirstJumpAbove(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub status: ExitStatus,
    pub tau: f64,
    pub position: Vec<f64>,
    pub cause: Option<ExitCause>,
    /// The reference clock time, when one was drawn or fired.
    pub clock: Option<f64>,
    /// Displacement of the clock-firing jump (not applied to `position`).
    pub clock_jump: Option<Vec<f64>>,
}

impl ExitRecord {
    pub fn exited(&self) -> bool {
        self.status == ExitStatus::Exited
    }
}

/// A prepared simulator: jump law, small-part surrogate and mode.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub dim: usize,
    pub mode: Mode,
    pub cfg: SimConfig,
    source: JumpSource,
    /// Drift of the subordinator (subordinator and SBM modes).
    drift: f64,
    /// Per-coordinate variance rate of the continuous part of `X`.
    coord_var: f64,
    dropped_variance: Option<f64>,
}

impl Simulator {
    pub fn new(spec: &ProcessSpec, cfg: &SimConfig, mode: Mode) -> Result<Self, SimError> {
        cfg.validate()?;
        if !spec.simulable {
            return Err(SimError::NotSimulable(format!(
                "{} carries only a model kernel",
                spec.name
            )));
        }
        match mode {
            Mode::Subordinator | Mode::Sbm => {
                let sub = spec.subordinator().ok_or_else(|| {
                    SimError::NotSimulable(format!("{} has no subordinator", spec.name))
                })?;
                let (source, drift) = subordinator_parts(sub, cfg.cutoff)?;
                let dim = if mode == Mode::Subordinator {
                    1
                } else {
                    spec.dim
                };
                let coord_var = if mode == Mode::Sbm { 2.0 * drift } else { 0.0 };
                Ok(Self {
                    dim,
                    mode,
                    cfg: cfg.clone(),
                    source,
                    drift,
                    coord_var,
                    dropped_variance: None,
                })
            }
            Mode::DirectKernel => {
                let kernel = spec.kernel()?;
                Self::direct(&kernel, cfg)
            }
        }
    }

    /// Direct simulation of a kernel: exact jumps above the cutoff, surrogate below.
    pub fn direct(kernel: &RadialJumpKernel, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let m2 = kernel.m2(cfg.cutoff)?;
        let source = match small_large_split(kernel, cfg.cutoff) {
            Ok(split) => JumpSource::Radial(split.sampler),
            Err(SimError::NoBigJumps) => JumpSource::None,
            Err(e) => return Err(e),
        };
        let (coord_var, dropped_variance) = if cfg.gaussian_surrogate {
            (m2 / kernel.dim as f64, None)
        } else {
            (0.0, Some(m2 * cfg.horizon))
        };
        Ok(Self {
            dim: kernel.dim,
            mode: Mode::DirectKernel,
            cfg: cfg.clone(),
            source,
            drift: 0.0,
            coord_var,
            dropped_variance,
        })
    }

    /// Low-level constructor from an explicit jump source.
    pub fn from_parts(
        dim: usize,
        mode: Mode,
        cfg: &SimConfig,
        source: JumpSource,
        drift: f64,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let coord_var = if mode == Mode::Sbm { 2.0 * drift } else { 0.0 };
        Ok(Self {
            dim,
            mode,
            cfg: cfg.clone(),
            source,
            drift,
            coord_var,
            dropped_variance: None,
        })
    }

    /// Total jump rate of the simulated jumps.
    pub fn jump_rate(&self) -> f64 {
        self.source.rate()
    }

    /// `E|X_t - X_0|²/t` of the continuous part.
    pub fn continuous_variance_rate(&self) -> f64 {
        self.coord_var * self.dim as f64
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    fn rng(&self, replica: u64) -> ChaCha8Rng {
        replica_rng(self.cfg.seed, replica)
    }

    fn gaussian_into<R: Rng>(&self, rng: &mut R, dt: f64, out: &mut [f64]) {
        if self.coord_var > 0.0 && dt > 0.0 {
            let sd = (self.coord_var * dt).sqrt();
            for o in out.iter_mut() {
                *o += sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }

    /// Jump displacement for a sampled size, and the size compared against a clock threshold.
    fn jump_into<R: Rng>(&self, rng: &mut R, size: f64, out: &mut [f64]) {
        match self.mode {
            Mode::Subordinator => out[0] = size,
            Mode::Sbm => {
                let sd = (2.0 * size).sqrt();
                for o in out.iter_mut() {
                    *o = sd * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Mode::DirectKernel => random_direction(rng, out, size),
        }
    }

    fn next_jump<R: Rng>(&self, rng: &mut R, t: f64) -> f64 {
        let rate = self.source.rate();
        if rate > 0.0 {
            t + rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        }
    }

    /// One path on `[0, horizon]`; surrogate increments are recorded every `step`.
    pub fn sample_path(&self, replica: u64) -> Trajectory {
        let mut rng = self.rng(replica);
        let d = self.dim;
        let horizon = self.cfg.horizon;
        let mut events = Vec::new();
        let mut t = 0.0;
        let mut t_jump = self.next_jump(&mut rng, 0.0);
        let stepping = self.coord_var > 0.0;
        let mut t_step = if stepping {
            self.cfg.step
        } else {
            f64::INFINITY
        };
        let mut jump = vec![0.0; d];
        loop {
            let next = t_jump.min(t_step).min(horizon);
            let mut dx = vec![0.0; d];
            self.gaussian_into(&mut rng, next - t, &mut dx);
            if self.mode == Mode::Subordinator {
                dx[0] += self.drift * (next - t);
            }
            t = next;
            if t_jump <= t_step && t_jump <= horizon {
                let (tag, size) = self.source.sample(&mut rng);
                self.jump_into(&mut rng, size, &mut jump);
                let jump_sq: f64 = jump.iter().map(|x| x * x).sum();
                for (a, b) in dx.iter_mut().zip(&jump) {
                    *a += b;
                }
                events.push(Event {
                    t,
                    dx,
                    tag,
                    jump_sq,
                });
                t_jump = self.next_jump(&mut rng, t);
            } else {
                let any = dx.iter().any(|x| *x != 0.0);
                if any || t >= horizon {
                    events.push(Event {
                        t,
                        dx,
                        tag: Tag::SmallSurrogate,
                        jump_sq: 0.0,
                    });
                }
                if t >= horizon {
                    break;
                }
                t_step = (t + self.cfg.step).min(horizon);
                if t_step == t {
                    break;
                }
            }
            if t >= horizon {
                break;
            }
        }
        Trajectory {
            dim: d,
            start: vec![0.0; d],
            horizon,
            seed: self.cfg.seed,
            replica,
            events,
            surrogate_variance_rate: self.continuous_variance_rate(),
            drift: if self.mode == Mode::Subordinator {
                self.drift
            } else {
                0.0
            },
            dropped_variance_bound: self.dropped_variance,
        }
    }

    /// `X_t - X_0` without recording events; continuous increments are combined exactly.
    pub fn position_at(&self, replica: u64, t: f64) -> Vec<f64> {
        let mut rng = self.rng(replica);
        let d = self.dim;
        let mut x = vec![0.0; d];
        let mut jump = vec![0.0; d];
        let mut now = 0.0;
        loop {
            let next = self.next_jump(&mut rng, now);
            if next > t {
                break;
            }
            let (_, size) = self.source.sample(&mut rng);
            self.jump_into(&mut rng, size, &mut jump);
            for (a, b) in x.iter_mut().zip(&jump) {
                *a += b;
            }
            now = next;
        }
        self.gaussian_into(&mut rng, t, &mut x);
        if self.mode == Mode::Subordinator {
            x[0] += self.drift * t;
        }
        x
    }

    /// `[X]_t` over jumps only, without recording events.
    pub fn jump_quadratic_variation(&self, replica: u64, t: f64) -> f64 {
        let mut rng = self.rng(replica);
        let mut jump = vec![0.0; self.dim];
        let mut now = 0.0;
        let mut qv = 0.0;
        loop {
            let next = self.next_jump(&mut rng, now);
            if next > t {
                break;
            }
            let (_, size) = self.source.sample(&mut rng);
            self.jump_into(&mut rng, size, &mut jump);
            qv += jump.iter().map(|x| x * x).sum::<f64>();
            now = next;
        }
        qv
    }

    /// First exit from the ball `B(0, radius)` started at `start`, raced against `clock`.
    pub fn exit_event(&self, replica: u64, radius: f64, clock: Clock, start: &[f64]) -> ExitRecord {
        let mut rng = self.rng(replica);
        let d = self.dim;
        assert_eq!(start.len(), d, "start point has the wrong dimension");
        let horizon = self.cfg.horizon;
        let clock_time = match clock {
            Clock::Exponential(rate) => Some(rng.sample::<f64, _>(Exp1) / rate),
            _ => None,
        };
        let threshold = match clock {
            Clock::FirstJumpAbove(s) => s,
            _ => f64::INFINITY,
        };
        let var = self.continuous_variance_rate();
        let h = if var > 0.0 {
            self.cfg.step.min((0.01 * radius).powi(2) / var)
        } else {
            f64::INFINITY
        };
        let r2 = radius * radius;
        let norm2 = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let mut x = start.to_vec();
        let mut jump = vec![0.0; d];
        let mut t = 0.0;
        let mut t_jump = self.next_jump(&mut rng, 0.0);
        let record = |status, tau, position: Vec<f64>, cause, clock_jump| ExitRecord {
            status,
            tau,
            position,
            cause,
            clock: clock_time,
            clock_jump,
        };
        if norm2(&x) >= r2 {
            return record(ExitStatus::Exited, 0.0, x, Some(ExitCause::SmallPath), None);
        }
        loop {
            let stop = clock_time.unwrap_or(f64::INFINITY).min(horizon);
            let next = t_jump.min(t + h).min(stop);
            let dt = next - t;
            if self.mode == Mode::Subordinator && self.drift > 0.0 {
                // exact crossing of the level by the deterministic part
                let need = radius - x[0];
                if self.drift * dt >= need {
                    let tau = t + need / self.drift;
                    x[0] = radius;
                    return record(ExitStatus::Exited, tau, x, Some(ExitCause::SmallPath), None);
                }
                x[0] += self.drift * dt;
            }
            self.gaussian_into(&mut rng, dt, &mut x);
            t = next;
            if norm2(&x) >= r2 {
                return record(ExitStatus::Exited, t, x, Some(ExitCause::SmallPath), None);
            }
            if t >= stop && (t < t_jump || t_jump > stop) {
                let status = if clock_time.is_some_and(|c| c <= horizon) {
                    ExitStatus::ClockFired
                } else {
                    ExitStatus::Censored
                };
                return record(status, t, x, None, None);
            }
            if t >= t_jump {
                let (_, size) = self.source.sample(&mut rng);
                self.jump_into(&mut rng, size, &mut jump);
                if size > threshold {
                    return record(ExitStatus::ClockFired, t, x, None, Some(jump.clone()));
                }
                for (a, b) in x.iter_mut().zip(&jump) {
                    *a += b;
                }
                if norm2(&x) >= r2 {
                    return record(ExitStatus::Exited, t, x, Some(ExitCause::BigJump), None);
                }
                t_jump = self.next_jump(&mut rng, t);
            }
        }
    }

    pub fn sample_paths(&self, replicas: Range<u64>) -> Vec<Trajectory> {
        replicas
            .into_par_iter()
            .map(|i| self.sample_path(i))
            .collect()
    }

    pub fn exit_events(
        &self,
        replicas: Range<u64>,
        radius: f64,
        clock: Clock,
        start: &[f64],
    ) -> Vec<ExitRecord> {
        replicas
            .into_par_iter()
            .map(|i| self.exit_event(i, radius, clock, start))
            .collect()
    }
}

/// Subordinator jumps above `cutoff` and the drift `γ + ∫₀^ε t m(t) dt`.
fn subordinator_parts(sub: &SubordinatorSpec, cutoff: f64) -> Result<(JumpSource, f64), SimError> {
    let Some(density) = sub.density() else {
        return Ok((JumpSource::None, sub.drift));
    };
    let small = sub.small_jump_mean(cutoff)?;
    let g = |w: f64| density.ln_m(w) + w;
    let breaks: Vec<f64> = density
        .breakpoints()
        .into_iter()
        .filter(|b| *b > 0.0)
        .map(f64::ln)
        .collect();
    let table = TabulatedSampler::new(&g, cutoff.ln(), density.support().map(f64::ln), &breaks)?;
    let source = if table.rate() > 0.0 {
        JumpSource::Radial(Arc::new(RadialSampler {
            table,
            flat: None,
            dim: 1,
            subordinated: false,
        }))
    } else {
        JumpSource::None
    };
    Ok((source, sub.drift + small))
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64], size: f64) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { size } else { -size };
        return;
    }
    loop {
        let mut n2 = 0.0;
        for o in out.iter_mut() {
            *o = rng.sample(StandardNormal);
            n2 += *o * *o;
        }
        if n2 > 1e-300 {
            let s = size / n2.sqrt();
            for o in out.iter_mut() {
                *o *= s;
            }
            return;
        }
    }
}

/// Free-function form of [`Simulator::sample_path`].
pub fn sample_path(
    spec: &ProcessSpec,
    cfg: &SimConfig,
    mode: Mode,
    replica: u64,
) -> Result<Trajectory, SimError> {
    Ok(Simulator::new(spec, cfg, mode)?.sample_path(replica))
}

/// Free-function form of [`Simulator::exit_event`] started at the origin.
pub fn exit_event(
    spec: &ProcessSpec,
    cfg: &SimConfig,
    mode: Mode,
    ball_radius: f64,
    clock: Clock,
    replica: u64,
) -> Result<ExitRecord, SimError> {
    if !(ball_radius > 0.0) {
        return Err(SimError::Config("ball radius must be positive".into()));
    }
    let sim = Simulator::new(spec, cfg, mode)?;
    Ok(sim.exit_event(replica, ball_radius, clock, &vec![0.0; sim.dim]))
}

/// Kolmogorov–Smirnov statistic and asymptotic p-value of `samples` against Exponential(`rate`).
pub fn ks_exponential(samples: &[f64], rate: f64) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = -(-rate * x).exp_m1();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lam = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lam * lam).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

//! Built-in process families.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{
    kernel_from_subordinator, levy_khintchine_check, levy_khintchine_check_subordinator,
    KernelError, LevyDensity, LkVerdict, RadialDensity, RadialJumpKernel, SubordinatorSpec,
};
use crate::quad::{ln_1p_exp, ln_add};
use crate::special::mittag_leffler_neg;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("unknown builtin `{0}`")]
    UnknownName(String),
    #[error("Lévy–Khintchine condition fails: {0}")]
    LevyKhintchine(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// A process: a jump kernel, a subordinator, or both.
#[derive(Clone)]
pub struct ProcessSpec {
    pub name: String,
    pub dim: usize,
    pub params: BTreeMap<String, f64>,
    explicit_kernel: Option<RadialJumpKernel>,
    derived_kernel: Arc<OnceLock<Result<RadialJumpKernel, KernelError>>>,
    subordinator: Option<SubordinatorSpec>,
    pub simulable: bool,
}

impl fmt::Debug for ProcessSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("has_kernel", &self.explicit_kernel.is_some())
            .field("subordinator", &self.subordinator)
            .field("simulable", &self.simulable)
            .finish()
    }
}

impl ProcessSpec {
    pub fn from_kernel(name: &str, kernel: RadialJumpKernel, simulable: bool) -> Self {
        Self {
            name: name.to_string(),
            dim: kernel.dim,
            params: BTreeMap::new(),
            explicit_kernel: Some(kernel),
            derived_kernel: Arc::new(OnceLock::new()),
            subordinator: None,
            simulable,
        }
    }

    pub fn from_subordinator(name: &str, sub: SubordinatorSpec, dim: usize) -> Self {
        let simulable = sub.density().is_some() || sub.drift > 0.0;
        Self {
            name: name.to_string(),
            dim,
            params: BTreeMap::new(),
            explicit_kernel: None,
            derived_kernel: Arc::new(OnceLock::new()),
            subordinator: Some(sub),
            simulable,
        }
    }

    fn with_params(mut self, params: &[(&str, f64)]) -> Self {
        self.params = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self
    }

    /// The jump kernel; for subordinator-only specs it is derived (and memoized) on first use.
    pub fn kernel(&self) -> Result<RadialJumpKernel, KernelError> {
        if let Some(k) = &self.explicit_kernel {
            return Ok(k.clone());
        }
        let sub = self.subordinator.as_ref().ok_or(KernelError::NoDensity)?;
        self.derived_kernel
            .get_or_init(|| kernel_from_subordinator(sub, self.dim))
            .clone()
    }

    pub fn has_explicit_kernel(&self) -> bool {
        self.explicit_kernel.is_some()
    }

    pub fn subordinator(&self) -> Option<&SubordinatorSpec> {
        self.subordinator.as_ref()
    }

    /// Lévy–Khintchine verdict on whichever representation is primary.
    pub fn levy_khintchine(&self) -> LkVerdict {
        match (&self.explicit_kernel, &self.subordinator) {
            (Some(k), _) => levy_khintchine_check(k),
            (None, Some(s)) => levy_khintchine_check_subordinator(s),
            (None, None) => LkVerdict::Invalid {
                reason: "empty process".into(),
            },
        }
    }
}

/// Parameter schema of a builtin, for `catalog list`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuiltinInfo {
    pub name: &'static str,
    pub params: Vec<(&'static str, &'static str)>,
    pub simulable: bool,
    pub summary: &'static str,
}

pub fn list_builtins() -> Vec<BuiltinInfo> {
    vec![
        BuiltinInfo {
            name: "stable",
            params: vec![("alpha", "stability index in (0,2)")],
            simulable: true,
            summary: "j(r) = r^{-d-alpha}",
        },
        BuiltinInfo {
            name: "geometric-stable",
            params: vec![("beta", "index in (0,2]; beta=2 is the Gamma subordinator")],
            simulable: true,
            summary: "phi(lambda) = log(1 + lambda^{beta/2})",
        },
        BuiltinInfo {
            name: "iterated-gs",
            params: vec![("beta", "index in (0,2]"), ("n", "number of compositions, integer >= 1")],
            simulable: false,
            summary: "model kernel r^{-d-2} phi_n'(r^{-2}), phi_{n+1} = phi_n o phi_1",
        },
        BuiltinInfo {
            name: "relativistic-gs",
            params: vec![("beta", "index in (0,2]"), ("m", "mass parameter > 0")],
            simulable: false,
            summary: "model kernel r^{-d-2} phi'(r^{-2}), phi = log(1 + (lambda + m^{beta/2})^{2/beta} - m)",
        },
        BuiltinInfo {
            name: "example-no-a3",
            params: vec![("delta", "support cutoff of the Levy density in (0,1), default 0.1")],
            simulable: true,
            summary: "m(t) = t^{-2} (log(e + 1/t))^{-2} 1{t <= delta}",
        },
        BuiltinInfo {
            name: "counterexample",
            params: vec![("n_max", "number of jump types kept, integer >= 1, default 6")],
            simulable: true,
            summary: "m(t) = (2/3) sum_{n <= n_max} 2^{3n^2} min{1, (2^{2n^2} t)^{-3}}",
        },
    ]
}

fn param(
    params: &BTreeMap<String, f64>,
    key: &str,
    default: Option<f64>,
) -> Result<f64, CatalogError> {
    match params.get(key) {
        Some(v) => Ok(*v),
        None => default.ok_or_else(|| CatalogError::Parameter(format!("missing `{key}`"))),
    }
}

fn integer_param(
    params: &BTreeMap<String, f64>,
    key: &str,
    default: Option<f64>,
) -> Result<u32, CatalogError> {
    let v = param(params, key, default)?;
    if v < 1.0 || v.fract() != 0.0 || v > 1e6 {
        return Err(CatalogError::Parameter(format!(
            "`{key}` must be a positive integer, got {v}"
        )));
    }
    Ok(v as u32)
}

/// Look up a builtin process by name.
pub fn builtin(
    name: &str,
    params: &BTreeMap<String, f64>,
    d: usize,
) -> Result<ProcessSpec, CatalogError> {
    if d < 1 {
        return Err(CatalogError::Parameter(
            "dimension must be at least 1".into(),
        ));
    }
    match name {
        "stable" => stable(param(params, "alpha", None)?, d),
        "geometric-stable" => geometric_stable(param(params, "beta", None)?, d),
        "iterated-gs" => iterated_gs(
            param(params, "beta", None)?,
            integer_param(params, "n", None)?,
            d,
        ),
        "relativistic-gs" => {
            relativistic_gs(param(params, "beta", None)?, param(params, "m", None)?, d)
        }
        "example-no-a3" => example_no_a3(param(params, "delta", Some(0.1))?, d),
        "counterexample" => counterexample(integer_param(params, "n_max", Some(6.0))?, d),
        other => Err(CatalogError::UnknownName(other.to_string())),
    }
}

/// `j(r) = r^{-d-α}`.
pub fn stable(alpha: f64, d: usize) -> Result<ProcessSpec, CatalogError> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(CatalogError::LevyKhintchine("α ∉ (0,2)".into()));
    }
    let k = d as f64 + alpha;
    let kernel = RadialJumpKernel::from_ln_fn(d, move |u| -k * u).with_doubling_hint(2f64.powf(-k));
    Ok(ProcessSpec::from_kernel("stable", kernel, true).with_params(&[("alpha", alpha)]))
}

fn check_beta(beta: f64) -> Result<(), CatalogError> {
    if beta > 0.0 && beta <= 2.0 {
        Ok(())
    } else {
        Err(CatalogError::Parameter(format!(
            "β must lie in (0,2], got {beta}"
        )))
    }
}

struct GeometricStable {
    a: f64,
}

impl LevyDensity for GeometricStable {
    fn ln_m(&self, w: f64) -> f64 {
        let t = w.exp();
        if self.a == 1.0 {
            return -t - w;
        }
        self.a.ln() - w + mittag_leffler_neg(self.a, (self.a * w).exp()).ln()
    }
}

/// Subordinator with `φ(λ) = log(1 + λ^{β/2})`, Lévy density `a t^{-1} E_a(-t^a)` with `a = β/2`.
pub fn geometric_stable(beta: f64, d: usize) -> Result<ProcessSpec, CatalogError> {
    check_beta(beta)?;
    let sub = SubordinatorSpec::new(0.0, Some(Arc::new(GeometricStable { a: beta / 2.0 })));
    Ok(ProcessSpec::from_subordinator("geometric-stable", sub, d).with_params(&[("beta", beta)]))
}

/// `ln φ_n′(λ)` for the `n`-fold composition of `φ₁(λ) = log(1 + λ^a)`, from `ln λ`.
pub fn iterated_ln_dphi(a: f64, n: u32, ln_lam: f64) -> f64 {
    let mut x = ln_lam;
    let mut acc = 0.0;
    for _ in 0..n {
        let ax = a * x;
        acc += a.ln() + (a - 1.0) * x - ln_1p_exp(ax);
        x = if ax < -700.0 { ax } else { ln_1p_exp(ax).ln() };
    }
    acc
}

/// `ln φ′(λ)` for `φ(λ) = log(1 + (λ + m^{β/2})^{2/β} - m)`.
pub fn relativistic_ln_dphi(beta: f64, m: f64, ln_lam: f64) -> f64 {
    let b = 2.0 / beta;
    let ln_s = ln_add(ln_lam, m.ln() / b);
    let big_a = b * ln_s;
    let ln_den = big_a + ((1.0 - m) * (-big_a).exp()).ln_1p();
    b.ln() + (b - 1.0) * ln_s - ln_den
}

/// Model kernel `r^{-d-2} φ′(r^{-2})` for `r ≤ 1`, continued beyond `r = 1` by the
/// power law matching value and log-slope at `r = 1`, steepened to `r^{-d-1}` when
/// that slope would leave the tail non-integrable.
struct PhiModel<F> {
    ln_dphi: F,
    dim: f64,
    ln_j1: f64,
    slope1: f64,
}

impl<F: Fn(f64) -> f64 + Send + Sync> PhiModel<F> {
    fn new(ln_dphi: F, dim: usize) -> Result<Self, CatalogError> {
        let d = dim as f64;
        let core = |u: f64| -(d + 2.0) * u + ln_dphi(-2.0 * u);
        let h = 1e-5;
        let slope1 = ((core(h) - core(-h)) / (2.0 * h)).min(-(d + 1.0));
        if !slope1.is_finite() {
            return Err(CatalogError::Parameter(
                "model kernel is not finite at r = 1".into(),
            ));
        }
        let ln_j1 = core(0.0);
        Ok(Self {
            ln_dphi,
            dim: d,
            ln_j1,
            slope1,
        })
    }
}

impl<F: Fn(f64) -> f64 + Send + Sync> RadialDensity for PhiModel<F> {
    fn ln_j(&self, u: f64) -> f64 {
        if u <= 0.0 {
            -(self.dim + 2.0) * u + (self.ln_dphi)(-2.0 * u)
        } else {
            self.ln_j1 + self.slope1 * u
        }
    }
    fn breakpoints(&self) -> Vec<f64> {
        vec![1.0]
    }
}

pub fn iterated_gs(beta: f64, n: u32, d: usize) -> Result<ProcessSpec, CatalogError> {
    check_beta(beta)?;
    let a = beta / 2.0;
    let model = PhiModel::new(move |l| iterated_ln_dphi(a, n, l), d)?;
    let kernel = RadialJumpKernel::new(d, Arc::new(model));
    Ok(ProcessSpec::from_kernel("iterated-gs", kernel, false)
        .with_params(&[("beta", beta), ("n", n as f64)]))
}

pub fn relativistic_gs(beta: f64, m: f64, d: usize) -> Result<ProcessSpec, CatalogError> {
    check_beta(beta)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(CatalogError::Parameter(format!(
            "m must be positive, got {m}"
        )));
    }
    let model = PhiModel::new(move |l| relativistic_ln_dphi(beta, m, l), d)?;
    let kernel = RadialJumpKernel::new(d, Arc::new(model));
    Ok(ProcessSpec::from_kernel("relativistic-gs", kernel, false)
        .with_params(&[("beta", beta), ("m", m)]))
}

/// `m(t) = t^{-2}(log(e + 1/t))^{-2}` on `(0, δ]`.
pub fn example_no_a3(delta: f64, d: usize) -> Result<ProcessSpec, CatalogError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CatalogError::Parameter(format!(
            "δ must lie in (0,1), got {delta}"
        )));
    }
    let sub = SubordinatorSpec::from_ln_fn(
        0.0,
        |w| -2.0 * w - 2.0 * ln_add(1.0, -w).ln(),
        Some(delta),
        vec![],
    );
    Ok(ProcessSpec::from_subordinator("example-no-a3", sub, d).with_params(&[("delta", delta)]))
}

/// Lévy density `(2/3) Σ_{n ≤ N} 2^{3n²} min{1, (2^{2n²} t)^{-3}}`: type `n` is `H_n` times
/// the law of `A_n Y` with `H_n = 2^{n²}`, `A_n = 2^{-2n²}`.
pub struct CounterexampleDensity {
    pub n_max: u32,
}

impl CounterexampleDensity {
    pub fn ln_type(n: u32, ln_t: f64) -> f64 {
        let nn = (n * n) as f64;
        (2.0f64 / 3.0).ln() + 3.0 * nn * LN_2 + (-3.0 * (ln_t + 2.0 * nn * LN_2)).min(0.0)
    }
}

impl LevyDensity for CounterexampleDensity {
    fn ln_m(&self, ln_t: f64) -> f64 {
        (1..=self.n_max).fold(f64::NEG_INFINITY, |acc, n| {
            ln_add(acc, Self::ln_type(n, ln_t))
        })
    }

    fn breakpoints(&self) -> Vec<f64> {
        (1..=self.n_max)
            .map(|n| (-2.0 * (n * n) as f64 * LN_2).exp())
            .collect()
    }

    fn tail_mass(&self, s: f64) -> Option<f64> {
        let mut total = 0.0;
        for n in 1..=self.n_max {
            let nn = (n * n) as f64;
            let h = 2f64.powf(nn);
            let y = s / 2f64.powf(-2.0 * nn);
            total += h * y_tail(y);
        }
        Some(total)
    }
}

/// `P(Y > y)` for the heavy-tailed mark: uniform on `[0,1]` with probability 2/3, else Pareto.
pub fn y_tail(y: f64) -> f64 {
    if y <= 0.0 {
        1.0
    } else if y <= 1.0 {
        1.0 - 2.0 * y / 3.0
    } else {
        1.0 / (3.0 * y * y)
    }
}

pub fn counterexample(n_max: u32, d: usize) -> Result<ProcessSpec, CatalogError> {
    if n_max > 20 {
        return Err(CatalogError::Parameter(
            "n_max above 20 overflows the type weights".into(),
        ));
    }
    let sub = SubordinatorSpec::new(0.0, Some(Arc::new(CounterexampleDensity { n_max })));
    Ok(ProcessSpec::from_subordinator("counterexample", sub, d)
        .with_params(&[("n_max", n_max as f64)]))
}

/// `j(r) = r^{-d-α}(log 1/r)^{-β}` on `(0, δ]`, continued beyond `δ` as `j(δ)(δ/r)^{d+1}`.
pub fn log_stable(
    alpha: f64,
    beta: f64,
    delta: f64,
    d: usize,
) -> Result<ProcessSpec, CatalogError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CatalogError::Parameter(format!(
            "δ must lie in (0,1), got {delta}"
        )));
    }
    let dd = d as f64;
    let l_delta = -delta.ln();
    if !(alpha > 0.0) || dd + alpha < beta / l_delta {
        return Err(CatalogError::Parameter(
            "kernel would not be non-increasing on (0, δ]".into(),
        ));
    }
    let u_delta = delta.ln();
    let core = move |u: f64| -(dd + alpha) * u - beta * (-u).ln();
    let at_delta = core(u_delta);
    let kernel = RadialJumpKernel::from_ln_fn_with(
        d,
        move |u| {
            if u <= u_delta {
                core(u)
            } else {
                at_delta - (dd + 1.0) * (u - u_delta)
            }
        },
        None,
        vec![delta],
    );
    let spec = ProcessSpec::from_kernel("log_stable", kernel, true).with_params(&[
        ("alpha", alpha),
        ("beta", beta),
        ("delta", delta),
    ]);
    match spec.levy_khintchine() {
        LkVerdict::Valid { .. } => Ok(spec),
        LkVerdict::Invalid { reason } => Err(CatalogError::LevyKhintchine(reason)),
    }
}

/// Tabulated kernel: piecewise linear in `(ln r, ln j)` between the nodes (monotone by construction),
/// power-law continuation below the first node with the first segment's slope, zero beyond the last.
struct TableDensity {
    ln_r: Vec<f64>,
    ln_j: Vec<f64>,
}

impl RadialDensity for TableDensity {
    fn ln_j(&self, u: f64) -> f64 {
        let n = self.ln_r.len();
        if u > self.ln_r[n - 1] {
            return f64::NEG_INFINITY;
        }
        if u <= self.ln_r[0] {
            let s = (self.ln_j[1] - self.ln_j[0]) / (self.ln_r[1] - self.ln_r[0]);
            return self.ln_j[0] + s * (u - self.ln_r[0]);
        }
        let i = self.ln_r.partition_point(|x| *x < u).max(1) - 1;
        let t = (u - self.ln_r[i]) / (self.ln_r[i + 1] - self.ln_r[i]);
        self.ln_j[i] + t * (self.ln_j[i + 1] - self.ln_j[i])
    }
    fn support(&self) -> Option<f64> {
        self.ln_r.last().map(|x| x.exp())
    }
    fn breakpoints(&self) -> Vec<f64> {
        self.ln_r.iter().map(|x| x.exp()).collect()
    }
}

pub fn table(points: &[(f64, f64)], d: usize) -> Result<ProcessSpec, CatalogError> {
    if points.len() < 2 {
        return Err(CatalogError::Parameter(
            "a table needs at least two rows".into(),
        ));
    }
    for w in points.windows(2) {
        if !(w[1].0 > w[0].0) {
            return Err(CatalogError::Parameter(format!(
                "r must be strictly increasing (at r = {})",
                w[1].0
            )));
        }
        if w[1].1 > w[0].1 {
            return Err(CatalogError::Parameter(format!(
                "j must be non-increasing (at r = {})",
                w[1].0
            )));
        }
    }
    if points.iter().any(|(r, j)| !(*r > 0.0) || !(*j > 0.0)) {
        return Err(CatalogError::Parameter(
            "table entries must be positive".into(),
        ));
    }
    let density = TableDensity {
        ln_r: points.iter().map(|p| p.0.ln()).collect(),
        ln_j: points.iter().map(|p| p.1.ln()).collect(),
    };
    let kernel = RadialJumpKernel::new(d, Arc::new(density));
    let spec = ProcessSpec::from_kernel("table", kernel, true);
    match spec.levy_khintchine() {
        LkVerdict::Valid { .. } => Ok(spec),
        LkVerdict::Invalid { reason } => Err(CatalogError::LevyKhintchine(reason)),
    }
}

//! Positive and negative EHI criteria evaluated on geometric scale grids.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{
    check_doubling, ln_scale_profile, KernelError, LnProfile, RadialJumpKernel, ScaleProfile,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid classifier configuration: {0}")]
    Config(String),
    #[error("need at least {needed} scales with |log r| >= 1 for slope fits, have {got}")]
    TooFewScales { needed: usize, got: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SmallScale,
    LargeScale,
}

impl FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "small" | "small_scale" => Ok(Self::SmallScale),
            "large" | "large_scale" => Ok(Self::LargeScale),
            other => Err(format!(
                "unknown direction `{other}` (expected small or large)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub direction: Direction,
    pub grid_base: f64,
    pub n_scales: usize,
    pub r_start: f64,
    pub c_big: f64,
    pub c_small: f64,
    pub epsilon_grid: Vec<f64>,
    pub slope_window: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            direction: Direction::SmallScale,
            grid_base: 2.0,
            n_scales: 30,
            r_start: 1.0,
            c_big: 0.01,
            c_small: 100.0,
            epsilon_grid: vec![1.0, 0.5, 0.25],
            slope_window: 8,
        }
    }
}

impl ClassifierConfig {
    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::Config(m.into()));
        if !(self.grid_base >= 2.0 && self.grid_base.is_finite()) {
            return bad("grid base must be at least 2");
        }
        if self.n_scales < 1 {
            return bad("need at least one scale");
        }
        if !(self.r_start > 0.0 && self.r_start.is_finite()) {
            return bad("r_start must be positive");
        }
        if !(self.c_big > 0.0 && self.c_small > 0.0) {
            return bad("surrogate constants must be positive");
        }
        if self.epsilon_grid.is_empty()
            || self.epsilon_grid.iter().any(|e| !(*e > 0.0 && *e <= 1.0))
        {
            return bad("every ε must lie in (0, 1]");
        }
        if self.slope_window < 3 {
            return bad("slope window must be at least 3");
        }
        Ok(())
    }

    /// `r_n = r_start · M^{∓n}`, `n = 0..n_scales`.
    pub fn grid(&self) -> Vec<f64> {
        let sign = match self.direction {
            Direction::SmallScale => -1.0,
            Direction::LargeScale => 1.0,
        };
        (0..self.n_scales)
            .map(|n| (self.r_start.ln() + sign * n as f64 * self.grid_base.ln()).exp())
            .collect()
    }
}

/// Condition identifiers, serialized as `bigm2`, `smallm2(0.5)`, `ratio-a`, …, `negative`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    BigM2,
    SmallM2(f64),
    RatioA,
    RatioB,
    RatioC,
    RatioD,
    Negative,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BigM2 => write!(f, "bigm2"),
            Self::SmallM2(e) => write!(f, "smallm2({e})"),
            Self::RatioA => write!(f, "ratio-a"),
            Self::RatioB => write!(f, "ratio-b"),
            Self::RatioC => write!(f, "ratio-c"),
            Self::RatioD => write!(f, "ratio-d"),
            Self::Negative => write!(f, "negative"),
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        Ok(match s.as_str() {
            "bigm2" => Self::BigM2,
            "ratio-a" => Self::RatioA,
            "ratio-b" => Self::RatioB,
            "ratio-c" => Self::RatioC,
            "ratio-d" => Self::RatioD,
            "negative" => Self::Negative,
            other => {
                let eps = other
                    .strip_prefix("smallm2(")
                    .and_then(|x| x.strip_suffix(')'))
                    .and_then(|x| x.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown condition `{other}`"))?;
                Self::SmallM2(eps)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    Holds,
    Fails,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiredCondition {
    pub r: f64,
    pub condition: Condition,
}

/// Least-squares fit `ln(r^{d+2} j) = a + b ln r + c ln L`, `L = |ln r|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioFit {
    pub scales: Vec<f64>,
    pub power_exponent: f64,
    pub power_stderr: f64,
    /// Exponent `q` of the polylog ratio bound: `(log s⁻¹ / log r⁻¹)^q` at small scales,
    /// `(log r / log s)^q` at large scales.
    pub polylog_exponent: f64,
    pub polylog_stderr: f64,
    pub fired: Vec<Condition>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeReport {
    pub fires: bool,
    pub witness_scales: Vec<f64>,
    /// `ln[(tail2/jd2)² / (m2/tail2)ᵈ]` at every grid scale.
    pub gap_series: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub conclusion: Conclusion,
    pub fired: Vec<FiredCondition>,
    pub profiles: Vec<ScaleProfile>,
    pub notes: Vec<String>,
    pub doubling_constant: f64,
    pub ratio: Option<RatioFit>,
    pub negative: Option<NegativeReport>,
}

/// Exponents must clear their threshold by three standard errors plus this margin.
const SLOPE_MARGIN: f64 = 1e-6;

fn is_degenerate(p: &LnProfile) -> bool {
    p.ln_jd2 == f64::NEG_INFINITY && p.ln_m2 == f64::NEG_INFINITY && p.ln_tail2 == f64::NEG_INFINITY
}

/// Conditions satisfied at one scale (log-space profile).
pub fn conditions_at_ln_scale(p: &LnProfile, cfg: &ClassifierConfig) -> Vec<Condition> {
    let mut out = Vec::new();
    if p.ln_m2 >= cfg.c_big.ln() + p.ln_tail2 {
        out.push(Condition::BigM2);
    }
    for &eps in &cfg.epsilon_grid {
        let bound = cfg.c_small.ln() + mix(eps, p.ln_jd2, p.ln_tail2);
        if p.ln_m2 == f64::NEG_INFINITY || p.ln_m2 <= bound {
            out.push(Condition::SmallM2(eps));
        }
    }
    out
}

/// `ε a + (1-ε) b` with `0·(-∞) = 0`.
fn mix(eps: f64, a: f64, b: f64) -> f64 {
    let term = |w: f64, x: f64| if w == 0.0 { 0.0 } else { w * x };
    term(eps, a) + term(1.0 - eps, b)
}

fn to_ln(p: &ScaleProfile) -> LnProfile {
    LnProfile {
        ln_r: p.r.ln(),
        ln_jd2: p.jd2.ln(),
        ln_m2: p.m2.ln(),
        ln_tail2: p.tail2.ln(),
    }
}

/// Conditions satisfied at one scale.
pub fn condition_at_scale(profile: &ScaleProfile, cfg: &ClassifierConfig) -> Vec<Condition> {
    conditions_at_ln_scale(&to_ln(profile), cfg)
}

/// Log-space profiles on the configured grid, evaluated in parallel.
pub fn grid_profiles(
    kernel: &RadialJumpKernel,
    cfg: &ClassifierConfig,
) -> Result<Vec<LnProfile>, ClassifierError> {
    cfg.validate()?;
    let grid = cfg.grid();
    let profiles = grid
        .par_iter()
        .map(|r| ln_scale_profile(kernel, r.ln()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(profiles)
}

/// Ordinary least squares of `y` on centred regressors `[1, x1, x2]`, returning
/// `(b1, se1, b2, se2)`.
fn ols2(x1: &[f64], x2: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = y.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let (m1, m2, my) = (mean(x1), mean(x2), mean(y));
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * c;
        s2y += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    let b1 = (s22 * s1y - s12 * s2y) / det;
    let b2 = (s11 * s2y - s12 * s1y) / det;
    let rss: f64 = (0..y.len())
        .map(|i| {
            let e = (y[i] - my) - b1 * (x1[i] - m1) - b2 * (x2[i] - m2);
            e * e
        })
        .sum();
    let sigma2 = rss / (n - 3.0);
    (
        b1,
        (sigma2 * s22 / det).sqrt(),
        b2,
        (sigma2 * s11 / det).sqrt(),
    )
}

/// Ratio-condition scan on precomputed profiles.
pub fn ratio_scan_profiles(
    profiles: &[LnProfile],
    cfg: &ClassifierConfig,
) -> Result<RatioFit, ClassifierError> {
    let eligible: Vec<&LnProfile> = profiles
        .iter()
        .filter(|p| match cfg.direction {
            Direction::SmallScale => p.ln_r <= -1.0,
            Direction::LargeScale => p.ln_r >= 1.0,
        })
        .filter(|p| p.ln_jd2.is_finite())
        .collect();
    if eligible.len() < cfg.slope_window {
        return Err(ClassifierError::TooFewScales {
            needed: cfg.slope_window,
            got: eligible.len(),
        });
    }
    // the deepest scales in the requested direction
    let mut window: Vec<&LnProfile> = eligible;
    window.sort_by(|a, b| a.ln_r.abs().total_cmp(&b.ln_r.abs()));
    let window = &window[window.len() - cfg.slope_window..];
    let x1: Vec<f64> = window.iter().map(|p| p.ln_r).collect();
    let x2: Vec<f64> = window.iter().map(|p| p.ln_r.abs().ln()).collect();
    let y: Vec<f64> = window.iter().map(|p| p.ln_jd2).collect();
    let (b, se_b, c, se_c) = ols2(&x1, &x2, &y);
    let q = match cfg.direction {
        Direction::SmallScale => -c,
        Direction::LargeScale => c,
    };
    let mut fired = Vec::new();
    let polynomial = b - 3.0 * se_b > SLOPE_MARGIN;
    let flat = b.abs() <= 3.0 * se_b + SLOPE_MARGIN;
    let polylog = q - 3.0 * se_c > 1.0 + SLOPE_MARGIN;
    match cfg.direction {
        Direction::SmallScale => {
            if polynomial {
                fired.push(Condition::RatioA);
            }
            // side condition j ≳ r^{-d}, i.e. r^{d+2} j ≳ r²
            if flat && polylog && b < 2.0 - 3.0 * se_b {
                fired.push(Condition::RatioC);
            }
        }
        Direction::LargeScale => {
            // side condition j ≳ r^{-d-2}, i.e. r^{d+2} j bounded below; a positive
            // power trend gives it
            if polynomial {
                fired.push(Condition::RatioB);
            }
            if flat && polylog {
                fired.push(Condition::RatioD);
            }
        }
    }
    Ok(RatioFit {
        scales: window.iter().map(|p| p.ln_r.exp()).collect(),
        power_exponent: b,
        power_stderr: se_b,
        polylog_exponent: q,
        polylog_stderr: se_c,
        fired,
    })
}

/// Ratio-condition scan: fits the growth of `r^{d+2} j(r)` over the deepest grid scales.
pub fn ratio_scan(
    kernel: &RadialJumpKernel,
    cfg: &ClassifierConfig,
) -> Result<RatioFit, ClassifierError> {
    ratio_scan_profiles(&grid_profiles(kernel, cfg)?, cfg)
}

/// Negative criterion on precomputed profiles (grid order).
pub fn negative_from_profiles(
    profiles: &[LnProfile],
    dim: usize,
    cfg: &ClassifierConfig,
) -> NegativeReport {
    let d = dim as f64;
    let gap: Vec<f64> = profiles
        .iter()
        .map(|p| 2.0 * (p.ln_tail2 - p.ln_jd2) - d * (p.ln_m2 - p.ln_tail2))
        .collect();
    let big = |p: &LnProfile| p.ln_m2 >= cfg.c_big.ln() + p.ln_tail2;
    let ok = |i: usize| gap[i].is_finite() && gap[i] > 0.0 && big(&profiles[i]);
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < profiles.len() {
        if !ok(i) {
            i += 1;
            continue;
        }
        let mut k = i;
        while k + 1 < profiles.len() && ok(k + 1) && gap[k + 1] > gap[k] {
            k += 1;
        }
        let long = k + 1 - i >= cfg.slope_window;
        let wide = gap[k] - gap[i] >= 10f64.ln();
        if long && wide && best.is_none_or(|(a, b)| k - i > b - a) {
            best = Some((i, k));
        }
        i = k + 1;
    }
    NegativeReport {
        fires: best.is_some(),
        witness_scales: best.map_or(Vec::new(), |(a, b)| {
            profiles[a..=b].iter().map(|p| p.ln_r.exp()).collect()
        }),
        gap_series: gap,
    }
}

pub fn negative_check(
    kernel: &RadialJumpKernel,
    cfg: &ClassifierConfig,
) -> Result<NegativeReport, ClassifierError> {
    Ok(negative_from_profiles(
        &grid_profiles(kernel, cfg)?,
        kernel.dim,
        cfg,
    ))
}

/// Full classification on the configured grid.
pub fn classify(
    kernel: &RadialJumpKernel,
    cfg: &ClassifierConfig,
) -> Result<Verdict, ClassifierError> {
    let profiles = grid_profiles(kernel, cfg)?;
    Ok(classify_profiles(kernel, &profiles, cfg))
}

fn classify_profiles(
    kernel: &RadialJumpKernel,
    profiles: &[LnProfile],
    cfg: &ClassifierConfig,
) -> Verdict {
    let plain: Vec<ScaleProfile> = profiles.iter().map(|p| p.to_profile()).collect();
    let mut notes = vec![format!(
        "surrogates c_big = {}, C_small = {}, epsilon grid = {:?}",
        cfg.c_big, cfg.c_small, cfg.epsilon_grid
    )];
    let mut fired = Vec::new();
    let mut every_scale = true;
    for p in profiles {
        let here = conditions_at_ln_scale(p, cfg);
        if here.is_empty() {
            every_scale = false;
        }
        fired.extend(here.into_iter().map(|condition| FiredCondition {
            r: p.ln_r.exp(),
            condition,
        }));
    }
    let degenerate = profiles.iter().all(is_degenerate);
    let grid = cfg.grid();
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(*r), b.max(*r)));
    let doubling = if hi > lo {
        check_doubling(kernel, lo, hi, 4 * grid.len())
            .map(|e| e.c_j)
            .unwrap_or(0.0)
    } else {
        check_doubling(kernel, lo, 2.0 * lo, 2)
            .map(|e| e.c_j)
            .unwrap_or(0.0)
    };
    let mut verdict = Verdict {
        conclusion: Conclusion::Inconclusive,
        fired,
        profiles: plain,
        notes: Vec::new(),
        doubling_constant: doubling,
        ratio: None,
        negative: None,
    };
    if degenerate {
        notes.push("degenerate: the kernel vanishes on the whole grid".into());
        verdict.notes = notes;
        return verdict;
    }
    let negative = negative_from_profiles(profiles, kernel.dim, cfg);
    if negative.fires {
        verdict
            .fired
            .extend(negative.witness_scales.iter().map(|&r| FiredCondition {
                r,
                condition: Condition::Negative,
            }));
    }
    match ratio_scan_profiles(profiles, cfg) {
        Ok(fit) => {
            for c in &fit.fired {
                verdict.fired.extend(
                    fit.scales
                        .iter()
                        .map(|&r| FiredCondition { r, condition: *c }),
                );
            }
            verdict.ratio = Some(fit);
        }
        Err(e) => notes.push(format!("ratio scan skipped: {e}")),
    }
    if doubling <= 0.0 {
        notes.push("doubling fails on the grid span: positive theorem inapplicable".into());
    } else if every_scale {
        verdict.conclusion = Conclusion::Holds;
        notes.push("holds: every grid scale satisfies bigm2 or smallm2".into());
    } else if negative.fires {
        verdict.conclusion = Conclusion::Fails;
        notes.push("fails: the dominance gap widens over the witness scales".into());
    } else if verdict.ratio.as_ref().is_some_and(|f| !f.fired.is_empty()) {
        verdict.conclusion = Conclusion::Holds;
        notes.push("holds via a ratio condition on the deepest scales".into());
    } else {
        notes.push("neither positive nor negative evidence is decisive".into());
    }
    verdict.negative = Some(negative);
    verdict.notes = notes;
    verdict
}

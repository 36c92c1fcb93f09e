//! Monte Carlo probes: harmonic-function estimates, Harnack ratios, exit-position
//! histograms and the counterexample experiment.

use std::f64::consts::LN_2;
use std::ops::Range;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

use crate::catalog::y_tail;
use crate::quad::{LogQuad, LN_CEIL};
use crate::simulate::{
    Clock, ExitStatus, JumpSource, Mode, SimConfig, SimError, Simulator, TypeMixture,
};

/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined ratio: h(y) has {hy_successes} successes out of {hy_n} (h(0): {h0_successes} of {h0_n})")]
    UndefinedRatio {
        h0_successes: u64,
        h0_n: u64,
        hy_successes: u64,
        hy_n: u64,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Exact draw of the mark `Y`: uniform on `[0,1]` with probability 2/3, else Pareto
/// with `P(Y > y) = y^{-2}/3` for `y ≥ 1`.
pub fn sample_heavy_tail_y<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let v: f64 = rng.random();
    if v < 2.0 / 3.0 {
        rng.random()
    } else {
        let w: f64 = rng.random();
        (1.0 - w).sqrt().recip()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
    pub seed: u64,
}

impl EstimateWithCI {
    /// Bernoulli estimate `k/n` with the Wald standard error.
    pub fn bernoulli(successes: u64, n: u64, seed: u64) -> Self {
        assert!(n >= 1, "an estimate needs at least one sample");
        let p = successes as f64 / n as f64;
        Self {
            mean: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n,
            seed,
        }
    }

    /// Sample mean with the standard error of the mean.
    pub fn from_samples(xs: &[f64], seed: u64) -> Self {
        assert!(!xs.is_empty(), "an estimate needs at least one sample");
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
            n: xs.len() as u64,
            seed,
        }
    }

    pub fn successes(&self) -> u64 {
        (self.mean * self.n as f64).round() as u64
    }

    /// Two-sided 95% interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.stderr, self.mean + Z95 * self.stderr)
    }

    /// `|a - b|` in units of the combined standard error.
    pub fn z_distance(&self, other: &Self) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        if se == 0.0 {
            if self.mean == other.mean {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.mean - other.mean).abs() / se
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicEstimate {
    pub estimate: EstimateWithCI,
    pub censored: u64,
    pub warning: Option<String>,
}

/// `h(x) = P_x(X at the first exit of B(0, R) lies in B(0, R3))`; censored paths are
/// excluded from the estimate and counted.
pub fn estimate_harmonic(
    sim: &Simulator,
    inner_radius: f64,
    target_radius: f64,
    start: &[f64],
    replicas: Range<u64>,
) -> Result<HarmonicEstimate, ProbeError> {
    if !(inner_radius > 0.0 && target_radius > inner_radius) {
        return Err(ProbeError::Config("need 0 < R < R3".into()));
    }
    if norm(start) >= inner_radius {
        return Err(ProbeError::Config(
            "start point must lie inside the ball".into(),
        ));
    }
    if sim.jump_rate() == 0.0 {
        return Err(ProbeError::Config("not a jump process".into()));
    }
    let total = replicas.end - replicas.start;
    let (hits, censored) = replicas
        .into_par_iter()
        .map(|i| {
            let rec = sim.exit_event(i, inner_radius, Clock::None, start);
            match rec.status {
                ExitStatus::Exited => ((norm(&rec.position) < target_radius) as u64, 0u64),
                _ => (0, 1),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let done = total - censored;
    if done == 0 {
        return Err(ProbeError::Config("every path was censored".into()));
    }
    let warning = (censored as f64 > 0.01 * total as f64)
        .then(|| format!("{censored} of {total} paths censored at the horizon"));
    Ok(HarmonicEstimate {
        estimate: EstimateWithCI::bernoulli(hits, done, sim.cfg.seed),
        censored,
        warning,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackExperiment {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    /// Probe point `((1 - 1/d) R1 + R2) e₁`.
    pub y: Vec<f64>,
    pub replicas: u64,
}

impl HarnackExperiment {
    pub fn new(r1: f64, r2: f64, r3: f64, dim: usize, replicas: u64) -> Result<Self, ProbeError> {
        if !(r1 > 0.0 && r1 < r2 && r1 + r2 < r3) {
            return Err(ProbeError::Config(format!(
                "need 0 < R1 < R2 and R1 + R2 < R3, got {r1}, {r2}, {r3}"
            )));
        }
        if dim < 1 || replicas < 1 {
            return Err(ProbeError::Config(
                "dimension and replicas must be positive".into(),
            ));
        }
        let mut y = vec![0.0; dim];
        y[0] = (1.0 - 1.0 / dim as f64) * r1 + r2;
        Ok(Self {
            r1,
            r2,
            r3,
            y,
            replicas,
        })
    }

    /// Radius of the ball whose exit distribution defines `h`.
    pub fn exit_radius(&self) -> f64 {
        self.r1 + self.r2
    }

    pub fn mirrored(&self) -> Self {
        Self {
            y: self.y.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackResult {
    pub h0: EstimateWithCI,
    pub hy: EstimateWithCI,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub ratio_ci: (f64, f64),
    pub censored: u64,
}

/// `h(0)/h(y)` from independent pools `[0, N)` and `[N, 2N)`, delta-method interval.
pub fn harnack_ratio(
    sim: &Simulator,
    exp: &HarnackExperiment,
) -> Result<HarnackResult, ProbeError> {
    if exp.y.len() != sim.dim {
        return Err(ProbeError::Config(
            "probe point dimension differs from the process".into(),
        ));
    }
    let n = exp.replicas;
    let r = exp.exit_radius();
    let origin = vec![0.0; sim.dim];
    let h0 = estimate_harmonic(sim, r, exp.r3, &origin, 0..n)?;
    let hy = estimate_harmonic(sim, r, exp.r3, &exp.y, n..2 * n)?;
    ratio_of(h0.estimate, hy.estimate, h0.censored + hy.censored)
}

pub fn ratio_of(
    h0: EstimateWithCI,
    hy: EstimateWithCI,
    censored: u64,
) -> Result<HarnackResult, ProbeError> {
    if hy.mean == 0.0 {
        return Err(ProbeError::UndefinedRatio {
            h0_successes: h0.successes(),
            h0_n: h0.n,
            hy_successes: 0,
            hy_n: hy.n,
        });
    }
    let ratio = h0.mean / hy.mean;
    let rel0 = if h0.mean > 0.0 {
        h0.stderr / h0.mean
    } else {
        0.0
    };
    let ratio_stderr = ratio.abs() * rel0.hypot(hy.stderr / hy.mean);
    let se = if h0.mean > 0.0 {
        ratio_stderr
    } else {
        h0.stderr / hy.mean
    };
    Ok(HarnackResult {
        ratio,
        ratio_stderr: se,
        ratio_ci: (ratio - Z95 * se, ratio + Z95 * se),
        h0,
        hy,
        censored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
    pub phat: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitHistogram {
    pub start: Vec<f64>,
    pub radius: f64,
    pub bins: Vec<HistogramBin>,
    /// Exits that fell in no bin.
    pub far_field: EstimateWithCI,
    pub n: u64,
    pub censored: u64,
    pub seed: u64,
}

/// Binned law of the first coordinate of `X_τ`, `τ` the exit time of `B(0, r)`.
/// Bins are `[edges[i], edges[i+1])` over pairs of consecutive edges and must avoid `(-r, r)`.
pub fn exit_histogram(
    sim: &Simulator,
    radius: f64,
    start: &[f64],
    bin_edges: &[(f64, f64)],
    replicas: Range<u64>,
) -> Result<ExitHistogram, ProbeError> {
    if norm(start) >= radius {
        return Err(ProbeError::Config(
            "start point must lie inside the ball".into(),
        ));
    }
    for (lo, hi) in bin_edges {
        if !(lo < hi) || (*hi > -radius && *lo < radius) {
            return Err(ProbeError::Config(format!(
                "bin [{lo}, {hi}) intersects the ball or is empty"
            )));
        }
    }
    let total = replicas.end - replicas.start;
    let nb = bin_edges.len();
    let (counts, outside, censored) = replicas
        .into_par_iter()
        .map(|i| {
            let rec = sim.exit_event(i, radius, Clock::None, start);
            let mut c = vec![0u64; nb];
            if rec.status != ExitStatus::Exited {
                return (c, 0u64, 1u64);
            }
            let w = rec.position[0];
            match bin_edges.iter().position(|(lo, hi)| w >= *lo && w < *hi) {
                Some(b) => {
                    c[b] += 1;
                    (c, 0, 0)
                }
                None => (c, 1, 0),
            }
        })
        .reduce(
            || (vec![0u64; nb], 0, 0),
            |mut a, b| {
                for (x, y) in a.0.iter_mut().zip(b.0) {
                    *x += y;
                }
                (a.0, a.1 + b.1, a.2 + b.2)
            },
        );
    let done = total - censored;
    if done == 0 {
        return Err(ProbeError::Config("every path was censored".into()));
    }
    let seed = sim.cfg.seed;
    let bins = bin_edges
        .iter()
        .zip(&counts)
        .map(|((lo, hi), c)| {
            let e = EstimateWithCI::bernoulli(*c, done, seed);
            HistogramBin {
                lo: *lo,
                hi: *hi,
                count: *c,
                phat: e.mean,
                stderr: e.stderr,
            }
        })
        .collect();
    Ok(ExitHistogram {
        start: start.to_vec(),
        radius,
        bins,
        far_field: EstimateWithCI::bernoulli(outside, done, seed),
        n: done,
        censored,
        seed,
    })
}

/// Level-`n` constants of the counterexample subordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    pub n: u32,
    /// `H_n = 2^{n²}`.
    pub h_n: f64,
    /// `A_n = 2^{-2n²}`.
    pub a_n: f64,
    /// `s_n = (H_{n+1}/H_n) A_{n+1} = 2^{-(2n²+2n+1)}`.
    pub s_n: f64,
    /// `r_n = √(s_n log n)`.
    pub r_n: f64,
    /// Radius of the small-scatter ball, `36 r_n`.
    pub scatter_radius: f64,
    /// Largest jump type simulated explicitly.
    pub types_kept: u32,
    /// Expected subordinator mass of the folded types per clock period, `Σ_{m>K} 2^{-m²-n²}`.
    pub folded_mass: f64,
}

pub fn ln_h(m: u32) -> f64 {
    (m * m) as f64 * LN_2
}

pub fn ln_a(m: u32) -> f64 {
    -2.0 * (m * m) as f64 * LN_2
}

/// Relative size of the folded mass allowed against `r_n²`.
pub const FOLD_TOLERANCE: f64 = 1e-3;

impl CounterexampleParams {
    pub fn new(n: u32) -> Result<Self, ProbeError> {
        if n < 2 {
            return Err(ProbeError::Domain(format!(
                "level n = {n} < 2 gives log n ≤ 0"
            )));
        }
        if n > 6 {
            return Err(ProbeError::Domain(format!(
                "level n = {n} > 6 is out of computational reach"
            )));
        }
        let nn = (n * n) as f64;
        let s_n = 2f64.powi(-((2 * n * n + 2 * n + 1) as i32));
        let r_n = (s_n * (n as f64).ln()).sqrt();
        let folded = |k: u32| {
            (k + 1..k + 12)
                .map(|m| (-((m * m) as f64) * LN_2 - nn * LN_2).exp())
                .sum::<f64>()
        };
        let mut k = n + 1;
        while folded(k) >= FOLD_TOLERANCE * r_n * r_n {
            k += 1;
        }
        Ok(Self {
            n,
            h_n: 2f64.powi((n * n) as i32),
            a_n: 2f64.powi(-2 * (n * n) as i32),
            s_n,
            r_n,
            scatter_radius: 36.0 * r_n,
            types_kept: k,
            folded_mass: folded(k),
        })
    }

    pub fn period(&self) -> f64 {
        1.0 / self.h_n
    }
}

/// `λ{s} = Σ_m H_m P(A_m Y > s)` over all types.
pub fn lambda_s(s: f64) -> f64 {
    (1..=14u32)
        .map(|m| (ln_h(m) + y_tail(s / ln_a(m).exp()).ln()).exp())
        .sum()
}

/// A level-`n` simulator: types `m ≤ K` explicit, heavier ones folded into drift.
pub fn counterexample_simulator(
    params: &CounterexampleParams,
    dim: usize,
    cfg: &SimConfig,
) -> Result<Simulator, ProbeError> {
    let types = (1..=params.types_kept)
        .map(|m| (m, ln_h(m).exp(), ln_a(m).exp()))
        .collect();
    let drift = (params.types_kept + 1..params.types_kept + 12)
        .map(|m| (ln_h(m) + ln_a(m)).exp())
        .sum();
    let source = JumpSource::Types(Arc::new(TypeMixture::new(types)));
    Ok(Simulator::from_parts(dim, Mode::Sbm, cfg, source, drift)?)
}

/// Default simulation settings for level `n`: horizon of 100 clock periods.
pub fn counterexample_config(params: &CounterexampleParams, seed: u64) -> SimConfig {
    SimConfig {
        cutoff: params.s_n,
        step: 0.01 * params.period(),
        horizon: 100.0 * params.period(),
        seed,
        gaussian_surrogate: true,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    /// `P₀(τ_{B(0,r_n)} < T^{s_n})` by simulation.
    pub p_exit: EstimateWithCI,
    /// `P₀(|ΔX(T^{s_n})| ≤ 36 r_n)`, exact.
    pub p_scatter_small: f64,
    pub lambda_s: f64,
    pub censored: u64,
}

/// `P(|√(2W) Z| ≤ c)` with `W` the first subordinator jump above `s`, mixed over all types.
pub fn p_scatter_small(s: f64, c: f64, dim: usize) -> Result<f64, ProbeError> {
    let k = dim as f64 / 2.0;
    let ln_gk1 = ln_gamma(k + 1.0);
    let q = LogQuad::default();
    let mut num = 0.0;
    let mut den = 0.0;
    for m in 1..=14u32 {
        let a = ln_a(m).exp();
        let y0 = s / a;
        let w = (ln_h(m) + y_tail(y0).ln()).exp();
        if w == 0.0 {
            continue;
        }
        let ln_c2 = (c * c / (4.0 * a)).ln();
        // ln of f_Y(y) y P(|Z|²/2 ≤ c²/(4 a y)) at y = e^u
        let g = |u: f64| {
            let ln_f = if u <= 0.0 {
                (2.0f64 / 3.0).ln()
            } else {
                (2.0f64 / 3.0).ln() - 3.0 * u
            };
            let x = ln_c2 - u;
            let ln_p = if x < -20.0 {
                k * x - ln_gk1
            } else {
                gamma_lr(k, x.exp()).ln()
            };
            ln_f + u + ln_p
        };
        let lo = y0.ln();
        let ln_int = q
            .integrate_up(&g, lo, None, LN_CEIL - lo, &[0.0])
            .map_err(|e| ProbeError::Domain(format!("scatter integral: {e}")))?;
        num += ln_h(m).exp() * ln_int.exp();
        den += w;
    }
    Ok(num / den)
}

pub fn sandwich_probabilities(
    params: &CounterexampleParams,
    dim: usize,
    replicas: Range<u64>,
    seed: u64,
) -> Result<Sandwich, ProbeError> {
    let cfg = counterexample_config(params, seed);
    let sim = counterexample_simulator(params, dim, &cfg)?;
    let origin = vec![0.0; dim];
    let total = replicas.end - replicas.start;
    let (exits, censored) = replicas
        .into_par_iter()
        .map(|i| {
            match sim
                .exit_event(i, params.r_n, Clock::FirstJumpAbove(params.s_n), &origin)
                .status
            {
                ExitStatus::Exited => (1u64, 0u64),
                ExitStatus::ClockFired => (0, 0),
                ExitStatus::Censored => (0, 1),
            }
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(Sandwich {
        p_exit: EstimateWithCI::bernoulli(exits, total - censored, seed),
        p_scatter_small: p_scatter_small(params.s_n, params.scatter_radius, dim)?,
        lambda_s: lambda_s(params.s_n),
        censored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub params: CounterexampleParams,
    pub dim: usize,
    pub sandwich: Sandwich,
    pub experiment: HarnackExperiment,
    pub harnack: HarnackResult,
    pub seed: u64,
    pub runtime_secs: f64,
}

/// Level-`n` bundle: constants, sandwich and the Harnack ratio at `(r_n, 5r_n, 30r_n)`.
/// Pools: sandwich `[0, N)`, `h(0)` and `h(y)` from `[0, N)` and `[N, 2N)` of a second stream.
pub fn counterexample_experiment(
    n: u32,
    dim: usize,
    replicas: u64,
    seed: u64,
) -> Result<CounterexampleReport, ProbeError> {
    let t0 = Instant::now();
    let params = CounterexampleParams::new(n)?;
    let sandwich = sandwich_probabilities(&params, dim, 0..replicas, seed)?;
    let experiment = HarnackExperiment::new(
        params.r_n,
        5.0 * params.r_n,
        30.0 * params.r_n,
        dim,
        replicas,
    )?;
    let cfg = counterexample_config(&params, seed.wrapping_add(1));
    let sim = counterexample_simulator(&params, dim, &cfg)?;
    let harnack = harnack_ratio(&sim, &experiment)?;
    Ok(CounterexampleReport {
        params,
        dim,
        sandwich,
        experiment,
        harnack,
        seed,
        runtime_secs: t0.elapsed().as_secs_f64(),
    })
}

/// One step of the monotone-separation check between consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationStep {
    pub from: u32,
    pub to: u32,
    /// Point estimates do not increase.
    pub non_increasing: bool,
    /// The later level's lower 95% bound lies above the earlier point estimate.
    pub significant_increase: bool,
    /// The later level's upper 95% bound lies below the earlier point estimate;
    /// otherwise the step is an overlap to be flagged.
    pub separated: bool,
}

pub fn monotone_separation(levels: &[(u32, HarnackResult)]) -> Vec<SeparationStep> {
    levels
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0].1, &w[1].1);
            SeparationStep {
                from: w[0].0,
                to: w[1].0,
                non_increasing: b.ratio <= a.ratio,
                significant_increase: b.ratio_ci.0 > a.ratio,
                separated: b.ratio_ci.1 < a.ratio,
            }
        })
        .collect()
}

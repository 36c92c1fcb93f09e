//! Adaptive Gauss–Kronrod quadrature of positive integrands on a logarithmic axis.
//!
//! Every integrand is passed as `g(u) = ln(f(e^u) e^u)`, so that
//! `∫_a^b f(s) ds = ∫_{ln a}^{ln b} exp(g(u)) du`. Results are returned as natural
//! logarithms, which keeps integrals spanning hundreds of decades representable.

use thiserror::Error;

/// `ln(1e-300)`, the default lower end of the radial axis.
pub const LN_FLOOR: f64 = -690.775_527_898_213_7;
/// `ln(1e300)`.
pub const LN_CEIL: f64 = 690.775_527_898_213_7;
/// `ln(1e15)`, the widest outward march allowed for tails toward infinity.
pub const LN_TAIL_WINDOW: f64 = 34.538_776_394_910_684;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Zero,
    Infinity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("integral divergent at {}", match .0 { End::Zero => "0", End::Infinity => "∞" })]
    Divergent(End),
    #[error("integrand not finite at ln s = {0}")]
    NonFinite(f64),
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// `ln(e^a + e^b)` without overflow.
pub fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(e^a - e^b)` for `a ≥ b`; `-∞` when the difference vanishes.
pub fn ln_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(1 + e^x)`.
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 36.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Tolerances of the log-axis integrator.
#[derive(Debug, Clone, Copy)]
pub struct LogQuad {
    pub rel_tol: f64,
    pub max_depth: u32,
    /// A tail march stops once the modelled remainder is below this fraction of the total.
    pub tail_tol: f64,
}

impl Default for LogQuad {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            max_depth: 40,
            tail_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    ln_value: f64,
    rel_err: f64,
}

fn gk15<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64) -> Result<Panel, QuadError> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut vals = [0.0f64; 15];
    let mut max = f64::NEG_INFINITY;
    for (i, x) in XGK.iter().enumerate() {
        let (u1, u2) = (c - h * x, c + h * x);
        let v1 = g(u1);
        let v2 = if *x == 0.0 { v1 } else { g(u2) };
        for (v, u) in [(v1, u1), (v2, u2)] {
            if v.is_nan() || v == f64::INFINITY {
                return Err(QuadError::NonFinite(u));
            }
        }
        vals[i] = v1;
        vals[14 - i] = v2;
        max = max.max(v1).max(v2);
    }
    if max == f64::NEG_INFINITY {
        return Ok(Panel {
            ln_value: f64::NEG_INFINITY,
            rel_err: 0.0,
        });
    }
    let e = |v: f64| (v - max).exp();
    let mut kron = WGK[7] * e(vals[7]);
    let mut gauss = WG[3] * e(vals[7]);
    for i in 0..7 {
        let pair = e(vals[i]) + e(vals[14 - i]);
        kron += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    let rel_err = ((kron - gauss) / kron).abs();
    Ok(Panel {
        ln_value: max + (kron * h).ln(),
        rel_err,
    })
}

impl LogQuad {
    fn adapt<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        a: f64,
        b: f64,
        ln_ref: f64,
        depth: u32,
    ) -> Result<(f64, bool), QuadError> {
        let p = gk15(g, a, b)?;
        let negligible = p.ln_value + p.rel_err.ln() <= self.rel_tol.ln() + ln_ref;
        if p.rel_err <= self.rel_tol || negligible || depth >= self.max_depth {
            return Ok((p.ln_value, depth == 0));
        }
        let m = 0.5 * (a + b);
        let (left, _) = self.adapt(g, a, m, ln_add(ln_ref, p.ln_value - 1.0), depth + 1)?;
        let (right, _) = self.adapt(g, m, b, ln_add(ln_ref, left), depth + 1)?;
        Ok((ln_add(left, right), false))
    }

    /// `ln ∫_a^b exp(g(u)) du`, splitting at the supplied breakpoints and into panels of width ≤ 2.
    pub fn integrate<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        a: f64,
        b: f64,
        breaks: &[f64],
    ) -> Result<f64, QuadError> {
        if !(b > a) {
            return Ok(f64::NEG_INFINITY);
        }
        let mut cuts: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|x| *x > a && *x < b)
            .collect();
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        let mut total = f64::NEG_INFINITY;
        let mut lo = a;
        for hi in cuts {
            let n = ((hi - lo) / 2.0).ceil().max(1.0) as usize;
            let w = (hi - lo) / n as f64;
            for k in 0..n {
                let x0 = lo + w * k as f64;
                let x1 = if k + 1 == n { hi } else { x0 + w };
                let (v, _) = self.adapt(g, x0, x1, total, 0)?;
                total = ln_add(total, v);
            }
            lo = hi;
        }
        Ok(total)
    }

    /// `ln ∫_a^∞ exp(g(u)) du`, marching outward. The march stops at `ceiling`
    /// (where the integrand is known to vanish) or once the extrapolated remainder is
    /// negligible; at `a + max_width` a finite extrapolated remainder is added, a
    /// divergent one is an error.
    pub fn integrate_up<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        a: f64,
        ceiling: Option<f64>,
        max_width: f64,
        breaks: &[f64],
    ) -> Result<f64, QuadError> {
        self.march(g, a, ceiling, max_width, breaks)
    }

    /// `ln ∫_{-∞}^b exp(g(u)) du`, marching toward `floor` (default [`LN_FLOOR`]).
    pub fn integrate_down<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        b: f64,
        floor: Option<f64>,
        breaks: &[f64],
    ) -> Result<f64, QuadError> {
        let floor = floor.unwrap_or(LN_FLOOR);
        let mirrored = |u: f64| g(-u);
        let mbreaks: Vec<f64> = breaks.iter().map(|x| -x).collect();
        self.march(&mirrored, -b, None, b - floor, &mbreaks)
            .map_err(|e| match e {
                QuadError::Divergent(_) => QuadError::Divergent(End::Zero),
                QuadError::NonFinite(u) => QuadError::NonFinite(-u),
            })
    }

    fn march<G: Fn(f64) -> f64>(
        &self,
        g: &G,
        a: f64,
        ceiling: Option<f64>,
        max_width: f64,
        breaks: &[f64],
    ) -> Result<f64, QuadError> {
        let limit = match ceiling {
            Some(c) => c.min(a + max_width),
            None => a + max_width,
        };
        if !(limit > a) {
            return Ok(f64::NEG_INFINITY);
        }
        let mut sorted: Vec<f64> = breaks
            .iter()
            .copied()
            .filter(|x| *x > a && *x < limit)
            .collect();
        sorted.sort_by(f64::total_cmp);
        let mut next_break = sorted.into_iter().peekable();
        let mut total = f64::NEG_INFINITY;
        let mut u = a;
        // the tail model is fitted only on the smooth stretch since the last breakpoint
        let mut smooth_from = a;
        let mut width = 2.0f64;
        loop {
            let mut hi = (u + width).min(limit);
            let mut crossed = false;
            while let Some(&bk) = next_break.peek() {
                if bk <= u {
                    next_break.next();
                } else {
                    if bk < hi {
                        hi = bk;
                        crossed = true;
                    }
                    break;
                }
            }
            let (v, clean) = self.adapt(g, u, hi, total, 0)?;
            total = ln_add(total, v);
            u = hi;
            width = if clean { (width * 2.0).min(16.0) } else { 2.0 };
            let at_ceiling = ceiling.is_some_and(|c| u >= c);
            if at_ceiling {
                return Ok(total);
            }
            let at_limit = u >= limit;
            let span = u - smooth_from;
            if crossed {
                smooth_from = u;
            }
            if !at_limit && (crossed || span < MIN_FIT_SPAN) {
                continue;
            }
            match tail_remainder(g, u, span, false)? {
                Some(r) if total > f64::NEG_INFINITY && r <= total + self.tail_tol.ln() => {
                    return Ok(total)
                }
                Some(_) if at_limit => {
                    let r = tail_remainder(g, u, span, true)?
                        .ok_or(QuadError::Divergent(End::Infinity))?;
                    return Ok(ln_add(total, r));
                }
                None if at_limit => return Err(QuadError::Divergent(End::Infinity)),
                _ => {}
            }
        }
    }
}

/// Shortest stretch behind the march front on which the tail model is fitted.
const MIN_FIT_SPAN: f64 = 0.25;

/// Extrapolated `ln ∫_u^∞ exp(g)`; `None` when the local model diverges.
///
/// The local model is `g′(v) = -(c + p/v)`: an exponential rate `c` times a power
/// `v^{-p}` of the log variable, the latter covering slowly varying factors. Both
/// parameters are fitted through three points in `[u - span, u]`. With `precise` the
/// model integral is evaluated by quadrature, otherwise a cheap bound of the same order
/// is returned (used only to decide when to stop marching).
fn tail_remainder<G: Fn(f64) -> f64>(
    g: &G,
    u: f64,
    span: f64,
    precise: bool,
) -> Result<Option<f64>, QuadError> {
    let g1 = g(u);
    if g1 == f64::NEG_INFINITY {
        return Ok(Some(f64::NEG_INFINITY));
    }
    let delta = (if u > 5.0 { 0.1 * u } else { 0.5 }).min(span / 2.0);
    let g0 = g(u - delta);
    let gm = g(u - 2.0 * delta);
    if g1.is_nan() || g0.is_nan() || gm.is_nan() {
        return Err(QuadError::NonFinite(u));
    }
    if !(g0.is_finite() && gm.is_finite()) {
        return Ok(None);
    }
    if u <= 5.0 {
        let s = -(g1 - g0) / delta;
        return Ok((s > 0.0).then(|| g1 - s.ln()));
    }
    // g(v) = const - c v - p ln v through the three points
    let (d1, d2) = (g1 - g0, g0 - gm);
    let (l1, l2) = (
        (u / (u - delta)).ln(),
        ((u - delta) / (u - 2.0 * delta)).ln(),
    );
    let p = (d1 - d2) / (l2 - l1);
    let mut c = -(d1 + p * l1) / delta;
    let s_here = c + p / u;
    if c.abs() < 1e-9 * s_here.abs() {
        c = 0.0;
    }
    if c < 0.0 || s_here <= 0.0 || (c == 0.0 && p <= 1.0) {
        return Ok(None);
    }
    if c == 0.0 {
        return Ok(Some(g1 + u.ln() - (p - 1.0).ln()));
    }
    if !precise {
        return Ok(Some(g1 - s_here.ln()));
    }
    Ok(Some(g1 + model_tail(u, p, c)?))
}

/// `ln ∫_0^∞ (1 + x/u)^{-p} e^{-cx} dx`, integrated on the axis `y = ln x`.
fn model_tail(u: f64, p: f64, c: f64) -> Result<f64, QuadError> {
    let h = |y: f64| {
        let x = y.exp();
        y - p * (x / u).ln_1p() - c * x
    };
    let q = LogQuad::default();
    let pivot = -c.ln();
    let lo = q.integrate_down(&h, pivot, None, &[])?;
    let hi = q.integrate_up(&h, pivot, None, 200.0, &[])?;
    Ok(ln_add(lo, hi))
}

/// Natural-axis convenience: `ln ∫_a^b f(s) ds` for a positive `f` given as `ln f`, `0 < a < b`.
pub fn ln_integral_of<F: Fn(f64) -> f64>(
    ln_f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
) -> Result<f64, QuadError> {
    let g = |u: f64| ln_f(u.exp()) + u;
    let lb: Vec<f64> = breaks
        .iter()
        .filter(|x| **x > 0.0)
        .map(|x| x.ln())
        .collect();
    LogQuad::default().integrate(&g, a.ln(), b.ln(), &lb)
}

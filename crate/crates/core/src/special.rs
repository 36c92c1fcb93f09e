//! Special functions not covered by `statrs`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::quad::{ln_add, LogQuad};

/// `1/Γ(x)` for every real `x`, zero at the poles.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        return 0.0;
    }
    if x < 0.5 {
        // reflection: 1/Γ(x) = sin(πx) Γ(1-x) / π
        (PI * x).sin() * gamma(1.0 - x) / PI
    } else {
        1.0 / gamma(x)
    }
}

/// `E_a(-x)` for `a ∈ (0, 1]`, `x ≥ 0`, the Mittag-Leffler function on the negative axis.
pub fn mittag_leffler_neg(a: f64, x: f64) -> f64 {
    assert!(
        a > 0.0 && a <= 1.0,
        "Mittag-Leffler index must lie in (0, 1]"
    );
    assert!(x >= 0.0, "argument must be non-negative");
    if a == 1.0 {
        return (-x).exp();
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut pow = 1.0;
        for k in 0..400 {
            let term = pow * rgamma(a * k as f64 + 1.0);
            sum += term;
            if k > 2 && term.abs() < 1e-18 * sum.abs() {
                break;
            }
            pow *= -x;
        }
        sum
    } else if x >= 30.0 {
        let mut sum = 0.0;
        let mut pow = 1.0;
        for k in 1..=20 {
            pow /= -x;
            sum -= pow * rgamma(1.0 - a * k as f64);
        }
        sum
    } else {
        // E_a(-t^a) = ∫₀^∞ e^{-rt} K_a(r) dr with the spectral density K_a
        let t = x.powf(1.0 / a);
        let (s, c) = (a * PI).sin_cos();
        let g = |v: f64| {
            let r = v.exp();
            let ra = (a * v).exp();
            let den = ra * ra + 2.0 * ra * c + 1.0;
            -r * t + a * v + (s / PI).ln() - den.ln()
        };
        let q = LogQuad::default();
        let pivot = -t.ln();
        let lo = q
            .integrate_down(&g, pivot, None, &[])
            .expect("convergent spectral integral");
        let hi = q
            .integrate_up(&g, pivot, None, 60.0, &[])
            .expect("convergent spectral integral");
        ln_add(lo, hi).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgamma_matches_reciprocal_and_poles() {
        assert!((rgamma(5.0) - 1.0 / 24.0).abs() < 1e-15);
        assert_eq!(rgamma(0.0), 0.0);
        assert_eq!(rgamma(-3.0), 0.0);
        // Γ(-1/2) = -2√π
        assert!((rgamma(-0.5) + 1.0 / (2.0 * PI.sqrt())).abs() < 1e-14);
    }

    #[test]
    fn mittag_leffler_half_matches_erfc_form() {
        // E_{1/2}(-x) = e^{x²} erfc(x)
        for x in [0.3, 1.0, 2.5, 10.0, 29.0, 31.0, 50.0] {
            let want = if x < 26.0 {
                statrs::function::erf::erfc(x) * (x * x).exp()
            } else {
                let y = 1.0 / (2.0 * x * x);
                (1.0 - y + 3.0 * y * y - 15.0 * y * y * y) / (x * PI.sqrt())
            };
            let got = mittag_leffler_neg(0.5, x);
            assert!((got - want).abs() < 1e-8 * want, "x={x}: {got} vs {want}");
        }
    }

    #[test]
    fn mittag_leffler_branches_agree_at_switch_points() {
        for a in [0.25, 0.6, 0.9] {
            let below = mittag_leffler_neg(a, 1.0);
            let above = mittag_leffler_neg(a, 1.0 + 1e-9);
            assert!((below - above).abs() < 1e-7, "a={a}");
            let below = mittag_leffler_neg(a, 30.0 - 1e-9);
            let above = mittag_leffler_neg(a, 30.0);
            assert!(
                (below - above).abs() < 1e-7 * above,
                "a={a}: {below} {above}"
            );
        }
    }
}

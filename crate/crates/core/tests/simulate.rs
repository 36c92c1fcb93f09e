use std::sync::OnceLock;

use ehi_core::catalog;
use ehi_core::kernels::{RadialJumpKernel, SubordinatorSpec};
use ehi_core::probe::EstimateWithCI;
use ehi_core::quad::LogQuad;
use ehi_core::simulate::*;

fn cauchy_1d() -> RadialJumpKernel {
    catalog::stable(1.0, 1).unwrap().kernel().unwrap()
}

/// `j(s) = s^{-2} 1{s ≤ 1}` in d = 1, so `m₂ = 2`.
fn truncated_cauchy() -> &'static RadialJumpKernel {
    static K: OnceLock<RadialJumpKernel> = OnceLock::new();
    K.get_or_init(|| RadialJumpKernel::from_ln_fn_with(1, |u| -2.0 * u, Some(1.0), vec![]))
}

fn cfg(seed: u64) -> SimConfig {
    SimConfig {
        cutoff: 0.01,
        step: 1e-3,
        horizon: 1.0,
        seed,
        gaussian_surrogate: true,
    }
}

fn within(est: &EstimateWithCI, target: f64, k: f64) -> bool {
    (est.mean - target).abs() <= k * est.stderr
}

#[test]
fn small_large_split_of_cauchy() {
    let k = cauchy_1d();
    let split = small_large_split(&k, 1.0).unwrap();
    assert!((split.big_rate - 2.0).abs() < 1e-8);
    for r in [0.5f64, 1.0, 2.0] {
        let sum = split.small_kernel.j(r) + split.big_kernel.j(r);
        assert_eq!(sum, k.j(r));
    }
    assert_eq!(split.small_kernel.j(2.0), 0.0);
    assert_eq!(split.big_kernel.j(0.5), 0.0);
    // P(|ΔX| > y) = 1/y for the big radius
    let mut rng = replica_rng(7, 0);
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|_| split.sample_big_radius(&mut rng)).collect();
    assert!(draws.iter().all(|r| *r > 1.0));
    for y in [1.5f64, 3.0, 10.0] {
        let hits = draws.iter().filter(|r| **r > y).count() as u64;
        let est = EstimateWithCI::bernoulli(hits, n, 7);
        assert!(
            within(&est, 1.0 / y, 4.0),
            "P(R > {y}) = {} ± {}",
            est.mean,
            est.stderr
        );
    }
}

#[test]
fn small_large_split_without_big_jumps_errors() {
    let k = truncated_cauchy();
    assert_eq!(small_large_split(k, 2.0).unwrap_err(), SimError::NoBigJumps);
    assert!(matches!(
        small_large_split(k, 1e300),
        Err(SimError::NoBigJumps)
    ));
}

#[test]
fn small_flat_split_of_cauchy() {
    let k = cauchy_1d();
    let split = small_flat_split(&k, 1.0).unwrap();
    assert!((split.big_rate - 3.0).abs() < 1e-8);
    assert_eq!(split.big_kernel.j(0.1), split.big_kernel.j(0.9));
    assert!((split.big_kernel.j(0.5) - 0.5).abs() < 1e-15);
    for r in [0.1f64, 0.5, 0.999, 2.0] {
        let sum = split.small_kernel.j(r) + split.big_kernel.j(r);
        assert!((sum - k.j(r)).abs() <= 4.0 * f64::EPSILON * k.j(r));
    }
    let ratio = split.m2_small / k.m2(1.0).unwrap();
    assert!((0.5..=1.0).contains(&ratio), "{ratio}");
    // direct quadrature of the small part agrees
    assert!((split.small_kernel.m2(1.0).unwrap() - split.m2_small).abs() < 1e-8);
    assert!(split.big_rate >= k.tail_lambda(1.0).unwrap());
}

#[test]
fn small_flat_split_flat_part_is_uniform_on_the_ball() {
    let split = small_flat_split(&cauchy_1d(), 1.0).unwrap();
    let mut rng = replica_rng(3, 1);
    let n = 300_000u64;
    let draws: Vec<f64> = (0..n).map(|_| split.sample_big_radius(&mut rng)).collect();
    // P(R ≤ 1) = 1/3, uniform on (0, 1]; P(R > y) = (2/y)/3 beyond
    let inside = draws.iter().filter(|r| **r <= 1.0).count() as u64;
    assert!(within(
        &EstimateWithCI::bernoulli(inside, n, 3),
        1.0 / 3.0,
        4.0
    ));
    let half = draws.iter().filter(|r| **r <= 0.5).count() as u64;
    assert!(within(
        &EstimateWithCI::bernoulli(half, n, 3),
        1.0 / 6.0,
        4.0
    ));
    let far = draws.iter().filter(|r| **r > 4.0).count() as u64;
    assert!(within(
        &EstimateWithCI::bernoulli(far, n, 3),
        1.0 / 6.0,
        4.0
    ));
}

#[test]
fn small_flat_split_needs_positive_kernel() {
    let k = truncated_cauchy();
    assert!(matches!(
        small_flat_split(k, 2.0),
        Err(SimError::Degenerate(_))
    ));
}

#[test]
fn gamma_subordinator_has_unit_mean() {
    let spec = catalog::geometric_stable(2.0, 1).unwrap();
    let c = SimConfig {
        cutoff: 1e-6,
        ..cfg(11)
    };
    let sim = Simulator::new(&spec, &c, Mode::Subordinator).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|i| sim.position_at(i, 1.0)[0]).collect();
    let est = EstimateWithCI::from_samples(&xs, 11);
    // oracle: ∫ t m(t) dt by quadrature
    let mean = LogQuad::default()
        .integrate_up(&|w: f64| w - w.exp(), -700.0, None, 800.0, &[])
        .unwrap()
        .exp();
    assert!((mean - 1.0).abs() < 1e-8);
    assert!(
        within(&est, mean, 4.0),
        "E S₁ = {} ± {}",
        est.mean,
        est.stderr
    );
}

#[test]
fn subordinator_paths_are_monotone() {
    let spec = catalog::geometric_stable(2.0, 1).unwrap();
    let sim = Simulator::new(
        &spec,
        &SimConfig {
            cutoff: 1e-3,
            ..cfg(5)
        },
        Mode::Subordinator,
    )
    .unwrap();
    for i in 0..50 {
        let tr = sim.sample_path(i);
        assert!(tr.events.iter().all(|e| e.dx.len() == 1 && e.dx[0] >= 0.0));
        assert!(tr.events.windows(2).all(|w| w[0].t < w[1].t));
    }
}

#[test]
fn pure_drift_is_deterministic() {
    let spec =
        catalog::ProcessSpec::from_subordinator("drift", SubordinatorSpec::pure_drift(1.0), 1);
    let sim = Simulator::new(&spec, &cfg(0), Mode::Subordinator).unwrap();
    assert_eq!(sim.position_at(0, 0.7), vec![0.7]);
    let tr = sim.sample_path(0);
    assert!(tr
        .events
        .iter()
        .all(|e| e.tag == Tag::SmallSurrogate || e.jump_sq == 0.0));
    assert_eq!(quadratic_variation(&tr, 1.0).unwrap().jumps, 0.0);
    assert!((tr.end()[0] - 1.0).abs() < 1e-12);
    for r in [0.3, 0.9] {
        let rec = sim.exit_event(0, r, Clock::None, &[0.0]);
        assert_eq!(rec.status, ExitStatus::Exited);
        assert!((rec.tau - r).abs() < 1e-12);
        assert!(rec.position[0] >= r);
    }
}

#[test]
fn cauchy_big_jump_count_is_poisson_two() {
    let spec = catalog::stable(1.0, 1).unwrap();
    let c = SimConfig {
        cutoff: 1.0,
        step: 0.5,
        ..cfg(21)
    };
    let sim = Simulator::new(&spec, &c, Mode::DirectKernel).unwrap();
    assert!((sim.jump_rate() - 2.0).abs() < 1e-8);
    let counts: Vec<f64> = (0..100_000)
        .map(|i| {
            sim.sample_path(i)
                .events
                .iter()
                .filter(|e| e.tag == Tag::Big(0))
                .count() as f64
        })
        .collect();
    let est = EstimateWithCI::from_samples(&counts, 21);
    assert!(within(&est, 2.0, 4.0), "{} ± {}", est.mean, est.stderr);
}

#[test]
fn big_jump_interarrivals_are_exponential() {
    let spec = catalog::stable(1.0, 2).unwrap();
    let c = SimConfig {
        cutoff: 0.5,
        step: 10.0,
        horizon: 50.0,
        ..cfg(4)
    };
    let sim = Simulator::new(&spec, &c, Mode::DirectKernel).unwrap();
    let mut gaps = Vec::new();
    for i in 0..40 {
        let tr = sim.sample_path(i);
        let mut last = 0.0;
        for e in tr.events.iter().filter(|e| e.tag == Tag::Big(0)) {
            gaps.push(e.t - last);
            last = e.t;
        }
    }
    assert!(gaps.len() > 5000);
    let (d, p) = ks_exponential(&gaps, sim.jump_rate());
    assert!(p > 1e-3, "KS D = {d}, p = {p}");
    // and the test has power against a wrong rate
    let (_, p_wrong) = ks_exponential(&gaps, 1.1 * sim.jump_rate());
    assert!(p_wrong < 1e-3);
}

#[test]
fn variance_law_for_truncated_cauchy() {
    let sim = Simulator::direct(truncated_cauchy(), &cfg(1)).unwrap();
    let xs: Vec<f64> = (0..20_000)
        .map(|i| sim.position_at(i, 1.0)[0].powi(2))
        .collect();
    let est = EstimateWithCI::from_samples(&xs, 1);
    assert!(within(&est, 2.0, 4.0), "{} ± {}", est.mean, est.stderr);
}

#[test]
fn variance_law_in_two_dimensions() {
    // j = r^{-3} 1{r ≤ 1} in d = 2: m₂ = 2π
    let k = RadialJumpKernel::from_ln_fn_with(2, |u| -3.0 * u, Some(1.0), vec![]);
    let m2 = k.m2(1.0).unwrap();
    assert!((m2 - 2.0 * std::f64::consts::PI).abs() < 1e-8);
    let sim = Simulator::direct(
        &k,
        &SimConfig {
            cutoff: 0.05,
            ..cfg(2)
        },
    )
    .unwrap();
    let xs: Vec<f64> = (0..20_000)
        .map(|i| sim.position_at(i, 0.5).iter().map(|x| x * x).sum())
        .collect();
    let est = EstimateWithCI::from_samples(&xs, 2);
    assert!(within(&est, m2 * 0.5, 4.0), "{} ± {}", est.mean, est.stderr);
}

#[test]
fn dropping_the_small_part_records_the_bias_bound() {
    let c = SimConfig {
        gaussian_surrogate: false,
        horizon: 2.0,
        ..cfg(0)
    };
    let sim = Simulator::direct(truncated_cauchy(), &c).unwrap();
    let tr = sim.sample_path(0);
    assert!((tr.dropped_variance_bound.unwrap() - 0.02 * 2.0).abs() < 1e-9);
    assert_eq!(tr.surrogate_variance_rate, 0.0);
    assert!(tr
        .events
        .iter()
        .all(|e| e.tag != Tag::SmallSurrogate || e.dx[0] == 0.0));
}

#[test]
fn quadratic_variation_examples() {
    let mut tr = Trajectory {
        dim: 1,
        start: vec![0.0],
        horizon: 1.0,
        seed: 0,
        replica: 0,
        events: vec![],
        surrogate_variance_rate: 0.0,
        drift: 0.0,
        dropped_variance_bound: None,
    };
    assert_eq!(quadratic_variation(&tr, 1.0).unwrap().jumps, 0.0);
    tr.events.push(Event {
        t: 0.5,
        dx: vec![3.0],
        tag: Tag::Big(0),
        jump_sq: 9.0,
    });
    assert_eq!(quadratic_variation(&tr, 1.0).unwrap().jumps, 9.0);
    assert_eq!(quadratic_variation(&tr, 0.4).unwrap().jumps, 0.0);
    assert!(quadratic_variation(&tr, 1.5).is_err());
}

#[test]
fn surrogate_steps_are_excluded_from_jump_variation() {
    let sim = Simulator::direct(truncated_cauchy(), &cfg(9)).unwrap();
    let tr = sim.sample_path(3);
    let qv = quadratic_variation(&tr, 1.0).unwrap();
    let by_hand: f64 = tr
        .events
        .iter()
        .filter(|e| e.tag == Tag::Big(0))
        .map(|e| e.jump_sq)
        .sum();
    assert_eq!(qv.jumps, by_hand);
    assert!((qv.surrogate - 0.02).abs() < 1e-9);
    assert!(tr.events.iter().any(|e| e.tag == Tag::SmallSurrogate));
    assert!(tr.events.windows(2).all(|w| w[0].t < w[1].t));
}

#[test]
fn chernoff_formula_for_quadratic_variation() {
    let k = truncated_cauchy();
    let sim = Simulator::direct(k, &cfg(13)).unwrap();
    let n = 20_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| (-(sim.jump_quadratic_variation(i, 1.0) + k.m2(0.01).unwrap())).exp())
        .collect();
    let est = EstimateWithCI::from_samples(&xs, 13);
    let integral = k
        .ln_weighted_mass(|u| (-(2.0 * u).exp()).exp_m1().neg_ln())
        .unwrap()
        .exp();
    let target = (-integral).exp();
    assert!(
        within(&est, target, 4.0),
        "{} ± {} vs {target}",
        est.mean,
        est.stderr
    );
}

trait NegLn {
    fn neg_ln(self) -> f64;
}

impl NegLn for f64 {
    /// `ln(-x)` for the negative `expm1` value.
    fn neg_ln(self) -> f64 {
        (-self).ln()
    }
}

#[test]
fn exit_sandwich_with_exponential_clock() {
    let k = truncated_cauchy();
    let sim = Simulator::direct(
        k,
        &SimConfig {
            horizon: 200.0,
            ..cfg(17)
        },
    )
    .unwrap();
    let n = 20_000u64;
    let rate = 1.0;
    let radius = 1.5;
    let exits = sim.exit_events(0..n, radius, Clock::Exponential(rate), &[0.0]);
    let p_tau =
        EstimateWithCI::bernoulli(exits.iter().filter(|r| r.exited()).count() as u64, n, 17);
    let clock_rng = |i: u64| {
        use rand::Rng;
        let mut rng = replica_rng(1017, i);
        rng.sample::<f64, _>(rand_distr::Exp1) / rate
    };
    let far = (n..2 * n)
        .filter(|i| sim.position_at(*i, clock_rng(*i))[0].abs() >= radius)
        .count() as u64;
    let p_end = EstimateWithCI::bernoulli(far, n, 17);
    let slack = 4.0 * p_tau.stderr.hypot(p_end.stderr);
    assert!(
        p_end.mean <= p_tau.mean + slack,
        "{} vs {}",
        p_end.mean,
        p_tau.mean
    );
    assert!(p_tau.mean <= 2.0 * p_end.mean + 4.0 * p_tau.stderr.hypot(2.0 * p_end.stderr));
}

#[test]
fn pure_expected_survival_bound() {
    let k = truncated_cauchy();
    let sim = Simulator::direct(
        k,
        &SimConfig {
            horizon: 100.0,
            ..cfg(23)
        },
    )
    .unwrap();
    let n = 10_000u64;
    // 1 - 2 m₂/(r²λ) > 0 needs r²λ > 4
    let (r, lam) = (3.0, 1.0);
    let rec = sim.exit_events(0..n, r, Clock::Exponential(lam), &[0.0]);
    let survive =
        EstimateWithCI::bernoulli(rec.iter().filter(|x| !x.exited()).count() as u64, n, 23);
    let bound = (1.0 - (-1.0f64).exp()) * (1.0 - 2.0 * 2.0 / (r * r * lam));
    assert!(bound > 0.0);
    assert!(
        survive.mean >= bound - 4.0 * survive.stderr,
        "{} < {bound}",
        survive.mean
    );
}

#[test]
fn submultiplicativity_of_exit_probabilities() {
    let k = truncated_cauchy();
    let sim = Simulator::direct(
        k,
        &SimConfig {
            horizon: 100.0,
            ..cfg(29)
        },
    )
    .unwrap();
    let n = 10_000u64;
    let (r, r0, lam) = (1.0, 1.0, 1.0);
    let p = |radius: f64, pool: u64| {
        let recs = sim.exit_events(
            pool * n..(pool + 1) * n,
            radius,
            Clock::Exponential(lam),
            &[0.0],
        );
        EstimateWithCI::bernoulli(recs.iter().filter(|x| x.exited()).count() as u64, n, 29)
    };
    let base = p(r, 0);
    for m in [2.0, 3.0] {
        let big = p(m * r + (m - 1.0) * r0, m as u64);
        let bound = base.mean.powf(m);
        let se = big.stderr.hypot(m * base.mean.powf(m - 1.0) * base.stderr);
        assert!(
            big.mean <= bound + 4.0 * se,
            "m = {m}: {} > {bound}",
            big.mean
        );
    }
}

#[test]
fn escape_is_unlikely_before_a_fast_clock() {
    let k = truncated_cauchy();
    let sim = Simulator::direct(k, &cfg(31)).unwrap();
    let n = 10_000u64;
    let (radius, lam) = (0.01, 1e6);
    let recs = sim.exit_events(0..n, radius, Clock::Exponential(lam), &[0.0]);
    let p = EstimateWithCI::bernoulli(recs.iter().filter(|x| x.exited()).count() as u64, n, 31);
    let bound = 2.0 * 2.0 * (1.0 / lam) / (radius * radius);
    assert!(
        p.mean <= bound + 4.0 * p.stderr.max(1.0 / n as f64),
        "{} > {bound}",
        p.mean
    );
}

#[test]
fn exit_records_lie_outside_the_ball() {
    let spec = catalog::stable(1.5, 2).unwrap();
    let sim = Simulator::new(
        &spec,
        &SimConfig {
            horizon: 50.0,
            ..cfg(37)
        },
        Mode::DirectKernel,
    )
    .unwrap();
    let recs = sim.exit_events(0..500, 1.0, Clock::None, &[0.3, -0.2]);
    for r in &recs {
        assert_eq!(r.status, ExitStatus::Exited);
        assert!(r.position.iter().map(|x| x * x).sum::<f64>().sqrt() >= 1.0);
    }
    assert!(recs.iter().any(|r| r.cause == Some(ExitCause::BigJump)));
}

#[test]
fn censoring_and_clock_jumps_are_reported() {
    let sim = Simulator::direct(
        truncated_cauchy(),
        &SimConfig {
            horizon: 1e-3,
            ..cfg(0)
        },
    )
    .unwrap();
    let rec = sim.exit_event(0, 100.0, Clock::None, &[0.0]);
    assert_eq!(rec.status, ExitStatus::Censored);
    let sim = Simulator::direct(
        truncated_cauchy(),
        &SimConfig {
            horizon: 100.0,
            ..cfg(0)
        },
    )
    .unwrap();
    let rec = sim.exit_event(0, 100.0, Clock::FirstJumpAbove(0.5), &[0.0]);
    assert_eq!(rec.status, ExitStatus::ClockFired);
    assert!(rec.clock_jump.unwrap()[0].abs() > 0.5);
}

#[test]
fn sbm_mode_matches_derived_kernel_second_moment() {
    // Gamma SBM in d = 1: E|X_t|² = 2 E S_t = 2t
    let spec = catalog::geometric_stable(2.0, 1).unwrap();
    let sim = Simulator::new(
        &spec,
        &SimConfig {
            cutoff: 1e-6,
            ..cfg(41)
        },
        Mode::Sbm,
    )
    .unwrap();
    let xs: Vec<f64> = (0..20_000)
        .map(|i| sim.position_at(i, 1.0)[0].powi(2))
        .collect();
    let est = EstimateWithCI::from_samples(&xs, 41);
    assert!(within(&est, 2.0, 4.0), "{} ± {}", est.mean, est.stderr);
}

#[test]
fn same_seed_same_path() {
    let sim = Simulator::direct(truncated_cauchy(), &cfg(99)).unwrap();
    assert_eq!(sim.sample_path(5), sim.sample_path(5));
    assert_ne!(sim.sample_path(5), sim.sample_path(6));
}

#[test]
fn non_simulable_specs_are_rejected() {
    let spec = catalog::iterated_gs(1.0, 2, 1).unwrap();
    assert!(matches!(
        Simulator::new(&spec, &cfg(0), Mode::DirectKernel),
        Err(SimError::NotSimulable(_))
    ));
    let stable = catalog::stable(1.0, 1).unwrap();
    assert!(matches!(
        Simulator::new(&stable, &cfg(0), Mode::Sbm),
        Err(SimError::NotSimulable(_))
    ));
    assert!(matches!(
        Simulator::new(
            &stable,
            &SimConfig {
                step: 0.0,
                ..cfg(0)
            },
            Mode::DirectKernel
        ),
        Err(SimError::Config(_))
    ));
}

#[test]
fn ks_helper_detects_a_wrong_law() {
    let xs: Vec<f64> = (1..=1000)
        .map(|i| -(1.0 - i as f64 / 1001.0f64).ln())
        .collect();
    assert!(ks_exponential(&xs, 1.0).1 > 0.5);
    assert!(ks_exponential(&xs, 2.0).1 < 1e-6);
}

use ehi_core::catalog;
use ehi_core::kernels::SubordinatorSpec;
use ehi_core::probe::*;
use ehi_core::simulate::{
    ks_exponential, replica_rng, Clock, ExitStatus, Mode, SimConfig, Simulator,
};
use rand::Rng;

fn stable_sim(alpha: f64, d: usize, cutoff: f64, seed: u64) -> Simulator {
    let spec = catalog::stable(alpha, d).unwrap();
    let cfg = SimConfig {
        cutoff,
        step: 1e-2,
        horizon: 1e4,
        seed,
        gaussian_surrogate: true,
    };
    Simulator::new(&spec, &cfg, Mode::DirectKernel).unwrap()
}

#[test]
fn heavy_tail_mark_law() {
    let mut rng = replica_rng(5, 0);
    let n = 1_000_000u64;
    let ys: Vec<f64> = (0..n).map(|_| sample_heavy_tail_y(&mut rng)).collect();
    let below = EstimateWithCI::bernoulli(ys.iter().filter(|y| **y < 1.0).count() as u64, n, 5);
    assert!((below.mean - 2.0 / 3.0).abs() <= 4.0 * below.stderr);
    let above = EstimateWithCI::bernoulli(ys.iter().filter(|y| **y > 2.0).count() as u64, n, 5);
    assert!((above.mean - 1.0 / 12.0).abs() <= 4.0 * above.stderr);
    // the mark has infinite variance, so the sample standard error is only indicative
    let mean = EstimateWithCI::from_samples(&ys, 5);
    assert!(
        (mean.mean - 1.0).abs() <= 4.0 * mean.stderr,
        "{} ± {}",
        mean.mean,
        mean.stderr
    );
    assert!(ys.iter().all(|y| *y > 0.0 && y.is_finite()));
}

#[test]
fn wald_interval_covers_a_known_coin() {
    let p = 0.3;
    let trials = 1000u64;
    let covered = (0..trials)
        .filter(|t| {
            let mut rng = replica_rng(77, *t);
            let k = (0..1000).filter(|_| rng.random::<f64>() < p).count() as u64;
            let (lo, hi) = EstimateWithCI::bernoulli(k, 1000, 77).ci95();
            lo <= p && p <= hi
        })
        .count();
    assert!(
        covered as f64 >= 0.93 * trials as f64,
        "coverage {covered}/{trials}"
    );
}

#[test]
fn bernoulli_stderr_formula() {
    let e = EstimateWithCI::bernoulli(30, 100, 0);
    assert!((e.stderr - (0.3f64 * 0.7 / 100.0).sqrt()).abs() < 1e-15);
    assert_eq!(e.successes(), 30);
}

#[test]
fn far_target_makes_harmonic_function_one() {
    let sim = stable_sim(1.5, 1, 0.02, 3);
    let est = estimate_harmonic(&sim, 1.0, 1e9, &[0.2], 0..2000).unwrap();
    assert_eq!(est.estimate.mean, 1.0);
    assert_eq!(est.censored, 0);
}

#[test]
fn pure_drift_sbm_is_not_a_jump_process() {
    let spec = catalog::ProcessSpec::from_subordinator("bm", SubordinatorSpec::pure_drift(1.0), 1);
    let cfg = SimConfig::default();
    let sim = Simulator::new(&spec, &cfg, Mode::Sbm).unwrap();
    assert!(matches!(
        estimate_harmonic(&sim, 1.0, 2.0, &[0.0], 0..10),
        Err(ProbeError::Config(_))
    ));
}

#[test]
fn harmonic_estimate_matches_histogram_mass() {
    let sim = stable_sim(1.0, 1, 0.01, 8);
    let n = 5000;
    let h = estimate_harmonic(&sim, 1.0, 2.0, &[0.0], 0..n).unwrap();
    let hist = exit_histogram(&sim, 1.0, &[0.0], &[(-2.0, -1.0), (1.0, 2.0)], 0..n).unwrap();
    let inside: u64 = hist.bins.iter().map(|b| b.count).sum();
    assert_eq!(inside, h.estimate.successes());
    assert_eq!(hist.n, h.estimate.n);
    let total: f64 = hist.bins.iter().map(|b| b.phat).sum::<f64>() + hist.far_field.mean;
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn histogram_at_origin_is_mirror_symmetric() {
    let sim = stable_sim(1.0, 1, 0.02, 9);
    let edges = [(-3.0, -1.5), (-1.5, -1.0), (1.0, 1.5), (1.5, 3.0)];
    let hist = exit_histogram(&sim, 1.0, &[0.0], &edges, 0..20_000).unwrap();
    for i in 0..2 {
        let (a, b) = (&hist.bins[i], &hist.bins[3 - i]);
        assert!(
            (a.phat - b.phat).abs() <= 4.0 * a.stderr.hypot(b.stderr),
            "{} vs {}",
            a.phat,
            b.phat
        );
    }
    assert!(exit_histogram(&sim, 1.0, &[0.0], &[(0.5, 2.0)], 0..10).is_err());
}

#[test]
fn mirrored_probe_point_gives_unit_ratio() {
    let sim = stable_sim(1.0, 2, 0.05, 12);
    let exp = HarnackExperiment::new(1.0, 2.0, 5.0, 2, 3000).unwrap();
    let n = exp.replicas;
    let a = estimate_harmonic(&sim, exp.exit_radius(), exp.r3, &exp.y, 0..n).unwrap();
    let b =
        estimate_harmonic(&sim, exp.exit_radius(), exp.r3, &exp.mirrored().y, n..2 * n).unwrap();
    let r = ratio_of(a.estimate, b.estimate, 0).unwrap();
    assert!(
        (r.ratio - 1.0).abs() <= 4.0 * r.ratio_stderr,
        "{} ± {}",
        r.ratio,
        r.ratio_stderr
    );
}

#[test]
fn rotated_start_agrees() {
    let sim = stable_sim(1.5, 2, 0.05, 13);
    let x = [0.6, 0.0];
    let t = 1.1f64;
    let xr = [0.6 * t.cos(), 0.6 * t.sin()];
    let a = estimate_harmonic(&sim, 1.0, 1.5, &x, 0..4000)
        .unwrap()
        .estimate;
    let b = estimate_harmonic(&sim, 1.0, 1.5, &xr, 4000..8000)
        .unwrap()
        .estimate;
    assert!(a.z_distance(&b) <= 4.0, "{} vs {}", a.mean, b.mean);
}

#[test]
fn harnack_experiment_geometry() {
    let e = HarnackExperiment::new(1.0, 5.0, 30.0, 1, 10).unwrap();
    assert_eq!(e.y, vec![5.0]);
    let e3 = HarnackExperiment::new(1.0, 5.0, 30.0, 3, 10).unwrap();
    assert!((e3.y[0] - (2.0 / 3.0 + 5.0)).abs() < 1e-15);
    assert!(e3.y[0] < e3.exit_radius());
    assert!(HarnackExperiment::new(2.0, 1.0, 30.0, 1, 10).is_err());
    assert!(HarnackExperiment::new(1.0, 5.0, 6.0, 1, 10).is_err());
}

#[test]
fn zero_denominator_is_reported() {
    let h0 = EstimateWithCI::bernoulli(3, 10, 0);
    let hy = EstimateWithCI::bernoulli(0, 10, 0);
    match ratio_of(h0, hy, 0) {
        Err(ProbeError::UndefinedRatio {
            h0_successes: 3,
            hy_successes: 0,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn delta_method_interval() {
    let h0 = EstimateWithCI {
        mean: 0.5,
        stderr: 0.01,
        n: 100,
        seed: 0,
    };
    let hy = EstimateWithCI {
        mean: 0.8,
        stderr: 0.02,
        n: 100,
        seed: 0,
    };
    let r = ratio_of(h0, hy, 0).unwrap();
    let expect = 0.625 * (0.02f64.powi(2) + 0.025f64.powi(2)).sqrt();
    assert!((r.ratio_stderr - expect).abs() < 1e-12);
    assert!((r.ratio_ci.1 - r.ratio - Z95 * expect).abs() < 1e-12);
}

#[test]
fn counterexample_constants() {
    let p2 = CounterexampleParams::new(2).unwrap();
    assert_eq!(p2.s_n, 2f64.powi(-13));
    assert!((p2.r_n.powi(2) - 2f64.powi(-13) * 2f64.ln()).abs() < 1e-20);
    assert_eq!(p2.h_n, 16.0);
    assert_eq!(p2.a_n, 2f64.powi(-8));
    assert!(matches!(
        CounterexampleParams::new(1),
        Err(ProbeError::Domain(_))
    ));
    assert!(matches!(
        CounterexampleParams::new(7),
        Err(ProbeError::Domain(_))
    ));
}

#[test]
fn counterexample_scales_are_ordered() {
    // log 2 < 1 puts r_2² below s_2, so the chain starts at n = 3
    let p2 = CounterexampleParams::new(2).unwrap();
    assert!(p2.r_n * p2.r_n < p2.s_n);
    for n in 3..=6u32 {
        let p = CounterexampleParams::new(n).unwrap();
        let a_next = CounterexampleParams::new(n + 1)
            .map(|q| q.a_n)
            .unwrap_or(2f64.powi(-2 * ((n + 1) * (n + 1)) as i32));
        let r2 = p.r_n * p.r_n;
        assert!(a_next < p.s_n && p.s_n < r2 && r2 < p.a_n);
        // r_n²/s_n = log n, below 4 at every reachable level; the outer gaps are wide
        assert!(p.s_n / a_next >= 4.0 && p.a_n / r2 >= 4.0);
        assert!((r2 / p.s_n - (n as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn folded_types_carry_negligible_mass() {
    let kept: Vec<u32> = (2..=6)
        .map(|n| CounterexampleParams::new(n).unwrap().types_kept)
        .collect();
    assert_eq!(kept, vec![4, 5, 5, 6, 7]);
    for n in 2..=6u32 {
        let p = CounterexampleParams::new(n).unwrap();
        assert!(p.types_kept > n);
        assert!(p.folded_mass < FOLD_TOLERANCE * p.r_n * p.r_n);
        // dropping one more type would break the bound
        let one_more = 2f64.powf(-((p.types_kept * p.types_kept + n * n) as f64));
        assert!(p.folded_mass + one_more >= FOLD_TOLERANCE * p.r_n * p.r_n);
    }
}

#[test]
fn lambda_s_is_close_to_h_n() {
    for n in 3..=5u32 {
        let p = CounterexampleParams::new(n).unwrap();
        let ratio = lambda_s(p.s_n) / p.h_n;
        assert!((0.9..=1.1).contains(&ratio), "n = {n}: {ratio}");
    }
    // the closed form agrees with the catalog density's tail
    let p = CounterexampleParams::new(3).unwrap();
    let sub = catalog::counterexample(14, 1).unwrap();
    let tail = sub.subordinator().unwrap().tail_mass(p.s_n).unwrap();
    assert!((tail / lambda_s(p.s_n) - 1.0).abs() < 1e-12);
}

/// First jump above `s` and its Gaussian displacement, sampled directly.
fn scatter_by_sampling(s: f64, c: f64, n: u64, seed: u64) -> EstimateWithCI {
    let weights: Vec<f64> = (1..=12u32)
        .map(|m| 2f64.powi((m * m) as i32) * catalog::y_tail(s * 2f64.powi(2 * (m * m) as i32)))
        .collect();
    let total: f64 = weights.iter().sum();
    let mut rng = replica_rng(seed, 0);
    let mut hits = 0;
    for _ in 0..n {
        let mut v = rng.random::<f64>() * total;
        let mut m = 0;
        while v > weights[m] {
            v -= weights[m];
            m += 1;
        }
        let a = 2f64.powi(-2 * ((m + 1) * (m + 1)) as i32);
        let w = loop {
            let y = sample_heavy_tail_y(&mut rng);
            if a * y > s {
                break a * y;
            }
        };
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        if (2.0 * w).sqrt() * z.abs() <= c {
            hits += 1;
        }
    }
    EstimateWithCI::bernoulli(hits, n, seed)
}

#[test]
fn scatter_probability_matches_sampling() {
    for n in [3u32, 4] {
        let p = CounterexampleParams::new(n).unwrap();
        let exact = p_scatter_small(p.s_n, p.scatter_radius, 1).unwrap();
        let mc = scatter_by_sampling(p.s_n, p.scatter_radius, 200_000, n as u64);
        assert!(
            (exact - mc.mean).abs() <= 4.0 * mc.stderr,
            "n = {n}: {exact} vs {}",
            mc.mean
        );
        let smaller = p_scatter_small(p.s_n, 3.0 * p.r_n, 1).unwrap();
        let mc = scatter_by_sampling(p.s_n, 3.0 * p.r_n, 200_000, 10 + n as u64);
        assert!(
            (smaller - mc.mean).abs() <= 4.0 * mc.stderr,
            "n = {n}: {smaller} vs {}",
            mc.mean
        );
    }
    assert!((p_scatter_small(1e-6, 1e9, 2).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn counterexample_clock_is_exponential() {
    let p = CounterexampleParams::new(4).unwrap();
    let cfg = counterexample_config(&p, 3);
    let sim = counterexample_simulator(&p, 1, &cfg).unwrap();
    let times: Vec<f64> = sim
        .exit_events(0..3000, 1e6, Clock::FirstJumpAbove(p.s_n), &[0.0])
        .iter()
        .map(|r| {
            assert_eq!(r.status, ExitStatus::ClockFired);
            r.tau
        })
        .collect();
    let kept_rate: f64 = (1..=p.types_kept)
        .map(|m| 2f64.powi((m * m) as i32) * catalog::y_tail(p.s_n * 2f64.powi(2 * (m * m) as i32)))
        .sum();
    let (d, pv) = ks_exponential(&times, kept_rate);
    assert!(pv > 1e-3, "D = {d}, p = {pv}");
    assert!((kept_rate / lambda_s(p.s_n) - 1.0).abs() < 1e-6);
}

#[test]
fn counterexample_report_round_trips() {
    let report = counterexample_experiment(4, 1, 200, 7).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: CounterexampleReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(report.params.n, 4);
    assert!(report.sandwich.p_exit.mean > 0.0);
}

//! Pilot run fixing the Monte Carlo thresholds of the acceptance suite; prints the
//! fixture JSON committed as `tests/fixtures/pilot.json`.
//!
//! `cargo run --release -p ehi-core --example counterexample_pilot -- <replicas> <seed>`

use ehi_core::catalog;
use ehi_core::probe::{counterexample_experiment, harnack_ratio, HarnackExperiment};
use ehi_core::simulate::{Mode, SimConfig, Simulator};
use serde_json::json;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let replicas: u64 = args.first().map_or(4000, |s| s.parse().expect("replicas"));
    let seed: u64 = args.get(1).map_or(7, |s| s.parse().expect("seed"));
    let mut levels = Vec::new();
    for n in 2..=5u32 {
        let r = counterexample_experiment(n, 1, replicas, seed + n as u64).expect("experiment");
        levels.push(json!({
            "n": n,
            "types_kept": r.params.types_kept,
            "lambda_over_h": r.sandwich.lambda_s / r.params.h_n,
            "p_exit": r.sandwich.p_exit.mean,
            "p_exit_stderr": r.sandwich.p_exit.stderr,
            "p_scatter_small": r.sandwich.p_scatter_small,
            "ratio": r.harnack.ratio,
            "ratio_stderr": r.harnack.ratio_stderr,
            "runtime_secs": r.runtime_secs,
        }));
    }
    let stable = catalog::stable(1.0, 1).expect("stable");
    let cfg = SimConfig {
        cutoff: 0.01,
        step: 0.05,
        horizon: 1e4,
        seed,
        gaussian_surrogate: true,
    };
    let sim = Simulator::new(&stable, &cfg, Mode::DirectKernel).expect("simulator");
    let exp = HarnackExperiment::new(1.0, 5.0, 30.0, 1, replicas).expect("geometry");
    let h = harnack_ratio(&sim, &exp).expect("ratio");
    let out = json!({
        "seed": seed,
        "replicas": replicas,
        "levels": levels,
        "stable_ratio": h.ratio,
        "stable_ratio_stderr": h.ratio_stderr,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
}

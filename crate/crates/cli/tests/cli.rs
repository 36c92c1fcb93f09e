use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ehi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehi"))
        .current_dir(dir)
        .env("EHI_THREADS", "2")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_spec(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn classify_json_has_schema_keys_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(
        dir.path(),
        "s.spec",
        "kind=kernel, dim=1, form=stable, alpha=1.0\n",
    );
    let o = ehi(
        dir.path(),
        &[
            "classify", "--spec", "s.spec", "--scales", "12", "--json", "--seed", "1", "--out",
            "v.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    for key in ["verdict", "fired", "profiles", "config", "manifest"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["verdict"], "holds");
    assert_eq!(v["manifest"]["seed"], 1);
    assert_eq!(v["manifest"]["spec_digest"].as_str().unwrap().len(), 64);
    let side: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("v.json.manifest.json")).unwrap())
            .unwrap();
    assert!(side["wall_time_secs"].as_f64().unwrap() >= 0.0);
    assert_eq!(side["outputs"][0], "v.json");
}

#[test]
fn inconclusive_classification_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("k.csv"),
        "r,j\n0.001,1000\n0.01,10\n0.1,1\n",
    )
    .unwrap();
    write_spec(
        dir.path(),
        "t.spec",
        "kind=kernel\nform=table, file=k.csv\n",
    );
    let o = ehi(
        dir.path(),
        &[
            "classify",
            "--spec",
            "t.spec",
            "--direction",
            "large",
            "--r-start",
            "0.01",
            "--scales",
            "12",
            "--seed",
            "1",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("verdict: inconclusive"));
}

#[test]
fn invalid_specs_exit_two_with_located_messages() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(
        dir.path(),
        "a.spec",
        "kind=kernel, dim=1, form=stable, alpha=2.5\n",
    );
    let o = ehi(dir.path(), &["classify", "--spec", "a.spec", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("α ∉ (0,2)"), "{}", stderr(&o));

    write_spec(dir.path(), "b.spec", "kind=kernel\ndim = two\n");
    let o = ehi(dir.path(), &["profile", "--spec", "b.spec", "--seed", "1"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 2, column 7"), "{}", stderr(&o));

    let o = ehi(
        dir.path(),
        &["classify", "--spec", "missing.spec", "--seed", "1"],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn undefined_ratio_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let o = ehi(
        dir.path(),
        &[
            "probe",
            "harnack",
            "--spec",
            "s.spec",
            "--replicas",
            "3",
            "--r3",
            "6.001",
            "--step",
            "0.05",
            "--horizon",
            "1e4",
            "--seed",
            "1",
        ],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("undefined ratio"));
}

#[test]
fn non_simulable_process_is_a_spec_error() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(
        dir.path(),
        "r.spec",
        "form=builtin:relativistic-gs, beta=1, m=1\n",
    );
    let o = ehi(dir.path(), &["simulate", "--spec", "r.spec", "--seed", "1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn profile_csv_header_and_values() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let o = ehi(
        dir.path(),
        &[
            "profile", "--spec", "s.spec", "--scales", "3", "--seed", "1",
        ],
    );
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout.clone()).unwrap();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "r,jd2,m2,tail2");
    assert_eq!(lines.len(), 4);
    let cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(cells[0], 1.0);
    assert!(
        (cells[1] - 1.0).abs() < 1e-12
            && (cells[2] - 2.0).abs() < 1e-12
            && (cells[3] - 2.0).abs() < 1e-12
    );
    assert!(stderr(&o).contains("manifest: "));
}

#[test]
fn missing_seed_is_generated_printed_and_embedded() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let o = ehi(
        dir.path(),
        &[
            "simulate",
            "--spec",
            "s.spec",
            "--horizon",
            "0.01",
            "--json",
            "--out",
            "p.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let err = stderr(&o);
    let printed: u64 = err
        .lines()
        .find_map(|l| {
            l.strip_prefix("seed: ")
                .and_then(|r| r.strip_suffix(" (generated)"))
        })
        .expect("seed line")
        .parse()
        .unwrap();
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(v["manifest"]["seed"].as_u64(), Some(printed));
    assert_eq!(v["manifest"]["seed_generated"], true);
    assert_eq!(v["config"]["seed"].as_u64(), Some(printed));
}

fn run_twice(dir: &Path, args: &[&str], outputs: &[&str]) -> Vec<(Vec<u8>, Vec<u8>)> {
    let first: Vec<Vec<u8>> = {
        let o = ehi(dir, args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs
            .iter()
            .map(|f| fs::read(dir.join(f)).unwrap())
            .collect()
    };
    let o = ehi(dir, args);
    assert_eq!(code(&o), 0);
    first
        .into_iter()
        .zip(outputs.iter().map(|f| fs::read(dir.join(f)).unwrap()))
        .collect()
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(
        dir.path(),
        "s.spec",
        "kind=kernel, dim=2, form=stable, alpha=1.5\n",
    );
    let runs: Vec<Vec<&str>> = vec![
        vec![
            "simulate",
            "--spec",
            "s.spec",
            "--paths",
            "4",
            "--horizon",
            "0.05",
            "--seed",
            "11",
            "--out",
            "traj.csv",
        ],
        vec![
            "simulate",
            "--spec",
            "s.spec",
            "--paths",
            "2",
            "--horizon",
            "0.05",
            "--seed",
            "11",
            "--json",
            "--out",
            "traj.json",
        ],
        vec![
            "classify", "--spec", "s.spec", "--scales", "10", "--json", "--seed", "5", "--out",
            "v.json",
        ],
        vec![
            "profile", "--spec", "s.spec", "--scales", "10", "--seed", "5", "--out", "p.csv",
        ],
    ];
    for args in &runs {
        let out = args.last().unwrap();
        for (a, b) in run_twice(dir.path(), args, &[out]) {
            assert!(!a.is_empty());
            assert_eq!(a, b, "{args:?}");
        }
    }
    let args = [
        "probe",
        "harnack",
        "--spec",
        "s.spec",
        "--replicas",
        "300",
        "--step",
        "0.05",
        "--horizon",
        "1e3",
        "--seed",
        "2",
        "--json",
        "--out",
        "h.json",
        "--histogram",
        "hist.csv",
    ];
    for (a, b) in run_twice(dir.path(), &args, &["h.json", "hist.csv"]) {
        assert_eq!(a, b);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let args = [
        "probe",
        "harnack",
        "--spec",
        "s.spec",
        "--replicas",
        "400",
        "--step",
        "0.05",
        "--horizon",
        "1e3",
        "--seed",
        "4",
        "--json",
    ];
    let run = |threads: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_ehi"))
            .current_dir(dir.path())
            .env("EHI_THREADS", threads)
            .args(args)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn different_seeds_give_different_paths() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let a = ehi(
        dir.path(),
        &[
            "simulate",
            "--spec",
            "s.spec",
            "--horizon",
            "0.01",
            "--seed",
            "1",
        ],
    )
    .stdout;
    let b = ehi(
        dir.path(),
        &[
            "simulate",
            "--spec",
            "s.spec",
            "--horizon",
            "0.01",
            "--seed",
            "2",
        ],
    )
    .stdout;
    assert_ne!(a, b);
}

#[test]
fn trajectory_csv_columns_follow_dimension() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "dim=3, form=stable, alpha=1\n");
    let o = ehi(
        dir.path(),
        &[
            "simulate",
            "--spec",
            "s.spec",
            "--horizon",
            "0.01",
            "--paths",
            "2",
            "--seed",
            "1",
        ],
    );
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().next(), Some("path,t,dx1,dx2,dx3,tag"));
    assert!(out.lines().skip(1).all(|l| l.split(',').count() == 6));
    assert!(out.lines().skip(1).any(|l| l.starts_with("1,")));
}

#[test]
fn harnack_probe_report_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    write_spec(dir.path(), "s.spec", "form=stable, alpha=1\n");
    let o = ehi(
        dir.path(),
        &[
            "probe",
            "harnack",
            "--spec",
            "s.spec",
            "--replicas",
            "500",
            "--step",
            "0.05",
            "--horizon",
            "1e4",
            "--seed",
            "3",
            "--json",
            "--histogram",
            "h.csv",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["h0", "hy", "ratio"] {
        let e = &v["estimates"][k];
        assert!(
            e["mean"].as_f64().unwrap() > 0.0
                && e["stderr"].as_f64().is_some()
                && e["n"].as_u64() == Some(500)
        );
    }
    assert_eq!(v["seed"], 3);
    let hist = fs::read_to_string(dir.path().join("h.csv")).unwrap();
    assert_eq!(hist.lines().next(), Some("bin_lo,bin_hi,count,phat,stderr"));
    assert_eq!(hist.lines().count(), 21);
    let total: u64 = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
        .sum();
    assert!(total <= 500 && total > 400);
}

#[test]
fn counterexample_probe_reports_each_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = ehi(
        dir.path(),
        &[
            "probe",
            "counterexample",
            "--levels",
            "2",
            "--replicas",
            "200",
            "--seed",
            "1",
            "--json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["params"]["levels"][0]["n"], 2);
    for k in ["n2.p_exit", "n2.h0", "n2.hy", "n2.ratio"] {
        assert!(v["estimates"][k]["mean"].as_f64().is_some(), "{k}");
    }
    let lam = v["derived"]["n2.lambda_s_over_h"].as_f64().unwrap();
    assert!((0.9..1.2).contains(&lam));
    let o = ehi(
        dir.path(),
        &[
            "probe",
            "counterexample",
            "--levels",
            "7",
            "--replicas",
            "10",
            "--seed",
            "1",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn catalog_list_has_one_line_per_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let o = ehi(dir.path(), &["catalog", "list", "--seed", "1"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = out.lines().map(|l| l.split('(').next().unwrap()).collect();
    assert_eq!(
        names,
        [
            "stable",
            "geometric-stable",
            "iterated-gs",
            "relativistic-gs",
            "example-no-a3",
            "counterexample"
        ]
    );
    assert!(out.lines().next().unwrap().contains("alpha"));
    let o = ehi(dir.path(), &["catalog", "list", "--seed", "1", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["builtins"].as_array().unwrap().len(), 6);
}

#[test]
fn every_subcommand_accepts_seed_json_out() {
    let dir = tempfile::tempdir().unwrap();
    for sub in [
        vec!["classify"],
        vec!["profile"],
        vec!["simulate"],
        vec!["probe", "harnack"],
        vec!["probe", "counterexample"],
        vec!["catalog", "list"],
    ] {
        let mut args = sub.clone();
        args.push("--help");
        let help = String::from_utf8(ehi(dir.path(), &args).stdout).unwrap();
        for flag in ["--seed", "--json", "--out"] {
            assert!(help.contains(flag), "{sub:?} lacks {flag}");
        }
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ehi"))
        .current_dir(dir.path())
        .env("EHI_THREADS", "zero")
        .args(["catalog", "list", "--seed", "1"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spline_dpd::models::{Predistorter, SmpModel};
use spline_dpd::spline::SplineConfig;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spline-dpd"))
        .args(args)
        .env("SPLINE_DPD_OUT", out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = run(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Data rows of a CSV written with a leading hash comment.
fn csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let hash = lines
        .next()
        .unwrap()
        .strip_prefix("# config_hash=")
        .expect("hash line")
        .to_string();
    lines.next().expect("header");
    (
        hash,
        lines
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect(),
    )
}

fn worst_aclr(row: &[String]) -> f64 {
    row[2].parse::<f64>().unwrap().min(row[3].parse().unwrap())
}

#[test]
fn generate_is_byte_identical_and_reports_papr() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let stdout = ok(a.path(), &["generate"]);
    ok(b.path(), &["generate"]);
    let sa = std::fs::read(a.path().join("signal.iq")).unwrap();
    assert_eq!(sa, std::fs::read(b.path().join("signal.iq")).unwrap());
    assert_eq!(
        std::fs::read(a.path().join("signal.iq.json")).unwrap(),
        std::fs::read(b.path().join("signal.iq.json")).unwrap()
    );

    let meta = json(&a.path().join("signal.iq.json"));
    assert_eq!(meta["length"].as_u64().unwrap() as usize * 16, sa.len());
    assert_eq!(meta["sample_rate_hz"].as_f64().unwrap(), 122.88e6);
    let papr: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("PAPR at 1e-4: "))
        .and_then(|v| v.trim_end_matches(" dB").parse().ok())
        .expect("PAPR line");
    assert!(papr <= 7.3, "{papr}");

    let other = tempfile::tempdir().unwrap();
    ok(other.path(), &["generate", "--seed", "5"]);
    assert_ne!(sa, std::fs::read(other.path().join("signal.iq")).unwrap());
}

#[test]
fn signal_sidecar_round_trips_through_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["generate", "--seed", "1000", "--name", "payload"],
    );
    let sig = dir.path().join("payload.iq");
    ok(
        dir.path(),
        &[
            "evaluate",
            "--signal",
            sig.to_str().unwrap(),
            "--name",
            "from_file",
        ],
    );
    // Seed 1000 is also the default evaluation payload.
    ok(dir.path(), &["evaluate", "--name", "fresh"]);
    let (hash_a, a) = csv(&dir.path().join("from_file_metrics.csv"));
    let (hash_b, b) = csv(&dir.path().join("fresh_metrics.csv"));
    assert_eq!(a, b);
    assert_eq!(hash_a, hash_b);
    assert_eq!(
        hash_a,
        json(&dir.path().join("payload.iq.json"))["config_hash"]
    );
}

#[test]
fn linear_pa_trains_to_near_identity() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "train",
            "--set",
            "pa=linear",
            "--set",
            "pa_noise=false",
            "--set",
            "ila_iterations=2",
        ],
    );
    let summary = json(&dir.path().join("training_summary.json"));
    assert!(summary["final_mean_sq_error"].as_f64().unwrap() < 1e-10);
    let model = json(&dir.path().join("model.json"));
    for lut in model["model"]["luts"].as_array().unwrap() {
        for cp in lut["control_points"].as_array().unwrap() {
            let (re, im) = (cp[0].as_f64().unwrap(), cp[1].as_f64().unwrap());
            assert!(re.hypot(im) < 1e-6);
        }
    }
}

#[test]
fn smp_training_regression_and_evaluation_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["train"]);
    let (hash, log) = csv(&p.join("training_log.csv"));
    assert_eq!(log.len(), 5);
    let mse: Vec<f64> = log.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(mse.windows(2).all(|w| w[1] <= 1.05 * w[0]), "{mse:?}");

    ok(p, &["evaluate", "--name", "none"]);
    let model = p.join("model.json");
    ok(
        p,
        &[
            "evaluate",
            "--model",
            model.to_str().unwrap(),
            "--name",
            "dpd",
        ],
    );
    let (h1, none) = csv(&p.join("none_metrics.csv"));
    let (h2, dpd) = csv(&p.join("dpd_metrics.csv"));
    assert_eq!(h1, hash);
    assert_eq!(h2, hash);
    assert_eq!(json(&model)["config_hash"], hash.as_str());

    let delta = worst_aclr(&dpd[0]) - worst_aclr(&none[0]);
    let summary = json(&p.join("training_summary.json"));
    let worst = |v: &Value| {
        v["aclr_db_left"]
            .as_f64()
            .unwrap()
            .min(v["aclr_db_right"].as_f64().unwrap())
    };
    let logged = worst(&summary["dpd"]) - worst(&summary["no_dpd"]);
    assert!((delta - logged).abs() <= 0.2, "{delta} vs {logged}");
    assert!(delta >= 10.0, "improvement {delta}");
    // Pinned on the shipped Wiener fixture.
    assert!((worst_aclr(&dpd[0]) - 53.0).abs() <= 0.5, "{:?}", dpd[0]);

    let (_, psd) = csv(&p.join("dpd_psd.csv"));
    assert_eq!(psd.len(), 4096);
}

#[test]
fn identity_model_matches_raw_pa() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let cfg = SplineConfig::with_control_points(3, 1.0, 7).unwrap();
    let model = Predistorter::Smp(SmpModel::identity(cfg, 4).unwrap());
    let artifact = serde_json::json!({ "config_hash": "0", "model": model });
    let path = p.join("identity.json");
    std::fs::write(&path, serde_json::to_vec(&artifact).unwrap()).unwrap();
    ok(p, &["evaluate", "--name", "raw"]);
    let o = run(
        p,
        &[
            "evaluate",
            "--model",
            path.to_str().unwrap(),
            "--name",
            "identity",
        ],
    );
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let (_, raw) = csv(&p.join("raw_metrics.csv"));
    let (_, id) = csv(&p.join("identity_metrics.csv"));
    for k in 1..5 {
        let (a, b): (f64, f64) = (raw[0][k].parse().unwrap(), id[0][k].parse().unwrap());
        assert!((a - b).abs() <= 1e-6, "column {k}: {a} vs {b}");
    }
}

#[test]
fn divergent_steps_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["train", "--set", "mu_q=10"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("diverged") && err.contains("mu_q=10"), "{err}");
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "model = \"smp\"\nmemroy = 4\n").unwrap();
    let o = run(dir.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("memroy"));

    for bad in [
        "model=volterra",
        "control_points=3",
        "pa=missing_fixture",
        "qam_order=32",
    ] {
        let o = run(dir.path(), &["generate", "--set", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
    }
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn io_errors_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = run(
        dir.path(),
        &["generate", "--config", missing.to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.toml"));

    let o = run(dir.path(), &["evaluate", "--signal", "/nonexistent/x.iq"]);
    assert_eq!(o.status.code(), Some(4));

    // Output root is a file, so the directory cannot be created.
    let file = dir.path().join("plain");
    std::fs::write(&file, b"").unwrap();
    assert_eq!(run(&file.join("sub"), &["generate"]).status.code(), Some(4));
}

#[test]
fn config_file_and_overrides_agree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = a.path().join("exp.toml");
    std::fs::write(&cfg, "seed = 9\nqam_order = 16\n").unwrap();
    ok(a.path(), &["generate", "--config", cfg.to_str().unwrap()]);
    ok(
        b.path(),
        &["generate", "--set", "seed=9", "--set", "qam_order=16"],
    );
    assert_eq!(
        std::fs::read(a.path().join("signal.iq")).unwrap(),
        std::fs::read(b.path().join("signal.iq")).unwrap()
    );
    let written = std::fs::read_to_string(a.path().join("config.toml")).unwrap();
    assert!(written.starts_with("# config_hash="));
    assert!(written.contains("qam_order = 16"));
    // The saved configuration reproduces the run.
    let c = tempfile::tempdir().unwrap();
    ok(
        c.path(),
        &[
            "generate",
            "--config",
            a.path().join("config.toml").to_str().unwrap(),
        ],
    );
    assert_eq!(
        json(&a.path().join("signal.iq.json")),
        json(&c.path().join("signal.iq.json"))
    );
}

#[test]
fn complexity_table_is_printed_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let table = ok(dir.path(), &["complexity"]);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows[0], "model,P,M,Q,delta,mul_main_formula,mul_learning_formula,mul_main,mul_learning,flops_main,flops_learning");
    assert!(
        rows[1].starts_with("sph,3,3,7,1,") && rows[1].contains(",36,") && rows[1].contains(",69,")
    );
    assert!(rows[2].starts_with("smp,3,4,7,1,") && rows[2].contains(",63,119,99,"));
    assert!(rows[3].starts_with("mp,11,4,,,112,2514,112,2514,255,"));

    let out = dir.path().join("t.csv");
    let single = ok(
        dir.path(),
        &[
            "complexity",
            "--kind",
            "sph",
            "-P",
            "3",
            "-M",
            "4",
            "--out",
            out.to_str().unwrap(),
        ],
    );
    assert!(single.lines().nth(1).unwrap().contains(",40,124,77,"));
    assert_eq!(std::fs::read_to_string(out).unwrap(), single);

    let o = run(
        dir.path(),
        &["complexity", "--kind", "smp", "-P", "5", "-M", "4"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["selftest"]);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
}

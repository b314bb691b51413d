//! End-to-end exercises of the pfl binary: output files, exit codes,
//! overwrite protection, determinism, and the table layout.

use std::path::Path;
use std::process::{Command, Output};

fn pfl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn tiny_config() -> &'static str {
    r#"{
        "dataset": {"kind": "synth", "classes": 4, "samples_per_class": 30, "side": 8},
        "partition": {"n_clients": 4, "alpha": 5.0},
        "protocol": {"total_rounds": 4, "local_iters": 3, "batch_size": 8,
                     "participants_per_round": 2},
        "eval": {"eval_every": 2, "window_rounds": 2},
        "seeds": [1, 2]
    }"#
}

#[test]
fn run_writes_outputs_and_guards_overwrites() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("cfg.json"), tiny_config());

    let out = pfl(&["run", "--config", "cfg.json", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics_seed1.csv", "metrics_seed2.csv", "summary.json", "resolved-config.json"] {
        assert!(dir.path().join("res").join(f).exists(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(dir.path().join("res/metrics_seed1.csv")).unwrap();
    assert!(metrics.starts_with("round,client_id,role,asr,mta,n_asr,n_mta\n"));

    // Same target without --overwrite: refused, exit 1.
    let again = pfl(&["run", "--config", "cfg.json", "--out", "res"], dir.path());
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--overwrite"));

    // With --overwrite: byte-identical outputs.
    let rerun = pfl(
        &["run", "--config", "cfg.json", "--out", "res", "--overwrite"],
        dir.path(),
    );
    assert!(rerun.status.success());
    let metrics2 = std::fs::read_to_string(dir.path().join("res/metrics_seed1.csv")).unwrap();
    assert_eq!(metrics, metrics2);
}

#[test]
fn resolved_config_round_trips_to_the_same_hash() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir.path().join("cfg.json"), tiny_config());
    let first = pfl(&["run", "--config", "cfg.json", "--out", "a"], dir.path());
    assert!(first.status.success());

    let second = pfl(
        &["run", "--config", "a/resolved-config.json", "--out", "b"],
        dir.path(),
    );
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));

    let s1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/summary.json")).unwrap())
            .unwrap();
    let s2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b/summary.json")).unwrap())
            .unwrap();
    assert_eq!(s1["config_hash"], s2["config_hash"]);
    assert_eq!(s1["per_seed"], s2["per_seed"]);
}

#[test]
fn worker_count_leaves_metrics_bytes_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let base: serde_json::Value = serde_json::from_str(tiny_config()).unwrap();
    let mut two = base.clone();
    two["protocol"]["workers"] = serde_json::json!(2);
    write(&dir.path().join("one.json"), &base.to_string());
    write(&dir.path().join("two.json"), &two.to_string());

    assert!(pfl(&["run", "--config", "one.json", "--out", "w1"], dir.path()).status.success());
    assert!(pfl(&["run", "--config", "two.json", "--out", "w2"], dir.path()).status.success());
    for f in ["metrics_seed1.csv", "metrics_seed2.csv"] {
        let a = std::fs::read(dir.path().join("w1").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("w2").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs across worker counts");
    }
}

#[test]
fn invalid_configs_exit_1_with_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();

    write(&dir.path().join("typo.json"), r#"{"dataset": {"kind": "synth"}, "lrr": 0.1}"#);
    let out = pfl(&["run", "--config", "typo.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lrr"));

    write(
        &dir.path().join("semantic.json"),
        r#"{"dataset": {"kind": "synth"},
            "attack": {"kind": "gen_bapfl", "n_malicious": 1}}"#,
    );
    let out = pfl(&["run", "--config", "semantic.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_malicious"));
}

#[test]
fn io_failures_exit_2_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = pfl(&["run", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    // Output path whose parent is a regular file cannot be created.
    write(&dir.path().join("cfg.json"), tiny_config());
    write(&dir.path().join("blocker"), "not a directory");
    let out = pfl(
        &["run", "--config", "cfg.json", "--out", "blocker/res"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("blocker/res").exists());
}

#[test]
fn partition_stats_histograms_are_consistent_and_track_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = |alpha: f64, out: &str| {
        format!(
            r#"{{
            "dataset": {{"kind": "synth", "classes": 4, "samples_per_class": 250, "side": 8}},
            "partition": {{"n_clients": 10, "alpha": {alpha}}},
            "output_dir": "{out}",
            "seeds": [1]
        }}"#
        )
    };
    write(&dir.path().join("narrow.json"), &cfg(0.5, "narrow"));
    write(&dir.path().join("wide.json"), &cfg(5.0, "wide"));
    write(&dir.path().join("flat.json"), &cfg(1e6, "flat"));

    let read_rows = |name: &str| -> Vec<(usize, Vec<usize>, f64)> {
        let text =
            std::fs::read_to_string(dir.path().join(name).join("partition.csv")).unwrap();
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let n_train: usize = f[1].parse().unwrap();
                let hist: Vec<usize> = f[3..f.len() - 1]
                    .iter()
                    .map(|v| v.parse().unwrap())
                    .collect();
                let entropy: f64 = f[f.len() - 1].parse().unwrap();
                (n_train, hist, entropy)
            })
            .collect()
    };

    for name in ["narrow.json", "wide.json", "flat.json"] {
        let out = pfl(&["partition-stats", "--config", name], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }

    // Histogram rows sum to the per-client train count.
    for (n_train, hist, _) in read_rows("narrow") {
        assert_eq!(hist.iter().sum::<usize>(), n_train);
    }

    // Concentration: alpha -> infinity gives each client ~uniform class mix.
    for (n_train, hist, _) in read_rows("flat") {
        let expect = n_train as f64 / 4.0;
        for h in hist {
            assert!((h as f64 - expect).abs() <= expect * 0.35 + 3.0);
        }
    }

    // Heterogeneity: smaller alpha concentrates labels, lowering entropy.
    let mean = |rows: &[(usize, Vec<usize>, f64)]| {
        rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64
    };
    assert!(mean(&read_rows("narrow")) < mean(&read_rows("wide")));
}

#[test]
fn table_orders_attacks_and_echoes_summary_values() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |attack: &str, asr: Option<f64>, mta: f64| {
        serde_json::json!({
            "config_hash": format!("hash-{attack}"),
            "dataset": "synth",
            "pfl_method": "fedper",
            "alpha": 0.5,
            "attack": attack,
            "defense": "none",
            "seeds": [1],
            "mean_asr": asr,
            "mean_mta": mta,
            "per_seed": [{"seed": 1, "asr": asr, "mta": mta}]
        })
    };
    // Written shuffled; the table must re-sort.
    for (i, (attack, asr)) in [
        ("gen_bapfl", Some(82.5)),
        ("none", None),
        ("bapfl_plus", Some(61.8125)),
        ("blackbox", Some(4.0)),
        ("bapfl", Some(50.0)),
    ]
    .iter()
    .enumerate()
    {
        let sub = dir.path().join(format!("run{i}"));
        std::fs::create_dir(&sub).unwrap();
        write(
            &sub.join("summary.json"),
            &mk(attack, *asr, 90.0 + i as f64).to_string(),
        );
    }

    let out = pfl(&["table", "run*/summary.json"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    let row = |label: &str| {
        lines
            .iter()
            .position(|l| l.starts_with(label) && !l.starts_with(&format!("{label}+")))
            .unwrap_or_else(|| panic!("row {label} missing in:\n{stdout}"))
    };
    assert!(row("No-Attack") < row("Black-box"));
    assert!(row("Black-box") < row("BapFL"));
    assert!(row("BapFL") < row("BapFL+"));
    assert!(row("BapFL+") < row("Gen-BapFL"));

    // CSV echoes the stored f64s without rounding.
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(csv.contains("bapfl_plus,none,fedper,0.5,synth,61.8125,92"));

    // A second summary for the same cell is ambiguous.
    let dup = dir.path().join("dup");
    std::fs::create_dir(&dup).unwrap();
    write(&dup.join("summary.json"), &mk("bapfl", Some(1.0), 1.0).to_string());
    let out = pfl(
        &["table", "run*/summary.json", "dup/summary.json", "--out", "t2.csv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biobj-tune"))
        .args(args)
        .env_remove("BIOBJ_TUNE_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn configs_lists_every_pair() {
    let o = run(&["configs", "--cores", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 3);

    let o = run(&["configs", "--cores", "48"]);
    let lines = stdout(&o);
    assert!(lines.lines().all(|l| {
        let (g, t) = l.split_once(',').unwrap();
        g.parse::<usize>().unwrap() * t.parse::<usize>().unwrap() <= 48
    }));
    assert!(lines.contains("\n48,1\n") || lines.ends_with("48,1\n"));
}

#[test]
fn default_core_count_is_detected() {
    let o = run(&["configs"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("1,1\n"));
}

#[test]
fn pareto_prints_table_front_and_writes_plotdata() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture("table_16384.csv");
    let o = run(&[
        "pareto",
        "--input",
        input.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--format",
        "plotdata",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("time_s,dynamic_energy_j,configurations")
    );
    assert_eq!(
        out.lines().skip(1).collect::<Vec<_>>(),
        [
            "14.112,824.2743,(1,48)",
            "14.177,740.0211,(4,12)",
            "14.244,729.1005,(8,6)",
            "14.772,631.3098,(3,16)",
            "15.057,528.0411,(12,4)",
        ]
    );
    let front = std::fs::read_to_string(dir.path().join("front.dat")).unwrap();
    assert_eq!(front.lines().count(), 5);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("samples.dat"))
            .unwrap()
            .lines()
            .count(),
        10
    );
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn fit_energy_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("fit.json");
    let input = fixture("table_17408.csv");
    let o = run(&[
        "fit-energy",
        "--input",
        input.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(stdout(&o).contains("spearman"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    for key in ["beta1", "beta2", "beta3", "residual_norm"] {
        assert!(v["model"][key].as_f64().unwrap() >= 0.0, "{key}");
    }
    assert_eq!(v["rows"].as_array().unwrap().len(), 10);
    assert!(v["spearman"].is_number());
}

#[test]
fn kernels_selftest_passes() {
    let o = run(&["kernels", "selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}

#[test]
fn gemm_sweep_on_synthetic_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report");
    let o = run(&[
        "sweep",
        "--kernel",
        "gemm_h",
        "--n",
        "256",
        "--cores",
        "4",
        "--energy",
        "synthetic:unit",
        "--out",
        out.to_str().unwrap(),
        "--max-reps",
        "200",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for name in ["report.json", "samples.csv", "front.dat", "samples.dat"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["status"]["state"], "complete");
    assert_eq!(v["samples"].as_array().unwrap().len(), 8);
    assert_eq!(v["provenance"]["spec"]["workload"]["kernel_id"], "gemm_h");
}

#[test]
fn sweep_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sweep.toml");
    let out = dir.path().join("out");
    std::fs::write(
        &config,
        format!("kernel = \"stub\"\ncores = 3\nenergy = \"synthetic:product\"\nformat = \"csv\"\nout = {:?}\n", out),
    )
    .unwrap();
    let o = run(&["sweep", "--config", config.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let csv = std::fs::read_to_string(out.join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(!out.join("report.json").exists());
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        &["bogus"][..],
        &["configs", "--cores", "x"],
        &["pareto"],
        &["sweep", "--kernel", "gemm_q"],
        &["sweep", "--format", "xml"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["sweep", "--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "g,t,time_s,dynamic_energy_j\n1,1,1.0,oops\n").unwrap();
    let o = run(&["pareto", "--input", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.csv:2:"));

    assert_eq!(
        run(&["pareto", "--input", "/nonexistent.csv"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["configs", "--cores", "0"]).status.code(), Some(2));
    assert_eq!(
        run(&["sweep", "--kernel", "fft_h", "--n", "12", "--cores", "1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["sweep", "--kernel", "stub", "--cores", "0"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn incomplete_sweep_still_writes_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // Four cores need more virtual time than the replayed session covers, so
    // the sweep runs off the end of the trace part way through.
    let replay = format!("replay:{}", fixture("replay_session.csv").display());
    let o = run(&[
        "sweep",
        "--kernel",
        "stub",
        "--cores",
        "4",
        "--energy",
        &replay,
        "--static-power-w",
        "100",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incomplete"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["status"]["state"], "incomplete");
    let measured = v["samples"].as_array().unwrap().len();
    assert!(measured > 0 && measured < 8, "{measured}");
}

#[test]
fn sweep_with_no_samples_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // Static power above every replayed level makes the first reading negative.
    let replay = format!("replay:{}", fixture("replay_session.csv").display());
    let o = run(&[
        "sweep",
        "--kernel",
        "stub",
        "--cores",
        "2",
        "--energy",
        &replay,
        "--static-power-w",
        "1000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("report.json").exists());
}

use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
num_drops = 3
samples_per_drop = 40

[scenario]
num_aps = 4
antennas_per_ap = 1
num_users = 4
cluster_size = 2
seed = 11
"#;

fn wsr_sim(dir: &Path, extra: &[&str]) -> std::process::Output {
    let config = dir.join("config.toml");
    std::fs::write(&config, CONFIG).unwrap();
    Command::new(env!("CARGO_BIN_EXE_wsr-sim"))
        .arg("--config")
        .arg(&config)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn writes_results_and_cdf_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = wsr_sim(
        dir.path(),
        &["--output", out.to_str().unwrap(), "--drops", "2"],
    );
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for name in [
        "results.json",
        "cdf_ergodic.csv",
        "cdf_uatf.csv",
        "timings.csv",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let cdf = std::fs::read_to_string(out.join("cdf_ergodic.csv")).unwrap();
    assert!(cdf.starts_with("group,value_bits,cdf_level\n"));
    // 2 drops x (4 algorithms x 3 cases - 1 unsupported pair)
    assert_eq!(cdf.lines().count(), 1 + 2 * 11);
    let uatf = std::fs::read_to_string(out.join("cdf_uatf.csv")).unwrap();
    assert_eq!(uatf.lines().count(), 1 + 2 * 9);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = wsr_sim(
        dir.path(),
        &[
            "--output",
            out.to_str().unwrap(),
            "--algorithms",
            "lsfd,power-only",
            "--cases",
            "small-cells",
            "--seed",
            "5",
        ],
    );
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let results = std::fs::read_to_string(out.join("results.json")).unwrap();
    assert!(results.contains("\"seed\": 5"));
    let timings = std::fs::read_to_string(out.join("timings.csv")).unwrap();
    assert_eq!(timings.lines().count(), 1 + 3 * 2);
    assert!(timings.lines().skip(1).all(|l| l.contains(",small-cells,")));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let status = wsr_sim(
            dir.path(),
            &["--output", out.to_str().unwrap(), "--threads", threads],
        );
        assert!(status.status.success());
    }
    for name in ["results.json", "cdf_ergodic.csv", "cdf_uatf.csv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for extra in [
        vec!["--output", out, "--algorithms", "magic"],
        vec!["--output", out, "--drops", "0"],
        vec![
            "--output",
            out,
            "--algorithms",
            "short-term-wmmse",
            "--cases",
            "distributed",
        ],
        vec!["--output", out, "--threads", "0"],
    ] {
        let status = wsr_sim(dir.path(), &extra);
        assert!(!status.status.success(), "{extra:?} should fail");
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_wsr-sim"))
        .args(["--config", "/nonexistent/config.toml"])
        .output()
        .unwrap();
    assert!(!missing.status.success());
}

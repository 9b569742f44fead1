use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn socsit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_socsit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SHORT: &str = "seed = 9\nduration = 20000\ndt = 500\n[mobility]\nn_agents = 6\n";

#[test]
fn simulate_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SHORT);
    let o = socsit(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", "out", "--log-deliveries"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("bound_violations=0"));
    for f in ["metrics.csv", "partitions.csv", "summary.csv", "emissions.log", "deliveries.log", "trace.csv", "ground_truth.csv"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f} missing");
    }
    let leftovers: Vec<_> = std::fs::read_dir(tmp.path().join("out"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".partial"))
        .collect();
    assert!(leftovers.is_empty());
}

#[test]
fn jsonl_and_gzip_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SHORT);
    let o = socsit(
        &["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", "out", "--format", "jsonl", "--gzip"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(tmp.path().join("out/metrics.jsonl")).unwrap();
    assert!(metrics.lines().next().unwrap().starts_with('{'));
    assert!(tmp.path().join("out/emissions.log.gz").exists());
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SHORT);
    let run = |seed: &str, out: &str| {
        let o = socsit(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out-dir", out], tmp.path());
        assert_eq!(o.status.code(), Some(0));
        std::fs::read(tmp.path().join(out).join("trace.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "a"), run("2", "c"));
}

#[test]
fn replay_fixture_and_offline_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenarios().join("three_agents.toml");
    let o = socsit(&["replay", "--config", cfg.to_str().unwrap(), "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let truth = scenarios().join("fixtures/three_agents_ground_truth.csv");
    let o = socsit(
        &["metrics", "--truth", truth.to_str().unwrap(), "--protocol", truth.to_str().unwrap(), "--out", "m.csv"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ari=1.0000"));
    assert!(tmp.path().join("m.csv").exists());

    let o = socsit(
        &["metrics", "--truth", truth.to_str().unwrap(), "--protocol", "out/partitions.csv"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn replay_accepts_trace_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = scenarios().join("fixtures");
    let o = socsit(
        &[
            "replay",
            "--trace",
            fx.join("triads_trace.csv").to_str().unwrap(),
            "--ground-truth",
            fx.join("triads_ground_truth.csv").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("samples=120"));
}

#[test]
fn sweep_prints_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SHORT);
    let o = socsit(
        &["sweep", "--config", cfg.to_str().unwrap(), "--param", "moving_group_ratio", "--values", "0,0.5,1", "--out-dir", "sw"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 4);
    let csv = std::fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(tmp.path(), "bad.toml", "dt = 300\n");
    for args in [
        vec!["simulate", "--config", "missing.toml"],
        vec!["simulate", "--config", bad.to_str().unwrap()],
        vec!["sweep", "--param", "n_agents", "--values", "2.5"],
        vec!["sweep", "--param", "colour", "--values", "1"],
        vec!["replay"],
        vec!["nonsense"],
    ] {
        let o = socsit(&args, tmp.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let broken = write(tmp.path(), "broken.csv", "time,situation_id,member_ids\n0.000,0,1;x\n");
    let o = socsit(&["metrics", "--truth", broken.to_str().unwrap(), "--protocol", broken.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SHORT);
    write(tmp.path(), "taken", "not a directory");
    let o = socsit(&["simulate", "--config", cfg.to_str().unwrap(), "--out-dir", "taken"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

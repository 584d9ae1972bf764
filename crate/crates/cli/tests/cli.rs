use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const LOCK: &str = r#"
[run]
name = "lock"
seeds = 3
out = "out"

[env]
kind = "lock"
episodes = 300
variation = { kind = "abrupt", period = 100 }

[agent]
kind = "restartq-ucb"
delta = 1.9
epoch_len = 100
"#;

fn nsrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsrl"))
        .args(args)
        .current_dir(cwd)
        .env("NSRL_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(str::to_string)
        .collect()
}

#[test]
fn run_writes_traces_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lock.toml", LOCK);
    let out = nsrl(&["run", "--config", &cfg], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for id in 0..3 {
        let trace = dir.path().join(format!("out/lock-run{id:03}.csv"));
        let rows = data_rows(&trace);
        assert_eq!(rows.len(), 300);
        let first: Vec<&str> = rows[0].split(',').collect();
        assert_eq!(first[0], id.to_string());
        assert_eq!(first[1], id.to_string());
        assert_eq!(first[2], "1");
    }
    let header = fs::read_to_string(dir.path().join("out/lock-run000.csv")).unwrap();
    assert!(header
        .lines()
        .any(|l| l.starts_with("run_id,seed,episode,episode_reward,cumulative_reward,cumulative_regret,epoch_index,arm")));
    let agg = dir.path().join("out/lock-aggregate.csv");
    assert_eq!(data_rows(&agg).len(), 300);
    assert!(fs::read_to_string(&agg)
        .unwrap()
        .contains("episode,mean_cum_reward,std_cum_reward,mean_cum_regret,std_cum_regret"));
}

#[test]
fn runs_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lock.toml", LOCK);
    let a = nsrl(&["run", "--config", &cfg, "--out", "a", "--record-policy"], dir.path());
    let b = nsrl(&["run", "--config", &cfg, "--out", "b", "--record-policy"], dir.path());
    assert!(a.status.success() && b.status.success());
    for name in ["lock-run000.csv", "lock-run002.csv", "lock-aggregate.csv"] {
        let x = fs::read(dir.path().join("a").join(name)).unwrap();
        let y = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn single_seed_has_zero_spread() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lock.toml", LOCK);
    let out = nsrl(&["run", "--config", &cfg, "--seeds", "1", "--record-policy"], dir.path());
    assert!(out.status.success());
    for row in data_rows(&dir.path().join("out/lock-aggregate.csv")) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn version_and_help() {
    let dir = tempfile::tempdir().unwrap();
    let out = nsrl(&["--version"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
    let out = nsrl(&["run", "--help"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("--record-policy"));
}

#[test]
fn bad_configs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write_config(dir.path(), "typo.toml", &LOCK.replace("seeds = 3", "sedes = 3"));
    let out = nsrl(&["run", "--config", &typo], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = nsrl(&["run", "--config", "missing.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.toml"));

    let bad_jao = write_config(dir.path(), "jao.toml", "[env]\nkind = \"jao\"\nstates = 3\n");
    assert!(!nsrl(&["oracle", "budgets", "--config", &bad_jao], dir.path()).status.success());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn oracle_budgets_report_the_lock_variation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lock.toml", LOCK);
    let out = nsrl(&["oracle", "budgets", "--config", &cfg], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    // two swaps of the 1 / 0.25 endpoint rewards
    assert!(text.contains("delta_r = 1.5\n"), "{text}");
    assert!(text.contains("delta_p = 0\n"));
    assert_eq!(text.lines().filter(|l| l.starts_with("epoch ")).count(), 3);
}

#[test]
fn oracle_regret_replays_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "lock.toml", LOCK);
    let run = nsrl(&["run", "--config", &cfg, "--record-policy"], dir.path());
    assert!(run.status.success());
    let trace = dir.path().join("out/lock-run001.csv");
    let out = nsrl(&["oracle", "regret", "--config", &cfg, "--trace", trace.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let regret: f64 = text.trim().rsplit("= ").next().unwrap().parse().unwrap();
    let last = data_rows(&trace).last().unwrap().clone();
    let from_trace: f64 = last.split(',').nth(5).unwrap().parse().unwrap();
    assert!((regret - from_trace).abs() <= 1e-9 * regret.max(1.0));

    // a trace from a different config is rejected
    let other = write_config(dir.path(), "other.toml", &LOCK.replace("delta = 1.9", "delta = 0.5"));
    let out = nsrl(&["oracle", "regret", "--config", &other, "--trace", trace.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let dir = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let out = nsrl(&["oracle", "budgets", "--config", path.to_str().unwrap()], dir.path());
        assert!(out.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&out.stderr));
        n += 1;
    }
    assert!(n >= 8);
}

#[test]
fn full_scale_lock_config_writes_thirty_traces() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/abrupt-restartq-ucb.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = nsrl(&["run", "--config", cfg.to_str().unwrap(), "--out", "full"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = fs::read_dir(dir.path().join("full")).unwrap().map(|e| e.unwrap().path()).collect();
    let traces: Vec<_> = files.iter().filter(|p| p.to_str().unwrap().contains("-run")).collect();
    assert_eq!(traces.len(), 30);
    assert_eq!(files.len(), 31);
    for t in traces.iter().take(3) {
        assert_eq!(data_rows(t).len(), 5000);
    }
}

use std::path::Path;
use std::process::{Command, Output};

use dcgrid::model::ScenarioConfig;
use dcgrid::orchestrator::{RunMetrics, DELAYS, METRICS, PLANT_TRACE, PLAN_LOG};

fn dcgrid(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcgrid")).args(args).current_dir(cwd).output().unwrap()
}

fn scenario(dir: &Path, name: &str, edit: impl FnOnce(&mut ScenarioConfig)) -> String {
    let mut c = ScenarioConfig::table1(4);
    edit(&mut c);
    let path = dir.join(name);
    c.save(&path).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_artifacts_and_prints_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario(dir.path(), "s.toml", |_| {});
    let out = dcgrid(&["run", &file, "--hours", "0.5", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: RunMetrics = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(printed.mode, "virtual");
    assert_eq!(printed.samples, 180);
    for f in [METRICS, PLANT_TRACE, PLAN_LOG, DELAYS] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
}

#[test]
fn compare_reports_deltas_and_rejects_other_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario(dir.path(), "s.toml", |_| {});
    for (out, class) in [("fast", "DS3"), ("slow", "DS0")] {
        let o = dcgrid(&["run", &file, "--hours", "0.5", "--class", class, "--congestion", "0.5", "--out", out], dir.path());
        assert!(o.status.success());
    }
    let o = dcgrid(&["compare", "fast", "slow"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("stale_ticks") && text.contains("delay_mean_ms"), "{text}");

    let other = scenario(dir.path(), "t.toml", |c| c.rng_seed = 99);
    assert!(dcgrid(&["run", &other, "--hours", "0.25", "--out", "other"], dir.path()).status.success());
    let o = dcgrid(&["compare", "fast", "other/metrics.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn violations_and_errors_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    // an undersized grid branch cannot hold the bus up
    let file = scenario(dir.path(), "weak.toml", |c| {
        c.spec.converters.grid_limit_w = 300.0;
    });
    let o = dcgrid(&["run", &file, "--hours", "0.25", "--out", "w"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));

    let o = dcgrid(&["run", "missing.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let bad = scenario(dir.path(), "bad.toml", |c| c.congestion = 1.0);
    let o = dcgrid(&["run", &bad], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("congestion"));
}

#[test]
fn calibrate_writes_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let o = dcgrid(&["calibrate", "--messages", "500", "--out", "cal.csv"], dir.path());
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("cal.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn scenario_command_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    assert!(dcgrid(&["scenario", "--out", "x.toml", "--seed", "7"], dir.path()).status.success());
    let c = ScenarioConfig::load(dir.path().join("x.toml")).unwrap();
    assert_eq!(c.fingerprint(), ScenarioConfig::table1(7).fingerprint());
}

#[test]
fn realtime_run_supervises_three_processes() {
    let dir = tempfile::tempdir().unwrap();
    let file = scenario(dir.path(), "rt.toml", |c| {
        c.sim.duration_s = 1200.0;
        c.time_scale = 600.0;
    });
    let o = dcgrid(&["run", &file, "--mode", "realtime", "--out", "rt"], dir.path());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(o.status.code().is_some_and(|c| c < 2), "{stderr}");
    let m = RunMetrics::load(&dir.path().join("rt").join(METRICS)).unwrap();
    assert_eq!(m.mode, "realtime");
    assert!(m.ticks >= 3, "{m:?}");
    assert!(m.samples >= 100, "{m:?}");
    let d = m.delay.as_ref().expect("proxy delay records");
    assert!(d.mean_ms > 1.9 && d.mean_ms < 3.0, "{d:?}");
    assert_eq!(m.soc_violations, 0);
}

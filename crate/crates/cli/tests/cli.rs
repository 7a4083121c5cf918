use std::process::Command;

fn gridmpc(dir: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gridmpc"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn missing_artifacts_name_the_command_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = gridmpc(dir.path(), &["identify"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gridmpc gen-data"), "{err}");
}

#[test]
fn gen_data_then_perfect_foresight_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gridmpc(dir.path(), &["gen-data"]).status.success());
    let data = std::fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 169);
    assert!(gridmpc(dir.path(), &["identify"]).status.success());
    let out = gridmpc(dir.path(), &["--perfect-foresight", "--mode", "benchmark,mpc", "dispatch"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["schedule_benchmark.csv", "schedule_mpc.csv"] {
        let csv = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(csv.starts_with("hour,load,grid,pv,wind,charge,discharge,soc,cost\n"));
        assert_eq!(csv.lines().count(), 25);
    }
}

#[test]
fn rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 1\nbogus = 2\n").unwrap();
    let out = gridmpc(dir.path(), &["--config", cfg.to_str().unwrap(), "gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

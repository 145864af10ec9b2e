use std::process::Command;

const CONFIG: &str = r#"
env = "gridworld"
side = 4
state_dim = 6
n = 80
gamma = 0.9
lambdas = [1e-6, 1e-3]
ratios = [0.5, 1.0, 2.0]
num_instances = 4
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rflstd"))
}

#[test]
fn sweep_twice_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let mut outputs = Vec::new();
    for (k, jobs) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        let status = bin()
            .args(["sweep", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .env_remove("RFLSTD_SEED_OFFSET")
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("sweep.csv")).unwrap());
        assert!(out.join("summary.json").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("env,"));
}

#[test]
fn point_and_selftest_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = bin()
        .args(["point", "--config"])
        .arg(&cfg)
        .args(["--ratio", "1.5", "--lambda", "1e-3", "--seed", "2"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("delta"));
    assert!(text.contains("true MSBE"));

    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "env = \"synthetic\"\nbogus = 1\n").unwrap();
    let status = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(!status.success());
}

use std::path::Path;
use std::process::{Command, Output};

fn atlasd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atlasd")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write_config(dir: &Path) -> String {
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"seed = 0
output = "{}"

[task]
kind = "l1"
n = 80

[predictor]
kind = "mlp"
hidden = [8]

[discovery]
k = 0
n_cosets = 4
top_q = 4
predictor_epochs = 2
coset_steps = 3
holdout = 16
"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    cfg.display().to_string()
}

#[test]
fn gen_data_writes_header_and_blob() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data/heat.toml");
    let o = atlasd(&[
        "gen-data", "heat", "--out", out.to_str().unwrap(), "--seed", "1", "--set", "grid=8", "--set", "n_samples=2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::metadata(dir.path().join("data/heat.bin")).unwrap().len(), 2048);
    let header = std::fs::read_to_string(&out).unwrap();
    assert!(header.contains("seed = 1"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a", "b"] {
        let out = dir.path().join(format!("{name}.toml"));
        let o = atlasd(&["gen-data", "arctan", "--out", out.to_str().unwrap(), "--seed", "4", "--set", "n=50"]);
        assert_eq!(code(&o), 0);
    }
    let a = std::fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.bin")).unwrap());
    assert_eq!(a.len(), 50 * 3 * 8);
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(code(&atlasd(&["pipeline", "--config", &cfg])), 1);
    assert_eq!(code(&atlasd(&["gen-data", "l1", "--out", "x.toml"])), 1);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = atlasd(&["pipeline", "--config", &cfg, "--seed", "0", "--set", "discovery.top_q=99"]);
    assert_eq!(code(&o), 1);
    let o = atlasd(&["pipeline", "--config", "/nonexistent.toml", "--seed", "0"]);
    assert_eq!(code(&o), 1);
    let o = atlasd(&["discover-gen", "--config", &cfg, "--seed", "0"]);
    assert_eq!(code(&o), 1, "missing predictors file");
    assert_eq!(code(&atlasd(&["no-such-command"])), 1);
    assert_eq!(code(&atlasd(&["--help"])), 0);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = atlasd(&["pipeline", "--config", &cfg, "--seed", "0", "--set", "discovery.predictor_lr=1e300"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train-predictors"));
    let manifest = dir.path().join("out/manifest.json");
    assert!(manifest.is_file(), "partial manifest is kept");
    assert_eq!(code(&atlasd(&["verify", manifest.to_str().unwrap()])), 2);
}

#[test]
fn stages_pipeline_heatmaps_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    for stage in ["train-predictors", "discover-gen", "discover-cosets"] {
        let o = atlasd(&[stage, "--config", &cfg, "--seed", "3"]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = dir.path().join("out/manifest.json");
    let staged = std::fs::read_to_string(&manifest).unwrap();
    let o = atlasd(&["pipeline", "--config", &cfg, "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&manifest).unwrap(), staged);

    let o = atlasd(&["verify", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let heat = dir.path().join("maps");
    let o = atlasd(&["export-heatmaps", manifest.to_str().unwrap(), "--out", heat.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let bytes = std::fs::read(heat.join("coset_0.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
}

#[test]
fn identical_runs_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let manifest = dir.path().join("out/manifest.json");
    let mut seen = Vec::new();
    for _ in 0..2 {
        assert_eq!(code(&atlasd(&["pipeline", "--config", &cfg, "--seed", "5"])), 0);
        seen.push(std::fs::read(&manifest).unwrap());
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn select_k_needs_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(code(&atlasd(&["train-predictors", "--config", &cfg, "--seed", "0"])), 0);
    assert_eq!(code(&atlasd(&["select-k", "--config", &cfg, "--seed", "0"])), 1);
    let o = atlasd(&[
        "select-k", "--config", &cfg, "--seed", "0", "--set", "select.k_max=1", "--set", "select.runs=2", "--set", "discovery.generator_steps=5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("k = 1"));
    assert!(dir.path().join("out/dimension.json").is_file());
}

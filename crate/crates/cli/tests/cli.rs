use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_arrival-eta");

const SMALL: &str = r#"
seed = 3

[scenario]
n_voyages = 120

[model]
kernel_size = 3
filters = 3
layers = 2

[train]
epochs = 1
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn run(config: &str, out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn ok(config: &str, out: &Path, args: &[&str]) -> String {
    let o = run(config, out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn chain(config: &str, out: &Path) {
    for cmd in ["gen", "contour", "dataset", "train", "eval"] {
        ok(config, out, &[cmd]);
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn chain_writes_hashed_artifacts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    chain(&cfg, &out);

    let manifest = json(&out.join("manifest.json"));
    let hash = manifest["model.json"].as_str().unwrap().to_string();
    for f in [
        "contour.geojson",
        "contour_points.csv",
        "dataset.csv",
        "dataset.json",
        "loss.csv",
        "metrics.json",
        "metrics.txt",
        "histogram.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
        assert_eq!(manifest[f], hash.as_str(), "{f}");
    }
    let scenario_manifest = json(&out.join("scenario/manifest.json"));
    assert_eq!(scenario_manifest["ais.csv"], hash.as_str());
    assert_eq!(json(&out.join("metrics.json"))["config_hash"], hash.as_str());
    assert_eq!(json(&out.join("model.json"))["config_hash"], hash.as_str());
    assert!(fs::read_to_string(out.join("metrics.txt")).unwrap().contains(&hash));

    let text = ok(&cfg, &out, &["ablate"]);
    let ablation = json(&out.join("ablation.json"));
    let rows = ablation["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    let maes: Vec<f64> = rows.iter().map(|r| r["mae"].as_f64().unwrap()).collect();
    assert!(maes.windows(2).all(|w| w[0] <= w[1]), "{maes:?}");
    for name in ["full-discrete", "full-continuous", "no-weather", "no-cst"] {
        assert!(text.contains(name), "{name} missing from\n{text}");
    }
}

#[test]
fn seed_flag_overrides_config_and_changes_hash() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&cfg, &a, &["gen"]);
    ok(&cfg, &b, &["--seed", "4", "gen"]);
    let ha = json(&a.join("scenario/manifest.json"))["ais.csv"].clone();
    let hb = json(&b.join("scenario/manifest.json"))["ais.csv"].clone();
    assert_ne!(ha, hb);
    assert_ne!(
        fs::read(a.join("scenario/ais.csv")).unwrap(),
        fs::read(b.join("scenario/ais.csv")).unwrap()
    );
    let printed = ok(&cfg, &b, &["--seed", "4", "config"]);
    assert!(printed.starts_with("seed = 4\n"), "{printed}");
}

#[test]
fn eval_refuses_artifacts_from_another_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    chain(&cfg, &out);

    let o = run(&cfg, &out, &["--seed", "99", "eval"]);
    assert_eq!(o.status.code(), Some(4));
    let err = stderr(&o);
    assert!(err.starts_with("error[hash-mismatch]:"), "{err}");
    assert!(err.contains("model.json"), "{err}");

    ok(&cfg, &out, &["--seed", "99", "--allow-hash-mismatch", "eval"]);
}

#[test]
fn eval_reports_window_length_mismatch() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    chain(&cfg, &out);

    let short = write_config(tmp.path(), "short.toml", &format!("{SMALL}\n[dataset]\nm = 8\n"));
    ok(&short, &out, &["--allow-hash-mismatch", "dataset"]);
    let o = run(&short, &out, &["--allow-hash-mismatch", "eval"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.lines().any(|l| l.starts_with("error[config]:")), "{err}");
    assert!(err.contains("m = 10") && err.contains("m = 8"), "{err}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    chain(&cfg, &a);
    chain(&cfg, &b);
    for f in ["contour.geojson", "dataset.csv", "model.json", "metrics.json", "metrics.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "[train]\nepochz = 3\n");
    let o = run(&cfg, &tmp.path().join("out"), &["gen"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("bad.toml") && err.contains("epochz") && err.contains("line 2"), "{err}");
}

#[test]
fn missing_inputs_exit_with_their_own_status() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("empty");
    for cmd in ["contour", "train", "eval"] {
        let o = run(&cfg, &out, &[cmd]);
        assert_eq!(o.status.code(), Some(3), "{cmd}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error[missing-input]:"), "{cmd}");
    }
}

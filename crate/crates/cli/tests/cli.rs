use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "experiments": [
    {
      "id": "fpa_poa",
      "kind": "poa",
      "format": { "kind": "first_price" },
      "prior": { "kind": "independent", "per_player": [{ "kind": "uniform", "lo": 0, "hi": 1 }, { "kind": "uniform", "lo": 0, "hi": 1 }] },
      "strategy": { "kind": "closed_form", "function": "linear", "slope": 0.5 },
      "samples": 5000,
      "seed": 3,
      "bound": 1,
      "tolerance": 0.01
    },
    {
      "id": "half_value",
      "kind": "smooth_check",
      "format": { "kind": "first_price" },
      "deviation": { "rule": "halfValueFpa" },
      "smoothness": { "lambda": 0.5, "mu": 1 },
      "cases": { "valuations": [0, 0.5, 1], "players": 2, "bid_step": 0.5 },
      "samples": 100,
      "seed": 1,
      "bound": 0.5,
      "tolerance": 1e-9
    }
  ]
}
"#;

fn poa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poa")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn suite_passes_and_is_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let out = dir.path().join("out.csv");
    let run = || {
        let o = poa(&["suite", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(&out).unwrap()
    };
    let first = run();
    assert!(first.starts_with("experiment,seed,samples,estimate,stderr,bound,tolerance,pass\n"));
    assert_eq!(first.lines().count(), 3);
    assert!(first.lines().nth(1).unwrap().starts_with("fpa_poa,"));
    assert_eq!(run(), first);
    let meta = fs::read_to_string(dir.path().join("out.csv.meta.json")).unwrap();
    assert!(meta.contains("instance PoA"));
}

#[test]
fn subcommand_filters_by_kind_and_prints_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let o = poa(&["smooth-check", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.contains("half_value,"));

    let o = poa(&["learn", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overrides_change_the_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "small.json", SMALL);
    let o = poa(&["poa", "--config", config.to_str().unwrap(), "--seed", "9", "--samples", "2000"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("fpa_poa,9,2000,"));
}

#[test]
fn tampered_bound_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.json", &SMALL.replace(r#""bound": 1,"#, r#""bound": 0.6,"#));
    let o = poa(&["suite", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("fpa_poa,") && l.ends_with(",false")));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL fpa_poa"));
}

#[test]
fn malformed_config_exits_two_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "broken.json", &SMALL.replace(r#""samples": 5000"#, r#""samples": "many""#));
    let o = poa(&["suite", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("experiments[0].samples"), "{err}");
    assert!(err.contains("line 9"), "{err}");

    let o = poa(&["suite", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

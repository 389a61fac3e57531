use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "phantom": { "image_size": 32, "periphery_band_px": 2 },
  "screening": { "n_polyp": 12, "n_normal": 12, "test_fraction": 0.25, "pretext_polyps": 6, "pretext_normals": 6 },
  "characterization_data": { "n_neoplastic": 4, "n_non_neoplastic": 6, "augment_factor": 2, "test_fraction": 0.3 },
  "recognizer": {
    "spec": { "image_size": 32 },
    "pretrain": { "max_epochs": 2 },
    "finetune": { "max_epochs": 2 }
  },
  "segmenter": {
    "spec": { "image_size": 32, "direct_depth": 1, "sub_depth": 1, "base_channels": 4 },
    "train": { "max_epochs": 2 },
    "train_images": 6,
    "test_images": 3
  },
  "characterizer": { "spec": { "image_size": 32 }, "train": { "max_epochs": 2 } },
  "seed": 9
}"#;

fn cce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cce")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs a command that must succeed and print exactly one line.
fn ok(args: &[&str]) -> String {
    let o = cce(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1, "{args:?} printed {out:?}");
    out.trim().to_string()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn unknown_flag_prints_usage() {
    let o = cce(&["generate", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn run_without_models_names_the_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), TINY);
    let c = c.to_str().unwrap();
    ok(&["generate", "--config", c]);
    let o = cce(&["run", "--config", c]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("recognizer.cce1") && err.contains("train recognizer"), "{err}");
    assert!(stdout(&o).is_empty());
}

#[test]
fn bad_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    for text in [r#"{"seed": 1, "colour": "red"}"#, r#"{"screening": {"test_fraction": 1.5}}"#, "not json"] {
        let c = config(dir.path(), text);
        let o = cce(&["generate", "--config", c.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{text}: {}", stderr(&o));
    }
    let o = cce(&["generate", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_with_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), TINY);
    let c = c.to_str().unwrap();
    ok(&["generate", "--config", c, "--seed", "7"]);
    let first = tree(&dir.path().join("data"));
    ok(&["generate", "--config", c, "--seed", "7"]);
    assert_eq!(first, tree(&dir.path().join("data")));
    ok(&["generate", "--config", c, "--seed", "8"]);
    assert_ne!(first, tree(&dir.path().join("data")));
}

#[test]
fn published_matrix_passes() {
    let line = ok(&["check-matrix"]);
    assert!(line.contains("total 280") && line.contains("78/33/117/52"), "{line}");
}

#[test]
fn perturbed_matrix_names_the_cell() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.json");
    std::fs::write(&p, r#"{"counts": [[36, 1, 0, 0], [17, 1, 1, 0], [25, 26, 75, 14], [0, 5, 42, 38]]}"#).unwrap();
    let o = cce(&["check-matrix", "--matrix", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("cell (cce=10-20mm, hp=10-20mm) is 75, expected 74"), "{err}");
    assert!(err.contains("total 281"), "{err}");
}

#[test]
fn empty_pairs_pass_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pairs.csv");
    std::fs::write(&p, "id,cce_mm,hp_mm,flagged\n").unwrap();
    let o = cce(&["check-matrix", "--pairs", p.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("total 0"));
    assert!(stderr(&o).contains("warning:"));
}

#[test]
fn tiny_workflow_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), TINY);
    let c = c.to_str().unwrap();
    ok(&["generate", "--config", c]);
    for stage in ["recognizer", "segmenter", "characterizer"] {
        ok(&["train", stage, "--config", c]);
    }
    ok(&["fit-sizer", "--config", c]);
    let line = ok(&["evaluate", "--config", c]);
    assert!(line.starts_with("sensitivity ") && line.contains(" specificity ") && line.contains(" npv "), "{line}");
    assert!(dir.path().join("reports/evaluation.json").is_file());

    let line = ok(&["run", "--config", c]);
    assert!(line.starts_with("run: 6 images"), "{line}");
    let findings = std::fs::read_to_string(dir.path().join("reports/findings.jsonl")).unwrap();
    assert_eq!(findings.lines().count(), 6);
    let summary = std::fs::read(dir.path().join("reports/summary.txt")).unwrap();
    std::fs::remove_file(dir.path().join("reports/summary.txt")).unwrap();
    let line = ok(&["report", "--config", c]);
    assert!(line.starts_with("report: 6 images"), "{line}");
    assert_eq!(summary, std::fs::read(dir.path().join("reports/summary.txt")).unwrap());
}

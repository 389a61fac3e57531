//! End-to-end pipeline on a deliberately tiny configuration: contracts
//! only, not accuracy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cce_core::phantom::{load_record, read_manifest, Split};
use cce_core::pipeline::{self, FindingReport, Models, PipelineConfig};
use cce_core::recognition::{NO_POLYP, POLYP};
use cce_core::Error;

fn tiny_config(root: &Path) -> PipelineConfig {
    let mut cfg: PipelineConfig = serde_json::from_value(serde_json::json!({
        "phantom": { "image_size": 32, "periphery_band_px": 2 },
        "screening": { "n_polyp": 12, "n_normal": 12, "test_fraction": 0.25, "pretext_polyps": 6, "pretext_normals": 6 },
        "characterization_data": { "n_neoplastic": 4, "n_non_neoplastic": 6, "augment_factor": 2, "test_fraction": 0.3 },
        "recognizer": {
            "spec": { "image_size": 32 },
            "pretrain": { "max_epochs": 2, "initial_lr": 0.02 },
            "finetune": { "max_epochs": 2, "initial_lr": 0.02 }
        },
        "segmenter": {
            "spec": { "image_size": 32, "direct_depth": 1, "sub_depth": 1, "base_channels": 4 },
            "train": { "max_epochs": 2, "initial_lr": 0.1 },
            "train_images": 6,
            "test_images": 3
        },
        "characterizer": { "spec": { "image_size": 32 }, "train": { "max_epochs": 2, "initial_lr": 0.02 } },
        "seed": 9
    }))
    .unwrap();
    cfg.validate().unwrap();
    cfg.paths.dataset_dir = root.join("data");
    cfg.paths.model_dir = root.join("models");
    cfg.paths.report_dir = root.join("reports");
    cfg
}

/// A fully trained tiny pipeline shared by the tests below.
fn trained() -> &'static (tempfile::TempDir, PipelineConfig) {
    static T: OnceLock<(tempfile::TempDir, PipelineConfig)> = OnceLock::new();
    T.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        pipeline::generate(&cfg).unwrap();
        pipeline::train_recognizer_stage(&cfg).unwrap();
        pipeline::train_segmenter_stage(&cfg).unwrap();
        pipeline::train_characterizer_stage(&cfg).unwrap();
        pipeline::fit_sizer(&cfg).unwrap();
        (dir, cfg)
    })
}

fn with_reports(cfg: &PipelineConfig, dir: &Path) -> PipelineConfig {
    let mut c = cfg.clone();
    c.paths.report_dir = dir.to_path_buf();
    c
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

/// Forces every frame to one recognition label through the output bias.
fn forced(cfg: &PipelineConfig, label: usize) -> Models {
    let mut m = pipeline::load_models(cfg).unwrap();
    let fc2 = m.recognizer.net.find("fc2").unwrap();
    let bias = &mut m.recognizer.params.layer_mut(fc2).unwrap().bias;
    bias.data_mut()[label] += 1e3;
    m
}

fn test_frames(cfg: &PipelineConfig) -> Vec<cce_core::phantom::PhantomSample> {
    let dir = cfg.screening_dir();
    let m = read_manifest(&dir).unwrap();
    m.records.iter().filter(|r| r.split == Split::Test).map(|r| load_record(&dir, r).unwrap()).collect()
}

#[test]
fn downstream_fields_iff_flagged() {
    let (_, cfg) = trained();
    let mut complete = 0;
    for label in [NO_POLYP, POLYP] {
        let models = forced(cfg, label);
        for s in test_frames(cfg) {
            let f = pipeline::process_image(cfg, &models, &s).finding;
            assert_eq!(f.polyp, Some(label == POLYP));
            let downstream = [
                f.cce_mm.is_some(),
                f.hp_mm.is_some(),
                f.size_bucket.is_some(),
                f.neoplastic.is_some(),
                f.neoplastic_confidence.is_some(),
                f.verdict.is_some(),
                f.saliency_path.is_some(),
                f.spectrum_path.is_some(),
            ];
            if label == NO_POLYP {
                assert!(downstream.iter().all(|d| !d), "{f:?}");
                assert!(f.error.is_none());
            } else if f.error.is_none() {
                assert!(downstream.iter().all(|&d| d), "{f:?}");
                complete += 1;
            }
        }
    }
    assert!(complete > 0, "no flagged frame made it through both branches");
}

#[test]
fn every_emitted_row_respects_gating() {
    let (root, cfg) = trained();
    let c = with_reports(cfg, &root.path().join("gating"));
    for f in pipeline::run(&c).unwrap() {
        if f.polyp != Some(true) {
            assert!(!f.has_size() && !f.has_characterization(), "{f:?}");
        }
        assert_eq!(f.schema_version, pipeline::SCHEMA_VERSION);
    }
}

#[test]
fn branches_do_not_touch_each_other() {
    let (_, cfg) = trained();
    let size_only = {
        let mut c = cfg.clone();
        c.branches.characterization = false;
        c
    };
    let char_only = {
        let mut c = cfg.clone();
        c.branches.size = false;
        c
    };
    let (full, sized, charred) = (forced(cfg, POLYP), forced(&size_only, POLYP), forced(&char_only, POLYP));
    let size_bytes = |f: &FindingReport| serde_json::to_string(&(f.cce_mm, f.hp_mm, f.size_bucket, f.verdict, &f.mask_path)).unwrap();
    let char_bytes = |f: &FindingReport| serde_json::to_string(&(f.neoplastic, f.neoplastic_confidence, &f.spectrum_path)).unwrap();
    for s in test_frames(cfg) {
        let a = pipeline::process_image(cfg, &full, &s).finding;
        let b = pipeline::process_image(&size_only, &sized, &s).finding;
        let c = pipeline::process_image(&char_only, &charred, &s).finding;
        assert_eq!(size_bytes(&a), size_bytes(&b));
        assert_eq!(char_bytes(&a), char_bytes(&c));
        assert!(!b.has_characterization() && !c.has_size());
    }
}

#[test]
fn reruns_are_byte_identical_in_both_modes() {
    let (root, cfg) = trained();
    let first = with_reports(cfg, &root.path().join("r1"));
    let mut second = with_reports(cfg, &root.path().join("r2"));
    second.parallel = true;
    pipeline::run(&first).unwrap();
    pipeline::run(&second).unwrap();
    pipeline::run(&second).unwrap();
    let (a, b) = (tree(&first.paths.report_dir), tree(&second.paths.report_dir));
    assert!(a.contains_key(Path::new("findings.jsonl")) && a.contains_key(Path::new("summary.txt")));
    assert_eq!(a, b);

    let summary = std::fs::read(first.paths.report_dir.join("summary.txt")).unwrap();
    pipeline::report(&first).unwrap();
    assert_eq!(std::fs::read(first.paths.report_dir.join("summary.txt")).unwrap(), summary);
}

#[test]
fn a_corrupt_frame_is_recorded_and_skipped() {
    let (root, cfg) = trained();
    let copy = root.path().join("corrupt");
    let mut c = with_reports(cfg, &copy.join("reports"));
    c.paths.dataset_dir = copy.join("data");
    let src = cfg.screening_dir();
    let dst = c.screening_dir();
    for (rel, bytes) in tree(&src) {
        let p = dst.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        std::fs::write(p, bytes).unwrap();
    }
    let manifest = read_manifest(&dst).unwrap();
    let victim = manifest.records.iter().find(|r| r.split == Split::Test).unwrap();
    std::fs::write(dst.join(&victim.image_path), b"P6\n2 2\n255\n\x00").unwrap();

    let rows = pipeline::run(&c).unwrap();
    assert_eq!(rows.len(), manifest.ids(Split::Test).len());
    let bad: Vec<_> = rows.iter().filter(|r| r.error.as_deref().is_some_and(|e| e.contains("PPM") || e.contains("parse"))).collect();
    assert_eq!(bad.len(), 1, "{rows:?}");
    assert_eq!(bad[0].id, victim.id);
    assert!(bad[0].polyp.is_none());
    assert!(rows.iter().filter(|r| r.id != victim.id).all(|r| r.polyp.is_some()));
}

#[test]
fn missing_models_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (_, trained_cfg) = trained();
    let mut cfg = tiny_config(dir.path());
    cfg.paths.dataset_dir = trained_cfg.paths.dataset_dir.clone();
    match pipeline::run(&cfg) {
        Err(Error::MissingArtifact { stage, path }) => {
            assert_eq!(stage, "train recognizer");
            assert!(path.ends_with("recognizer.cce1"));
        }
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    let e = pipeline::fit_sizer(&cfg).unwrap_err();
    assert!(e.to_string().contains("train segmenter"), "{e}");
    assert!(e.is_validation());
    let e = pipeline::train_recognizer_stage(&tiny_config(dir.path())).unwrap_err();
    assert!(e.to_string().contains("generate"), "{e}");
}

#[test]
fn evaluation_covers_every_stage() {
    let (root, cfg) = trained();
    let c = with_reports(cfg, &root.path().join("eval"));
    let e = pipeline::evaluate(&c).unwrap();
    assert_eq!(e.recognition.total(), 6);
    assert_eq!(e.segmentation.images, 3);
    assert!(e.characterization.total() > 0);
    let text = std::fs::read_to_string(c.paths.report_dir.join("evaluation.json")).unwrap();
    let back: pipeline::Evaluation = serde_json::from_str(&text).unwrap();
    assert_eq!(back, e);
}

#[test]
fn generation_is_reproducible() {
    let (_, cfg) = trained();
    let dir = tempfile::tempdir().unwrap();
    let mut again = cfg.clone();
    again.paths.dataset_dir = dir.path().to_path_buf();
    pipeline::generate(&again).unwrap();
    assert_eq!(tree(&cfg.paths.dataset_dir), tree(dir.path()));
}

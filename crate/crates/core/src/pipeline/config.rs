use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characterization::CharacterizerSpec;
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::phantom::PhantomConfig;
use crate::recognition::RecognizerSpec;
use crate::rng::Rng;
use crate::segmentation::{build_aid_u_net, AidUNetSpec, JudgeConfig};
use crate::sizing::SizeRegressorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset_dir: "data".into(),
            model_dir: "models".into(),
            report_dir: "reports".into(),
        }
    }
}

/// The recognition dataset and the pretext set used to pretrain the
/// recognizer's feature layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningData {
    pub n_polyp: usize,
    pub n_normal: usize,
    pub test_fraction: f64,
    pub pretext_polyps: usize,
    pub pretext_normals: usize,
}

impl Default for ScreeningData {
    fn default() -> Self {
        Self {
            n_polyp: 700,
            n_normal: 700,
            test_fraction: 2.0 / 7.0,
            pretext_polyps: 400,
            pretext_normals: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizationData {
    pub n_neoplastic: usize,
    pub n_non_neoplastic: usize,
    /// Total copies per original frame, the original included.
    pub augment_factor: usize,
    pub test_fraction: f64,
}

impl Default for CharacterizationData {
    fn default() -> Self {
        Self {
            n_neoplastic: 49,
            n_non_neoplastic: 95,
            augment_factor: 4,
            test_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerStage {
    pub spec: RecognizerSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for RecognizerStage {
    fn default() -> Self {
        let sgd = TrainConfig {
            initial_lr: 0.02,
            max_epochs: 20,
            lr_decay_every_epochs: 8,
            ..TrainConfig::default()
        };
        Self {
            spec: RecognizerSpec::default(),
            pretrain: sgd.clone(),
            finetune: sgd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterStage {
    pub spec: AidUNetSpec,
    pub train: TrainConfig,
    /// Polyp frames from the training split used for fitting.
    pub train_images: usize,
    /// Polyp frames from the test split scored by `evaluate`.
    pub test_images: usize,
    pub judge: JudgeConfig,
}

impl Default for SegmenterStage {
    fn default() -> Self {
        Self {
            spec: AidUNetSpec::default(),
            train: TrainConfig {
                initial_lr: 0.1,
                max_epochs: 15,
                lr_decay_every_epochs: 6,
                ..TrainConfig::default()
            },
            train_images: 300,
            test_images: 100,
            judge: JudgeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizerStage {
    pub spec: CharacterizerSpec,
    pub train: TrainConfig,
    /// Attach Gram spectra to each characterized finding.
    pub spectrum: bool,
    /// Restrict the Gram analysis to the segmented region.
    pub mask_restricted: bool,
}

impl Default for CharacterizerStage {
    fn default() -> Self {
        Self {
            spec: CharacterizerSpec::default(),
            train: TrainConfig {
                initial_lr: 0.02,
                max_epochs: 25,
                lr_decay_every_epochs: 10,
                ..TrainConfig::default()
            },
            spectrum: true,
            mask_restricted: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizerStage {
    pub regressor: SizeRegressorConfig,
    pub remove_outliers: bool,
}

impl Default for SizerStage {
    fn default() -> Self {
        Self {
            regressor: SizeRegressorConfig::default(),
            remove_outliers: true,
        }
    }
}

/// Downstream branches run on frames the recognizer flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Branches {
    pub size: bool,
    pub characterization: bool,
}

impl Default for Branches {
    fn default() -> Self {
        Self {
            size: true,
            characterization: true,
        }
    }
}

/// The single configuration document. The `seed` fields inside the
/// per-stage training configs are ignored: each stage draws its seed from
/// a sub-stream of the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub phantom: PhantomConfig,
    pub screening: ScreeningData,
    pub characterization_data: CharacterizationData,
    pub recognizer: RecognizerStage,
    pub segmenter: SegmenterStage,
    pub characterizer: CharacterizerStage,
    pub sizer: SizerStage,
    pub branches: Branches,
    /// Fan per-image inference out over worker threads.
    pub parallel: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            phantom: PhantomConfig::default(),
            screening: ScreeningData::default(),
            characterization_data: CharacterizationData::default(),
            recognizer: RecognizerStage::default(),
            segmenter: SegmenterStage::default(),
            characterizer: CharacterizerStage::default(),
            sizer: SizerStage::default(),
            branches: Branches::default(),
            parallel: false,
            seed: 42,
        }
    }
}

pub(crate) mod stream {
    pub const SCREENING: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PRETEXT_POLYPS: u64 = 3;
    pub const PRETEXT_NORMALS: u64 = 4;
    pub const CHARACTERIZATION: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const CHARACTERIZATION_SPLIT: u64 = 7;
    pub const PRETRAIN: u64 = 8;
    pub const FINETUNE: u64 = 9;
    pub const SEGMENTER: u64 = 10;
    pub const CHARACTERIZER: u64 = 11;
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates `path`; relative directories are taken
    /// relative to the file's own directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.dataset_dir, &mut cfg.paths.model_dir, &mut cfg.paths.report_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.phantom.validate()?;
        let n = self.phantom.image_size;
        for (stage, size) in [
            ("recognizer", self.recognizer.spec.image_size),
            ("segmenter", self.segmenter.spec.image_size),
            ("characterizer", self.characterizer.spec.image_size),
        ] {
            if size != n {
                return bad(format!("{stage} image_size {size} differs from phantom image_size {n}"));
            }
        }
        for (stage, t) in [
            ("recognizer.pretrain", &self.recognizer.pretrain),
            ("recognizer.finetune", &self.recognizer.finetune),
            ("segmenter.train", &self.segmenter.train),
            ("characterizer.train", &self.characterizer.train),
        ] {
            t.validate().map_err(|e| Error::Config(format!("{stage}: {e}")))?;
        }
        for (name, f) in [
            ("screening.test_fraction", self.screening.test_fraction),
            ("characterization_data.test_fraction", self.characterization_data.test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {f}"));
            }
        }
        let s = &self.screening;
        if s.n_polyp < 2 || s.n_normal < 2 {
            return bad("screening needs at least 2 polyp and 2 normal frames".into());
        }
        if s.pretext_polyps == 0 || s.pretext_normals == 0 {
            return bad("pretext set needs both polyp and normal frames".into());
        }
        let c = &self.characterization_data;
        if c.n_neoplastic < 2 || c.n_non_neoplastic < 2 {
            return bad("characterization needs at least 2 frames per class".into());
        }
        if c.augment_factor == 0 {
            return bad("augment_factor must be >= 1".into());
        }
        if self.segmenter.train_images == 0 || self.segmenter.test_images == 0 {
            return bad("segmenter train_images and test_images must be positive".into());
        }
        let j = &self.segmenter.judge;
        if !(j.threshold > 0.0 && j.threshold < 1.0) || !(j.iou_threshold > 0.0 && j.iou_threshold <= 1.0) {
            return bad(format!(
                "judge thresholds out of range (threshold {}, iou_threshold {})",
                j.threshold, j.iou_threshold
            ));
        }
        self.recognizer.spec.network()?;
        build_aid_u_net(&self.segmenter.spec)?;
        self.characterizer.spec.network(vec![1.0, 1.0])?;
        if let Some(w) = &self.characterizer.spec.class_weights {
            self.characterizer.spec.network(w.clone())?;
        }
        self.sizer.regressor.validate()
    }

    /// Seed of one stage's private stream.
    pub(crate) fn stream_seed(&self, key: u64) -> u64 {
        Rng::new(self.seed).substream(key).next_u64()
    }

    pub(crate) fn seeded(&self, t: &TrainConfig, key: u64) -> TrainConfig {
        TrainConfig {
            seed: self.stream_seed(key),
            ..t.clone()
        }
    }

    pub fn screening_dir(&self) -> PathBuf {
        self.paths.dataset_dir.join("screening")
    }

    pub fn pretext_dir(&self) -> PathBuf {
        self.paths.dataset_dir.join("pretext")
    }

    pub fn characterization_dir(&self) -> PathBuf {
        self.paths.dataset_dir.join("characterization")
    }

    pub(crate) fn model(&self, file: &str) -> PathBuf {
        self.paths.model_dir.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn rejects_unknown_and_inconsistent_fields() {
        assert!(matches!(PipelineConfig::from_json(r#"{"sed": 1}"#), Err(Error::Config(_))));
        let e = PipelineConfig::from_json(r#"{"segmenter": {"spec": {"image_size": 32}}}"#).unwrap_err();
        assert!(e.to_string().contains("segmenter image_size 32"), "{e}");
        assert!(PipelineConfig::from_json(r#"{"screening": {"test_fraction": 1.0}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"characterizer": {"spec": {"class_weights": [1, -1]}}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"paths": {"model_dir": "m", "report_dir": "/abs/r"}}"#).unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.paths.model_dir, dir.path().join("m"));
        assert_eq!(cfg.paths.report_dir, PathBuf::from("/abs/r"));
        assert_eq!(cfg.paths.dataset_dir, dir.path().join("data"));
    }

    #[test]
    fn stage_streams_differ() {
        let cfg = PipelineConfig::default();
        assert_ne!(cfg.stream_seed(stream::PRETRAIN), cfg.stream_seed(stream::FINETUNE));
        let other = PipelineConfig { seed: 7, ..cfg.clone() };
        assert_ne!(cfg.stream_seed(stream::SCREENING), other.stream_seed(stream::SCREENING));
    }
}

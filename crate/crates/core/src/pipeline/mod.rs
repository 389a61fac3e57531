//! Stage orchestration: dataset generation, training, sizer fitting,
//! evaluation and the gated per-image pipeline. Every stage reads one
//! [`PipelineConfig`] and exchanges artifacts through the configured
//! directories.

mod config;
mod report;
mod stages;

pub use config::{
    Branches, CharacterizationData, CharacterizerStage, Paths, PipelineConfig, RecognizerStage, ScreeningData,
    SegmenterStage, SizerStage,
};
pub use report::{summarize, FindingReport, RunSummary, SpectrumRecord, SCHEMA_VERSION};
pub use stages::{
    estimate_cce_mm, evaluate, fit_sizer, generate, load_models, process_image, report, run, train_characterizer_stage,
    train_recognizer_stage, train_segmenter_stage, Evaluation, Models, Processed,
};

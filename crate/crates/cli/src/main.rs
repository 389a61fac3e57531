//! `cce`: command-line driver for the capsule-endoscopy pipeline.
//!
//! Each subcommand prints one summary line on stdout and writes its
//! detail to the directories named in the config. Exit status is 0 on
//! success, 2 on invalid input (bad config, missing artifact, failed
//! consistency check) and 1 on internal errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cce_core::pipeline::{self, PipelineConfig};
use cce_core::sizing::{confusion, figm1_consistency, parse_pairs_csv, SizeConfusion, PUBLISHED_SIZE_MATRIX};
use cce_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cce", version, about = "Polyp recognition, sizing and characterization on capsule-endoscopy frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configuration's top-level seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    Recognizer,
    Segmenter,
    Characterizer,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom datasets.
    Generate(Common),
    /// Train one network.
    Train {
        stage: Stage,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the CCE-to-histopathology size regressor.
    FitSizer(Common),
    /// Score every trained stage on the held-out splits.
    Evaluate(Common),
    /// Run the full pipeline over the screening test split.
    Run(Common),
    /// Rebuild the text summary from the last run's findings.
    Report(Common),
    /// Check a size confusion matrix against the published one.
    CheckMatrix {
        /// Pairs CSV with cce_mm and hp_mm columns.
        #[arg(long, conflicts_with = "matrix")]
        pairs: Option<PathBuf>,
        /// JSON file with a 4x4 "counts" array (or a bare 4x4 array).
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
}

fn load(common: &Common) -> cce_core::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn read(path: &Path) -> cce_core::Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn matrix_from_json(text: &str) -> cce_core::Result<SizeConfusion> {
    let v: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("matrix file: {e}")))?;
    let counts = v.get("counts").unwrap_or(&v).clone();
    let counts: [[u64; 4]; 4] = serde_json::from_value(counts)
        .map_err(|e| Error::InvalidArgument(format!("expected a 4x4 array of counts: {e}")))?;
    Ok(SizeConfusion { counts })
}

fn check_matrix(pairs: Option<PathBuf>, matrix: Option<PathBuf>) -> cce_core::Result<String> {
    let (source, m) = match (pairs, matrix) {
        (Some(p), _) => {
            let rows = parse_pairs_csv(&read(&p)?)?;
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.cce_mm, r.hp_mm)).collect();
            (p.display().to_string(), confusion(&pairs)?)
        }
        (None, Some(p)) => (p.display().to_string(), matrix_from_json(&read(&p)?)?),
        (None, None) => ("published matrix".to_string(), SizeConfusion { counts: PUBLISHED_SIZE_MATRIX }),
    };
    let report = figm1_consistency(&m);
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for f in &report.failures {
        eprintln!("mismatch: {f}");
    }
    let sums = m.column_sums();
    if report.passed() {
        Ok(format!(
            "check-matrix passed for {source}: total {}, column sums {}/{}/{}/{}",
            report.total, sums[0], sums[1], sums[2], sums[3]
        ))
    } else {
        Err(Error::InvalidArgument(format!(
            "check-matrix failed for {source}: {}",
            report.failures.join("; ")
        )))
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(cce_core::format::sig6).unwrap_or_else(|| "-".into())
}

fn execute(command: Command) -> cce_core::Result<String> {
    match command {
        Command::Generate(c) => pipeline::generate(&load(&c)?),
        Command::Train { stage, common } => {
            let cfg = load(&common)?;
            match stage {
                Stage::Recognizer => pipeline::train_recognizer_stage(&cfg),
                Stage::Segmenter => pipeline::train_segmenter_stage(&cfg),
                Stage::Characterizer => pipeline::train_characterizer_stage(&cfg),
            }
        }
        Command::FitSizer(c) => pipeline::fit_sizer(&load(&c)?),
        Command::Evaluate(c) => {
            let e = pipeline::evaluate(&load(&c)?)?;
            let r = &e.recognition;
            Ok(format!(
                "sensitivity {} specificity {} npv {} accuracy {} | dice {} correct {} | characterization accuracy {} | size rmse {} mm",
                opt(r.sensitivity),
                opt(r.specificity),
                opt(r.npv),
                opt(r.accuracy),
                cce_core::format::sig6(e.segmentation.mean_dice),
                cce_core::format::sig6(e.segmentation.correct_rate),
                opt(e.characterization.accuracy),
                cce_core::format::sig6(e.sizing.rmse_regressor_mm),
            ))
        }
        Command::Run(c) => {
            let cfg = load(&c)?;
            let rows = pipeline::run(&cfg)?;
            Ok(format!(
                "run: {} -> {}",
                pipeline::summarize(&rows).line(),
                cfg.paths.report_dir.join("findings.jsonl").display()
            ))
        }
        Command::Report(c) => Ok(format!("report: {}", pipeline::report(&load(&c)?)?.line())),
        Command::CheckMatrix { pairs, matrix } => check_matrix(pairs, matrix),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

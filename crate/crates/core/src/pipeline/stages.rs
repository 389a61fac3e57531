use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{stream, PipelineConfig};
use super::report::{summarize, summary_text, FindingReport, RunSummary, SpectrumRecord, SCHEMA_VERSION};
use crate::characterization::{support, support_overlap, train_characterizer, Characterizer, GramSpectrum};
use crate::error::{Error, Result};
use crate::format::{round6, sig6};
use crate::mask::BinaryMask;
use crate::nn::io::{load_params, save_params};
use crate::nn::TrainHistory;
use crate::phantom::netpbm::{encode_gray, encode_mask};
use crate::phantom::{
    augment_dataset, generate_dataset, generate_labelled_polyps, load_record, read_dataset, read_manifest,
    split_dataset, split_dataset_by, write_dataset, Manifest, PhantomConfig, PhantomSample, Split,
};
use crate::recognition::{pretrain_then_finetune, recognition_example, texture_example, EvalReport, Recognizer, POLYP};
use crate::segmentation::{build_aid_u_net, judge, judge_merged, merge_regions, train_segmenter, SegmentationResult, Segmenter, Verdict};
use crate::sizing::{
    bucket, confusion, ellipse_from_pixels, estimate_size_mm, pairs_csv, remove_outliers, SizeRegressor, SizeRow,
};

const RECOGNIZER: &str = "recognizer.cce1";
const RECOGNIZER_PRETRAINED: &str = "recognizer_pretrained.cce1";
const SEGMENTER: &str = "segmenter.cce1";
const CHARACTERIZER: &str = "characterizer.cce1";
const CHARACTERIZER_META: &str = "characterizer.json";
const SIZER: &str = "sizer.json";
pub(crate) const FINDINGS: &str = "findings.jsonl";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_file(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            stage: stage.into(),
            path,
        })
    }
}

/// Removes a directory this pipeline owns so reruns leave no stale files.
fn reset_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn par_map<T: Sync, R: Send>(parallel: bool, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

fn renamed(mut samples: Vec<PhantomSample>, prefix: &str) -> Vec<PhantomSample> {
    for (i, s) in samples.iter_mut().enumerate() {
        s.id = format!("{prefix}{i:05}");
        s.origin = s.id.clone();
    }
    samples
}

/// Writes the screening, pretext and characterization datasets.
pub fn generate(cfg: &PipelineConfig) -> Result<String> {
    let ph = &cfg.phantom;
    let sc = &cfg.screening;
    let screening = generate_dataset(ph, sc.n_polyp, sc.n_normal, cfg.stream_seed(stream::SCREENING))?;
    let manifest = split_dataset(&screening, sc.test_fraction, cfg.stream_seed(stream::SPLIT))?;

    let mut pretext = renamed(
        generate_labelled_polyps(ph, sc.pretext_polyps, 0, cfg.stream_seed(stream::PRETEXT_POLYPS))?,
        "p",
    );
    pretext.extend(renamed(
        generate_dataset(ph, 0, sc.pretext_normals, cfg.stream_seed(stream::PRETEXT_NORMALS))?,
        "n",
    ));
    let pretext_manifest = Manifest::uniform(&pretext, Split::Train, cfg.stream_seed(stream::PRETEXT_POLYPS))?;

    let cd = &cfg.characterization_data;
    let base = generate_labelled_polyps(
        ph,
        cd.n_neoplastic,
        cd.n_non_neoplastic,
        cfg.stream_seed(stream::CHARACTERIZATION),
    )?;
    let characterization = augment_dataset(
        &base,
        cd.augment_factor,
        cfg.stream_seed(stream::AUGMENT),
        ph.periphery_band_px,
    );
    let char_manifest = split_dataset_by(
        &characterization,
        cd.test_fraction,
        cfg.stream_seed(stream::CHARACTERIZATION_SPLIT),
        |s| usize::from(s.neoplastic),
    )?;

    for (dir, samples, m) in [
        (cfg.screening_dir(), &screening, &manifest),
        (cfg.pretext_dir(), &pretext, &pretext_manifest),
        (cfg.characterization_dir(), &characterization, &char_manifest),
    ] {
        reset_dir(&dir)?;
        write_dataset(&dir, samples, m)?;
    }
    Ok(format!(
        "generated {} screening frames ({} train / {} test), {} pretext, {} characterization under {}",
        screening.len(),
        manifest.ids(Split::Train).len(),
        manifest.ids(Split::Test).len(),
        pretext.len(),
        characterization.len(),
        cfg.paths.dataset_dir.display()
    ))
}

fn loss_span(h: &TrainHistory) -> String {
    match (h.epoch_losses.first(), h.epoch_losses.last()) {
        (Some(a), Some(b)) => format!("{} -> {}", sig6(*a), sig6(*b)),
        _ => "-".into(),
    }
}

#[derive(Serialize)]
struct RecognizerHistory<'a> {
    pretrain: &'a TrainHistory,
    finetune: &'a TrainHistory,
}

pub fn train_recognizer_stage(cfg: &PipelineConfig) -> Result<String> {
    let (screening, manifest) = read_dataset(&cfg.screening_dir())?;
    let (pretext, _) = read_dataset(&cfg.pretext_dir())?;
    let st = &cfg.recognizer;
    let finetune: Vec<_> = manifest
        .select(&screening, Split::Train)
        .into_iter()
        .map(recognition_example)
        .collect();
    let pretext: Vec<_> = pretext.iter().map(texture_example).collect();
    let out = pretrain_then_finetune(
        &st.spec.network()?,
        st.spec.fine_tune_last_k,
        &pretext,
        &finetune,
        &cfg.seeded(&st.pretrain, stream::PRETRAIN),
        &cfg.seeded(&st.finetune, stream::FINETUNE),
    )?;
    save_params_to(&cfg.model(RECOGNIZER), &out.params)?;
    save_params_to(&cfg.model(RECOGNIZER_PRETRAINED), &out.pretrained)?;
    write_json(
        &cfg.model("recognizer_history.json"),
        &RecognizerHistory {
            pretrain: &out.pretrain_history,
            finetune: &out.finetune_history,
        },
    )?;
    Ok(format!(
        "recognizer trained on {} frames: pretrain loss {}, fine-tune loss {} -> {}",
        finetune.len(),
        loss_span(&out.pretrain_history),
        loss_span(&out.finetune_history),
        cfg.model(RECOGNIZER).display()
    ))
}

fn save_params_to(path: &Path, params: &crate::nn::Params) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_params(path, params)
}

pub fn train_segmenter_stage(cfg: &PipelineConfig) -> Result<String> {
    let (screening, manifest) = read_dataset(&cfg.screening_dir())?;
    let st = &cfg.segmenter;
    let polyps: Vec<&PhantomSample> = manifest
        .select(&screening, Split::Train)
        .into_iter()
        .filter(|s| s.has_polyp)
        .take(st.train_images)
        .collect();
    if polyps.len() < st.train_images {
        return Err(Error::Config(format!(
            "segmenter.train_images is {} but the training split has {} polyp frames",
            st.train_images,
            polyps.len()
        )));
    }
    let (seg, history) = train_segmenter(&st.spec, &polyps, &cfg.seeded(&st.train, stream::SEGMENTER))?;
    save_params_to(&cfg.model(SEGMENTER), &seg.params)?;
    write_json(&cfg.model("segmenter_history.json"), &history)?;
    Ok(format!(
        "segmenter trained on {} frames: loss {} -> {}",
        polyps.len(),
        loss_span(&history),
        cfg.model(SEGMENTER).display()
    ))
}

#[derive(Serialize, Deserialize)]
struct CharacterizerMeta {
    class_weights: Vec<f64>,
}

pub fn train_characterizer_stage(cfg: &PipelineConfig) -> Result<String> {
    let (samples, manifest) = read_dataset(&cfg.characterization_dir())?;
    let train = manifest.select(&samples, Split::Train);
    let st = &cfg.characterizer;
    let (ch, history) = train_characterizer(&st.spec, &train, &cfg.seeded(&st.train, stream::CHARACTERIZER))?;
    save_params_to(&cfg.model(CHARACTERIZER), &ch.params)?;
    write_json(
        &cfg.model(CHARACTERIZER_META),
        &CharacterizerMeta {
            class_weights: ch.class_weights.clone(),
        },
    )?;
    write_json(&cfg.model("characterizer_history.json"), &history)?;
    Ok(format!(
        "characterizer trained on {} frames (class weights {} / {}): loss {} -> {}",
        train.len(),
        sig6(ch.class_weights[0]),
        sig6(ch.class_weights[1]),
        loss_span(&history),
        cfg.model(CHARACTERIZER).display()
    ))
}

/// Trained stages needed downstream of recognition.
pub struct Models {
    pub recognizer: Recognizer,
    pub segmenter: Option<Segmenter>,
    pub characterizer: Option<Characterizer>,
    pub sizer: Option<SizeRegressor>,
}

fn load_recognizer(cfg: &PipelineConfig) -> Result<Recognizer> {
    let spec = cfg.recognizer.spec.clone();
    let path = require(cfg.model(RECOGNIZER), "train recognizer")?;
    Recognizer::new(spec.clone(), load_params(&path, &spec.network()?)?)
}

fn load_segmenter(cfg: &PipelineConfig) -> Result<Segmenter> {
    let spec = cfg.segmenter.spec.clone();
    let path = require(cfg.model(SEGMENTER), "train segmenter")?;
    Segmenter::new(spec.clone(), load_params(&path, &build_aid_u_net(&spec)?)?)
}

fn load_characterizer(cfg: &PipelineConfig) -> Result<Characterizer> {
    let spec = cfg.characterizer.spec.clone();
    let path = require(cfg.model(CHARACTERIZER), "train characterizer")?;
    let meta_path = require(cfg.model(CHARACTERIZER_META), "train characterizer")?;
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: CharacterizerMeta = serde_json::from_str(&text)?;
    let params = load_params(&path, &spec.network(meta.class_weights.clone())?)?;
    Characterizer::new(spec, meta.class_weights, params)
}

fn load_sizer(cfg: &PipelineConfig) -> Result<SizeRegressor> {
    let path = require(cfg.model(SIZER), "fit-sizer")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads the recognizer plus whatever the enabled branches need.
pub fn load_models(cfg: &PipelineConfig) -> Result<Models> {
    let b = &cfg.branches;
    let need_segmenter = b.size || (b.characterization && cfg.characterizer.mask_restricted);
    Ok(Models {
        recognizer: load_recognizer(cfg)?,
        segmenter: need_segmenter.then(|| load_segmenter(cfg)).transpose()?,
        characterizer: b.characterization.then(|| load_characterizer(cfg)).transpose()?,
        sizer: b.size.then(|| load_sizer(cfg)).transpose()?,
    })
}

/// CCE-equivalent size of the merged segmented regions, measured inside
/// the overlay-free interior. `None` when nothing was segmented there.
pub fn estimate_cce_mm(seg: &SegmentationResult, phantom: &PhantomConfig) -> Option<f64> {
    let merged = merge_regions(&seg.regions);
    let region = merged.first()?;
    let (band, inner) = (phantom.periphery_band_px, phantom.interior_px());
    let full = BinaryMask::from_region(seg.mask.width(), seg.mask.height(), region);
    let pixels = full.crop(band, band, inner, inner).pixels();
    if pixels.is_empty() {
        return None;
    }
    Some(estimate_size_mm(&ellipse_from_pixels(&pixels), inner, inner, phantom.fov_mm))
}

fn polyp_sizes(
    cfg: &PipelineConfig,
    segmenter: &Segmenter,
    samples: &[&PhantomSample],
) -> Result<Vec<(SegmentationResult, Option<f64>)>> {
    par_map(cfg.parallel, samples, |s| {
        let seg = segmenter.segment(&s.image, &cfg.segmenter.judge)?;
        let mm = estimate_cce_mm(&seg, &cfg.phantom);
        Ok((seg, mm))
    })
    .into_iter()
    .collect()
}

/// Fits the CCE-to-histopathology regressor on segmenter measurements of
/// the training polyps.
pub fn fit_sizer(cfg: &PipelineConfig) -> Result<String> {
    let (screening, manifest) = read_dataset(&cfg.screening_dir())?;
    let segmenter = load_segmenter(cfg)?;
    let polyps: Vec<&PhantomSample> = manifest
        .select(&screening, Split::Train)
        .into_iter()
        .filter(|s| s.has_polyp)
        .collect();
    let sizes = polyp_sizes(cfg, &segmenter, &polyps)?;
    let measured: Vec<(&PhantomSample, f64)> = polyps.iter().zip(&sizes).filter_map(|(s, (_, mm))| mm.map(|m| (*s, m))).collect();
    let pairs: Vec<(f64, f64)> = measured.iter().map(|(s, m)| (*m, s.hp_mm)).collect();
    let flagged: Vec<usize> = if cfg.sizer.remove_outliers && pairs.len() >= 5 {
        remove_outliers(&pairs)?.flagged
    } else {
        Vec::new()
    };
    let kept: Vec<(f64, f64)> = (0..pairs.len()).filter(|i| !flagged.contains(i)).map(|i| pairs[i]).collect();
    let sizer = SizeRegressor::fit(&kept, &cfg.sizer.regressor)?;
    fs::create_dir_all(&cfg.paths.model_dir).map_err(|e| Error::io(&cfg.paths.model_dir, e))?;
    write_json(&cfg.model(SIZER), &sizer)?;

    let rows: Vec<SizeRow> = measured
        .iter()
        .enumerate()
        .map(|(i, (s, m))| SizeRow {
            id: s.id.clone(),
            cce_mm: *m,
            hp_mm: s.hp_mm,
            flagged: flagged.contains(&i),
        })
        .collect();
    let report = &cfg.paths.report_dir;
    write_file(&report.join("size_pairs.csv"), pairs_csv(&rows)?.as_bytes())?;
    let matrix = confusion(&pairs)?;
    write_file(&report.join("size_confusion.txt"), matrix.to_text().as_bytes())?;
    write_file(&report.join("size_confusion.json"), matrix.to_json().as_bytes())?;
    Ok(format!(
        "sizer fitted on {} pairs ({} flagged as outliers, {} frames unsegmented), train RMSE {} mm -> {}",
        kept.len(),
        flagged.len(),
        polyps.len() - measured.len(),
        sig6(sizer.train_rmse),
        cfg.model(SIZER).display()
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationEval {
    pub images: usize,
    pub mean_dice: f64,
    pub correct_rate: f64,
    pub correct_rate_merged: f64,
    pub verdicts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizingEval {
    pub pairs: usize,
    pub unsegmented: usize,
    pub rmse_regressor_mm: f64,
    pub rmse_identity_mm: f64,
    pub confusion: [[u64; 4]; 4],
}

/// Held-out metrics for every stage. Characterization counts neoplastic
/// as the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub schema_version: u32,
    pub recognition: EvalReport,
    pub segmentation: SegmentationEval,
    pub characterization: EvalReport,
    pub sizing: SizingEval,
}

fn rounded(r: EvalReport) -> EvalReport {
    EvalReport {
        sensitivity: r.sensitivity.map(round6),
        specificity: r.specificity.map(round6),
        npv: r.npv.map(round6),
        accuracy: r.accuracy.map(round6),
        ..r
    }
}

fn verdict_name(v: Verdict) -> String {
    serde_json::to_value(v).expect("verdict serializes").as_str().expect("unit variant").to_string()
}

fn rmse(errors: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = errors.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        (sum / n as f64).sqrt()
    }
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<Evaluation> {
    let (screening, manifest) = read_dataset(&cfg.screening_dir())?;
    let (char_samples, char_manifest) = read_dataset(&cfg.characterization_dir())?;
    let recognizer = load_recognizer(cfg)?;
    let segmenter = load_segmenter(cfg)?;
    let characterizer = load_characterizer(cfg)?;
    let sizer = load_sizer(cfg)?;

    let test = manifest.select(&screening, Split::Test);
    let labels = par_map(cfg.parallel, &test, |s| recognizer.classify(&s.image).map(|c| c.label == POLYP));
    let outcomes: Vec<(bool, bool)> = labels
        .into_iter()
        .zip(&test)
        .map(|(p, s)| p.map(|p| (p, s.has_polyp)))
        .collect::<Result<_>>()?;
    let recognition = rounded(EvalReport::from_outcomes(&outcomes)?);

    let polyps: Vec<&PhantomSample> = test.iter().copied().filter(|s| s.has_polyp).collect();
    let sizes = polyp_sizes(cfg, &segmenter, &polyps)?;
    let n_seg = cfg.segmenter.test_images.min(polyps.len());
    let iou_thr = cfg.segmenter.judge.iou_threshold;
    let mut dice_sum = 0.0;
    let (mut correct, mut correct_merged) = (0usize, 0usize);
    let mut verdicts = BTreeMap::new();
    for (s, (seg, _)) in polyps.iter().zip(&sizes).take(n_seg) {
        dice_sum += crate::segmentation::dice(&seg.mask, &s.mask);
        let v = judge(&seg.regions, &s.mask, iou_thr)?;
        correct += usize::from(v == Verdict::Correct);
        correct_merged += usize::from(judge_merged(&seg.regions, &s.mask, iou_thr)? == Verdict::Correct);
        *verdicts.entry(verdict_name(v)).or_default() += 1;
    }
    let denom = n_seg.max(1) as f64;
    let segmentation = SegmentationEval {
        images: n_seg,
        mean_dice: round6(dice_sum / denom),
        correct_rate: round6(correct as f64 / denom),
        correct_rate_merged: round6(correct_merged as f64 / denom),
        verdicts,
    };

    let char_test = char_manifest.select(&char_samples, Split::Test);
    let calls = par_map(cfg.parallel, &char_test, |s| characterizer.characterize(&s.image, false, None));
    let char_outcomes: Vec<(bool, bool)> = calls
        .into_iter()
        .zip(&char_test)
        .map(|(c, s)| c.map(|c| (c.neoplastic, s.neoplastic)))
        .collect::<Result<_>>()?;
    let characterization = rounded(EvalReport::from_outcomes(&char_outcomes)?);

    let pairs: Vec<(f64, f64)> = polyps
        .iter()
        .zip(&sizes)
        .filter_map(|(s, (_, mm))| mm.map(|m| (m, s.hp_mm)))
        .collect();
    let sizing = SizingEval {
        pairs: pairs.len(),
        unsegmented: polyps.len() - pairs.len(),
        rmse_regressor_mm: round6(rmse(pairs.iter().map(|&(x, y)| sizer.predict(x) - y))),
        rmse_identity_mm: round6(rmse(pairs.iter().map(|&(x, y)| x - y))),
        confusion: confusion(&pairs)?.counts,
    };

    let eval = Evaluation {
        schema_version: SCHEMA_VERSION,
        recognition,
        segmentation,
        characterization,
        sizing,
    };
    write_json(&cfg.paths.report_dir.join("evaluation.json"), &eval)?;
    Ok(eval)
}

/// Findings for one frame plus the files that go with them.
pub struct Processed {
    pub finding: FindingReport,
    pub mask_pgm: Option<Vec<u8>>,
    pub saliency_pgm: Option<Vec<u8>>,
    pub spectrum: Option<GramSpectrum>,
}

fn spectrum_lines(id: &str, neoplastic: bool, spectrum: &GramSpectrum) -> String {
    let class = if neoplastic { "neoplastic" } else { "non_neoplastic" };
    spectrum
        .layers
        .iter()
        .map(|l| {
            let rec = SpectrumRecord {
                id: id.to_string(),
                layer: l.layer.clone(),
                eigenvalues: l.eigenvalues.iter().map(|&v| round6(v)).collect(),
                largest: round6(l.largest),
                class: class.to_string(),
            };
            serde_json::to_string(&rec).expect("record serializes") + "\n"
        })
        .collect()
}

/// Recognition, then (if flagged) the size and characterization branches.
/// A failure inside either branch is recorded on the row and the other
/// branch still runs.
pub fn process_image(cfg: &PipelineConfig, models: &Models, sample: &PhantomSample) -> Processed {
    let mut out = Processed {
        finding: FindingReport::new(&sample.id),
        mask_pgm: None,
        saliency_pgm: None,
        spectrum: None,
    };
    let f = &mut out.finding;
    let mut errors = Vec::new();
    let class = match models.recognizer.classify(&sample.image) {
        Ok(c) => c,
        Err(e) => {
            f.error = Some(e.to_string());
            return out;
        }
    };
    let flagged = class.label == POLYP;
    f.polyp = Some(flagged);
    f.recognition_confidence = Some(round6(class.confidence));
    if !flagged {
        return out;
    }
    match models.recognizer.saliency(&sample.image, POLYP) {
        Ok(map) => {
            let (w, h) = (map.shape()[1], map.shape()[0]);
            out.saliency_pgm = Some(encode_gray(w, h, map.data()));
            f.saliency_path = Some(format!("saliency/{}.pgm", sample.id));
        }
        Err(e) => errors.push(format!("saliency: {e}")),
    }

    let seg = models
        .segmenter
        .as_ref()
        .map(|s| s.segment(&sample.image, &cfg.segmenter.judge));
    let seg = match seg.transpose() {
        Ok(s) => s,
        Err(e) => {
            errors.push(format!("segmentation: {e}"));
            None
        }
    };

    if let (Some(sizer), Some(seg)) = (&models.sizer, &seg) {
        let size = (|| -> Result<()> {
            let v = judge(&seg.regions, &sample.mask, cfg.segmenter.judge.iou_threshold)?;
            f.verdict = Some(v);
            out.mask_pgm = Some(encode_mask(&seg.mask));
            f.mask_path = Some(format!("masks/{}.pgm", sample.id));
            let cce = estimate_cce_mm(seg, &cfg.phantom)
                .ok_or_else(|| Error::invalid("segmentation found no polyp region"))?;
            let hp = sizer.predict(cce).max(0.0);
            f.cce_mm = Some(round6(cce));
            f.hp_mm = Some(round6(hp));
            f.size_bucket = Some(bucket(hp)?);
            Ok(())
        })();
        if let Err(e) = size {
            errors.push(format!("size: {e}"));
        }
    }

    if let Some(ch) = &models.characterizer {
        let mask = if cfg.characterizer.mask_restricted {
            seg.as_ref().map(|s| &s.mask)
        } else {
            None
        };
        match ch.characterize(&sample.image, cfg.characterizer.spectrum, mask) {
            Ok(c) => {
                f.neoplastic = Some(c.neoplastic);
                f.neoplastic_confidence = Some(round6(c.confidence));
                if c.spectrum.is_some() {
                    f.spectrum_path = Some(format!("spectra/{}.jsonl", sample.id));
                }
                out.spectrum = c.spectrum;
            }
            Err(e) => errors.push(format!("characterization: {e}")),
        }
    }
    if !errors.is_empty() {
        f.error = Some(errors.join("; "));
    }
    out
}

#[derive(Serialize)]
struct ClassSupport {
    n: usize,
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize)]
struct LayerOverlap {
    layer: String,
    neoplastic: ClassSupport,
    non_neoplastic: ClassSupport,
    /// Interval IoU of the two supports; absent with fewer than 2 per class.
    overlap: Option<f64>,
}

fn class_support(values: &[f64]) -> ClassSupport {
    let (lo, hi) = support(values);
    ClassSupport {
        n: values.len(),
        min: (!values.is_empty()).then(|| round6(lo)),
        max: (!values.is_empty()).then(|| round6(hi)),
    }
}

fn overlap_summary(cfg: &PipelineConfig, processed: &[Processed]) -> Vec<LayerOverlap> {
    cfg.characterizer
        .spec
        .gram_layers
        .iter()
        .map(|layer| {
            let mut by_class: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for p in processed {
                if let (Some(s), Some(neo)) = (&p.spectrum, p.finding.neoplastic) {
                    if let Some(l) = s.layers.iter().find(|l| &l.layer == layer) {
                        by_class[usize::from(neo)].push(l.largest);
                    }
                }
            }
            LayerOverlap {
                layer: layer.clone(),
                overlap: support_overlap(&by_class[1], &by_class[0]).ok().map(round6),
                neoplastic: class_support(&by_class[1]),
                non_neoplastic: class_support(&by_class[0]),
            }
        })
        .collect()
}

/// Runs the gated pipeline over the screening test split and writes
/// `findings.jsonl`, `summary.txt` and the per-frame files.
pub fn run(cfg: &PipelineConfig) -> Result<Vec<FindingReport>> {
    let dir = cfg.screening_dir();
    let manifest = read_manifest(&dir)?;
    let models = load_models(cfg)?;
    let records: Vec<_> = manifest.records.iter().filter(|r| r.split == Split::Test).collect();
    let processed = par_map(cfg.parallel, &records, |r| match load_record(&dir, r) {
        Ok(sample) => process_image(cfg, &models, &sample),
        Err(e) => {
            let mut finding = FindingReport::new(&r.id);
            finding.error = Some(e.to_string());
            Processed {
                finding,
                mask_pgm: None,
                saliency_pgm: None,
                spectrum: None,
            }
        }
    });

    let report = &cfg.paths.report_dir;
    for sub in ["masks", "saliency", "spectra"] {
        reset_dir(&report.join(sub))?;
    }
    let mut findings = Vec::with_capacity(processed.len());
    let mut lines = String::new();
    for p in &processed {
        let f = &p.finding;
        if let (Some(bytes), Some(path)) = (&p.mask_pgm, &f.mask_path) {
            write_file(&report.join(path), bytes)?;
        }
        if let (Some(bytes), Some(path)) = (&p.saliency_pgm, &f.saliency_path) {
            write_file(&report.join(path), bytes)?;
        }
        if let (Some(s), Some(path), Some(neo)) = (&p.spectrum, &f.spectrum_path, f.neoplastic) {
            write_file(&report.join(path), spectrum_lines(&f.id, neo, s).as_bytes())?;
        }
        lines.push_str(&f.to_line());
        findings.push(f.clone());
    }
    if cfg.branches.characterization && cfg.characterizer.spectrum {
        write_json(&report.join("spectra/overlap.json"), &overlap_summary(cfg, &processed))?;
    }
    write_file(&report.join(FINDINGS), lines.as_bytes())?;
    write_file(&report.join("summary.txt"), summary_text(&findings)?.as_bytes())?;
    Ok(findings)
}

/// Rebuilds `summary.txt` from an existing `findings.jsonl`.
pub fn report(cfg: &PipelineConfig) -> Result<RunSummary> {
    let path = require(cfg.paths.report_dir.join(FINDINGS), "run")?;
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows: Vec<FindingReport> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    if let Some(r) = rows.iter().find(|r| r.schema_version != SCHEMA_VERSION) {
        return Err(Error::invalid(format!(
            "finding {} has schema_version {}, expected {SCHEMA_VERSION}",
            r.id, r.schema_version
        )));
    }
    write_file(&cfg.paths.report_dir.join("summary.txt"), summary_text(&rows)?.as_bytes())?;
    Ok(summarize(&rows))
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::format::sig6;
use crate::segmentation::Verdict;
use crate::sizing::SizeBucket;

pub const SCHEMA_VERSION: u32 = 1;

/// One `findings.jsonl` row. Size and characterization fields are only
/// present for frames the recognizer flags as polyp. Paths are relative to
/// the report directory. Numbers carry six significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FindingReport {
    pub schema_version: u32,
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub polyp: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recognition_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub saliency_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cce_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hp_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub size_bucket: Option<SizeBucket>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub neoplastic: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub neoplastic_confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectrum_path: Option<String>,
    /// Set when processing this frame failed; the run carries on.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl FindingReport {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            id: id.into(),
            polyp: None,
            recognition_confidence: None,
            saliency_path: None,
            cce_mm: None,
            hp_mm: None,
            size_bucket: None,
            verdict: None,
            mask_path: None,
            neoplastic: None,
            neoplastic_confidence: None,
            spectrum_path: None,
            error: None,
        }
    }

    pub fn has_size(&self) -> bool {
        self.cce_mm.is_some() || self.hp_mm.is_some() || self.size_bucket.is_some()
    }

    pub fn has_characterization(&self) -> bool {
        self.neoplastic.is_some() || self.neoplastic_confidence.is_some()
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("finding serializes") + "\n"
    }
}

/// One line of a per-frame spectrum dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub id: String,
    pub layer: String,
    pub eigenvalues: Vec<f64>,
    pub largest: f64,
    pub class: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub images: usize,
    pub flagged: usize,
    pub failures: usize,
    pub neoplastic: usize,
    pub by_bucket: BTreeMap<String, usize>,
    pub by_verdict: BTreeMap<String, usize>,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!(
            "{} images, {} flagged as polyp, {} neoplastic, {} failures",
            self.images, self.flagged, self.neoplastic, self.failures
        )
    }
}

pub fn summarize(rows: &[FindingReport]) -> RunSummary {
    let mut s = RunSummary {
        images: rows.len(),
        ..RunSummary::default()
    };
    for r in rows {
        s.failures += usize::from(r.error.is_some());
        s.flagged += usize::from(r.polyp == Some(true));
        s.neoplastic += usize::from(r.neoplastic == Some(true));
        if let Some(b) = r.size_bucket {
            *s.by_bucket.entry(b.label().to_string()).or_default() += 1;
        }
        if let Some(v) = r.verdict {
            let name = serde_json::to_value(v).expect("verdict serializes");
            *s.by_verdict.entry(name.as_str().unwrap_or_default().to_string()).or_default() += 1;
        }
    }
    s
}

/// Human-readable report: totals, then one line per flagged frame.
pub(crate) fn summary_text(rows: &[FindingReport]) -> Result<String> {
    let s = summarize(rows);
    let mut out = String::new();
    writeln!(out, "schema_version {SCHEMA_VERSION}").ok();
    writeln!(out, "{}", s.line()).ok();
    for b in SizeBucket::ALL {
        if let Some(n) = s.by_bucket.get(b.label()) {
            writeln!(out, "size {:>8}: {n}", b.label()).ok();
        }
    }
    for (v, n) in &s.by_verdict {
        writeln!(out, "segmentation {v}: {n}").ok();
    }
    writeln!(out).ok();
    let opt = |x: Option<f64>| x.map(sig6).unwrap_or_else(|| "-".into());
    for r in rows {
        if let Some(e) = &r.error {
            writeln!(out, "{}  error: {e}", r.id).ok();
        } else if r.polyp == Some(true) {
            let class = match r.neoplastic {
                Some(true) => "neoplastic",
                Some(false) => "non-neoplastic",
                None => "-",
            };
            writeln!(
                out,
                "{}  polyp p={}  cce={} mm  hp={} mm  {}  {} p={}",
                r.id,
                opt(r.recognition_confidence),
                opt(r.cce_mm),
                opt(r.hp_mm),
                r.size_bucket.map_or("-", SizeBucket::label),
                class,
                opt(r.neoplastic_confidence),
            )
            .ok();
        }
    }
    Ok(out)
}

//! On-disk layout: `images/<id>.ppm`, `masks/<id>.pgm`, `manifest.jsonl`.

use std::fs;
use std::path::Path;

use super::netpbm::{decode_mask, decode_ppm, encode_mask, encode_ppm};
use super::{Manifest, ManifestRecord, PhantomSample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn write_dataset(dir: &Path, samples: &[PhantomSample], manifest: &Manifest) -> Result<()> {
    if samples.len() != manifest.records.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} manifest records",
            samples.len(),
            manifest.records.len()
        )));
    }
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (s, r) in samples.iter().zip(&manifest.records) {
        if s.id != r.id {
            return Err(Error::invalid(format!("sample {} paired with record {}", s.id, r.id)));
        }
        write(&dir.join(&r.image_path), &encode_ppm(&s.image))?;
        write(&dir.join(&r.mask_path), &encode_mask(&s.mask))?;
    }
    write(&dir.join(MANIFEST_FILE), manifest.to_jsonl().as_bytes())
}

pub fn read_dataset(dir: &Path) -> Result<(Vec<PhantomSample>, Manifest)> {
    let manifest = read_manifest(dir)?;
    let samples = manifest.records.iter().map(|r| load_record(dir, r)).collect::<Result<_>>()?;
    Ok((samples, manifest))
}

/// Reads manifest, without the frames.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingArtifact {
            stage: "generate".into(),
            path,
        });
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Manifest::from_jsonl(&text)
}

/// Decodes the frame and mask of one manifest record.
pub fn load_record(dir: &Path, r: &ManifestRecord) -> Result<PhantomSample> {
    Ok(PhantomSample {
        id: r.id.clone(),
        origin: r.origin.clone(),
        image: decode_ppm(&read(&dir.join(&r.image_path))?)?,
        mask: decode_mask(&read(&dir.join(&r.mask_path))?)?,
        has_polyp: r.has_polyp,
        neoplastic: r.neoplastic,
        true_diameter_mm: r.true_mm,
        cce_equivalent_mm: r.cce_mm,
        hp_mm: r.hp_mm,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

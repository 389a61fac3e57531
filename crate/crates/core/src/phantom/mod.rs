//! Seeded synthetic capsule-endoscopy frames with ground truth.
//!
//! Each frame is a textured mucosa background with radial vignetting and a
//! dark overlay band around the border (standing in for the date/time
//! strip). Polyp frames add one irregular elliptical dome whose internal
//! texture depends on the neoplastic label. Metadata carries the polyp's
//! physical diameter, the diameter a size reader would measure from the
//! frame, and a histopathology size that the frame systematically
//! overestimates.

mod augment;
pub mod netpbm;
mod split;
mod store;

pub use augment::{apply_augment, augment, augment_dataset, AugmentParams};
pub use split::{split_dataset, split_dataset_by, Manifest, ManifestRecord, Split};
pub use store::{load_record, read_dataset, read_manifest, write_dataset, MANIFEST_FILE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::nn::Tensor;
use crate::rng::Rng;
use crate::sizing::ellipse_from_pixels;

/// Byte value of the overlay band; the rendered scene never produces it.
pub const OVERLAY_VALUE: u8 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    /// Square frame side in pixels (frames are RGB).
    pub image_size: usize,
    /// Physical width, in mm, of the scene inside the overlay band.
    pub fov_mm: f64,
    pub polyp_diameter_range_mm: (f64, f64),
    /// Background texture frequency, cycles per frame.
    pub background_frequency: f64,
    pub background_contrast: f64,
    /// Non-neoplastic surface texture frequency, cycles per pixel.
    pub polyp_frequency: f64,
    pub polyp_contrast: f64,
    /// Neoplastic surface texture frequency, cycles per pixel.
    pub neoplastic_frequency: f64,
    pub neoplastic_texture_contrast: f64,
    pub pixel_noise: f64,
    pub periphery_band_px: usize,
    pub hp_bias_alpha: f64,
    pub hp_noise_sigma_mm: f64,
    /// Probability that a generated polyp is neoplastic.
    pub neoplastic_fraction: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            fov_mm: 40.0,
            polyp_diameter_range_mm: (2.0, 25.0),
            background_frequency: 2.5,
            background_contrast: 0.10,
            polyp_frequency: 0.06,
            polyp_contrast: 0.04,
            neoplastic_frequency: 0.32,
            neoplastic_texture_contrast: 0.22,
            pixel_noise: 0.015,
            periphery_band_px: 4,
            hp_bias_alpha: 0.75,
            hp_noise_sigma_mm: 1.5,
            neoplastic_fraction: 49.0 / 144.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size < 8 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if self.periphery_band_px * 4 >= self.image_size {
            return bad(format!(
                "periphery band {} must be < image_size/4",
                self.periphery_band_px
            ));
        }
        let (lo, hi) = self.polyp_diameter_range_mm;
        if !(lo > 0.0 && hi >= lo) {
            return bad(format!("bad polyp diameter range ({lo}, {hi})"));
        }
        if !(self.fov_mm > 0.0) || hi * 1.3 >= self.fov_mm {
            return bad(format!("polyps up to {hi} mm do not fit a {} mm field of view", self.fov_mm));
        }
        if !(self.hp_bias_alpha > 0.0 && self.hp_bias_alpha <= 1.0) {
            return bad(format!("hp_bias_alpha must lie in (0, 1], got {}", self.hp_bias_alpha));
        }
        if self.hp_noise_sigma_mm < 0.0 || self.pixel_noise < 0.0 {
            return bad("noise levels must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.neoplastic_fraction) {
            return bad("neoplastic_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Side of the scene inside the overlay band.
    pub fn interior_px(&self) -> usize {
        self.image_size - 2 * self.periphery_band_px
    }

    pub fn mm_per_px(&self) -> f64 {
        self.fov_mm / self.interior_px() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub id: String,
    /// Id of the generated frame this one was derived from (itself for originals).
    pub origin: String,
    /// (3, H, W), every value a multiple of 1/255.
    pub image: Tensor,
    pub mask: BinaryMask,
    pub has_polyp: bool,
    pub neoplastic: bool,
    pub true_diameter_mm: f64,
    /// Major diameter measured from the rendered mask, in mm.
    pub cce_equivalent_mm: f64,
    pub hp_mm: f64,
}

impl PhantomSample {
    /// Recognition label: 1 = polyp, 0 = normal mucosa.
    pub fn label(&self) -> usize {
        usize::from(self.has_polyp)
    }
}

/// Generates `n_polyp` polyp frames followed by `n_normal` normal frames.
/// Frame `i` depends only on `(cfg, seed, i)`.
pub fn generate_dataset(cfg: &PhantomConfig, n_polyp: usize, n_normal: usize, seed: u64) -> Result<Vec<PhantomSample>> {
    cfg.validate()?;
    let root = Rng::new(seed);
    Ok((0..n_polyp + n_normal)
        .map(|i| render_sample(cfg, &mut root.substream(i as u64), format!("s{i:05}"), i < n_polyp))
        .collect())
}

/// Polyp frames with a fixed neoplastic count, e.g. 49 of 144.
pub fn generate_labelled_polyps(
    cfg: &PhantomConfig,
    n_neoplastic: usize,
    n_non_neoplastic: usize,
    seed: u64,
) -> Result<Vec<PhantomSample>> {
    let mut forced = cfg.clone();
    forced.neoplastic_fraction = 1.0;
    forced.validate()?;
    let mut plain = cfg.clone();
    plain.neoplastic_fraction = 0.0;
    let root = Rng::new(seed);
    Ok((0..n_neoplastic + n_non_neoplastic)
        .map(|i| {
            let c = if i < n_neoplastic { &forced } else { &plain };
            render_sample(c, &mut root.substream(i as u64), format!("s{i:05}"), true)
        })
        .collect())
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

fn random_wave(rng: &mut Rng, cycles_per_px: f64) -> Wave {
    let theta = rng.uniform(0.0, std::f64::consts::PI);
    let f = std::f64::consts::TAU * cycles_per_px * rng.uniform(0.8, 1.25);
    Wave {
        kx: f * theta.cos(),
        ky: f * theta.sin(),
        phase: rng.uniform(0.0, std::f64::consts::TAU),
    }
}

impl Wave {
    fn at(&self, x: f64, y: f64) -> f64 {
        (self.kx * x + self.ky * y + self.phase).sin()
    }
}

struct PolypShape {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    harmonics: [(f64, f64); 3],
}

impl PolypShape {
    /// Normalized radius (1 on the boundary) and whether (x, y) is inside.
    fn radius(&self, x: f64, y: f64) -> (f64, bool) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        let rho = (u * u + v * v).sqrt();
        let theta = v.atan2(u);
        let boundary: f64 = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, &(amp, ph))| amp * ((k as f64 + 2.0) * theta + ph).cos())
                .sum::<f64>();
        let r = rho / boundary;
        (r, r <= 1.0)
    }
}

fn draw_shape(cfg: &PhantomConfig, rng: &mut Rng) -> PolypShape {
    let band = cfg.periphery_band_px as f64;
    let interior = cfg.interior_px() as f64;
    let pitch = cfg.mm_per_px();
    let (lo, hi) = cfg.polyp_diameter_range_mm;
    loop {
        let diameter_px = rng.uniform(lo, hi) / pitch;
        let q = rng.uniform(0.75, 1.0);
        let r_eq = diameter_px / 2.0;
        let (a, b) = (r_eq / q.sqrt(), r_eq * q.sqrt());
        let harmonics = [
            (rng.uniform(0.0, 0.05), rng.uniform(0.0, std::f64::consts::TAU)),
            (rng.uniform(0.0, 0.04), rng.uniform(0.0, std::f64::consts::TAU)),
            (rng.uniform(0.0, 0.03), rng.uniform(0.0, std::f64::consts::TAU)),
        ];
        let reach = a * 1.12 + 1.0;
        if 2.0 * reach >= interior {
            continue;
        }
        let phi = rng.uniform(0.0, std::f64::consts::PI);
        return PolypShape {
            cx: rng.uniform(band + reach, band + interior - reach),
            cy: rng.uniform(band + reach, band + interior - reach),
            a,
            b,
            cos: phi.cos(),
            sin: phi.sin(),
            harmonics,
        };
    }
}

fn render_sample(cfg: &PhantomConfig, rng: &mut Rng, id: String, has_polyp: bool) -> PhantomSample {
    let n = cfg.image_size;
    let band = cfg.periphery_band_px;
    let pitch = cfg.mm_per_px();
    let mut shape_rng = rng.substream(1);
    let mut tex_rng = rng.substream(2);
    let mut noise_rng = rng.substream(3);

    // Polyp geometry first; redraw until the rasterized blob is non-empty.
    let (shape, mask, true_mm) = if has_polyp {
        loop {
            let shape = draw_shape(cfg, &mut shape_rng);
            let raw = BinaryMask::from_fn(n, n, |x, y| shape.radius(x as f64 + 0.5, y as f64 + 0.5).1);
            let mask = raw.largest_component();
            if mask.count() >= 3 {
                let true_mm = 2.0 * (shape.a * shape.b).sqrt() * pitch;
                break (Some(shape), mask, true_mm);
            }
        }
    } else {
        (None, BinaryMask::new(n, n), 0.0)
    };
    let neoplastic = has_polyp && shape_rng.bernoulli(cfg.neoplastic_fraction);

    let base = [
        0.74 + tex_rng.uniform(-0.05, 0.05),
        0.40 + tex_rng.uniform(-0.04, 0.04),
        0.34 + tex_rng.uniform(-0.04, 0.04),
    ];
    let bg_waves: Vec<Wave> = (0..3)
        .map(|_| random_wave(&mut tex_rng, cfg.background_frequency / n as f64))
        .collect();
    let (freq, contrast) = if neoplastic {
        (cfg.neoplastic_frequency, cfg.neoplastic_texture_contrast)
    } else {
        (cfg.polyp_frequency, cfg.polyp_contrast)
    };
    let surface = [random_wave(&mut tex_rng, freq), random_wave(&mut tex_rng, freq)];
    let tint = [
        1.18 + tex_rng.uniform(-0.04, 0.04),
        1.40 + tex_rng.uniform(-0.06, 0.06),
        1.25 + tex_rng.uniform(-0.05, 0.05),
    ];

    let centre = n as f64 / 2.0;
    let plane = n * n;
    let mut data = vec![0.0; 3 * plane];
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let on_band = x < band || y < band || x >= n - band || y >= n - band;
            if on_band {
                continue;
            }
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let r2 = ((fx - centre).powi(2) + (fy - centre).powi(2)) / (centre * centre);
            let vignette = 1.0 - 0.22 * r2;
            let texture = 1.0 + cfg.background_contrast / 3.0 * bg_waves.iter().map(|w| w.at(fx, fy)).sum::<f64>();
            let mut rgb = base.map(|c| c * vignette * texture);
            if let (Some(s), true) = (&shape, mask.get(x, y)) {
                let (r, _) = s.radius(fx, fy);
                let dome = 0.92 + 0.16 * (1.0 - r.min(1.0) * r.min(1.0)).sqrt();
                let rim = if r > 0.82 { 0.9 } else { 1.0 };
                let pattern = 1.0 + contrast * surface[0].at(fx, fy) * surface[1].at(fx, fy);
                for c in 0..3 {
                    rgb[c] *= tint[c] * dome * rim * pattern;
                }
            }
            for c in 0..3 {
                let v = rgb[c] + cfg.pixel_noise * noise_rng.normal();
                // Quantize; byte 0 is reserved for the overlay band.
                let byte = (v * 255.0).round().clamp(1.0, 255.0);
                data[c * plane + i] = byte / 255.0;
            }
        }
    }

    let cce_mm = if has_polyp {
        ellipse_from_pixels(&mask.pixels()).major_diameter * pitch
    } else {
        0.0
    };
    let hp_mm = if has_polyp {
        (cfg.hp_bias_alpha * cce_mm + cfg.hp_noise_sigma_mm * noise_rng.normal()).max(0.5)
    } else {
        0.0
    };
    PhantomSample {
        origin: id.clone(),
        id,
        image: Tensor::new(vec![3, n, n], data),
        mask,
        has_polyp,
        neoplastic,
        true_diameter_mm: true_mm,
        cce_equivalent_mm: cce_mm,
        hp_mm,
    }
}

/// Re-stamps the overlay band onto a (3, H, W) frame.
pub(crate) fn stamp_overlay(image: &mut Tensor, band: usize) {
    let (c, h, w) = image.chw().expect("rank 3");
    let d = image.data_mut();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if x < band || y < band || x >= w - band || y >= h - band {
                    d[(ch * h + y) * w + x] = f64::from(OVERLAY_VALUE) / 255.0;
                }
            }
        }
    }
}

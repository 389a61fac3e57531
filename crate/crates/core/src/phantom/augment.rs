use super::{stamp_overlay, PhantomSample};
use crate::mask::BinaryMask;
use crate::nn::Tensor;
use crate::rng::Rng;

/// One geometric augmentation, applied about the centre of the scene
/// inside the overlay band: reflect, then scale, rotate and translate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub scale: f64,
    /// Counter-clockwise in image coordinates (y down), radians.
    pub rotation: f64,
    /// Pixels.
    pub translate: (f64, f64),
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        flip_horizontal: false,
        flip_vertical: false,
        scale: 1.0,
        rotation: 0.0,
        translate: (0.0, 0.0),
    };

    /// Scale ~ U[0.9, 1.1], translation ~ U[-10%, 10%] of the scene per axis,
    /// rotation ~ U[0, 2pi), reflections with probability 1/2 each.
    pub fn draw(rng: &mut Rng, interior_px: usize) -> Self {
        let span = 0.1 * interior_px as f64;
        AugmentParams {
            flip_horizontal: rng.bernoulli(0.5),
            flip_vertical: rng.bernoulli(0.5),
            scale: rng.uniform(0.9, 1.1),
            rotation: rng.uniform(0.0, std::f64::consts::TAU),
            translate: (rng.uniform(-span, span), rng.uniform(-span, span)),
        }
    }

    fn reflection_only(&self) -> Self {
        AugmentParams {
            flip_horizontal: self.flip_horizontal,
            flip_vertical: self.flip_vertical,
            ..Self::IDENTITY
        }
    }
}

/// Applies `p` to image and mask with nearest-neighbour resampling.
/// Image samples falling outside the scene replicate its edge; mask samples
/// there are background. The overlay band is re-stamped afterwards.
pub fn apply_augment(sample: &PhantomSample, p: &AugmentParams, band: usize) -> PhantomSample {
    let (channels, h, w) = sample.image.chw().expect("rank 3");
    let (x0, y0, x1, y1) = (band as f64, band as f64, (w - band) as f64, (h - band) as f64);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let (cos, sin) = (p.rotation.cos(), p.rotation.sin());
    let src = sample.image.data();
    let plane = h * w;
    let mut out = vec![0.0; channels * plane];
    let mut mask = BinaryMask::new(w, h);
    for y in band..h - band {
        for x in band..w - band {
            // Inverse map: undo translation, rotation, scale, reflection.
            let dx = x as f64 + 0.5 - cx - p.translate.0;
            let dy = y as f64 + 0.5 - cy - p.translate.1;
            let mut sx = (cos * dx + sin * dy) / p.scale;
            let mut sy = (-sin * dx + cos * dy) / p.scale;
            if p.flip_horizontal {
                sx = -sx;
            }
            if p.flip_vertical {
                sy = -sy;
            }
            let (fx, fy) = ((sx + cx).floor(), (sy + cy).floor());
            let inside = fx >= x0 && fy >= y0 && fx < x1 && fy < y1;
            let ix = fx.clamp(x0, x1 - 1.0) as usize;
            let iy = fy.clamp(y0, y1 - 1.0) as usize;
            for c in 0..channels {
                out[c * plane + y * w + x] = src[c * plane + iy * w + ix];
            }
            if inside && sample.mask.get(ix, iy) {
                mask.set(x, y, true);
            }
        }
    }
    let mut image = Tensor::new(vec![channels, h, w], out);
    stamp_overlay(&mut image, band);
    PhantomSample {
        image,
        mask,
        cce_equivalent_mm: sample.cce_equivalent_mm * p.scale,
        ..sample.clone()
    }
}

/// Random augmentation; redraws up to 10 times if the polyp would leave
/// the frame entirely, then falls back to the reflections alone.
pub fn augment(sample: &PhantomSample, seed: u64, band: usize) -> PhantomSample {
    let (_, h, w) = sample.image.chw().expect("rank 3");
    let interior = h.min(w) - 2 * band;
    let mut rng = Rng::new(seed);
    let first = AugmentParams::draw(&mut rng, interior);
    let mut p = first;
    for _ in 0..10 {
        let out = apply_augment(sample, &p, band);
        if !sample.has_polyp || !out.mask.is_empty() {
            return out;
        }
        p = AugmentParams::draw(&mut rng, interior);
    }
    apply_augment(sample, &first.reflection_only(), band)
}

/// Each original followed by `factor - 1` augmented variants
/// (ids `<id>_a1`, `<id>_a2`, ...).
pub fn augment_dataset(samples: &[PhantomSample], factor: usize, seed: u64, band: usize) -> Vec<PhantomSample> {
    assert!(factor >= 1, "augmentation factor must be >= 1");
    let root = Rng::new(seed);
    let mut out = Vec::with_capacity(samples.len() * factor);
    for (i, s) in samples.iter().enumerate() {
        out.push(s.clone());
        for k in 1..factor {
            let key = (i as u64) << 16 | k as u64;
            let mut a = augment(s, root.substream(key).next_u64(), band);
            a.id = format!("{}_a{k}", s.id);
            out.push(a);
        }
    }
    out
}

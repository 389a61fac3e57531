//! Size estimation from segmented regions, and calibration against
//! histopathology size.

mod buckets;
mod outliers;
mod regress;

pub use buckets::{
    bucket, confusion, figm1_consistency, pairs_csv, parse_pairs_csv, ConsistencyReport, SizeBucket, SizeConfusion, SizeRow,
    PUBLISHED_SIZE_MATRIX,
};
pub use outliers::{remove_outliers, OutlierSplit, OUTLIER_FLOOR_MM};
pub use regress::{SizeRegressor, SizeRegressorConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseFit {
    /// (x, y) in pixels.
    pub centroid: (f64, f64),
    pub major_diameter: f64,
    pub minor_diameter: f64,
    /// Angle of the major axis from +x, in (-π/2, π/2].
    pub orientation: f64,
    /// (min_x, min_y, max_x, max_y), inclusive.
    pub bbox: (usize, usize, usize, usize),
    /// Collinear region; `minor_diameter` is 0.
    pub degenerate: bool,
}

/// Moment ellipse of a pixel set: diameters are 4√λ of the coordinate
/// covariance eigenvalues. An empty set gives an all-zero degenerate fit.
pub fn ellipse_from_pixels(pixels: &[(usize, usize)]) -> EllipseFit {
    if pixels.is_empty() {
        return EllipseFit {
            centroid: (0.0, 0.0),
            major_diameter: 0.0,
            minor_diameter: 0.0,
            orientation: 0.0,
            bbox: (0, 0, 0, 0),
            degenerate: true,
        };
    }
    let n = pixels.len() as f64;
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut bbox = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in pixels {
        sx += x as f64;
        sy += y as f64;
        bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pixels {
        let (dx, dy) = (x as f64 - mx, y as f64 - my);
        cxx += dx * dx;
        cyy += dy * dy;
        cxy += dx * dy;
    }
    let (cxx, cyy, cxy) = (cxx / n, cyy / n, cxy / n);
    let half_trace = (cxx + cyy) / 2.0;
    let radius = (((cxx - cyy) / 2.0).powi(2) + cxy * cxy).sqrt();
    let l1 = half_trace + radius;
    let l2 = (half_trace - radius).max(0.0);
    let degenerate = l2 <= 1e-12 * l1.max(1.0);
    let mut orientation = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    if orientation <= -std::f64::consts::FRAC_PI_2 + 1e-15 {
        orientation += std::f64::consts::PI;
    }
    EllipseFit {
        centroid: (mx, my),
        major_diameter: 4.0 * l1.sqrt(),
        minor_diameter: if degenerate { 0.0 } else { 4.0 * l2.sqrt() },
        orientation,
        bbox,
        degenerate,
    }
}

/// [`ellipse_from_pixels`] with the minimum region size enforced.
pub fn fit_ellipse(pixels: &[(usize, usize)]) -> Result<EllipseFit> {
    if pixels.len() < 5 {
        return Err(Error::invalid(format!(
            "ellipse fit needs at least 5 pixels, got {}",
            pixels.len()
        )));
    }
    Ok(ellipse_from_pixels(pixels))
}

/// Removes `band` pixels from every edge of a (C, H, W) image.
pub fn crop_periphery(image: &Tensor, band: usize) -> Result<Tensor> {
    let (c, h, w) = image
        .chw()
        .ok_or_else(|| Error::invalid(format!("expected a (C, H, W) image, got {:?}", image.shape())))?;
    if 2 * band >= h.min(w) {
        return Err(Error::invalid(format!("band {band} too large for {w}x{h} image")));
    }
    let (nh, nw) = (h - 2 * band, w - 2 * band);
    let src = image.data();
    let mut out = Vec::with_capacity(c * nh * nw);
    for ch in 0..c {
        for y in band..h - band {
            let row = (ch * h + y) * w;
            out.extend_from_slice(&src[row + band..row + w - band]);
        }
    }
    Ok(Tensor::new(vec![c, nh, nw], out))
}

/// Major diameter as a fraction of the shorter cropped image side.
pub fn size_ratio(fit: &EllipseFit, cropped_width: usize, cropped_height: usize) -> f64 {
    fit.major_diameter / cropped_width.min(cropped_height) as f64
}

/// Size in mm of a region found in a frame cropped to its interior, whose
/// shorter side spans `fov_mm`.
pub fn estimate_size_mm(fit: &EllipseFit, cropped_width: usize, cropped_height: usize, fov_mm: f64) -> f64 {
    size_ratio(fit, cropped_width, cropped_height) * fov_mm
}

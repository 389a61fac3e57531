//! AID-U-Net segmentation: a U-Net whose skip connections each pass
//! through their own smaller U-Net, plus the correctness taxonomy used to
//! score single-ROI frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Region};
use crate::nn::{forward, train, Example, LossKind, NetworkBuilder, NetworkSpec, Params, Target, Tensor, TrainConfig, TrainHistory};
use crate::phantom::PhantomSample;
use crate::recognition::standardize_frame;
use crate::rng::Rng;
use crate::sizing::{ellipse_from_pixels, EllipseFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AidUNetSpec {
    pub direct_depth: usize,
    pub sub_depth: usize,
    pub base_channels: usize,
    pub image_size: usize,
}

impl Default for AidUNetSpec {
    fn default() -> Self {
        Self {
            direct_depth: 2,
            sub_depth: 2,
            base_channels: 8,
            image_size: 64,
        }
    }
}

impl AidUNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.direct_depth == 0 || self.base_channels == 0 {
            return Err(Error::Config("direct_depth and base_channels must be >= 1".into()));
        }
        let factor = 1usize
            .checked_shl((self.direct_depth + self.sub_depth) as u32)
            .ok_or_else(|| Error::Config("network too deep".into()))?;
        if self.image_size == 0 || !self.image_size.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^(D+S) = {factor}",
                self.image_size
            )));
        }
        Ok(())
    }
}

fn block(b: &mut NetworkBuilder, name: &str, from: usize, cin: usize, cout: usize) -> usize {
    let c = b.conv3x3(format!("{name}_conv"), from, cin, cout);
    b.relu(format!("{name}_relu"), c)
}

/// U-Net of depth `depth` on `from` (with `channels` channels) that returns
/// a tensor of the same shape. Depth 0 is the identity.
fn sub_u_net(b: &mut NetworkBuilder, prefix: &str, from: usize, channels: usize, depth: usize) -> usize {
    let mut enc = vec![from];
    let mut c = channels;
    for k in 1..=depth {
        let p = b.maxpool(format!("{prefix}_pool{k}"), enc[k - 1]);
        enc.push(block(b, &format!("{prefix}_enc{k}"), p, c, 2 * c));
        c *= 2;
    }
    let mut x = enc[depth];
    for k in (0..depth).rev() {
        let u = b.upconv(format!("{prefix}_up{k}"), x, c, c / 2);
        c /= 2;
        let cat = b.concat(format!("{prefix}_cat{k}"), u, enc[k]);
        x = block(b, &format!("{prefix}_dec{k}"), cat, 2 * c, c);
    }
    x
}

/// AID-U-Net(D, S) with a 1-channel sigmoid head.
pub fn build_aid_u_net(spec: &AidUNetSpec) -> Result<NetworkSpec> {
    spec.validate()?;
    let (d, n) = (spec.direct_depth, spec.image_size);
    let ch = |l: usize| spec.base_channels << l;
    let mut b = NetworkBuilder::new(&[3, n, n]);
    let mut enc = vec![block(&mut b, "enc0", NetworkBuilder::INPUT, 3, ch(0))];
    for l in 1..=d {
        let p = b.maxpool(format!("pool{l}"), enc[l - 1]);
        enc.push(block(&mut b, &format!("enc{l}"), p, ch(l - 1), ch(l)));
    }
    let mut x = enc[d];
    for l in (0..d).rev() {
        let u = b.upconv(format!("up{l}"), x, ch(l + 1), ch(l));
        let skip = sub_u_net(&mut b, &format!("sub{l}"), enc[l], ch(l), spec.sub_depth);
        let cat = b.concat(format!("cat{l}"), u, skip);
        x = block(&mut b, &format!("dec{l}"), cat, 2 * ch(l), ch(l));
    }
    let head = b.conv("head", x, ch(0), 1, 1);
    let out = b.sigmoid("prob", head);
    b.build(out, LossKind::PixelwiseBinaryCrossEntropy)
}

pub fn segmentation_example(sample: &PhantomSample) -> Example {
    let (w, h) = (sample.mask.width(), sample.mask.height());
    let target = Tensor::new(vec![1, h, w], sample.mask.data().iter().map(|&v| f64::from(v)).collect());
    Example {
        input: standardize_frame(&sample.image),
        target: Target::Mask(target),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    MissedRoi,
    WrongRegion,
    SplitRoi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    /// Minimum region-vs-truth IoU for a region to count as on target.
    pub iou_threshold: f64,
    /// Predicted components smaller than this are discarded.
    pub min_component_px: usize,
    pub threshold: f64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.2,
            min_component_px: 5,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    /// Union of the kept regions.
    pub mask: BinaryMask,
    pub regions: Vec<Region>,
    pub ellipses: Vec<EllipseFit>,
    pub verdict: Option<Verdict>,
}

/// Thresholds a probability map, labels 8-connected components and drops
/// those below `min_component_px`.
pub fn regions_from_probabilities(prob: &[f64], width: usize, height: usize, cfg: &JudgeConfig) -> SegmentationResult {
    let raw = BinaryMask::from_fn(width, height, |x, y| prob[y * width + x] >= cfg.threshold);
    let regions: Vec<Region> = raw
        .components()
        .into_iter()
        .filter(|r| r.area() >= cfg.min_component_px)
        .collect();
    let mut mask = BinaryMask::new(width, height);
    for r in &regions {
        for &(x, y) in &r.pixels {
            mask.set(x, y, true);
        }
    }
    SegmentationResult {
        mask,
        ellipses: regions.iter().map(|r| ellipse_from_pixels(&r.pixels)).collect(),
        regions,
        verdict: None,
    }
}

fn region_iou(region: &Region, truth: &BinaryMask) -> f64 {
    let inter = region.pixels.iter().filter(|&&(x, y)| truth.get(x, y)).count();
    let union = region.area() + truth.count() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// First matching rule wins: missed ROI, wrong region, split ROI, correct.
pub fn judge(regions: &[Region], truth: &BinaryMask, iou_threshold: f64) -> Result<Verdict> {
    let truth_regions = truth.components().len();
    if truth_regions > 1 {
        return Err(Error::invalid(format!("truth mask has {truth_regions} ROIs; at most one is supported")));
    }
    let touching = regions
        .iter()
        .filter(|r| r.pixels.iter().any(|&(x, y)| truth.get(x, y)))
        .count();
    if !truth.is_empty() && touching == 0 {
        return Ok(Verdict::MissedRoi);
    }
    let ious: Vec<f64> = regions.iter().map(|r| region_iou(r, truth)).collect();
    if !ious.is_empty() && ious.iter().all(|&v| v < iou_threshold) {
        return Ok(Verdict::WrongRegion);
    }
    if touching >= 2 {
        return Ok(Verdict::SplitRoi);
    }
    Ok(Verdict::Correct)
}

/// All regions fused into one (pixels in scan order).
pub fn merge_regions(regions: &[Region]) -> Vec<Region> {
    if regions.is_empty() {
        return Vec::new();
    }
    let mut pixels: Vec<(usize, usize)> = regions.iter().flat_map(|r| r.pixels.iter().copied()).collect();
    pixels.sort_unstable_by_key(|&(x, y)| (y, x));
    pixels.dedup();
    vec![Region { pixels }]
}

/// Judges the union of all predicted regions as a single ROI.
pub fn judge_merged(regions: &[Region], truth: &BinaryMask, iou_threshold: f64) -> Result<Verdict> {
    judge(&merge_regions(regions), truth, iou_threshold)
}

/// Total pixel area over all regions.
pub fn merged_size_rule(regions: &[Region]) -> usize {
    regions.iter().map(Region::area).sum()
}

fn overlap_counts(p: &BinaryMask, t: &BinaryMask) -> (usize, usize, usize) {
    (p.intersection_count(t), p.count(), t.count())
}

/// 2|P∩T| / (|P| + |T|); two empty masks score 1.
pub fn dice(p: &BinaryMask, t: &BinaryMask) -> f64 {
    let (i, a, b) = overlap_counts(p, t);
    if a + b == 0 {
        1.0
    } else {
        2.0 * i as f64 / (a + b) as f64
    }
}

/// |P∩T| / |P∪T|; two empty masks score 1.
pub fn iou(p: &BinaryMask, t: &BinaryMask) -> f64 {
    let (i, a, b) = overlap_counts(p, t);
    if a + b == 0 {
        1.0
    } else {
        i as f64 / (a + b - i) as f64
    }
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    pub spec: AidUNetSpec,
    pub net: NetworkSpec,
    pub params: Params,
}

impl Segmenter {
    pub fn new(spec: AidUNetSpec, params: Params) -> Result<Self> {
        let net = build_aid_u_net(&spec)?;
        if !params.matches(&net) {
            return Err(Error::invalid("parameters do not match the segmenter architecture"));
        }
        Ok(Self { spec, net, params })
    }

    pub fn probabilities(&self, image: &Tensor) -> Result<Tensor> {
        if image.chw().is_none() {
            return Err(Error::invalid(format!("expected a (C, H, W) frame, got {:?}", image.shape())));
        }
        Ok(forward(&self.net, &self.params, &standardize_frame(image))?.0)
    }

    pub fn segment(&self, image: &Tensor, cfg: &JudgeConfig) -> Result<SegmentationResult> {
        let prob = self.probabilities(image)?;
        let n = self.spec.image_size;
        Ok(regions_from_probabilities(prob.data(), n, n, cfg))
    }
}

/// Trains from a seeded Glorot initialization on all `samples`.
pub fn train_segmenter(
    spec: &AidUNetSpec,
    samples: &[&PhantomSample],
    cfg: &TrainConfig,
) -> Result<(Segmenter, TrainHistory)> {
    if samples.is_empty() {
        return Err(Error::invalid("segmentation training set is empty"));
    }
    let net = build_aid_u_net(spec)?;
    let data: Vec<Example> = samples.iter().map(|s| segmentation_example(s)).collect();
    let mut params = Params::init(&net, &mut Rng::new(cfg.seed).substream(0x5e6));
    let history = train(&net, &mut params, &data, None, cfg)?;
    Ok((
        Segmenter {
            spec: spec.clone(),
            net,
            params,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(n: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(n, n, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
    }

    #[test]
    fn shapes() {
        for (d, s) in [(1, 0), (2, 0), (2, 1), (2, 2)] {
            let spec = AidUNetSpec {
                direct_depth: d,
                sub_depth: s,
                ..Default::default()
            };
            let net = build_aid_u_net(&spec).unwrap();
            assert_eq!(net.output_shape(), &[1, 64, 64], "({d},{s})");
        }
        let bad = AidUNetSpec {
            image_size: 40,
            ..Default::default()
        };
        assert!(build_aid_u_net(&bad).is_err());
    }

    #[test]
    fn sub_paths_add_layers() {
        let plain = build_aid_u_net(&AidUNetSpec {
            sub_depth: 0,
            ..Default::default()
        })
        .unwrap();
        let aid = build_aid_u_net(&AidUNetSpec::default()).unwrap();
        // Each of the two skips gains 2 encoder + 2 upconv + 2 decoder convs.
        assert_eq!(aid.learnable().len(), plain.learnable().len() + 12);
    }

    #[test]
    fn empty_prediction_cases() {
        let cfg = JudgeConfig::default();
        let r = regions_from_probabilities(&vec![0.0; 64], 8, 8, &cfg);
        assert!(r.regions.is_empty() && r.mask.is_empty());
        let truth = disk(8, 4.0, 4.0, 2.0);
        assert_eq!(judge(&r.regions, &truth, 0.2).unwrap(), Verdict::MissedRoi);
        assert_eq!(judge(&[], &BinaryMask::new(8, 8), 0.2).unwrap(), Verdict::Correct);
    }

    #[test]
    fn verdict_examples() {
        let truth = disk(32, 16.0, 16.0, 6.0);
        assert_eq!(judge(&truth.components(), &truth, 0.2).unwrap(), Verdict::Correct);
        // Fully off target: nothing touches the truth, so the first rule fires.
        let off = disk(32, 4.0, 4.0, 3.0);
        assert_eq!(judge(&off.components(), &truth, 0.2).unwrap(), Verdict::MissedRoi);
        let grazing = disk(32, 26.0, 16.0, 6.0);
        let inter = grazing.intersection_count(&truth) as f64;
        assert!(inter > 0.0 && inter / ((grazing.count() + truth.count()) as f64 - inter) < 0.2);
        assert_eq!(judge(&grazing.components(), &truth, 0.2).unwrap(), Verdict::WrongRegion);
        let halves = BinaryMask::from_fn(32, 32, |x, y| truth.get(x, y) && x != 16);
        assert_eq!(halves.components().len(), 2);
        assert_eq!(judge(&halves.components(), &truth, 0.2).unwrap(), Verdict::SplitRoi);
        assert_eq!(judge_merged(&halves.components(), &truth, 0.2).unwrap(), Verdict::Correct);
        let two = disk(32, 5.0, 5.0, 2.0).union(&disk(32, 25.0, 25.0, 2.0));
        assert!(judge(&[], &two, 0.2).is_err());
    }

    #[test]
    fn small_components_dropped() {
        let mut prob = vec![0.0; 100];
        for i in [0, 1, 2, 3] {
            prob[i] = 0.9;
        }
        for i in [55, 56, 57, 65, 66] {
            prob[i] = 0.5;
        }
        let r = regions_from_probabilities(&prob, 10, 10, &JudgeConfig::default());
        assert_eq!(r.regions.len(), 1);
        assert_eq!(r.regions[0].area(), 5);
        assert_eq!(r.mask.count(), 5);
    }

    #[test]
    fn merged_area() {
        let a = Region {
            pixels: (0..120).map(|i| (i % 20, i / 20)).collect(),
        };
        let b = Region {
            pixels: (0..80).map(|i| (30 + i % 10, i / 10)).collect(),
        };
        assert_eq!(merged_size_rule(&[a, b]), 200);
        assert_eq!(merged_size_rule(&[]), 0);
    }

    #[test]
    fn dice_iou_extremes() {
        let a = disk(32, 16.0, 16.0, 5.0);
        let empty = BinaryMask::new(32, 32);
        assert_eq!(dice(&a, &a), 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(dice(&empty, &empty), 1.0);
        let b = disk(32, 3.0, 3.0, 2.0);
        assert_eq!(dice(&a, &b), 0.0);
        assert_eq!(iou(&a, &b), 0.0);
    }
}

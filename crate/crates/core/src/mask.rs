//! Object mask extraction: caption attention averaged per noun, resized onto a
//! segmentation map, and fused by an alpha-weighted class score.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::image::ObjectMask;

/// Non-negative attention grid with at least one positive entry.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl AttentionMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::format(format!("attention {height}×{width} with {} values", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::format(format!("attention value {v} is not a finite non-negative number")));
        }
        if !data.iter().any(|&v| v > 0.0) {
            return Err(Error::format("attention map is zero everywhere"));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Grid of integer class labels plus the label set.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
    classes: Vec<u8>,
}

impl SegmentationMap {
    /// The class set is the distinct labels present in the grid.
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        let mut classes = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        Self::with_classes(height, width, labels, classes)
    }

    /// An explicit class set may name classes absent from the grid; those are
    /// never selected.
    pub fn with_classes(height: usize, width: usize, labels: Vec<u8>, mut classes: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::format(format!("segmentation {height}×{width} with {} labels", labels.len())));
        }
        classes.sort_unstable();
        classes.dedup();
        if let Some(l) = labels.iter().find(|l| classes.binary_search(l).is_err()) {
            return Err(Error::format(format!("label {l} not in class set {classes:?}")));
        }
        Ok(Self { height, width, labels, classes })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    /// Binary `{0, 1}` mask of one class.
    pub fn class_mask(&self, class: u8) -> ObjectMask {
        let data = self.labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect();
        ObjectMask::new(self.height, self.width, data).expect("binary values are in range")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskFusionConfig {
    alpha: f32,
}

impl MaskFusionConfig {
    pub fn new(alpha: f32) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::contract(format!("alpha must be finite and positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }
}

impl Default for MaskFusionConfig {
    fn default() -> Self {
        Self { alpha: 1.4 }
    }
}

/// Nouns of the predicted captions with one attention map per occurrence.
#[derive(Clone, Debug, Default)]
pub struct CaptionNouns {
    entries: Vec<(String, Vec<AttentionMap>)>,
}

impl CaptionNouns {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an occurrence, grouping repeated nouns in first-seen order.
    pub fn push(&mut self, noun: impl Into<String>, map: AttentionMap) {
        let noun = noun.into();
        match self.entries.iter_mut().find(|(n, _)| *n == noun) {
            Some((_, maps)) => maps.push(map),
            None => self.entries.push((noun, vec![map])),
        }
    }

    pub fn entries(&self) -> &[(String, Vec<AttentionMap>)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Elementwise mean of the occurrence maps. Each pixel's values are summed in
/// sorted order, so the result does not depend on list order.
pub fn aggregate_attention(occurrences: &[AttentionMap]) -> Result<AttentionMap> {
    let first = occurrences.first().ok_or_else(|| Error::contract("no attention maps to aggregate"))?;
    if occurrences.len() == 1 {
        return Ok(first.clone());
    }
    let (h, w) = (first.height, first.width);
    if let Some(m) = occurrences.iter().find(|m| (m.height, m.width) != (h, w)) {
        return Err(Error::Tensor(sentigan_tensor::TensorError::Shape(format!(
            "attention maps {h}×{w} and {}×{} cannot be averaged",
            m.height, m.width
        ))));
    }
    let n = occurrences.len() as f64;
    let mut column = Vec::with_capacity(occurrences.len());
    let data = (0..h * w)
        .map(|i| {
            column.clear();
            column.extend(occurrences.iter().map(|m| m.data[i]));
            column.sort_by(f32::total_cmp);
            (column.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
        })
        .collect();
    AttentionMap::new(h, w, data)
}

/// Bilinear resampling with corner-aligned sample positions. A single output
/// row or column samples the source centre line.
pub fn resize_bilinear(a: &AttentionMap, height: usize, width: usize) -> Result<AttentionMap> {
    if height == 0 || width == 0 {
        return Err(Error::contract(format!("cannot resize to {height}×{width}")));
    }
    if (height, width) == (a.height, a.width) {
        return Ok(a.clone());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> f64 {
        if n_out == 1 {
            (n_in - 1) as f64 / 2.0
        } else {
            i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = coord(y, height, a.height);
        let y0 = (sy.floor() as usize).min(a.height - 1);
        let y1 = (y0 + 1).min(a.height - 1);
        let fy = sy - y0 as f64;
        for x in 0..width {
            let sx = coord(x, width, a.width);
            let x0 = (sx.floor() as usize).min(a.width - 1);
            let x1 = (x0 + 1).min(a.width - 1);
            let fx = sx - x0 as f64;
            let v = |yy, xx| a.at(yy, xx) as f64;
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            data.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    AttentionMap::new(height, width, data)
}

/// Class maximizing `(Σ_{S=c} A)^alpha / |{S=c}|`; ties go to the smallest
/// label and classes without pixels are skipped.
pub fn select_segment_class(a: &AttentionMap, s: &SegmentationMap, cfg: &MaskFusionConfig) -> Result<u8> {
    if s.classes.is_empty() {
        return Err(Error::contract("segmentation has no classes"));
    }
    if (a.height, a.width) != (s.height, s.width) {
        return Err(Error::Tensor(sentigan_tensor::TensorError::Shape(format!(
            "attention {}×{} not resized to segmentation {}×{}",
            a.height, a.width, s.height, s.width
        ))));
    }
    let alpha = cfg.alpha as f64;
    let mut best: Option<(u8, f64)> = None;
    for &class in &s.classes {
        let mut sum = 0.0f64;
        let mut count = 0usize;
        for (&l, &v) in s.labels.iter().zip(&a.data) {
            if l == class {
                sum += v as f64;
                count += 1;
            }
        }
        if count == 0 {
            continue;
        }
        let score = sum.powf(alpha) / count as f64;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((class, score));
        }
    }
    best.map(|(c, _)| c).ok_or_else(|| Error::contract("no class covers any pixel"))
}

/// Per noun: aggregate, resize onto the segmentation grid, select a class and
/// emit that class's binary mask. Nouns selecting the same class share a mask.
pub fn extract_object_masks(
    captions: &CaptionNouns,
    s: &SegmentationMap,
    cfg: &MaskFusionConfig,
) -> Result<BTreeMap<String, ObjectMask>> {
    let mut out = BTreeMap::new();
    for (noun, maps) in captions.entries() {
        let a = aggregate_attention(maps)?;
        let a = resize_bilinear(&a, s.height, s.width)?;
        let class = select_segment_class(&a, s, cfg)?;
        out.insert(noun.clone(), s.class_mask(class));
    }
    Ok(out)
}

/// Keep an ANP whose noun appears among the caption nouns, ignoring case.
pub fn filter_anp<I, S>(anp_noun: &str, caption_nouns: I) -> bool
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let noun = anp_noun.to_lowercase();
    caption_nouns.into_iter().any(|n| n.as_ref().to_lowercase() == noun)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn att(h: usize, w: usize, d: &[f32]) -> AttentionMap {
        AttentionMap::new(h, w, d.to_vec()).unwrap()
    }

    fn seg(h: usize, w: usize, d: &[u8]) -> SegmentationMap {
        SegmentationMap::new(h, w, d.to_vec()).unwrap()
    }

    fn alpha(a: f32) -> MaskFusionConfig {
        MaskFusionConfig::new(a).unwrap()
    }

    #[test]
    fn aggregate_examples() {
        let a = att(1, 2, &[0.3, 0.7]);
        assert_eq!(aggregate_attention(std::slice::from_ref(&a)).unwrap(), a);
        let mid = aggregate_attention(&[att(1, 2, &[0.0, 1.0]), att(1, 2, &[1.0, 0.0])]).unwrap();
        assert_eq!(mid.data(), &[0.5, 0.5]);
        let k = aggregate_attention(&[att(2, 2, &[0.2; 4]), att(2, 2, &[0.4; 4]), att(2, 2, &[0.9; 4])]).unwrap();
        let expect = ((0.2f32 as f64 + 0.4f32 as f64 + 0.9f32 as f64) / 3.0) as f32;
        assert!(k.data().iter().all(|&v| v == expect));
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_attention(&[]), Err(Error::Contract(_))));
        let mixed = [att(1, 2, &[1.0, 1.0]), att(2, 1, &[1.0, 1.0])];
        assert!(matches!(aggregate_attention(&mixed), Err(Error::Tensor(_))));
    }

    #[test]
    fn zero_attention_is_rejected() {
        assert!(AttentionMap::new(1, 2, vec![0.0, 0.0]).is_err());
        assert!(AttentionMap::new(1, 2, vec![-0.1, 1.0]).is_err());
    }

    #[test]
    fn resize_examples() {
        let a = att(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(resize_bilinear(&a, 2, 2).unwrap(), a);
        let one = resize_bilinear(&att(1, 1, &[0.7]), 3, 4).unwrap();
        assert!(one.data().iter().all(|&v| v == 0.7));
        let r = resize_bilinear(&att(2, 2, &[0.0, 1.0, 0.0, 1.0]), 2, 3).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn select_examples() {
        let s = seg(2, 2, &[0, 0, 1, 1]);
        let a = att(2, 2, &[0.4, 0.4, 0.1, 0.1]);
        assert_eq!(select_segment_class(&a, &s, &alpha(1.0)).unwrap(), 0);

        let s = seg(2, 2, &[0, 1, 1, 1]);
        let a = att(2, 2, &[0.5, 0.3, 0.3, 0.3]);
        assert_eq!(select_segment_class(&a, &s, &alpha(1.0)).unwrap(), 0);
        assert_eq!(select_segment_class(&a, &s, &alpha(10.0)).unwrap(), 1);

        let s = seg(2, 2, &[3; 4]);
        assert_eq!(select_segment_class(&att(2, 2, &[1.0; 4]), &s, &alpha(1.4)).unwrap(), 3);
    }

    #[test]
    fn ties_pick_smallest_label_and_skip_empty_classes() {
        let s = seg(1, 2, &[5, 2]);
        assert_eq!(select_segment_class(&att(1, 2, &[1.0, 1.0]), &s, &alpha(1.0)).unwrap(), 2);
        let s = SegmentationMap::with_classes(1, 2, vec![1, 1], vec![0, 1]).unwrap();
        assert_eq!(select_segment_class(&att(1, 2, &[1.0, 1.0]), &s, &alpha(1.0)).unwrap(), 1);
    }

    #[test]
    fn labels_outside_class_set_are_rejected() {
        assert!(SegmentationMap::with_classes(1, 2, vec![1, 2], vec![1]).is_err());
    }

    #[test]
    fn extraction_examples() {
        let s = seg(2, 2, &[4; 4]);
        let mut caps = CaptionNouns::new();
        caps.push("water", att(1, 1, &[1.0]));
        let masks = extract_object_masks(&caps, &s, &MaskFusionConfig::default()).unwrap();
        assert!(masks["water"].data().iter().all(|&v| v == 1.0));

        let s = seg(2, 2, &[0, 1, 0, 1]);
        let mut caps = CaptionNouns::new();
        caps.push("bird", att(2, 2, &[0.9, 0.1, 0.9, 0.1]));
        caps.push("sky", att(2, 2, &[0.1, 0.9, 0.1, 0.9]));
        let masks = extract_object_masks(&caps, &s, &MaskFusionConfig::default()).unwrap();
        assert_eq!(masks["bird"].data(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(masks["sky"].data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn anp_filter() {
        assert!(filter_anp("water", ["water", "bird"]));
        assert!(!filter_anp("tower", ["water", "bird"]));
        assert!(filter_anp("Water", ["water"]));
        assert!(filter_anp("water", ["WATER"]));
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(MaskFusionConfig::new(0.0).is_err());
        assert!(MaskFusionConfig::new(f32::NAN).is_err());
    }
}

//! Raster types: RGB images in `[-1, 1]` and soft object masks in `[0, 1]`.

use sentigan_tensor::{Element, Tensor};

use crate::error::{Error, Result};

/// `3×H×W` RGB raster with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image(Tensor);

impl Image {
    pub fn new(t: Tensor) -> Result<Self> {
        let (c, _, _) = t.chw()?;
        if c != 3 {
            return Err(Error::format(format!("image must have 3 channels, got {c}")));
        }
        if let Some(v) = t.data().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::format(format!("image value {v} outside [-1, 1]")));
        }
        Ok(Self(t))
    }

    /// Clamps into range; used on network outputs and blends.
    pub fn from_clamped(t: Tensor) -> Result<Self> {
        Self::new(t.map(|v| v.clamp(-1.0, 1.0))?)
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::format(format!("{width}×{height} RGB needs {} bytes, got {}", width * height * 3, rgb.len())));
        }
        let plane = width * height;
        let mut data = vec![0.0f32; 3 * plane];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = byte_to_unit(px[c]);
            }
        }
        Self::new(Tensor::new(vec![3, height, width], data)?)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        let (_, h, w) = self.dims();
        let plane = h * w;
        let d = self.0.data();
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push(unit_to_byte(d[c * plane + i]));
            }
        }
        out
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// `(3, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        self.0.chw().expect("validated at construction")
    }

    pub fn height(&self) -> usize {
        self.dims().1
    }

    pub fn width(&self) -> usize {
        self.dims().2
    }

    /// RGB in `[0, 1]` at pixel index `i` (row-major).
    pub fn rgb01(&self, i: usize) -> [f32; 3] {
        let (_, h, w) = self.dims();
        let d = self.0.data();
        [0, 1, 2].map(|c| (d[c * h * w + i] + 1.0) * 0.5)
    }
}

pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// `H×W` soft mask with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectMask(Tensor);

impl ObjectMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format(format!("mask value {v} outside [0, 1]")));
        }
        Ok(Self(Tensor::new(vec![height, width], data)?))
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self(Tensor::full(vec![height, width], 1.0))
    }

    pub fn from_gray8(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(height, width, gray.iter().map(|&v| v as f32 / 255.0).collect())
    }

    /// Binarized at 0.5 into `{0, 255}`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.0.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn weight(&self) -> f32 {
        self.0.data().iter().sum()
    }

    pub fn matches(&self, image: &Image) -> bool {
        self.height() == image.height() && self.width() == image.width()
    }

    pub fn ensure_matches(&self, image: &Image, what: &str) -> Result<()> {
        if !self.matches(image) {
            return Err(Error::format(format!(
                "{what}: mask {}×{} does not match image {}×{}",
                self.height(),
                self.width(),
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    pub fn ensure_nondegenerate(&self) -> Result<()> {
        let w = self.weight();
        if w <= 0.0 {
            return Err(Error::Tensor(sentigan_tensor::TensorError::DegenerateMask(w as f64)));
        }
        Ok(())
    }
}

/// Box-average downsampling of an `H×W` mask by an integer factor. A mask of
/// ones stays exactly ones.
pub fn downsample_area<T: Element>(mask: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w) = mask_dims(mask, factor)?;
    let (ho, wo) = (h / factor, w / factor);
    let d = mask.data();
    let area = T::lit((factor * factor) as f64);
    let mut out = Vec::with_capacity(ho * wo);
    for oy in 0..ho {
        for ox in 0..wo {
            let mut s = T::zero();
            for y in oy * factor..(oy + 1) * factor {
                for x in ox * factor..(ox + 1) * factor {
                    s = s + d[y * w + x];
                }
            }
            out.push(s / area);
        }
    }
    Ok(Tensor::new(vec![ho, wo], out)?)
}

/// Nearest-neighbour downsampling sampling each block at its centre pixel.
pub fn downsample_nearest<T: Element>(mask: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let (h, w) = mask_dims(mask, factor)?;
    let (ho, wo) = (h / factor, w / factor);
    let d = mask.data();
    let off = factor / 2;
    let out = (0..ho * wo).map(|i| d[(i / wo * factor + off) * w + (i % wo) * factor + off]).collect();
    Ok(Tensor::new(vec![ho, wo], out)?)
}

fn mask_dims<T: Element>(mask: &Tensor<T>, factor: usize) -> Result<(usize, usize)> {
    match mask.shape()[..] {
        [h, w] if factor > 0 && h % factor == 0 && w % factor == 0 => Ok((h, w)),
        _ => Err(Error::format(format!("cannot downsample mask {:?} by {factor}", mask.shape()))),
    }
}

/// HSV hue in degrees `[0, 360)` and chroma of an RGB triple in `[0, 1]`.
pub fn hue_chroma(rgb: [f32; 3]) -> (f64, f64) {
    let [r, g, b] = rgb.map(|v| v.clamp(0.0, 1.0) as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    if chroma <= 0.0 {
        return (0.0, 0.0);
    }
    let h = if max == r {
        ((g - b) / chroma).rem_euclid(6.0)
    } else if max == g {
        (b - r) / chroma + 2.0
    } else {
        (r - g) / chroma + 4.0
    };
    (h * 60.0, chroma)
}

pub fn hsv_to_rgb(hue_deg: f64, sat: f64, val: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = val * sat;
    let x = c * (1.0 - (h.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = val - c;
    [r + m, g + m, b + m]
}

/// Circular mean hue (degrees) over masked pixels, by vector averaging of hue
/// angles weighted by mask and chroma. `None` when the region is achromatic.
pub fn masked_mean_hue(image: &Image, mask: &ObjectMask) -> Option<f64> {
    let (mut sx, mut sy) = (0.0f64, 0.0f64);
    for (i, &m) in mask.data().iter().enumerate() {
        if m <= 0.0 {
            continue;
        }
        let (h, c) = hue_chroma(image.rgb01(i));
        let wgt = m as f64 * c;
        sx += wgt * h.to_radians().cos();
        sy += wgt * h.to_radians().sin();
    }
    if sx.hypot(sy) < 1e-9 {
        return None;
    }
    Some(sy.atan2(sx).to_degrees().rem_euclid(360.0))
}

/// Angular distance in degrees, in `[0, 180]`.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_round_trip_is_exact() {
        for v in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(v)), v);
        }
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Image::new(Tensor::full(vec![3, 2, 2], 1.5)).is_err());
        assert!(Image::new(Tensor::full(vec![1, 2, 2], 0.0)).is_err());
        assert!(ObjectMask::new(1, 2, vec![0.0, 1.2]).is_err());
    }

    #[test]
    fn full_mask_downsamples_to_exact_ones() {
        let m = Tensor::<f32>::full(vec![32, 32], 1.0);
        let a = downsample_area(&m, 4).unwrap();
        assert!(a.data().iter().all(|&v| v == 1.0));
        let n = downsample_nearest(&m, 4).unwrap();
        assert_eq!(n.shape(), &[8, 8]);
    }

    #[test]
    fn nearest_samples_block_centres() {
        let mut d = vec![0.0f32; 16];
        d[2 * 4 + 2] = 1.0; // (2,2) is the centre of the single 4×4 block
        let m = Tensor::new(vec![4, 4], d).unwrap();
        assert_eq!(downsample_nearest(&m, 4).unwrap().data(), &[1.0]);
        assert_eq!(downsample_area(&m, 4).unwrap().data(), &[1.0 / 16.0]);
    }

    #[test]
    fn hue_of_primaries_and_round_trip() {
        assert_eq!(hue_chroma([1.0, 0.0, 0.0]).0, 0.0);
        assert!((hue_chroma([0.0, 1.0, 0.0]).0 - 120.0).abs() < 1e-9);
        assert!((hue_chroma([0.0, 0.0, 1.0]).0 - 240.0).abs() < 1e-9);
        for h in [10.0, 75.0, 200.0, 330.0] {
            let rgb = hsv_to_rgb(h, 0.8, 0.9).map(|v| v as f32);
            assert!((hue_chroma(rgb).0 - h).abs() < 1e-3);
        }
    }

    #[test]
    fn circular_distance_wraps() {
        assert_eq!(hue_distance(350.0, 10.0), 20.0);
        assert_eq!(hue_distance(0.0, 180.0), 180.0);
    }
}

use crate::element::Element;
use crate::error::{shape_err, Result, TensorError};
use crate::tensor::Tensor;

/// Per-channel mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats<T = f32> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Element> ChannelStats<T> {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Mean absolute distance over the concatenated `(mean, std)` vectors.
    pub fn l1_distance(&self, other: &Self) -> T {
        let n = T::lit((self.mean.len() + self.std.len()) as f64);
        let sum = self
            .mean
            .iter()
            .zip(&other.mean)
            .chain(self.std.iter().zip(&other.std))
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        sum / n
    }
}

/// Validates an optional `H×W` mask against a `C×H×W` tensor and returns its weight sum.
pub(crate) fn mask_total<T: Element>(mask: Option<&Tensor<T>>, h: usize, w: usize) -> Result<T> {
    match mask {
        None => Ok(T::lit((h * w) as f64)),
        Some(m) => {
            if m.shape() != [h, w] {
                return shape_err(format!("mask {:?} does not match spatial {h}×{w}", m.shape()));
            }
            let total = m.data().iter().fold(T::zero(), |acc, &v| acc + v);
            if total <= T::zero() {
                return Err(TensorError::DegenerateMask(total.as_f64()));
            }
            Ok(total)
        }
    }
}

#[inline]
pub(crate) fn mask_at<T: Element>(mask: Option<&[T]>, i: usize) -> T {
    match mask {
        Some(m) => m[i],
        None => T::one(),
    }
}

/// Kernel shared by the plain and graph paths: an absent mask is treated as
/// all ones through the same arithmetic, so a full mask is bitwise identical.
pub(crate) fn stats_kernel<T: Element>(
    z: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    eps: T,
) -> Result<ChannelStats<T>> {
    let (c, h, w) = z.chw()?;
    let total = mask_total(mask, h, w)?;
    let m = mask.map(|m| m.data());
    let hw = h * w;
    let mut mean = Vec::with_capacity(c);
    let mut std = Vec::with_capacity(c);
    for ch in z.data().chunks_exact(hw) {
        let mut s = T::zero();
        for (i, &v) in ch.iter().enumerate() {
            s = s + mask_at(m, i) * v;
        }
        let mu = s / total;
        let mut ss = T::zero();
        for (i, &v) in ch.iter().enumerate() {
            let d = v - mu;
            ss = ss + mask_at(m, i) * d * d;
        }
        mean.push(mu);
        std.push((ss / total + eps).sqrt());
    }
    debug_assert_eq!(mean.len(), c);
    Ok(ChannelStats { mean, std })
}

pub fn channel_stats<T: Element>(
    z: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    eps: T,
) -> Result<ChannelStats<T>> {
    stats_kernel(z, mask, eps)
}

/// `gamma * (z - mu) / sigma + beta` with statistics over the masked scope and
/// the affine map applied at every position.
pub fn adain<T: Element>(
    z: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    mask: Option<&Tensor<T>>,
    eps: T,
) -> Result<Tensor<T>> {
    let (c, _, _) = z.chw()?;
    if gamma.len() != c || beta.len() != c {
        return shape_err(format!(
            "adain: {c} channels but gamma {} / beta {}",
            gamma.len(),
            beta.len()
        ));
    }
    let stats = stats_kernel(z, mask, eps)?;
    let normed = normalize_with(z, &stats);
    let hw = z.numel() / c;
    let mut out = normed;
    for (ch, vals) in out.chunks_exact_mut(hw).enumerate() {
        for v in vals {
            *v = gamma[ch] * *v + beta[ch];
        }
    }
    Tensor::new(z.shape().to_vec(), out)
}

pub(crate) fn normalize_with<T: Element>(z: &Tensor<T>, stats: &ChannelStats<T>) -> Vec<T> {
    let c = stats.channels();
    let hw = z.numel() / c;
    let mut out = Vec::with_capacity(z.numel());
    for (ch, vals) in z.data().chunks_exact(hw).enumerate() {
        let (mu, sd) = (stats.mean[ch], stats.std[ch]);
        out.extend(vals.iter().map(|&v| (v - mu) / sd));
    }
    out
}

//! Object-by-object transfer: content alignment, masked decoding,
//! strength blending and painter's-order compositing.

use sentigan_tensor::{channel_stats, ChannelStats, Tensor, NORM_EPS};

use crate::error::{Error, Result};
use crate::image::{masked_mean_hue, Image, ObjectMask};
use crate::nets::{decode, encode_content, encode_style, pool, ContentCode, ModelParams};

/// Re-targets each channel of `c_in` to statistics interpolated between its
/// own (`t = 0`) and those of `c_ref` (`t = 1`).
pub fn align_content(c_in: &ContentCode, c_ref: &ContentCode, t: f32) -> Result<ContentCode> {
    if c_in.shape() != c_ref.shape() {
        return Err(Error::format(format!("content codes {:?} and {:?} differ", c_in.shape(), c_ref.shape())));
    }
    check_unit("align_t", t)?;
    let (c, _, _) = c_in.chw()?;
    // Unregularized population statistics so that t = 1 lands exactly on the
    // reference's. Constant channels fall back to the regularized std.
    let si = channel_stats(c_in, None, 0.0)?;
    let sr = channel_stats(c_ref, None, 0.0)?;
    let hw = c_in.numel() / c;
    let mut out = Vec::with_capacity(c_in.numel());
    for (ch, vals) in c_in.data().chunks_exact(hw).enumerate() {
        let mu_t = (1.0 - t) * si.mean[ch] + t * sr.mean[ch];
        let sd_t = (1.0 - t) * si.std[ch] + t * sr.std[ch];
        let sd_in = if si.std[ch] > 0.0 { si.std[ch] } else { NORM_EPS.sqrt() };
        let (mu_in, k) = (si.mean[ch], sd_t / sd_in);
        out.extend(vals.iter().map(|&v| k * (v - mu_in) + mu_t));
    }
    Ok(Tensor::new(c_in.shape().to_vec(), out)?)
}

fn check_unit(what: &str, v: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::contract(format!("{what} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// Full-frame transfer of the reference object's style onto the input.
pub fn transfer_object(
    input: &Image,
    in_mask: &ObjectMask,
    reference: &Image,
    ref_mask: &ObjectMask,
    strength: f32,
    align_t: f32,
    params: &ModelParams,
) -> Result<Image> {
    Ok(transfer_with_diagnostics(input, in_mask, reference, ref_mask, strength, align_t, params)?.0)
}

fn transfer_with_diagnostics(
    input: &Image,
    in_mask: &ObjectMask,
    reference: &Image,
    ref_mask: &ObjectMask,
    strength: f32,
    align_t: f32,
    params: &ModelParams,
) -> Result<(Image, Option<ChannelStats>)> {
    check_unit("strength", strength)?;
    check_unit("align_t", align_t)?;
    in_mask.ensure_matches(input, "input mask")?;
    ref_mask.ensure_matches(reference, "reference mask")?;
    in_mask.ensure_nondegenerate()?;
    ref_mask.ensure_nondegenerate()?;
    if strength == 0.0 {
        return Ok((input.clone(), None));
    }
    let c_in = encode_content(input, params)?;
    let c_ref = encode_content(reference, params)?;
    let s_ref = encode_style(reference, Some(ref_mask), params)?;
    let aligned = align_content(&c_in, &c_ref, align_t)?;
    let out = decode(&aligned, &s_ref, &pool(&c_in)?, &pool(&c_ref)?, Some(in_mask), params)?;
    let stats = channel_stats(&aligned, None, NORM_EPS)?;
    Ok((blend(input, &out, strength)?, Some(stats)))
}

/// `strength·out + (1 − strength)·input`, clamped to `[-1, 1]`.
pub fn blend(input: &Image, out: &Image, strength: f32) -> Result<Image> {
    if input.dims() != out.dims() {
        return Err(Error::format("blend of differently sized images"));
    }
    let data = input
        .tensor()
        .data()
        .iter()
        .zip(out.tensor().data())
        .map(|(&a, &b)| (strength * b + (1.0 - strength) * a).clamp(-1.0, 1.0))
        .collect();
    Image::new(Tensor::new(input.tensor().shape().to_vec(), data)?)
}

/// Painter's order: each layer overwrites by its mask; pixels with zero mask
/// keep the value beneath bitwise.
pub fn composite(input: &Image, layers: &[(&ObjectMask, &Image)]) -> Result<Image> {
    let (_, h, w) = input.dims();
    let plane = h * w;
    let mut out = input.tensor().data().to_vec();
    for (i, (mask, img)) in layers.iter().enumerate() {
        if img.dims() != input.dims() || !mask.matches(input) {
            return Err(Error::Job { index: i, source: Box::new(Error::format("layer does not match the input size")) });
        }
        let src = img.tensor().data();
        for (p, &m) in mask.data().iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for c in 0..3 {
                let k = c * plane + p;
                out[k] = m * src[k] + (1.0 - m) * out[k];
            }
        }
    }
    Image::new(Tensor::new(vec![3, h, w], out)?)
}

#[derive(Clone, Debug)]
pub struct TransferJob {
    pub mask: ObjectMask,
    pub reference: Image,
    pub reference_mask: ObjectMask,
    pub strength: f32,
    pub align_t: f32,
}

#[derive(Clone, Debug)]
pub struct TransferRequest {
    pub input: Image,
    pub jobs: Vec<TransferJob>,
}

#[derive(Clone, Debug)]
pub struct JobDiagnostics {
    /// Channel statistics of the aligned content code; `None` at strength 0.
    pub aligned_stats: Option<ChannelStats>,
    pub input_hue: Option<f64>,
    pub reference_hue: Option<f64>,
    pub output_hue: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    pub output: Image,
    pub diagnostics: Vec<JobDiagnostics>,
}

pub fn run_transfer(request: &TransferRequest, params: &ModelParams) -> Result<TransferResult> {
    let mut results = Vec::with_capacity(request.jobs.len());
    let mut diagnostics = Vec::with_capacity(request.jobs.len());
    for (index, job) in request.jobs.iter().enumerate() {
        let (out, aligned_stats) = transfer_with_diagnostics(
            &request.input,
            &job.mask,
            &job.reference,
            &job.reference_mask,
            job.strength,
            job.align_t,
            params,
        )
        .map_err(|e| Error::Job { index, source: Box::new(e) })?;
        diagnostics.push(JobDiagnostics {
            aligned_stats,
            input_hue: masked_mean_hue(&request.input, &job.mask),
            reference_hue: masked_mean_hue(&job.reference, &job.reference_mask),
            output_hue: masked_mean_hue(&out, &job.mask),
        });
        results.push(out);
    }
    let layers: Vec<_> = request.jobs.iter().zip(&results).map(|(j, r)| (&j.mask, r)).collect();
    let output = composite(&request.input, &layers)?;
    Ok(TransferResult { output, diagnostics })
}

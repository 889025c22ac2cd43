//! Loss terms of the full objective. Graph builders (`*_node`) are used by the
//! trainer; the plain functions evaluate the same definitions on tensors.

use sentigan_tensor::{Element, Graph, NodeId, Tensor};

use crate::error::{Error, Result};
use crate::image::{downsample_nearest, Image, ObjectMask};
use crate::nets::{ContentCode, CONTENT_FACTOR};

pub const TERM_NAMES: [&str; 8] = ["gan", "g_m", "g_c", "g_s", "o_m", "o_c", "o_s", "g_cd"];

/// Weights `λ1..λ8`, in the order of [`TERM_NAMES`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights(pub [f32; 8]);

impl Default for LossWeights {
    fn default() -> Self {
        Self([1.0, 10.0, 1.0, 10.0, 10.0, 0.0, 0.0, 1.0])
    }
}

impl LossWeights {
    pub fn new(w: [f32; 8]) -> Result<Self> {
        if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::contract(format!("weight {} = {v} must be finite and non-negative", TERM_NAMES[i])));
        }
        Ok(Self(w))
    }

    pub fn get(&self, name: &str) -> Option<f32> {
        TERM_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }

    pub fn set(&mut self, name: &str, value: f32) -> Result<()> {
        let i = TERM_NAMES
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::contract(format!("unknown loss term {name}")))?;
        let mut w = self.0;
        w[i] = value;
        *self = Self::new(w)?;
        Ok(())
    }
}

/// Unweighted term values plus their weighted total. `disc` is the
/// discriminator's own loss, reported alongside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub terms: [f32; 8],
    pub total: f32,
    pub disc: f32,
}

impl LossReport {
    pub fn term(&self, name: &str) -> f32 {
        let i = TERM_NAMES.iter().position(|n| *n == name).expect("known term name");
        self.terms[i]
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.terms.iter().zip(&other.terms).all(|(a, b)| a.to_bits() == b.to_bits())
            && self.total.to_bits() == other.total.to_bits()
            && self.disc.to_bits() == other.disc.to_bits()
    }
}

pub fn total_loss(terms: &[f32; 8], w: &LossWeights) -> f32 {
    terms.iter().zip(&w.0).fold(0.0, |acc, (t, l)| acc + l * t)
}

fn eps<T: Element>() -> T {
    T::lit(sentigan_tensor::NORM_EPS as f64)
}

/// Content-grid mask for the object-level content term: block-centre samples.
pub fn content_grid_mask_nearest<T: Element>(mask: &ObjectMask) -> Result<Tensor<T>> {
    downsample_nearest(&mask.tensor().cast::<T>(), CONTENT_FACTOR)
}

pub fn image_recon_node<T: Element>(g: &mut Graph<T>, recon: NodeId, target: NodeId, mask: Option<&Tensor<T>>) -> Result<NodeId> {
    Ok(g.l1(recon, target, mask)?)
}

/// `(L_c, L_s)` between re-encoded codes and the codes that generated them.
/// `grid_mask` restricts the content term to covered content positions.
pub fn latent_recon_nodes<T: Element>(
    g: &mut Graph<T>,
    c_rec: NodeId,
    c: NodeId,
    s_rec: NodeId,
    s: NodeId,
    grid_mask: Option<&Tensor<T>>,
) -> Result<(NodeId, NodeId)> {
    Ok((g.l1(c_rec, c, grid_mask)?, g.l1(s_rec, s, None)?))
}

/// `mean softplus(-x)`, i.e. `-mean log sigmoid(x)`.
fn neg_log_sigmoid_mean<T: Element>(g: &mut Graph<T>, logits: NodeId) -> Result<NodeId> {
    let n = g.scale(logits, -T::one())?;
    let sp = g.softplus(n)?;
    Ok(g.mean(sp)?)
}

/// `-mean log(1 - sigmoid(x))`.
fn neg_log_one_minus_sigmoid_mean<T: Element>(g: &mut Graph<T>, logits: NodeId) -> Result<NodeId> {
    let sp = g.softplus(logits)?;
    Ok(g.mean(sp)?)
}

pub fn disc_loss_node<T: Element>(g: &mut Graph<T>, d_real: NodeId, d_fake: NodeId) -> Result<NodeId> {
    let r = neg_log_sigmoid_mean(g, d_real)?;
    let f = neg_log_one_minus_sigmoid_mean(g, d_fake)?;
    Ok(g.add(r, f)?)
}

/// Non-saturating generator loss.
pub fn gen_loss_node<T: Element>(g: &mut Graph<T>, d_fake: NodeId) -> Result<NodeId> {
    neg_log_sigmoid_mean(g, d_fake)
}

/// Channel statistics of `c_rec` pulled to those of `c_rand`, its normalized
/// layout pulled to that of `c`.
pub fn content_disentanglement_node<T: Element>(g: &mut Graph<T>, c_rec: NodeId, c: NodeId, c_rand: NodeId) -> Result<NodeId> {
    let (mu_rec, mu_rand) = (g.channel_mean(c_rec, None)?, g.channel_mean(c_rand, None)?);
    let (sd_rec, sd_rand) = (g.channel_std(c_rec, None, eps())?, g.channel_std(c_rand, None, eps())?);
    let (n_rec, n_c) = (g.normalize(c_rec, None, eps())?, g.normalize(c, None, eps())?);
    let a = g.l1(mu_rec, mu_rand, None)?;
    let b = g.l1(sd_rec, sd_rand, None)?;
    let c = g.l1(n_rec, n_c, None)?;
    let ab = g.add(a, b)?;
    Ok(g.add(ab, c)?)
}

fn scalar(g: &Graph, id: NodeId) -> Result<f32> {
    Ok(g.value(id).item()?)
}

/// Mean absolute difference, mask-weighted when a mask is given.
pub fn image_recon_loss(recon: &Image, target: &Image, mask: Option<&ObjectMask>) -> Result<f32> {
    if recon.dims() != target.dims() {
        return Err(Error::format(format!("images {:?} and {:?} differ in shape", recon.dims(), target.dims())));
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(recon.tensor().clone()), g.constant(target.tensor().clone()));
    let l = image_recon_node(&mut g, a, b, mask.map(ObjectMask::tensor))?;
    scalar(&g, l)
}

/// `(L_c, L_s)` for codes already re-encoded from a regenerated image.
pub fn latent_recon_losses(
    c_rec: &ContentCode,
    c: &ContentCode,
    s_rec: &Tensor,
    s: &Tensor,
    mask: Option<&ObjectMask>,
) -> Result<(f32, f32)> {
    let grid = mask.map(content_grid_mask_nearest).transpose()?;
    let mut g = Graph::new();
    let ids = [c_rec, c, s_rec, s].map(|t| g.constant(t.clone()));
    let (lc, ls) = latent_recon_nodes(&mut g, ids[0], ids[1], ids[2], ids[3], grid.as_ref())?;
    Ok((scalar(&g, lc)?, scalar(&g, ls)?))
}

/// `(disc_loss, gen_loss)` from realness logit maps.
pub fn adversarial_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<(f32, f32)> {
    let mut g = Graph::new();
    let (r, f) = (g.constant(d_real.clone()), g.constant(d_fake.clone()));
    let d = disc_loss_node(&mut g, r, f)?;
    let gl = gen_loss_node(&mut g, f)?;
    Ok((scalar(&g, d)?, scalar(&g, gl)?))
}

pub fn content_disentanglement_loss(c_rec: &ContentCode, c: &ContentCode, c_rand: &ContentCode) -> Result<f32> {
    let mut g = Graph::new();
    let ids = [c_rec, c, c_rand].map(|t| g.constant(t.clone()));
    let l = content_disentanglement_node(&mut g, ids[0], ids[1], ids[2])?;
    scalar(&g, l)
}

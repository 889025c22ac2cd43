//! The five SentiGAN networks: content encoder, style encoder, AdaIN-parameter
//! MLP, decoder and patch discriminator.
//!
//! Networks are built as graph fragments over a [`Binding`] of named
//! parameters, so one set of tensors serves both the image-level and the
//! object-level (masked) variants. The `encode_*`/`decode`/`discriminate`
//! wrappers run a single forward pass without tracking gradients.

use std::collections::HashMap;
use std::sync::Arc;

use sentigan_tensor::{Element, Graph, NodeId, RngState, Tensor};

use crate::error::{Error, Result};
use crate::image::{downsample_area, Image, ObjectMask};

/// Spatial `Cc×Hc×Wc` content code.
pub type ContentCode<T = f32> = Tensor<T>;
/// Flat `Ds` style code.
pub type StyleCode<T = f32> = Tensor<T>;

/// Network dimensions. The defaults are desk scale: 32×32 images, 32×8×8
/// content codes, 8-dimensional style.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub image_size: usize,
    pub content_channels: usize,
    pub style_dim: usize,
    pub mlp_hidden: usize,
    pub res_blocks: usize,
    /// First content-encoder conv width.
    pub enc_width: usize,
    /// Style trunk widths are `w, 2w, 2w`.
    pub style_width: usize,
    /// Decoder upsampling widths are `w, w/2`.
    pub dec_width: usize,
    /// Discriminator widths are `w, 2w, 4w`.
    pub disc_width: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            content_channels: 32,
            style_dim: 8,
            mlp_hidden: 64,
            res_blocks: 2,
            enc_width: 16,
            style_width: 16,
            dec_width: 16,
            disc_width: 16,
        }
    }
}

/// Content and style grids sit at `image_size / 4`; the discriminator emits
/// `image_size / 8` patches.
pub const CONTENT_FACTOR: usize = 4;
const DISC_FACTOR: usize = 8;

impl NetConfig {
    /// Tiny configuration used for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            image_size: 8,
            content_channels: 3,
            style_dim: 2,
            mlp_hidden: 4,
            res_blocks: 1,
            enc_width: 3,
            style_width: 2,
            dec_width: 4,
            disc_width: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_size,
            self.content_channels,
            self.style_dim,
            self.mlp_hidden,
            self.res_blocks,
            self.enc_width,
            self.style_width,
            self.dec_width,
            self.disc_width,
        ];
        if dims.contains(&0) {
            return Err(Error::contract(format!("every network dimension must be ≥ 1: {self:?}")));
        }
        if self.image_size % DISC_FACTOR != 0 {
            return Err(Error::contract(format!("image_size {} must be divisible by {DISC_FACTOR}", self.image_size)));
        }
        if self.dec_width < 2 {
            return Err(Error::contract("dec_width must be ≥ 2"));
        }
        Ok(())
    }

    pub fn content_spatial(&self) -> usize {
        self.image_size / CONTENT_FACTOR
    }

    /// Two AdaIN layers per decoder residual block.
    pub fn adain_layers(&self) -> usize {
        2 * self.res_blocks
    }

    fn mlp_out(&self) -> usize {
        2 * self.adain_layers() * self.content_channels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Zero for biases.
    pub fan_in: usize,
}

/// Ordered parameter names and shapes derived from a [`NetConfig`].
#[derive(Debug, PartialEq)]
pub struct ParamLayout {
    config: NetConfig,
    specs: Vec<ParamSpec>,
    index: HashMap<String, usize>,
}

impl ParamLayout {
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut specs = Vec::new();
        let mut conv = |name: &str, co: usize, ci: usize, k: usize, bias: bool| {
            specs.push(ParamSpec { name: format!("{name}.w"), shape: vec![co, ci, k, k], fan_in: ci * k * k });
            if bias {
                specs.push(ParamSpec { name: format!("{name}.b"), shape: vec![co], fan_in: 0 });
            }
        };
        let (cc, ew, sw, dw, xw) =
            (config.content_channels, config.enc_width, config.style_width, config.dec_width, config.disc_width);

        conv("enc_c.conv1", ew, 3, 4, false);
        conv("enc_c.conv2", cc, ew, 4, false);
        for i in 0..config.res_blocks {
            conv(&format!("enc_c.res{i}.conv1"), cc, cc, 3, false);
            conv(&format!("enc_c.res{i}.conv2"), cc, cc, 3, false);
        }
        conv("enc_s.conv1", sw, 3, 4, true);
        conv("enc_s.conv2", 2 * sw, sw, 4, true);
        conv("enc_s.conv3", 2 * sw, 2 * sw, 3, true);
        for i in 0..config.res_blocks {
            conv(&format!("dec.res{i}.conv1"), cc, cc, 3, false);
            conv(&format!("dec.res{i}.conv2"), cc, cc, 3, false);
        }
        conv("dec.up1", dw, cc, 3, true);
        conv("dec.up2", dw / 2, dw, 3, true);
        conv("dec.out", 3, dw / 2, 3, true);
        conv("disc.conv1", xw, 3, 4, true);
        conv("disc.conv2", 2 * xw, xw, 4, true);
        conv("disc.conv3", 4 * xw, 2 * xw, 4, true);
        conv("disc.out", 1, 4 * xw, 1, true);

        let mut linear = |name: &str, out: usize, inp: usize| {
            specs.push(ParamSpec { name: format!("{name}.w"), shape: vec![out, inp], fan_in: inp });
            specs.push(ParamSpec { name: format!("{name}.b"), shape: vec![out], fan_in: 0 });
        };
        linear("enc_s.fc", config.style_dim, 2 * sw);
        linear("mlp.fc1", config.mlp_hidden, config.style_dim + 2 * cc);
        linear("mlp.fc2", config.mlp_out(), config.mlp_hidden);

        specs.sort_by(|a, b| a.name.cmp(&b.name));
        let index = specs.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Ok(Self { config: config.clone(), specs, index })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Named parameter tensors of all five networks.
#[derive(Clone, Debug)]
pub struct ModelParams<T = f32> {
    layout: Arc<ParamLayout>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> ModelParams<T> {
    pub fn from_tensors(layout: Arc<ParamLayout>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != layout.len() {
            return Err(Error::contract(format!("{} tensors for {} parameters", tensors.len(), layout.len())));
        }
        for (spec, t) in layout.specs.iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::format(format!("{}: shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape)));
            }
        }
        Ok(Self { layout, tensors })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.layout.specs.iter().map(|s| s.name.as_str()).zip(&self.tensors)
    }

    /// Replaces one tensor, keeping its declared shape.
    pub fn set(&mut self, index: usize, t: Tensor<T>) -> Result<()> {
        let spec = &self.layout.specs[index];
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::format(format!("{}: shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape)));
        }
        self.tensors[index] = t;
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams { layout: self.layout.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        *self.layout == *other.layout && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.bitwise_eq(b))
    }
}

/// Weights uniform in `±sqrt(6 / fan_in)`, biases zero, drawn in layout order.
pub fn init_params<T: Element>(config: &NetConfig, rng: &mut RngState) -> Result<ModelParams<T>> {
    let layout = Arc::new(ParamLayout::new(config)?);
    let tensors = layout
        .specs
        .iter()
        .map(|s| {
            if s.fan_in == 0 {
                return Ok(Tensor::zeros(s.shape.clone()));
            }
            let bound = (6.0 / s.fan_in as f64).sqrt();
            let n = s.shape.iter().product();
            Ok(Tensor::new(s.shape.clone(), rng.uniform_vec(n, -bound, bound))?)
        })
        .collect::<Result<_>>()?;
    ModelParams::from_tensors(layout, tensors)
}

/// Parameters placed into one graph, by layout index.
#[derive(Clone, Debug)]
pub struct Binding {
    layout: Arc<ParamLayout>,
    nodes: Vec<Option<NodeId>>,
}

impl Binding {
    pub fn new(layout: Arc<ParamLayout>) -> Self {
        let n = layout.len();
        Self { layout, nodes: vec![None; n] }
    }

    /// Binds every parameter, trainable or constant.
    pub fn all<T: Element>(g: &mut Graph<T>, params: &ModelParams<T>, trainable: bool) -> Self {
        let mut b = Self::new(params.layout.clone());
        b.bind_where(g, params, trainable, |_| true);
        b
    }

    /// Binds (or rebinds) the parameters whose names satisfy `filter`.
    pub fn bind_where<T: Element>(
        &mut self,
        g: &mut Graph<T>,
        params: &ModelParams<T>,
        trainable: bool,
        filter: impl Fn(&str) -> bool,
    ) {
        for (i, (name, t)) in params.iter().enumerate() {
            if filter(name) {
                self.nodes[i] = Some(g.leaf(t.clone(), trainable));
            }
        }
    }

    /// Points parameter `index` at an existing node, e.g. one a caller
    /// created to differentiate against.
    pub fn set_node(&mut self, index: usize, node: NodeId) -> Result<()> {
        let slot = self
            .nodes
            .get_mut(index)
            .ok_or_else(|| Error::contract(format!("parameter index {index} out of range")))?;
        *slot = Some(node);
        Ok(())
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.layout
            .index_of(name)
            .and_then(|i| self.nodes[i])
            .ok_or_else(|| Error::contract(format!("parameter {name} is not bound")))
    }

    /// `(layout index, node)` of every bound parameter.
    pub fn bound(&self) -> impl Iterator<Item = (usize, NodeId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| n.map(|n| (i, n)))
    }

    pub fn config(&self) -> &NetConfig {
        &self.layout.config
    }
}

fn eps<T: Element>() -> T {
    T::lit(sentigan_tensor::NORM_EPS as f64)
}

/// Pixel mask averaged down to the content grid; an all-ones mask stays ones.
pub fn content_grid_mask<T: Element>(mask: &ObjectMask) -> Result<Tensor<T>> {
    downsample_area(&mask.tensor().cast::<T>(), CONTENT_FACTOR)
}

fn conv<T: Element>(g: &mut Graph<T>, b: &Binding, name: &str, x: NodeId, stride: usize, pad: usize, bias: bool) -> Result<NodeId> {
    let w = b.node(&format!("{name}.w"))?;
    let bn = if bias { Some(b.node(&format!("{name}.b"))?) } else { None };
    Ok(g.conv2d(x, w, bn, stride, pad)?)
}

fn linear<T: Element>(g: &mut Graph<T>, b: &Binding, name: &str, x: NodeId) -> Result<NodeId> {
    let w = b.node(&format!("{name}.w"))?;
    let bias = b.node(&format!("{name}.b"))?;
    Ok(g.linear(x, w, Some(bias))?)
}

fn check_image<T: Element>(g: &Graph<T>, x: NodeId, cfg: &NetConfig) -> Result<()> {
    let s = cfg.image_size;
    if g.value(x).shape() != [3, s, s] {
        return Err(Error::format(format!("expected a 3×{s}×{s} image, got {:?}", g.value(x).shape())));
    }
    Ok(())
}

/// `E_c`: two stride-2 convs and residual blocks, instance-normalized throughout.
pub fn content_encoder<T: Element>(g: &mut Graph<T>, b: &Binding, x: NodeId) -> Result<NodeId> {
    check_image(g, x, b.config())?;
    let mut h = x;
    for name in ["enc_c.conv1", "enc_c.conv2"] {
        h = conv(g, b, name, h, 2, 1, false)?;
        h = g.normalize(h, None, eps())?;
        h = g.relu(h)?;
    }
    for i in 0..b.config().res_blocks {
        let mut r = conv(g, b, &format!("enc_c.res{i}.conv1"), h, 1, 1, false)?;
        r = g.normalize(r, None, eps())?;
        r = g.relu(r)?;
        r = conv(g, b, &format!("enc_c.res{i}.conv2"), r, 1, 1, false)?;
        r = g.normalize(r, None, eps())?;
        h = g.add(h, r)?;
    }
    Ok(h)
}

/// Unnormalized convolutional trunk of `E_s`, ending on the content grid.
pub fn style_trunk<T: Element>(g: &mut Graph<T>, b: &Binding, x: NodeId) -> Result<NodeId> {
    check_image(g, x, b.config())?;
    let mut h = conv(g, b, "enc_s.conv1", x, 2, 1, true)?;
    h = g.relu(h)?;
    h = conv(g, b, "enc_s.conv2", h, 2, 1, true)?;
    h = g.relu(h)?;
    h = conv(g, b, "enc_s.conv3", h, 1, 1, true)?;
    Ok(g.relu(h)?)
}

/// (Masked) global pooling of the trunk then the linear head. `grid_mask` is
/// on the content grid; with it this is `E_s^o`.
pub fn style_head<T: Element>(g: &mut Graph<T>, b: &Binding, trunk: NodeId, grid_mask: Option<&Tensor<T>>) -> Result<NodeId> {
    let pooled = g.global_avg_pool(trunk, grid_mask)?;
    linear(g, b, "enc_s.fc", pooled)
}

pub fn style_encoder<T: Element>(g: &mut Graph<T>, b: &Binding, x: NodeId, grid_mask: Option<&Tensor<T>>) -> Result<NodeId> {
    let t = style_trunk(g, b, x)?;
    style_head(g, b, t, grid_mask)
}

/// `(gamma, beta)` for each AdaIN layer, from `[s ‖ P(c_in) ‖ P(c_rand)]`.
pub fn mlp<T: Element>(
    g: &mut Graph<T>,
    b: &Binding,
    s: NodeId,
    pooled_in: NodeId,
    pooled_rand: NodeId,
) -> Result<Vec<(NodeId, NodeId)>> {
    let cfg = b.config();
    let cc = cfg.content_channels;
    let dims = [(s, cfg.style_dim), (pooled_in, cc), (pooled_rand, cc)];
    if let Some((id, d)) = dims.iter().find(|(id, d)| g.value(*id).shape() != [*d]) {
        return Err(Error::format(format!("MLP input {:?}, expected length {d}", g.value(*id).shape())));
    }
    let x = g.concat(&[s, pooled_in, pooled_rand])?;
    let h = linear(g, b, "mlp.fc1", x)?;
    let h = g.relu(h)?;
    let out = linear(g, b, "mlp.fc2", h)?;
    (0..cfg.adain_layers())
        .map(|l| Ok((g.slice(out, 2 * l * cc, cc)?, g.slice(out, 2 * l * cc + cc, cc)?)))
        .collect()
}

/// Decoder: AdaIN residual blocks (statistics over `grid_mask` when given),
/// two nearest-upsample + conv stages, and a tanh head.
pub fn decoder<T: Element>(
    g: &mut Graph<T>,
    b: &Binding,
    c: NodeId,
    adain: &[(NodeId, NodeId)],
    grid_mask: Option<&Tensor<T>>,
) -> Result<NodeId> {
    let cfg = b.config();
    let hc = cfg.content_spatial();
    if g.value(c).shape() != [cfg.content_channels, hc, hc] {
        return Err(Error::format(format!("content code {:?} does not match the configuration", g.value(c).shape())));
    }
    if adain.len() != cfg.adain_layers() {
        return Err(Error::contract(format!("{} AdaIN parameter pairs for {} layers", adain.len(), cfg.adain_layers())));
    }
    let mut h = c;
    for i in 0..cfg.res_blocks {
        let (g1, b1) = adain[2 * i];
        let (g2, b2) = adain[2 * i + 1];
        let mut r = conv(g, b, &format!("dec.res{i}.conv1"), h, 1, 1, false)?;
        r = g.adain(r, g1, b1, grid_mask, eps())?;
        r = g.relu(r)?;
        r = conv(g, b, &format!("dec.res{i}.conv2"), r, 1, 1, false)?;
        r = g.adain(r, g2, b2, grid_mask, eps())?;
        h = g.add(h, r)?;
    }
    for name in ["dec.up1", "dec.up2"] {
        h = g.upsample2x(h)?;
        h = conv(g, b, name, h, 1, 1, true)?;
        h = g.relu(h)?;
    }
    let out = conv(g, b, "dec.out", h, 1, 1, true)?;
    Ok(g.tanh(out)?)
}

/// `G` (or `G^o` with a mask): MLP then decoder.
pub fn generator<T: Element>(
    g: &mut Graph<T>,
    b: &Binding,
    c: NodeId,
    s: NodeId,
    pooled_in: NodeId,
    pooled_rand: NodeId,
    grid_mask: Option<&Tensor<T>>,
) -> Result<NodeId> {
    let params = mlp(g, b, s, pooled_in, pooled_rand)?;
    decoder(g, b, c, &params, grid_mask)
}

/// Patch discriminator: three stride-2 convs with leaky ReLU, then a 1×1 conv
/// to a one-channel map of logits.
pub fn discriminator<T: Element>(g: &mut Graph<T>, b: &Binding, x: NodeId) -> Result<NodeId> {
    check_image(g, x, b.config())?;
    let mut h = x;
    for name in ["disc.conv1", "disc.conv2", "disc.conv3"] {
        h = conv(g, b, name, h, 2, 1, true)?;
        h = g.leaky_relu(h, T::lit(0.2))?;
    }
    conv(g, b, "disc.out", h, 1, 0, true)
}

fn inference_graph(params: &ModelParams) -> (Graph, Binding) {
    let mut g = Graph::new();
    let b = Binding::all(&mut g, params, false);
    (g, b)
}

fn grid_mask(mask: Option<&ObjectMask>, image: &Image) -> Result<Option<Tensor>> {
    mask.map(|m| {
        m.ensure_matches(image, "style mask")?;
        m.ensure_nondegenerate()?;
        content_grid_mask(m)
    })
    .transpose()
}

pub fn encode_content(image: &Image, params: &ModelParams) -> Result<ContentCode> {
    let (mut g, b) = inference_graph(params);
    let x = g.constant(image.tensor().clone());
    let c = content_encoder(&mut g, &b, x)?;
    Ok(g.value(c).clone())
}

/// `E_s`, or `E_s^o` when a mask is given.
pub fn encode_style(image: &Image, mask: Option<&ObjectMask>, params: &ModelParams) -> Result<StyleCode> {
    let m = grid_mask(mask, image)?;
    let (mut g, b) = inference_graph(params);
    let x = g.constant(image.tensor().clone());
    let s = style_encoder(&mut g, &b, x, m.as_ref())?;
    Ok(g.value(s).clone())
}

pub fn mlp_adain_params(
    s: &StyleCode,
    pooled_in: &Tensor,
    pooled_rand: &Tensor,
    params: &ModelParams,
) -> Result<Vec<(Tensor, Tensor)>> {
    let (mut g, b) = inference_graph(params);
    let (s, pi, pr) = (g.constant(s.clone()), g.constant(pooled_in.clone()), g.constant(pooled_rand.clone()));
    let out = mlp(&mut g, &b, s, pi, pr)?;
    Ok(out.into_iter().map(|(ga, be)| (g.value(ga).clone(), g.value(be).clone())).collect())
}

/// `G`, or `G^o` when a pixel mask is given.
pub fn decode(
    c: &ContentCode,
    s: &StyleCode,
    pooled_in: &Tensor,
    pooled_rand: &Tensor,
    mask: Option<&ObjectMask>,
    params: &ModelParams,
) -> Result<Image> {
    let m = mask
        .map(|m| {
            m.ensure_nondegenerate()?;
            content_grid_mask(m)
        })
        .transpose()?;
    let (mut g, b) = inference_graph(params);
    let ids = [c, s, pooled_in, pooled_rand].map(|t| g.constant(t.clone()));
    let out = generator(&mut g, &b, ids[0], ids[1], ids[2], ids[3], m.as_ref())?;
    Image::from_clamped(g.value(out).clone())
}

/// Global average pool `P` of a content code.
pub fn pool(c: &ContentCode) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(c.clone());
    let p = g.global_avg_pool(x, None)?;
    Ok(g.value(p).clone())
}

/// Patch map of realness logits.
pub fn discriminate(image: &Image, params: &ModelParams) -> Result<Tensor> {
    let (mut g, b) = inference_graph(params);
    let x = g.constant(image.tensor().clone());
    let d = discriminator(&mut g, &b, x)?;
    Ok(g.value(d).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> ModelParams {
        init_params(&NetConfig::default(), &mut RngState::new(seed)).unwrap()
    }

    fn random_image(seed: u64, size: usize) -> Image {
        let mut rng = RngState::new(seed);
        Image::new(Tensor::new(vec![3, size, size], rng.uniform_vec(3 * size * size, -1.0, 1.0)).unwrap()).unwrap()
    }

    #[test]
    fn layout_names_are_unique_and_complete() {
        let cfg = NetConfig::default();
        let layout = ParamLayout::new(&cfg).unwrap();
        let mut names: Vec<_> = layout.specs().iter().map(|s| s.name.as_str()).collect();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
        let expected = 2 + 2 * cfg.res_blocks // enc_c
            + 6 + 2 // enc_s convs + fc
            + 4 // mlp
            + 2 * cfg.res_blocks + 6 // dec
            + 8; // disc
        assert_eq!(n, expected);
        for prefix in ["enc_c.", "enc_s.", "mlp.", "dec.", "disc."] {
            assert!(names.iter().any(|s| s.starts_with(prefix)), "{prefix}");
        }
        assert_eq!(layout.specs()[layout.index_of("mlp.fc2.w").unwrap()].shape, vec![4 * 2 * 32, 64]);
    }

    #[test]
    fn init_is_seeded() {
        assert!(params(1).bitwise_eq(&params(1)));
        assert!(!params(1).bitwise_eq(&params(2)));
        let p = params(3);
        assert!(p.iter().filter(|(n, _)| n.ends_with(".b")).all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
        let w = p.get("enc_c.conv1.w").unwrap();
        let bound = (6.0f32 / 48.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = NetConfig { image_size: 12, ..NetConfig::default() };
        assert!(ParamLayout::new(&cfg).is_err());
        let cfg = NetConfig { style_dim: 0, ..NetConfig::default() };
        assert!(ParamLayout::new(&cfg).is_err());
    }

    #[test]
    fn shapes_and_determinism() {
        let p = params(4);
        let img = random_image(5, 32);
        let c = encode_content(&img, &p).unwrap();
        assert_eq!(c.shape(), &[32, 8, 8]);
        assert!(c.bitwise_eq(&encode_content(&img, &p).unwrap()));
        let s = encode_style(&img, None, &p).unwrap();
        assert_eq!(s.shape(), &[8]);
        let pc = pool(&c).unwrap();
        let ab = mlp_adain_params(&s, &pc, &pc, &p).unwrap();
        assert_eq!(ab.len(), 4);
        assert!(ab.iter().all(|(g, b)| g.shape() == [32] && b.shape() == [32]));
        let out = decode(&c, &s, &pc, &pc, None, &p).unwrap();
        assert_eq!(out.dims(), (3, 32, 32));
        let d = discriminate(&img, &p).unwrap();
        assert_eq!(d.shape(), &[1, 4, 4]);
    }

    #[test]
    fn content_code_responds_to_one_pixel() {
        let p = params(6);
        let img = random_image(7, 32);
        let mut t = img.tensor().clone().into_vec();
        t[100] = -t[100];
        let other = Image::new(Tensor::new(vec![3, 32, 32], t).unwrap()).unwrap();
        assert!(!encode_content(&img, &p).unwrap().bitwise_eq(&encode_content(&other, &p).unwrap()));
    }

    #[test]
    fn full_masks_match_unmasked_paths_bitwise() {
        let p = params(8);
        let img = random_image(9, 32);
        let full = ObjectMask::full(32, 32);
        let s = encode_style(&img, None, &p).unwrap();
        assert!(s.bitwise_eq(&encode_style(&img, Some(&full), &p).unwrap()));
        let c = encode_content(&img, &p).unwrap();
        let pc = pool(&c).unwrap();
        let a = decode(&c, &s, &pc, &pc, None, &p).unwrap();
        let b = decode(&c, &s, &pc, &pc, Some(&full), &p).unwrap();
        assert!(a.tensor().bitwise_eq(b.tensor()));
    }

    #[test]
    fn disjoint_masks_give_distinct_style_codes() {
        let p = params(10);
        let mut d = vec![0.0f32; 3 * 32 * 32];
        for y in 0..32 {
            for x in 0..32 {
                let v = if x < 16 { [0.9, -0.8, -0.8] } else { [-0.8, -0.6, 0.9] };
                for c in 0..3 {
                    d[c * 1024 + y * 32 + x] = v[c];
                }
            }
        }
        let img = Image::new(Tensor::new(vec![3, 32, 32], d).unwrap()).unwrap();
        let left = ObjectMask::new(32, 32, (0..1024).map(|i| if i % 32 < 16 { 1.0 } else { 0.0 }).collect()).unwrap();
        let right = ObjectMask::new(32, 32, left.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let a = encode_style(&img, Some(&left), &p).unwrap();
        let b = encode_style(&img, Some(&right), &p).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-4);
    }

    #[test]
    fn degenerate_mask_is_rejected() {
        let p = params(11);
        let img = random_image(12, 32);
        let zero = ObjectMask::new(32, 32, vec![0.0; 1024]).unwrap();
        assert!(matches!(encode_style(&img, Some(&zero), &p), Err(Error::Tensor(_))));
    }

    #[test]
    fn mlp_of_zero_input_is_its_output_bias() {
        let mut rng = RngState::new(13);
        let mut p = params(13);
        // Nonzero biases so the property is not vacuous.
        for name in ["mlp.fc1.b", "mlp.fc2.b"] {
            let i = p.layout().index_of(name).unwrap();
            let n = p.tensors()[i].numel();
            p.set(i, Tensor::vector(rng.uniform_vec(n, -1.0, 1.0)).unwrap()).unwrap();
        }
        let z = |n| Tensor::zeros(vec![n]);
        let out = mlp_adain_params(&z(8), &z(32), &z(32), &p).unwrap();
        // fc2(relu(b1)) + b2: direct evaluation
        let b1 = p.get("mlp.fc1.b").unwrap().data();
        let w2 = p.get("mlp.fc2.w").unwrap().data();
        let b2 = p.get("mlp.fc2.b").unwrap().data();
        let h: Vec<f64> = b1.iter().map(|&v| (v as f64).max(0.0)).collect();
        let flat: Vec<f32> = out.iter().flat_map(|(g, b)| g.data().iter().chain(b.data()).copied().collect::<Vec<_>>()).collect();
        for (o, &got) in flat.iter().enumerate() {
            let expect = b2[o] as f64 + (0..64).map(|k| w2[o * 64 + k] as f64 * h[k]).sum::<f64>();
            assert!((got as f64 - expect).abs() < 1e-5, "{o}: {got} vs {expect}");
        }
    }

    #[test]
    fn discriminator_gradient_reaches_image() {
        let p = params(14);
        let img = random_image(15, 32);
        let mut g = Graph::new();
        let b = Binding::all(&mut g, &p, false);
        let x = g.param(img.tensor().clone());
        let d = discriminator(&mut g, &b, x).unwrap();
        assert!(g.value(d).data().iter().all(|v| v.is_finite()));
        let m = g.mean(d).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(grads.wrt(x).data().iter().any(|&v| v != 0.0));
    }
}

//! One training step of the full objective: a discriminator update followed
//! by a joint encoder/decoder/MLP update.

use sentigan_tensor::{Element, Graph, NodeId, RngState, Tensor};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::checkpoint::Checkpoint;
use super::corpus::CorpusSample;
use crate::error::{Error, Result};
use crate::image::downsample_nearest;
use crate::losses::{
    content_disentanglement_node, disc_loss_node, gen_loss_node, image_recon_node, latent_recon_nodes, total_loss,
    LossReport, LossWeights,
};
use crate::nets::{
    content_encoder, discriminator, generator, init_params, style_encoder, style_head, style_trunk, Binding,
    ModelParams, NetConfig, CONTENT_FACTOR,
};
use crate::image::downsample_area;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            iters: 3000,
            batch_size: 4,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        self.net.validate()?;
        LossWeights::new(self.weights.0)?;
        if self.iters == 0 {
            return Err(Error::contract("iters must be ≥ 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch_size must be ≥ 2 so c_rand can come from another image"));
        }
        Ok(())
    }
}

pub fn is_disc(name: &str) -> bool {
    name.starts_with("disc.")
}

/// Per-sample inputs with every random draw already made.
#[derive(Clone, Debug)]
pub struct SampleInputs<T> {
    pub image: Tensor<T>,
    /// Pixel mask of the supervised object.
    pub mask: Tensor<T>,
    /// Draw from the style prior, shared by the latent and disentanglement terms.
    pub s_prior: Tensor<T>,
    /// Batch index whose content code serves as `c_rand`.
    pub partner: usize,
    /// Fixed `c_rand` in place of the partner's detached code. Lets a finite
    /// difference check see the same function the backward pass does.
    pub c_rand: Option<Tensor<T>>,
}

/// Term nodes, batch-averaged, in loss-weight order. The adversarial slot is
/// filled by [`add_gan_term`] once the discriminator is bound.
#[derive(Clone, Debug)]
pub struct Objective {
    pub terms: [Option<NodeId>; 8],
    /// Images generated from prior style codes; the discriminator's fakes.
    pub fakes: Vec<NodeId>,
}

fn batch_mean<T: Element>(g: &mut Graph<T>, nodes: &[NodeId]) -> Result<NodeId> {
    let k = T::lit(1.0 / nodes.len() as f64);
    let pairs: Vec<_> = nodes.iter().map(|&n| (n, k)).collect();
    Ok(g.weighted_sum(&pairs)?)
}

/// Content-grid masks of one object: area-averaged for AdaIN statistics and
/// style pooling, block-centre samples for the content term.
fn grid_masks<T: Element>(mask: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let area = downsample_area(mask, CONTENT_FACTOR)?;
    let nearest = downsample_nearest(mask, CONTENT_FACTOR)?;
    // An object too thin to cover any block centre falls back to coverage.
    let nearest = if nearest.data().iter().any(|&v| v > T::zero()) {
        nearest
    } else {
        area.map(|v| if v > T::zero() { T::one() } else { T::zero() })?
    };
    Ok((area, nearest))
}

/// Builds every non-adversarial term over the batch. `b` must bind at least
/// the encoder, MLP and decoder parameters.
pub fn build_generator_terms<T: Element>(g: &mut Graph<T>, b: &Binding, samples: &[SampleInputs<T>]) -> Result<Objective> {
    if samples.len() < 2 {
        return Err(Error::contract("a batch needs at least two samples"));
    }
    let n = samples.len();
    let mut xs = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    let mut pcs = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for smp in samples {
        let x = g.constant(smp.image.clone());
        let c = content_encoder(g, b, x)?;
        let pc = g.global_avg_pool(c, None)?;
        xs.push(x);
        cs.push(c);
        pcs.push(pc);
        masks.push(grid_masks(&smp.mask)?);
    }

    let mut per: [Vec<NodeId>; 8] = Default::default();
    let mut fakes = Vec::with_capacity(n);
    for (i, smp) in samples.iter().enumerate() {
        let (x, c, pc) = (xs[i], cs[i], pcs[i]);
        let (area, nearest) = (&masks[i].0, &masks[i].1);

        // Image- and object-level reconstruction share one style trunk.
        let trunk = style_trunk(g, b, x)?;
        let s = style_head(g, b, trunk, None)?;
        let s_obj = style_head(g, b, trunk, Some(area))?;
        let recon = generator(g, b, c, s, pc, pc, None)?;
        per[1].push(image_recon_node(g, recon, x, None)?);
        let recon_obj = generator(g, b, c, s_obj, pc, pc, Some(area))?;
        per[4].push(image_recon_node(g, recon_obj, x, Some(&smp.mask))?);

        // Latent reconstruction from a prior style code.
        let sp = g.constant(smp.s_prior.clone());
        let fake = generator(g, b, c, sp, pc, pc, None)?;
        let c_rec = content_encoder(g, b, fake)?;
        let s_rec = style_encoder(g, b, fake, None)?;
        let (lc, ls) = latent_recon_nodes(g, c_rec, c, s_rec, sp, None)?;
        per[2].push(lc);
        per[3].push(ls);
        fakes.push(fake);

        let fake_obj = generator(g, b, c, sp, pc, pc, Some(area))?;
        let c_rec_obj = content_encoder(g, b, fake_obj)?;
        let s_rec_obj = style_encoder(g, b, fake_obj, Some(area))?;
        let (loc, los) = latent_recon_nodes(g, c_rec_obj, c, s_rec_obj, sp, Some(nearest))?;
        per[5].push(loc);
        per[6].push(los);

        // Content disentanglement against another image's (fixed) code.
        let partner = smp.partner;
        if partner == i || partner >= n {
            return Err(Error::contract(format!("sample {i} has invalid partner {partner}")));
        }
        let c_rand = match &smp.c_rand {
            Some(t) => g.constant(t.clone()),
            None => g.detach(cs[partner]),
        };
        let pc_rand = g.global_avg_pool(c_rand, None)?;
        let fake_cd = generator(g, b, c, sp, pc, pc_rand, None)?;
        let c_cd = content_encoder(g, b, fake_cd)?;
        per[7].push(content_disentanglement_node(g, c_cd, c, c_rand)?);
    }

    let mut terms = [None; 8];
    for k in 1..8 {
        terms[k] = Some(batch_mean(g, &per[k])?);
    }
    Ok(Objective { terms, fakes })
}

/// Adds the non-saturating adversarial term; `b` must bind the discriminator.
pub fn add_gan_term<T: Element>(g: &mut Graph<T>, b: &Binding, obj: &mut Objective) -> Result<()> {
    let mut per = Vec::with_capacity(obj.fakes.len());
    for &f in &obj.fakes {
        let d = discriminator(g, b, f)?;
        per.push(gen_loss_node(g, d)?);
    }
    obj.terms[0] = Some(batch_mean(g, &per)?);
    Ok(())
}

/// `Σ λ_d · term_d`; zero-weight terms stay out of the total's graph.
pub fn weighted_total<T: Element>(g: &mut Graph<T>, obj: &Objective, w: &LossWeights) -> Result<NodeId> {
    let mut pairs = Vec::with_capacity(8);
    for (k, t) in obj.terms.iter().enumerate() {
        let t = t.ok_or_else(|| Error::contract(format!("loss term {k} was not built")))?;
        pairs.push((t, T::lit(w.0[k] as f64)));
    }
    Ok(g.weighted_sum(&pairs)?)
}

/// Draws the object, prior style code and `c_rand` partner for each sample.
pub fn draw_inputs(batch: &[&CorpusSample], style_dim: usize, rng: &mut RngState) -> Result<Vec<SampleInputs<f32>>> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::contract("a batch needs at least two samples"));
    }
    batch
        .iter()
        .enumerate()
        .map(|(i, smp)| {
            if smp.masks.is_empty() {
                return Err(Error::contract("corpus sample without an object mask"));
            }
            let (_, mask) = &smp.masks[rng.below(smp.masks.len())];
            mask.ensure_nondegenerate()?;
            let s_prior = Tensor::vector(rng.normal_vec(style_dim))?;
            let partner = (i + 1 + rng.below(n - 1)) % n;
            Ok(SampleInputs { image: smp.image.tensor().clone(), mask: mask.tensor().clone(), s_prior, partner, c_rand: None })
        })
        .collect()
}

/// Parameters that received a nonzero gradient in the step, by layout index.
pub type GradientMask = Vec<bool>;

fn collect_grads(
    grads: &sentigan_tensor::Gradients<f32>,
    b: &Binding,
    state: &AdamState,
    touched: &mut GradientMask,
) -> Vec<Option<Tensor>> {
    let nodes: std::collections::HashMap<usize, NodeId> = b.bound().collect();
    state
        .indices
        .iter()
        .map(|i| {
            let g = nodes.get(i).and_then(|&n| grads.get(n));
            if let Some(t) = &g {
                touched[*i] |= t.data().iter().any(|&v| v != 0.0);
            }
            g
        })
        .collect()
}

/// One discriminator update then one generator-side update.
pub fn train_step(
    batch: &[&CorpusSample],
    params: &mut ModelParams,
    gen_state: &mut AdamState,
    disc_state: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<LossReport> {
    Ok(train_step_traced(batch, params, gen_state, disc_state, cfg, rng)?.0)
}

pub fn train_step_traced(
    batch: &[&CorpusSample],
    params: &mut ModelParams,
    gen_state: &mut AdamState,
    disc_state: &mut AdamState,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(LossReport, GradientMask)> {
    let inputs = draw_inputs(batch, params.config().style_dim, rng)?;
    let mut touched = vec![false; params.layout().len()];

    let mut g = Graph::new();
    let mut b = Binding::new(params.layout().clone());
    b.bind_where(&mut g, params, true, |n| !is_disc(n));
    let mut obj = build_generator_terms(&mut g, &b, &inputs)?;

    // Discriminator: real images against detached prior-style fakes.
    let disc_loss = {
        let mut gd = Graph::new();
        let mut bd = Binding::new(params.layout().clone());
        bd.bind_where(&mut gd, params, true, is_disc);
        let mut per = Vec::with_capacity(inputs.len());
        for (smp, &f) in inputs.iter().zip(&obj.fakes) {
            let real = gd.constant(smp.image.clone());
            let fake = gd.constant(g.value(f).clone());
            let dr = discriminator(&mut gd, &bd, real)?;
            let df = discriminator(&mut gd, &bd, fake)?;
            per.push(disc_loss_node(&mut gd, dr, df)?);
        }
        let loss = batch_mean(&mut gd, &per)?;
        let grads = gd.backward(loss)?;
        let dg = collect_grads(&grads, &bd, disc_state, &mut touched);
        adam_step(params, &dg, disc_state, &cfg.adam)?;
        gd.value(loss).item()?
    };

    b.bind_where(&mut g, params, false, is_disc);
    add_gan_term(&mut g, &b, &mut obj)?;
    let total = weighted_total(&mut g, &obj, &cfg.weights)?;
    let grads = g.backward(total)?;
    let gg = collect_grads(&grads, &b, gen_state, &mut touched);
    adam_step(params, &gg, gen_state, &cfg.adam)?;

    let mut terms = [0.0f32; 8];
    for (k, t) in obj.terms.iter().enumerate() {
        terms[k] = g.value(t.expect("all terms built")).item()?;
    }
    let report = LossReport { terms, total: total_loss(&terms, &cfg.weights), disc: disc_loss };
    Ok((report, touched))
}

/// Owns the model and optimizer state across steps.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub params: ModelParams,
    pub adam_gen: AdamState,
    pub adam_disc: AdamState,
    pub rng: RngState,
    pub iteration: u64,
}

/// Stream tag for parameter initialization, kept apart from the step stream.
const INIT_STREAM: u64 = 0x1417;

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = RngState::new(cfg.seed);
        let params = init_params(&cfg.net, &mut rng.derive(INIT_STREAM))?;
        let adam_gen = AdamState::for_params(&params, |n| !is_disc(n));
        let adam_disc = AdamState::for_params(&params, is_disc);
        Ok(Self { cfg, params, adam_gen, adam_disc, rng, iteration: 0 })
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if *ck.config() != cfg.net {
            return Err(Error::contract("checkpoint network configuration differs from the training configuration"));
        }
        Ok(Self {
            cfg,
            params: ck.params,
            adam_gen: ck.adam_gen,
            adam_disc: ck.adam_disc,
            rng: RngState::at(ck.rng.0, ck.rng.1),
            iteration: ck.iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam_gen: self.adam_gen.clone(),
            adam_disc: self.adam_disc.clone(),
            iteration: self.iteration,
            rng: (self.rng.seed(), self.rng.counter()),
        }
    }

    /// Samples a batch of distinct corpus entries and takes one step.
    pub fn step(&mut self, corpus: &[CorpusSample]) -> Result<LossReport> {
        Ok(self.step_traced(corpus)?.0)
    }

    pub fn step_traced(&mut self, corpus: &[CorpusSample]) -> Result<(LossReport, GradientMask)> {
        let bs = self.cfg.batch_size;
        if corpus.len() < bs {
            return Err(Error::contract(format!("corpus of {} samples is smaller than batch {bs}", corpus.len())));
        }
        let s = self.cfg.net.image_size;
        if let Some(bad) = corpus.iter().find(|c| c.image.height() != s || c.image.width() != s) {
            return Err(Error::format(format!(
                "corpus image {}×{} does not match image_size {s}",
                bad.image.height(),
                bad.image.width()
            )));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        for k in 0..bs {
            let j = k + self.rng.below(order.len() - k);
            order.swap(k, j);
        }
        let batch: Vec<&CorpusSample> = order[..bs].iter().map(|&i| &corpus[i]).collect();
        let out = train_step_traced(&batch, &mut self.params, &mut self.adam_gen, &mut self.adam_disc, &self.cfg, &mut self.rng)?;
        self.iteration += 1;
        Ok(out)
    }
}

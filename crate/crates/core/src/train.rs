//! Mini-batch SGD with classic momentum and polynomial learning-rate decay.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, derive_seed, AugmentRanges, Normalization, SampleTriplet};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalOptions};
use crate::mask::{LabelMask, IGNORE};
use crate::net::{Checkpoint, Gradients, Network, NetworkConfig};
use crate::ops::{softmax_ce_ignore, ConvGrads};
use crate::tensor::{Dims, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    pub crop: usize,
    pub seed: u64,
    /// Validation interval in iterations; 0 evaluates only after the last one.
    pub eval_every: usize,
    /// Largest global gradient L2 norm; larger gradients are rescaled. 0 disables.
    pub grad_clip: f64,
    pub augment: AugmentRanges,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.01,
            poly_power: 0.9,
            momentum: 0.99,
            batch_size: 8,
            total_iters: 2000,
            crop: 48,
            seed: 0,
            eval_every: 0,
            grad_clip: 5.0,
            augment: AugmentRanges::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Argument(msg));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.poly_power > 0.0) {
            return fail(format!("poly_power must be positive, got {}", self.poly_power));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.total_iters == 0 {
            return fail("total_iters must be at least 1".into());
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return fail(format!("grad_clip must be non-negative, got {}", self.grad_clip));
        }
        if self.crop == 0 {
            return fail("crop must be positive".into());
        }
        let r = &self.augment;
        if !(r.min_scale > 0.0 && r.min_scale <= r.max_scale) {
            return fail(format!("bad scale range [{}, {}]", r.min_scale, r.max_scale));
        }
        Ok(())
    }
}

/// `base_lr * (1 - t / total_iters)^poly_power`.
pub fn poly_lr(t: usize, cfg: &TrainConfig) -> Result<f64> {
    if t > cfg.total_iters {
        return Err(Error::Argument(format!(
            "iteration {t} beyond total_iters {}",
            cfg.total_iters
        )));
    }
    let frac = 1.0 - t as f64 / cfg.total_iters as f64;
    Ok(cfg.base_lr * frac.powf(cfg.poly_power))
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub network: Network<f32>,
    /// One buffer per layer, in [`Network::layer_paths`] order.
    pub momentum: Vec<ConvGrads<f32>>,
    pub iteration: usize,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(network: Network<f32>, seed: u64) -> Self {
        let momentum = network.layers().into_iter().map(ConvGrads::zeros_like).collect();
        Self {
            network,
            momentum,
            iteration: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Classic momentum: `buf = momentum * buf + g; p -= lr * buf`.
pub fn sgd_step(state: &mut TrainState, grads: &Gradients<f32>, lr: f64, momentum: f64) -> Result<()> {
    let paths = state.network.layer_paths();
    if grads.layers.len() != paths.len() {
        return Err(Error::Shape(format!(
            "{} gradient layers for {} parameter layers",
            grads.layers.len(),
            paths.len()
        )));
    }
    for (path, (g, p)) in paths.iter().zip(grads.layers.iter().zip(state.network.layers())) {
        if g.weight.len() != p.weight.dims().len() || g.bias.len() != p.bias.len() {
            return Err(Error::Shape(format!("gradient for {path} does not match its shape")));
        }
        if !g.weight.iter().all(|v| v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {path}.weight")));
        }
        if !g.bias.iter().all(|v| v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient in {path}.bias")));
        }
    }
    let (lr, m) = (lr as f32, momentum as f32);
    let layers = state.network.layers_mut();
    for ((layer, g), buf) in layers.into_iter().zip(&grads.layers).zip(&mut state.momentum) {
        let update = |params: &mut [f32], grad: &[f32], buf: &mut [f32]| {
            for ((p, &g), b) in params.iter_mut().zip(grad).zip(buf.iter_mut()) {
                *b = m * *b + g;
                *p -= lr * *b;
            }
        };
        update(layer.weight.values_mut(), &g.weight, &mut buf.weight);
        update(&mut layer.bias, &g.bias, &mut buf.bias);
    }
    state.iteration += 1;
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm` (0 leaves
/// them alone). Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients<f32>, max_norm: f64) -> f64 {
    let norm = grads
        .layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias))
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for l in &mut grads.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= scale);
        }
    }
    norm
}

/// One log line; `val_miou` is set on evaluation iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub val_miou: Option<f64>,
}

pub const METRICS_HEADER: &str = "iter,lr,loss,val_miou";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        let val = r.val_miou.map_or_else(String::new, |v| v.to_string());
        writeln!(out, "{},{},{},{}", r.iter, r.lr, r.loss, val).expect("write to string");
    }
    out
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub normalization: Normalization,
    pub log: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(self.network.clone(), self.normalization);
        ckpt.meta.insert("iterations".into(), self.log.len().to_string());
        ckpt
    }
}

/// Augmented, normalized mini-batch: images plus fine (target) and coarse masks.
pub struct Batch {
    pub image: Tensor4<f32>,
    pub fine: Vec<LabelMask>,
    pub coarse: Vec<LabelMask>,
}

/// Draws `batch_size` triplets with replacement and augments each with a seed
/// derived from `(seed, iteration, slot)`.
pub fn sample_batch(
    state: &mut TrainState,
    triplets: &[SampleTriplet],
    norm: &Normalization,
    cfg: &TrainConfig,
) -> Batch {
    let crop = cfg.crop;
    let mut image = Tensor4::zeros(Dims::new(cfg.batch_size, 3, crop, crop));
    let mut fine = Vec::with_capacity(cfg.batch_size);
    let mut coarse = Vec::with_capacity(cfg.batch_size);
    let sample_len = 3 * crop * crop;
    for slot in 0..cfg.batch_size {
        let pick = state.rng.random_range(0..triplets.len());
        let seed = derive_seed(cfg.seed, state.iteration as u64 + 1, slot as u64);
        let a = augment(&triplets[pick], crop, seed, &cfg.augment, norm);
        image.values_mut()[slot * sample_len..(slot + 1) * sample_len]
            .copy_from_slice(a.image.values());
        fine.push(a.fine);
        coarse.push(a.coarse);
    }
    Batch { image, fine, coarse }
}

/// Loss and gradients of one batch. The loss targets the fine masks.
pub fn batch_gradients(network: &Network<f32>, batch: &Batch) -> Result<(f64, Gradients<f32>)> {
    let coarse = network.is_detailer().then_some(batch.coarse.as_slice());
    let (logits, trace) = network.forward_train(&batch.image, coarse)?;
    let (loss, grad) = softmax_ce_ignore(&logits, &batch.fine, IGNORE)?;
    let grads = network.backward(&trace, &grad)?;
    Ok((f64::from(loss), grads))
}

/// Trains a fresh network built from `net_cfg` on `triplets`, supervising
/// with each triplet's `fine` mask. Validation mIoU is logged when `val` is given.
pub fn train(
    net_cfg: &NetworkConfig,
    triplets: &[SampleTriplet],
    val: Option<&[SampleTriplet]>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    net_cfg.validate()?;
    if triplets.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if cfg.crop % net_cfg.encoder_downsample != 0 {
        return Err(Error::Argument(format!(
            "crop {} is not a multiple of the encoder downsample {}",
            cfg.crop, net_cfg.encoder_downsample
        )));
    }
    if cfg.crop < net_cfg.min_input_side() {
        return Err(Error::Argument(format!(
            "crop {} below the minimum input side {}",
            cfg.crop,
            net_cfg.min_input_side()
        )));
    }
    for t in triplets {
        t.fine.validate(net_cfg.num_classes)?;
        t.coarse.validate(net_cfg.num_classes)?;
    }

    let normalization = Normalization::from_triplets(triplets);
    let network = Network::new(net_cfg.clone())?;
    let mut state = TrainState::new(network, derive_seed(cfg.seed, 0, 0));
    let mut log = Vec::with_capacity(cfg.total_iters);
    for t in 0..cfg.total_iters {
        let lr = poly_lr(t, cfg)?;
        let batch = sample_batch(&mut state, triplets, &normalization, cfg);
        let (loss, mut grads) = batch_gradients(&state.network, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at iteration {t}: {loss}")));
        }
        clip_grad_norm(&mut grads, cfg.grad_clip);
        sgd_step(&mut state, &grads, lr, cfg.momentum)?;
        let last = t + 1 == cfg.total_iters;
        let due = cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0;
        let val_miou = match val {
            Some(v) if due || last => Some(
                evaluate_model(
                    &state.network,
                    &normalization,
                    v,
                    EvalOptions::for_network(&state.network),
                )?
                .miou,
            ),
            _ => None,
        };
        log.push(MetricsRow {
            iter: t,
            lr,
            loss,
            val_miou,
        });
    }
    Ok(TrainOutcome {
        network: state.network,
        normalization,
        log,
    })
}

//! Pyramid-pooling classifier and its coarse-mask-conditioned detailer variant.
//!
//! Topology (feature resolution is `1 / encoder_downsample` of the input):
//!
//! ```text
//! image -> [3x3 conv + ReLU] x len(encoder_channels)      (stride 2 until the downsample is reached)
//!       -> (before-pool: concat embedding)
//!       -> PPM: features ++ upsample(ReLU(1x1 conv(adaptive_pool(features, b)))) for b in bins
//!       -> (after-pool: concat embedding)
//!       -> final block: 3x3 conv + ReLU
//!       -> (after-final: concat embedding)
//!       -> head: 3x3 conv to C channels                    = correction p
//!       -> bilinear upsample to input size
//!       -> (detailer: + one-hot(coarse) at full resolution)
//! ```
//!
//! The embedding is a 1x1 convolution of the coarse one-hot mask after
//! nearest-neighbour resampling to feature resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{InjectionPoint, NetworkConfig};
use crate::error::{shape_err, Error, Result};
use crate::mask::{LabelMask, IGNORE};
use crate::ops::{self, ConvGrads, ConvParams};
use crate::tensor::{Dims, Scalar, Tensor4};

pub const IMAGE_CHANNELS: usize = 3;

/// One-hot encoding of a batch of masks; ignore pixels become all-zero.
pub fn one_hot_encode<T: Scalar>(masks: &[LabelMask], num_classes: usize) -> Result<Tensor4<T>> {
    let Some(first) = masks.first() else {
        return shape_err("one-hot encoding of an empty batch");
    };
    let (w, h) = (first.width(), first.height());
    let dims = Dims::new(masks.len(), num_classes, h, w);
    let mut out = Tensor4::zeros(dims);
    for (n, m) in masks.iter().enumerate() {
        if !m.same_dims(first) {
            return shape_err(format!(
                "mask {n} is {}x{}, batch is {w}x{h}",
                m.width(),
                m.height()
            ));
        }
        m.validate(num_classes)?;
        let sample = out.sample_mut(n);
        for (i, &label) in m.labels().iter().enumerate() {
            if label != IGNORE {
                sample[usize::from(label) * h * w + i] = T::one();
            }
        }
    }
    Ok(out)
}

/// Resamples a one-hot tensor to `target_h x target_w` (nearest) and applies
/// the 1x1 embedding convolution.
pub fn embed_coarse<T: Scalar>(
    one_hot: &Tensor4<T>,
    target_h: usize,
    target_w: usize,
    embed: &ConvParams<T>,
) -> Result<Tensor4<T>> {
    if embed.kernel() != 1 {
        return Err(Error::Argument(format!(
            "embedding must be a 1x1 convolution, got kernel {}",
            embed.kernel()
        )));
    }
    let resized = ops::nearest_resize(one_hot, target_h, target_w)?;
    ops::conv2d_forward(&resized, embed)
}

/// Channel counts at each stage for a given configuration.
#[derive(Clone, Copy, Debug)]
struct Plan {
    enc_out: usize,
    embed: usize,
    pool_in: usize,
    branch: usize,
    ppm_out: usize,
    final_in: usize,
    head_in: usize,
}

impl Plan {
    fn new(cfg: &NetworkConfig) -> Self {
        let enc_out = *cfg.encoder_channels.last().expect("validated nonempty");
        let embed = if cfg.injection.is_detailer() {
            cfg.embed_width
        } else {
            0
        };
        let at = |p: InjectionPoint| if cfg.injection == p { embed } else { 0 };
        let pool_in = enc_out + at(InjectionPoint::BeforePool);
        let branch = (enc_out / cfg.ppm_bins.len()).max(1);
        let ppm_out = pool_in + branch * cfg.ppm_bins.len();
        let final_in = ppm_out + at(InjectionPoint::AfterPool);
        let head_in = cfg.final_channels + at(InjectionPoint::AfterFinal);
        Self {
            enc_out,
            embed,
            pool_in,
            branch,
            ppm_out,
            final_in,
            head_in,
        }
    }
}

/// Gradients for every layer, in [`Network::layer_paths`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<ConvGrads<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(ConvGrads::is_finite)
    }
}

/// Intermediate activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    image: Tensor4<T>,
    enc_pre: Vec<Tensor4<T>>,
    pool_in: Tensor4<T>,
    pooled: Vec<Tensor4<T>>,
    branch_pre: Vec<Tensor4<T>>,
    final_in: Tensor4<T>,
    final_pre: Tensor4<T>,
    head_in: Tensor4<T>,
    embed_in: Option<Tensor4<T>>,
    correction_dims: Dims,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    encoder: Vec<ConvParams<T>>,
    ppm: Vec<ConvParams<T>>,
    final_block: ConvParams<T>,
    head: ConvParams<T>,
    embed: Option<ConvParams<T>>,
}

impl<T: Scalar> Network<T> {
    /// He-initialised network; weights are a pure function of `config.seed`.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let plan = Plan::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let strided = config.strided_layers();
        let mut c_in = IMAGE_CHANNELS;
        let mut encoder = Vec::with_capacity(config.encoder_channels.len());
        for (i, &c_out) in config.encoder_channels.iter().enumerate() {
            let stride = if i < strided { 2 } else { 1 };
            encoder.push(ConvParams::he_init(c_out, c_in, 3, stride, 1, &mut rng));
            c_in = c_out;
        }
        let ppm = config
            .ppm_bins
            .iter()
            .map(|_| ConvParams::he_init(plan.branch, plan.pool_in, 1, 1, 0, &mut rng))
            .collect();
        let final_block = ConvParams::he_init(config.final_channels, plan.final_in, 3, 1, 1, &mut rng);
        let head = ConvParams::he_init(config.num_classes, plan.head_in, 3, 1, 1, &mut rng);
        let embed = config.injection.is_detailer().then(|| {
            ConvParams::he_init(plan.embed, config.num_classes, 1, 1, 0, &mut rng)
        });
        Ok(Self {
            config,
            encoder,
            ppm,
            final_block,
            head,
            embed,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn is_detailer(&self) -> bool {
        self.config.injection.is_detailer()
    }

    /// Stable names of every layer, matching [`Network::layers`] order.
    pub fn layer_paths(&self) -> Vec<String> {
        let mut paths: Vec<String> = (0..self.encoder.len()).map(|i| format!("encoder.{i}")).collect();
        paths.extend((0..self.ppm.len()).map(|i| format!("ppm.{i}")));
        paths.push("final".into());
        paths.push("head".into());
        if self.embed.is_some() {
            paths.push("embed".into());
        }
        paths
    }

    pub fn layers(&self) -> Vec<&ConvParams<T>> {
        self.encoder
            .iter()
            .chain(&self.ppm)
            .chain([&self.final_block, &self.head])
            .chain(self.embed.as_ref())
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvParams<T>> {
        self.encoder
            .iter_mut()
            .chain(self.ppm.iter_mut())
            .chain([&mut self.final_block, &mut self.head])
            .chain(self.embed.as_mut())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|l| l.num_params()).sum()
    }

    /// Zeroes the head so the correction tensor is identically zero.
    pub fn zero_correction_head(&mut self) {
        self.head.weight.values_mut().iter_mut().for_each(|v| *v = T::zero());
        self.head.bias.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |p: &ConvParams<T>| ConvParams {
            weight: p.weight.cast(),
            bias: p.bias.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            stride: p.stride,
            padding: p.padding,
        };
        Network {
            config: self.config.clone(),
            encoder: self.encoder.iter().map(conv).collect(),
            ppm: self.ppm.iter().map(conv).collect(),
            final_block: conv(&self.final_block),
            head: conv(&self.head),
            embed: self.embed.as_ref().map(conv),
        }
    }

    fn check_image(&self, image: &Tensor4<T>) -> Result<()> {
        let d = image.dims();
        let ds = self.config.encoder_downsample;
        if d.c != IMAGE_CHANNELS {
            return shape_err(format!("image {d} must have {IMAGE_CHANNELS} channels"));
        }
        if d.n == 0 || d.h % ds != 0 || d.w % ds != 0 {
            return shape_err(format!("image {d} spatial dims not divisible by downsample {ds}"));
        }
        let min = self.config.min_input_side();
        if d.h < min || d.w < min {
            return shape_err(format!("image {d} smaller than the minimum side {min}"));
        }
        Ok(())
    }

    /// Logits of the plain classifier at input resolution.
    pub fn forward_classifier(&self, image: &Tensor4<T>) -> Result<Tensor4<T>> {
        if self.is_detailer() {
            return Err(Error::Contract(format!(
                "forward_classifier on a detailer ({})",
                self.config.injection
            )));
        }
        Ok(self.forward_train(image, None)?.0)
    }

    /// Logits of the detailer: upsampled correction plus the coarse one-hot.
    pub fn forward_detailer(&self, image: &Tensor4<T>, coarse: &[LabelMask]) -> Result<Tensor4<T>> {
        if !self.is_detailer() {
            return Err(Error::Contract(
                "forward_detailer requires an injection point".into(),
            ));
        }
        Ok(self.forward_train(image, Some(coarse))?.0)
    }

    /// Dispatches on the network kind; `coarse` is required for detailers.
    pub fn forward(&self, image: &Tensor4<T>, coarse: Option<&[LabelMask]>) -> Result<Tensor4<T>> {
        Ok(self.forward_train(image, coarse)?.0)
    }

    /// Argmax labels for a batch, lowest class winning ties.
    pub fn predict(&self, image: &Tensor4<T>, coarse: Option<&[LabelMask]>) -> Result<Vec<LabelMask>> {
        Ok(ops::argmax_labels(&self.forward(image, coarse)?))
    }

    /// Forward pass that also returns the activations needed by [`Network::backward`].
    pub fn forward_train(
        &self,
        image: &Tensor4<T>,
        coarse: Option<&[LabelMask]>,
    ) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_image(image)?;
        let d = image.dims();
        let injection = self.config.injection;
        let coarse_hot = match (injection.is_detailer(), coarse) {
            (false, _) => None,
            (true, None) => {
                return Err(Error::Contract("detailer forward requires coarse masks".into()))
            }
            (true, Some(masks)) => {
                if masks.len() != d.n {
                    return shape_err(format!("{} coarse masks for image batch {d}", masks.len()));
                }
                for m in masks {
                    if (m.height(), m.width()) != (d.h, d.w) {
                        return shape_err(format!(
                            "coarse mask {}x{} does not match image {d}",
                            m.width(),
                            m.height()
                        ));
                    }
                }
                Some(one_hot_encode::<T>(masks, self.config.num_classes)?)
            }
        };

        let mut enc_pre = Vec::with_capacity(self.encoder.len());
        let mut x = image.clone();
        for layer in &self.encoder {
            let pre = ops::conv2d_forward(&x, layer)?;
            x = ops::relu(&pre);
            enc_pre.push(pre);
        }
        let fd = x.dims();

        let (embed_in, embedding) = match (&coarse_hot, &self.embed) {
            (Some(hot), Some(embed)) => {
                let resized = ops::nearest_resize(hot, fd.h, fd.w)?;
                let e = ops::conv2d_forward(&resized, embed)?;
                (Some(resized), Some(e))
            }
            _ => (None, None),
        };
        let inject = |at: InjectionPoint, t: Tensor4<T>| -> Result<Tensor4<T>> {
            match &embedding {
                Some(e) if injection == at => ops::concat_channels(&t, e),
                _ => Ok(t),
            }
        };

        let pool_in = inject(InjectionPoint::BeforePool, x)?;
        let mut pooled = Vec::with_capacity(self.ppm.len());
        let mut branch_pre = Vec::with_capacity(self.ppm.len());
        let mut branches = Vec::with_capacity(self.ppm.len());
        for (&bin, layer) in self.config.ppm_bins.iter().zip(&self.ppm) {
            let p = ops::adaptive_avg_pool(&pool_in, bin, bin)?;
            let pre = ops::conv2d_forward(&p, layer)?;
            branches.push(ops::bilinear_upsample(&ops::relu(&pre), fd.h, fd.w)?);
            pooled.push(p);
            branch_pre.push(pre);
        }
        let ppm_out = {
            let mut parts = vec![&pool_in];
            parts.extend(branches.iter());
            ops::concat_many(&parts)?
        };

        let final_in = inject(InjectionPoint::AfterPool, ppm_out)?;
        let final_pre = ops::conv2d_forward(&final_in, &self.final_block)?;
        let head_in = inject(InjectionPoint::AfterFinal, ops::relu(&final_pre))?;
        let correction = ops::conv2d_forward(&head_in, &self.head)?;
        let correction_dims = correction.dims();
        let mut logits = ops::bilinear_upsample(&correction, d.h, d.w)?;
        if let Some(hot) = &coarse_hot {
            logits = ops::add(&logits, hot)?;
        }

        let trace = Trace {
            image: image.clone(),
            enc_pre,
            pool_in,
            pooled,
            branch_pre,
            final_in,
            final_pre,
            head_in,
            embed_in,
            correction_dims,
        };
        Ok((logits, trace))
    }

    /// Parameter gradients of `sum(grad_logits * logits)` for the traced pass.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor4<T>) -> Result<Gradients<T>> {
        let plan = Plan::new(&self.config);
        let injection = self.config.injection;
        let img = trace.image.dims();
        grad_logits.expect_dims(
            Dims::new(img.n, self.config.num_classes, img.h, img.w),
            "backward grad_logits",
        )?;
        let mut embed_grad: Option<Tensor4<T>> = None;

        // The identity skip has no parameters; its gradient reaches the
        // upsampled correction unchanged.
        let g_correction = ops::bilinear_upsample_backward(trace.correction_dims, grad_logits)?;
        let (g_head_in, head_grads) = ops::conv2d_backward(&trace.head_in, &self.head, &g_correction)?;
        let g_final_act = if injection == InjectionPoint::AfterFinal {
            let (a, e) = ops::concat_channels_backward(self.config.final_channels, &g_head_in)?;
            embed_grad = Some(e);
            a
        } else {
            g_head_in
        };
        let g_final_pre = ops::relu_backward(&trace.final_pre, &g_final_act)?;
        let (g_final_in, final_grads) =
            ops::conv2d_backward(&trace.final_in, &self.final_block, &g_final_pre)?;
        let g_ppm_out = if injection == InjectionPoint::AfterPool {
            let (a, e) = ops::concat_channels_backward(plan.ppm_out, &g_final_in)?;
            embed_grad = Some(e);
            a
        } else {
            g_final_in
        };

        let mut groups = vec![plan.pool_in];
        groups.extend(std::iter::repeat_n(plan.branch, self.ppm.len()));
        let mut parts = ops::split_many(&g_ppm_out, &groups)?.into_iter();
        let mut g_pool_in = parts.next().expect("pool input group");
        let mut ppm_grads = Vec::with_capacity(self.ppm.len());
        for (i, g_branch) in parts.enumerate() {
            let g_act = ops::bilinear_upsample_backward(trace.branch_pre[i].dims(), &g_branch)?;
            let g_pre = ops::relu_backward(&trace.branch_pre[i], &g_act)?;
            let (g_pooled, grads) = ops::conv2d_backward(&trace.pooled[i], &self.ppm[i], &g_pre)?;
            let g_in = ops::adaptive_avg_pool_backward(trace.pool_in.dims(), &g_pooled)?;
            g_pool_in = ops::add(&g_pool_in, &g_in)?;
            ppm_grads.push(grads);
        }

        let mut g = if injection == InjectionPoint::BeforePool {
            let (a, e) = ops::concat_channels_backward(plan.enc_out, &g_pool_in)?;
            embed_grad = Some(e);
            a
        } else {
            g_pool_in
        };

        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        for i in (0..self.encoder.len()).rev() {
            let g_pre = ops::relu_backward(&trace.enc_pre[i], &g)?;
            let input = if i == 0 {
                trace.image.clone()
            } else {
                ops::relu(&trace.enc_pre[i - 1])
            };
            let (g_in, grads) = ops::conv2d_backward(&input, &self.encoder[i], &g_pre)?;
            enc_grads.push(grads);
            g = g_in;
        }
        enc_grads.reverse();

        let mut layers = enc_grads;
        layers.extend(ppm_grads);
        layers.push(final_grads);
        layers.push(head_grads);
        if let (Some(embed), Some(input)) = (&self.embed, &trace.embed_in) {
            let g_embed = embed_grad.expect("detailer records an embedding gradient");
            let (_, grads) = ops::conv2d_backward(input, embed, &g_embed)?;
            layers.push(grads);
        }
        Ok(Gradients { layers })
    }
}

//! Seeded gradient probes for every differentiable op and for whole networks.
//!
//! Each op probe builds a random instance from its seed, takes the scalar
//! objective `sum(r * op(x))` for a random projection `r`, and compares the
//! op's backward pass with central differences in double precision.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_gradient, FiniteDiff, GradReport};
use crate::error::Result;
use crate::mask::{LabelMask, IGNORE};
use crate::net::{InjectionPoint, Network, NetworkConfig};
use crate::ops::{self, ConvParams};
use crate::tensor::{Dims, Tensor4};

/// Side length of the end-to-end network probes.
pub const NETWORK_SIDE: usize = 24;

fn random_tensor(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0..1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, side: usize, classes: u8, ignore_prob: f64) -> LabelMask {
    LabelMask::from_fn(side, side, |_, _| {
        if rng.random::<f64>() < ignore_prob {
            IGNORE
        } else {
            rng.random_range(0..classes)
        }
    })
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

fn all(len: usize) -> std::ops::Range<usize> {
    0..len
}

/// Checks `d/dx sum(r * op(x))` against `analytic` over every coordinate of `x`.
fn probe(
    x: &Tensor4<f64>,
    r: &Tensor4<f64>,
    analytic: &Tensor4<f64>,
    op: impl Fn(&Tensor4<f64>) -> Tensor4<f64>,
) -> GradReport {
    let dims = x.dims();
    let mut flat = x.values().to_vec();
    check_gradient(&mut flat, analytic.values(), all(dims.len()), FiniteDiff::default(), |v| {
        let t = Tensor4::from_vec(dims, v.to_vec()).expect("probe dims");
        dot(r, &op(&t))
    })
}

fn random_conv(rng: &mut ChaCha8Rng) -> (Tensor4<f64>, ConvParams<f64>) {
    let k = if rng.random::<bool>() { 3 } else { 1 };
    let stride = rng.random_range(1..=2);
    let pad = if k == 3 { rng.random_range(0..=1) } else { 0 };
    let (c_in, c_out) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let dims = Dims::new(rng.random_range(1..=2), c_in, rng.random_range(4..=7), rng.random_range(4..=7));
    let mut params = ConvParams::he_init(c_out, c_in, k, stride, pad, rng);
    params.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    (random_tensor(rng, dims), params)
}

pub fn conv_input(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, params) = random_conv(&mut rng);
    let r = random_tensor(&mut rng, params.output_dims(x.dims())?);
    let (gx, _) = ops::conv2d_backward(&x, &params, &r)?;
    Ok(probe(&x, &r, &gx, |t| ops::conv2d_forward(t, &params).expect("conv")))
}

pub fn conv_weight(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, params) = random_conv(&mut rng);
    let r = random_tensor(&mut rng, params.output_dims(x.dims())?);
    let (_, grads) = ops::conv2d_backward(&x, &params, &r)?;
    let wd = params.weight.dims();
    let analytic = Tensor4::from_vec(wd, grads.weight)?;
    Ok(probe(&params.weight, &r, &analytic, |w| {
        let p = ConvParams {
            weight: w.clone(),
            ..params.clone()
        };
        ops::conv2d_forward(&x, &p).expect("conv")
    }))
}

pub fn conv_bias(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (x, params) = random_conv(&mut rng);
    let r = random_tensor(&mut rng, params.output_dims(x.dims())?);
    let (_, grads) = ops::conv2d_backward(&x, &params, &r)?;
    let bd = Dims::new(1, 1, 1, params.bias.len());
    let bias = Tensor4::from_vec(bd, params.bias.clone())?;
    let analytic = Tensor4::from_vec(bd, grads.bias)?;
    Ok(probe(&bias, &r, &analytic, |b| {
        let p = ConvParams {
            bias: b.values().to_vec(),
            ..params.clone()
        };
        ops::conv2d_forward(&x, &p).expect("conv")
    }))
}

fn small_dims(rng: &mut ChaCha8Rng) -> Dims {
    Dims::new(
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(2..=6),
        rng.random_range(2..=6),
    )
}

pub fn relu(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = small_dims(&mut rng);
    let x = random_tensor(&mut rng, dims);
    let r = random_tensor(&mut rng, dims);
    let g = ops::relu_backward(&x, &r)?;
    Ok(probe(&x, &r, &g, ops::relu))
}

pub fn add(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = small_dims(&mut rng);
    let (a, b) = (random_tensor(&mut rng, dims), random_tensor(&mut rng, dims));
    let r = random_tensor(&mut rng, dims);
    let (ga, gb) = ops::add_backward(&r);
    let mut report = probe(&a, &r, &ga, |t| ops::add(t, &b).expect("add"));
    merge(&mut report, probe(&b, &r, &gb, |t| ops::add(&a, t).expect("add")));
    Ok(report)
}

pub fn concat(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let da = small_dims(&mut rng);
    let db = Dims::new(da.n, rng.random_range(1..=3), da.h, da.w);
    let (a, b) = (random_tensor(&mut rng, da), random_tensor(&mut rng, db));
    let r = random_tensor(&mut rng, Dims::new(da.n, da.c + db.c, da.h, da.w));
    let (ga, gb) = ops::concat_channels_backward(da.c, &r)?;
    let mut report = probe(&a, &r, &ga, |t| ops::concat_channels(t, &b).expect("concat"));
    merge(&mut report, probe(&b, &r, &gb, |t| ops::concat_channels(&a, t).expect("concat")));
    Ok(report)
}

pub fn adaptive_pool(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(rng.random_range(1..=2), 2, rng.random_range(3..=9), rng.random_range(3..=9));
    let (oh, ow) = (rng.random_range(1..=dims.h), rng.random_range(1..=dims.w));
    let x = random_tensor(&mut rng, dims);
    let r = random_tensor(&mut rng, Dims::new(dims.n, dims.c, oh, ow));
    let g = ops::adaptive_avg_pool_backward(dims, &r)?;
    Ok(probe(&x, &r, &g, |t| ops::adaptive_avg_pool(t, oh, ow).expect("pool")))
}

pub fn bilinear(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims::new(rng.random_range(1..=2), 2, rng.random_range(1..=6), rng.random_range(1..=6));
    let (oh, ow) = (rng.random_range(dims.h..=12), rng.random_range(dims.w..=12));
    let x = random_tensor(&mut rng, dims);
    let r = random_tensor(&mut rng, Dims::new(dims.n, dims.c, oh, ow));
    let g = ops::bilinear_upsample_backward(dims, &r)?;
    Ok(probe(&x, &r, &g, |t| ops::bilinear_upsample(t, oh, ow).expect("upsample")))
}

pub fn cross_entropy(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = rng.random_range(2..=6);
    let dims = Dims::new(rng.random_range(1..=2), rng.random_range(2..=5), side, side);
    let x = Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-3.0..3.0));
    let targets: Vec<LabelMask> = (0..dims.n)
        .map(|_| random_mask(&mut rng, side, dims.c as u8, 0.25))
        .collect();
    let (_, g) = ops::softmax_ce_ignore(&x, &targets, IGNORE)?;
    let mut flat = x.values().to_vec();
    Ok(check_gradient(&mut flat, g.values(), all(dims.len()), FiniteDiff::default(), |v| {
        let t = Tensor4::from_vec(dims, v.to_vec()).expect("dims");
        ops::softmax_ce_ignore(&t, &targets, IGNORE).expect("loss").0
    }))
}

/// Folds `other` into `acc`, keeping the worst error.
pub fn merge(acc: &mut GradReport, other: GradReport) {
    acc.checked += other.checked;
    acc.kinks += other.kinks;
    if other.worst_index.is_some() && (acc.worst_index.is_none() || other.max_rel_error > acc.max_rel_error) {
        acc.max_rel_error = other.max_rel_error;
        acc.worst_index = other.worst_index;
        acc.worst_values = other.worst_values;
    }
}

pub type OpProbe = fn(u64) -> Result<GradReport>;

/// Every op probe, by name.
pub fn op_probes() -> Vec<(&'static str, OpProbe)> {
    vec![
        ("conv2d.input", conv_input as OpProbe),
        ("conv2d.weight", conv_weight),
        ("conv2d.bias", conv_bias),
        ("relu", relu),
        ("add", add),
        ("concat_channels", concat),
        ("adaptive_avg_pool", adaptive_pool),
        ("bilinear_upsample", bilinear),
        ("softmax_ce_ignore", cross_entropy),
    ]
}

/// Per-layer report of end-to-end loss gradients for a network built from
/// `config`, probing `per_layer` random weights and one bias per layer.
pub fn network(
    config: &NetworkConfig,
    seed: u64,
    per_layer: usize,
    settings: FiniteDiff,
) -> Result<Vec<(String, GradReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(config.clone().with_seed(seed))?;
    for layer in net.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let classes = config.num_classes as u8;
    let image = random_tensor(&mut rng, Dims::new(2, 3, NETWORK_SIDE, NETWORK_SIDE));
    let targets: Vec<LabelMask> = (0..2).map(|_| random_mask(&mut rng, NETWORK_SIDE, classes, 0.2)).collect();
    let coarse: Vec<LabelMask> = (0..2).map(|_| random_mask(&mut rng, NETWORK_SIDE, classes, 0.4)).collect();
    let coarse = net.is_detailer().then_some(coarse.as_slice());

    let loss = |n: &Network<f64>| -> f64 {
        let logits = n.forward(&image, coarse).expect("forward");
        ops::softmax_ce_ignore(&logits, &targets, IGNORE).expect("loss").0
    };
    let (logits, trace) = net.forward_train(&image, coarse)?;
    let (_, g_logits) = ops::softmax_ce_ignore(&logits, &targets, IGNORE)?;
    let grads = net.backward(&trace, &g_logits)?;

    let mut out = Vec::new();
    for (li, path) in net.layer_paths().into_iter().enumerate() {
        let mut probe_net = net.clone();
        let mut weights = net.layers()[li].weight.values().to_vec();
        let mut report = probe_until(
            &mut rng,
            &mut weights,
            &grads.layers[li].weight,
            per_layer,
            settings,
            |w| {
                probe_net.layers_mut()[li].weight.values_mut().copy_from_slice(w);
                loss(&probe_net)
            },
        );
        let mut probe_net = net.clone();
        let mut bias = net.layers()[li].bias.clone();
        let bias_report = probe_until(&mut rng, &mut bias, &grads.layers[li].bias, 1, settings, |b| {
            probe_net.layers_mut()[li].bias.copy_from_slice(b);
            loss(&probe_net)
        });
        merge(&mut report, bias_report);
        out.push((path, report));
    }
    Ok(out)
}

/// Probes random coordinates until `want` of them are smooth, trying at most
/// four times as many; coordinates on a ReLU kink count as kinks only.
fn probe_until(
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    analytic: &[f64],
    want: usize,
    settings: FiniteDiff,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradReport {
    let mut report = GradReport::default();
    for i in sample(rng, x.len(), (4 * want).min(x.len())) {
        merge(&mut report, check_gradient(x, analytic, [i], settings, &mut f));
        if report.checked >= want {
            break;
        }
    }
    report
}

/// The classifier and the three detailer variants at the default architecture.
pub fn network_configs(num_classes: usize) -> Vec<NetworkConfig> {
    let mut configs = vec![NetworkConfig::classifier(num_classes)];
    configs.extend(
        InjectionPoint::DETAILER
            .iter()
            .map(|&p| NetworkConfig::detailer(num_classes, p)),
    );
    configs
}

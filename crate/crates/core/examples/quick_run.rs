//! Trains a classifier and a detailer on a small synthetic set and prints validation mIoU.
//!
//! Usage: `cargo run --example quick_run -- [train_size] [iters] [seed] [lr] [momentum]`

use std::time::Instant;

use detailnet::data::{generate_dataset, CoarsenSpec, SceneSpec};
use detailnet::eval::{evaluate_coarse, evaluate_model, EvalOptions};
use detailnet::net::{InjectionPoint, NetworkConfig};
use detailnet::train::{train, TrainConfig};

fn main() -> detailnet::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let size: usize = arg(0, "50").parse().unwrap();
    let iters: usize = arg(1, "300").parse().unwrap();
    let seed: u64 = arg(2, "0").parse().unwrap();
    let lr: f64 = arg(3, "0.01").parse().unwrap();
    let momentum: f64 = arg(4, "0.99").parse().unwrap();

    let scene = SceneSpec::new(5, 48, 48);
    let coarse = CoarsenSpec::default();
    let train_set = generate_dataset(&scene, &coarse, size, 1000 + seed)?;
    let val = generate_dataset(&scene, &coarse, 50, 7)?;
    println!("coarse baseline miou {:.4}", evaluate_coarse(&val)?.miou);

    let cfg = TrainConfig {
        total_iters: iters,
        seed,
        base_lr: lr,
        momentum,
        ..TrainConfig::default()
    };
    for net in [
        NetworkConfig::classifier(5).with_seed(seed),
        NetworkConfig::detailer(5, InjectionPoint::AfterFinal).with_seed(seed),
    ] {
        let start = Instant::now();
        let out = train(&net, &train_set.triplets, None, &cfg)?;
        let opts = EvalOptions::for_network(&out.network);
        let plain = evaluate_model(&out.network, &out.normalization, &val.triplets, opts)?;
        let comp = evaluate_model(&out.network, &out.normalization, &val.triplets, opts.composite())?;
        let first = out.log.first().unwrap().loss;
        let last: f64 = out.log.iter().rev().take(20).map(|r| r.loss).sum::<f64>() / 20.0;
        println!(
            "{:<12} miou {:.4} composite {:.4} loss {:.3} -> {:.3} in {:.1}s",
            net.injection.as_str(),
            plain.miou,
            comp.miou,
            first,
            last,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

use detailnet::data::{generate_dataset, AugmentRanges, CoarsenSpec, Dataset, Normalization, SceneSpec};
use detailnet::eval::{detailed_masks, evaluate_model, EvalOptions};
use detailnet::net::{Checkpoint, InjectionPoint, Network, NetworkConfig};
use detailnet::ops::softmax_ce_ignore;
use detailnet::train::{batch_gradients, sample_batch, sgd_step, train, TrainConfig, TrainState};
use detailnet::{Dims, LabelMask, Tensor4, IGNORE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIDE: usize = 48;

fn dataset(count: usize, seed: u64, coarsen: CoarsenSpec) -> Dataset {
    generate_dataset(&SceneSpec::new(5, SIDE, SIDE), &coarsen, count, seed).unwrap()
}

fn no_augment() -> AugmentRanges {
    AugmentRanges {
        min_scale: 1.0,
        max_scale: 1.0,
        max_rotation_deg: 0.0,
        flip_prob: 0.0,
    }
}

fn short(iters: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        batch_size: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn memorizes_a_single_triplet() {
    let ds = dataset(1, 5, CoarsenSpec::default());
    for net in [
        NetworkConfig::classifier(5),
        NetworkConfig::detailer(5, InjectionPoint::AfterFinal),
    ] {
        let cfg = TrainConfig {
            total_iters: 501,
            augment: no_augment(),
            ..short(501, 1)
        };
        let out = train(&net, &ds.triplets, None, &cfg).unwrap();
        let first = out.log[0].loss;
        let at_500 = out.log[500].loss;
        assert!(first >= 10.0 * at_500, "{}: {first} -> {at_500}", net.injection);
    }
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let ds = dataset(4, 9, CoarsenSpec::default());
    let val = dataset(3, 10, CoarsenSpec::default());
    let net = NetworkConfig::detailer(5, InjectionPoint::AfterPool).with_seed(4);
    let cfg = TrainConfig {
        eval_every: 5,
        ..short(10, 3)
    };
    let a = train(&net, &ds.triplets, Some(&val.triplets), &cfg).unwrap();
    let b = train(&net, &ds.triplets, Some(&val.triplets), &cfg).unwrap();
    assert_eq!(a.network, b.network);
    assert_eq!(a.log, b.log);
    assert!(a.log[4].val_miou.is_some() && a.log[3].val_miou.is_none());

    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a"), dir.path().join("b"));
    a.checkpoint().save(&pa).unwrap();
    b.checkpoint().save(&pb).unwrap();
    for name in ["manifest.txt", "head.weight.bin", "embed.weight.bin"] {
        assert_eq!(std::fs::read(pa.join(name)).unwrap(), std::fs::read(pb.join(name)).unwrap());
    }
    let loaded = Checkpoint::load(&pa).unwrap();
    assert_eq!(loaded.network, a.network);
    assert_eq!(loaded.normalization, a.normalization);

    let other = train(&net, &ds.triplets, None, &short(10, 4)).unwrap();
    assert_ne!(other.network, a.network);
}

#[test]
fn zero_learning_rate_keeps_initialization() {
    let ds = dataset(2, 1, CoarsenSpec::default());
    let cfg = short(1, 0);
    let net = Network::new(NetworkConfig::detailer(5, InjectionPoint::BeforePool)).unwrap();
    let mut state = TrainState::new(net.clone(), 0);
    let norm = Normalization::from_triplets(&ds.triplets);
    let batch = sample_batch(&mut state, &ds.triplets, &norm, &cfg);
    let (_, grads) = batch_gradients(&state.network, &batch).unwrap();
    sgd_step(&mut state, &grads, 0.0, cfg.momentum).unwrap();
    assert_eq!(state.network, net);
}

#[test]
fn small_plain_step_lowers_loss() {
    let ds = dataset(4, 2, CoarsenSpec::default());
    let cfg = short(1, 0);
    for net in [
        NetworkConfig::classifier(5),
        NetworkConfig::detailer(5, InjectionPoint::AfterFinal),
    ] {
        let mut state = TrainState::new(Network::new(net).unwrap(), 8);
        let norm = Normalization::from_triplets(&ds.triplets);
        let batch = sample_batch(&mut state, &ds.triplets, &norm, &cfg);
        let (before, grads) = batch_gradients(&state.network, &batch).unwrap();
        sgd_step(&mut state, &grads, 1e-4, 0.0).unwrap();
        let (after, _) = batch_gradients(&state.network, &batch).unwrap();
        assert!(after < before, "{after} !< {before}");
    }
}

#[test]
fn gradient_reaches_every_parameter() {
    let ds = dataset(6, 3, CoarsenSpec::default());
    let cfg = TrainConfig {
        batch_size: 4,
        ..short(1, 0)
    };
    for net in [
        NetworkConfig::classifier(5),
        NetworkConfig::detailer(5, InjectionPoint::BeforePool),
        NetworkConfig::detailer(5, InjectionPoint::AfterPool),
        NetworkConfig::detailer(5, InjectionPoint::AfterFinal),
    ] {
        let mut state = TrainState::new(Network::new(net.clone()).unwrap(), 1);
        let norm = Normalization::from_triplets(&ds.triplets);
        let paths = state.network.layer_paths();
        let mut mass: Vec<(f64, f64)> = vec![(0.0, 0.0); paths.len()];
        for _ in 0..10 {
            let batch = sample_batch(&mut state, &ds.triplets, &norm, &cfg);
            let (_, grads) = batch_gradients(&state.network, &batch).unwrap();
            for (m, g) in mass.iter_mut().zip(&grads.layers) {
                m.0 += g.weight.iter().map(|v| f64::from(v.abs())).sum::<f64>();
                m.1 += g.bias.iter().map(|v| f64::from(v.abs())).sum::<f64>();
            }
            state.iteration += 1;
        }
        for (path, (w, b)) in paths.iter().zip(&mass) {
            assert!(*w > 0.0 && *b > 0.0, "{} {path}: weight {w} bias {b}", net.injection);
        }
        if net.injection.is_detailer() {
            assert_eq!(paths.last().map(String::as_str), Some("embed"));
        }
    }
}

#[test]
fn ignore_pixels_do_not_affect_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = Dims::new(2, 5, 12, 12);
    let logits = Tensor4::<f32>::from_fn(dims, |_, _, _, _| rng.random_range(-2.0..2.0));
    let targets: Vec<LabelMask> = (0..2)
        .map(|_| {
            LabelMask::from_fn(12, 12, |_, _| {
                if rng.random::<f64>() < 0.3 {
                    IGNORE
                } else {
                    rng.random_range(0..5)
                }
            })
        })
        .collect();
    let (loss, grad) = softmax_ce_ignore(&logits, &targets, IGNORE).unwrap();

    let mut perturbed = logits.clone();
    for (n, t) in targets.iter().enumerate() {
        for y in 0..12 {
            for x in 0..12 {
                if t.get(x, y) == IGNORE {
                    for c in 0..5 {
                        perturbed.set(n, c, y, x, rng.random_range(-50.0..50.0));
                    }
                }
            }
        }
    }
    let (loss2, grad2) = softmax_ce_ignore(&perturbed, &targets, IGNORE).unwrap();
    assert_eq!(loss.to_bits(), loss2.to_bits());
    assert_eq!(grad, grad2);
    for (n, t) in targets.iter().enumerate() {
        for y in 0..12 {
            for x in 0..12 {
                if t.get(x, y) == IGNORE {
                    assert!((0..5).all(|c| grad.at(n, c, y, x) == 0.0));
                }
            }
        }
    }
}

#[test]
fn composite_never_hurts_with_exact_coarse_labels() {
    let exact_labels = CoarsenSpec {
        bleed_prob: 0.0,
        ..CoarsenSpec::default()
    };
    let val = dataset(10, 77, exact_labels.clone());
    for seed in 0..3 {
        let ds = dataset(6, 100 + seed, exact_labels.clone());
        for net in [
            NetworkConfig::classifier(5).with_seed(seed),
            NetworkConfig::detailer(5, InjectionPoint::AfterFinal).with_seed(seed),
        ] {
            let out = train(&net, &ds.triplets, None, &short(60, seed)).unwrap();
            let opts = EvalOptions::for_network(&out.network);
            let plain = evaluate_model(&out.network, &out.normalization, &val.triplets, opts).unwrap();
            let comp =
                evaluate_model(&out.network, &out.normalization, &val.triplets, opts.composite()).unwrap();
            assert!(comp.miou >= plain.miou, "seed {seed}: {} < {}", comp.miou, plain.miou);
        }
    }
}

#[test]
fn zero_correction_teacher_reproduces_coarse_labels() {
    let ds = dataset(4, 21, CoarsenSpec::default());
    let mut teacher = Network::new(NetworkConfig::detailer(5, InjectionPoint::AfterPool)).unwrap();
    teacher.zero_correction_head();
    let norm = Normalization::from_triplets(&ds.triplets);
    let masks = detailed_masks(&teacher, &norm, &ds.triplets).unwrap();
    assert_eq!(masks.len(), ds.triplets.len());
    for (m, t) in masks.iter().zip(&ds.triplets) {
        assert!(m.is_total());
        for (&d, &c) in m.labels().iter().zip(t.coarse.labels()) {
            if c != IGNORE {
                assert_eq!(d, c);
            }
        }
    }
    let classifier = Network::new(NetworkConfig::classifier(5)).unwrap();
    assert!(detailed_masks(&classifier, &norm, &ds.triplets).is_err());
}

#[test]
fn training_rejects_bad_inputs() {
    let ds = dataset(2, 1, CoarsenSpec::default());
    let net = NetworkConfig::classifier(5);
    assert!(train(&net, &[], None, &short(1, 0)).is_err());
    let odd_crop = TrainConfig {
        crop: 46,
        ..short(1, 0)
    };
    assert!(train(&net, &ds.triplets, None, &odd_crop).is_err());
    let tiny_crop = TrainConfig {
        crop: 16,
        ..short(1, 0)
    };
    assert!(train(&net, &ds.triplets, None, &tiny_crop).is_err());
}

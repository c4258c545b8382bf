use std::fmt::Write as _;
use std::path::Path;

use detailnet::data::{generate_dataset, pnm, read_dataset, write_dataset, Dataset, SampleTriplet};
use detailnet::eval::{distill, evaluate_coarse, evaluate_model, Distillation, EvalOptions, EvalReport};
use detailnet::net::{Checkpoint, NetworkConfig};
use detailnet::train::{train, write_metrics_csv, TrainConfig, TrainOutcome};

use crate::args::{DistillArgs, EvalArgs, GenArgs, SweepArgs, TrainArgs};
use crate::error::{CliError, Result};
use crate::output::{resolve_out, write_atomic, write_manifest};
use crate::plan::ExperimentPlan;
use crate::sweep::run_sweep;

fn load_dataset(path: &Path, what: &str) -> Result<Dataset> {
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{what} directory {} does not exist", path.display())));
    }
    Ok(read_dataset(path)?)
}

fn image_side(ds: &Dataset) -> Option<(usize, usize)> {
    ds.triplets.first().map(|t| (t.width(), t.height()))
}

fn check_classes(expected: usize, ds: &Dataset, what: &str) -> Result<()> {
    if ds.num_classes != expected {
        return Err(CliError::Usage(format!(
            "{what} has {} classes but the model expects {expected}",
            ds.num_classes
        )));
    }
    Ok(())
}

/// Report of a dataset's coarse masks scored against its fine masks.
pub fn dataset_report(ds: &Dataset) -> Result<String> {
    let r = evaluate_coarse(ds)?;
    let mut out = String::new();
    writeln!(out, "count = {}", ds.triplets.len()).expect("write to string");
    writeln!(out, "coarse_miou = {}", r.miou).expect("write to string");
    out.push_str(&r.to_kv());
    Ok(out)
}

pub fn gen(args: &GenArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out.out.as_deref(), "gen");
    let scene = detailnet::data::SceneSpec::new(args.scene.classes, args.scene.side, args.scene.side);
    let ds = generate_dataset(&scene, &args.coarsen.spec(), args.count, args.seed)?;
    write_dataset(&out, &ds)?;
    let report = dataset_report(&ds)?;
    write_atomic(&out.join("report.txt"), report.as_bytes())?;
    write_manifest(&out, "gen", argv, args)?;
    print!("{report}");
    println!("wrote {}", out.display());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out.out.as_deref(), "train");
    let cfg = args.optim.config(args.seed);
    cfg.validate()?;
    let data = load_dataset(&args.data, "training data")?;
    let net = args.net.config(data.num_classes, args.seed);
    net.validate()?;
    let val = args.val.as_deref().map(|p| load_dataset(p, "validation data")).transpose()?;
    if let Some(v) = &val {
        check_classes(data.num_classes, v, "validation data")?;
    }
    if let Some((w, h)) = image_side(&data) {
        if cfg.crop > w.min(h) {
            return Err(CliError::Usage(format!("crop {} exceeds the {w}x{h} training images", cfg.crop)));
        }
    }
    let outcome = train(&net, &data.triplets, val.as_ref().map(|v| v.triplets.as_slice()), &cfg)?;
    let mut ckpt = outcome.checkpoint();
    ckpt.meta.insert("seed".into(), args.seed.to_string());
    ckpt.meta.insert("train_size".into(), data.triplets.len().to_string());
    if let Some((w, h)) = image_side(&data) {
        ckpt.meta.insert("image_width".into(), w.to_string());
        ckpt.meta.insert("image_height".into(), h.to_string());
    }
    ckpt.save(&out.join("checkpoint"))?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.log)?;
    write_manifest(&out, "train", argv, args)?;
    if let Some(last) = outcome.log.last() {
        println!("final loss {}", last.loss);
        if let Some(m) = last.val_miou {
            println!("val miou {m}");
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Rejects datasets whose class count or image size differ from what the
/// checkpoint was trained on.
fn check_compatible(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    check_classes(ckpt.network.config().num_classes, ds, "dataset")?;
    let trained = ckpt.meta.get("image_width").zip(ckpt.meta.get("image_height"));
    if let (Some((w, h)), Some((dw, dh))) = (trained, image_side(ds)) {
        if *w != dw.to_string() || *h != dh.to_string() {
            return Err(CliError::Usage(format!(
                "dataset images are {dw}x{dh} but the checkpoint was trained on {w}x{h}"
            )));
        }
    }
    Ok(())
}

pub fn eval(args: &EvalArgs, argv: &[String]) -> Result<EvalReport> {
    let out = resolve_out(args.out.out.as_deref(), "eval");
    if !args.checkpoint.join(detailnet::net::CHECKPOINT_MANIFEST).is_file() {
        return Err(CliError::Usage(format!("no checkpoint at {}", args.checkpoint.display())));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = load_dataset(&args.data, "evaluation data")?;
    check_compatible(&ckpt, &ds)?;
    let mut opts = EvalOptions::for_network(&ckpt.network);
    if args.composite {
        opts = opts.composite();
    }
    let report = evaluate_model(&ckpt.network, &ckpt.normalization, &ds.triplets, opts)?;
    let csv = format!(
        "{}\n{}\n",
        EvalReport::csv_header(ds.num_classes),
        report.csv_row()
    );
    write_atomic(&out.join("report.txt"), report.to_kv().as_bytes())?;
    write_atomic(&out.join("report.csv"), csv.as_bytes())?;
    write_manifest(&out, "eval", argv, args)?;
    print!("{}", report.to_kv());
    Ok(report)
}

pub fn sweep(args: &SweepArgs, argv: &[String]) -> Result<()> {
    let out = resolve_out(args.out.out.as_deref(), "sweep");
    let plan = ExperimentPlan::from_args(args, out.clone())?;
    write_manifest(&out, "sweep", argv, args)?;
    let summary = run_sweep(&plan, &mut |line| eprintln!("{line}"))?;
    println!(
        "{} rows: {} run, {} reused, {} failed",
        summary.rows.len(),
        summary.executed,
        summary.skipped,
        summary.failed()
    );
    for t in &summary.tables {
        println!("wrote {}", t.display());
    }
    Ok(())
}

/// Two classifier students trained identically except for their labels:
/// one on the teacher's detailed masks, one on the raw coarse masks.
pub struct DistillComparison {
    pub detailed: Distillation,
    pub coarse: TrainOutcome,
    pub coarse_report: EvalReport,
}

impl DistillComparison {
    pub fn report(&self) -> String {
        let d = self.detailed.report.miou;
        let c = self.coarse_report.miou;
        format!(
            "student_detailed_miou = {d}\nstudent_coarse_miou = {c}\ndifference = {}\n",
            d - c
        )
    }
}

pub fn distill_compare(
    teacher: &Checkpoint,
    train_set: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<DistillComparison> {
    if !teacher.network.is_detailer() {
        return Err(CliError::Usage("the teacher checkpoint is a classifier; distillation needs a detailer".into()));
    }
    let c = teacher.network.config().num_classes;
    check_classes(c, train_set, "training data")?;
    check_classes(c, val, "validation data")?;
    let student = NetworkConfig::classifier(c).with_seed(seed);
    let detailed = distill(&teacher.network, &teacher.normalization, train_set, val, &student, cfg)?;
    let on_coarse: Vec<SampleTriplet> = train_set
        .triplets
        .iter()
        .map(|t| SampleTriplet {
            image: t.image.clone(),
            fine: t.coarse.clone(),
            coarse: t.coarse.clone(),
        })
        .collect();
    let coarse = train(&student, &on_coarse, Some(&val.triplets), cfg)?;
    let coarse_report = evaluate_model(&coarse.network, &coarse.normalization, &val.triplets, EvalOptions::default())?;
    Ok(DistillComparison {
        detailed,
        coarse,
        coarse_report,
    })
}

pub fn distill_cmd(args: &DistillArgs, argv: &[String]) -> Result<DistillComparison> {
    let out = resolve_out(args.out.out.as_deref(), "distill");
    let cfg = args.optim.config(args.seed);
    cfg.validate()?;
    if !args.teacher.join(detailnet::net::CHECKPOINT_MANIFEST).is_file() {
        return Err(CliError::Usage(format!("no checkpoint at {}", args.teacher.display())));
    }
    let teacher = Checkpoint::load(&args.teacher)?;
    if !teacher.network.is_detailer() {
        return Err(CliError::Usage("the teacher checkpoint is a classifier; distillation needs a detailer".into()));
    }
    let data = load_dataset(&args.data, "training data")?;
    let val = load_dataset(&args.val, "validation data")?;
    check_compatible(&teacher, &data)?;
    let cmp = distill_compare(&teacher, &data, &val, &cfg, args.seed)?;

    cmp.detailed.student.checkpoint().save(&out.join("student_detailed"))?;
    cmp.coarse.checkpoint().save(&out.join("student_coarse"))?;
    write_metrics_csv(&out.join("student_detailed_metrics.csv"), &cmp.detailed.student.log)?;
    write_metrics_csv(&out.join("student_coarse_metrics.csv"), &cmp.coarse.log)?;
    let masks = out.join("detailed");
    std::fs::create_dir_all(&masks).map_err(|e| CliError::io(&masks, e))?;
    for (i, m) in cmp.detailed.detailed.iter().enumerate() {
        let raster = pnm::Raster {
            width: m.width(),
            height: m.height(),
            channels: 1,
            data: m.labels().to_vec(),
        };
        pnm::write(&masks.join(format!("{i:05}_detailed.pgm")), &raster)?;
    }
    let report = cmp.report();
    write_atomic(&out.join("report.txt"), report.as_bytes())?;
    write_manifest(&out, "distill", argv, args)?;
    print!("{report}");
    Ok(cmp)
}

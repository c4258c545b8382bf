use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use detailnet::data::{AugmentRanges, CoarsenSpec};
use detailnet::net::{InjectionPoint, NetworkConfig};
use detailnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DETAILNET_OUT";

#[derive(Debug, Parser)]
#[command(name = "detailnet", version, about = "Coarse-mask detailer experiments on synthetic scenes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of (image, fine mask, coarse mask) triplets.
    Gen(GenArgs),
    /// Train a classifier or detailer; writes a checkpoint and metrics.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; writes report.txt and report.csv.
    Eval(EvalArgs),
    /// Run the table sweeps.
    ///
    /// Tables (one row per axis point and seed, then one `mean` row per axis point):
    ///   table1.csv  size,model,seed,<metrics>
    ///   table3.csv  resolution,model,seed,<metrics>
    ///   table4.csv  injection,seed,<metrics>
    ///   table5.csv  embed_width,seed,<metrics>
    /// with <metrics> = miou,miou_std,composite_miou,composite_miou_std,coarse_miou,runs,status.
    Sweep(SweepArgs),
    /// Distill a detailer teacher into classifier students; writes a comparison report.
    Distill(DistillArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Classifier,
    Detailer,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OutArgs {
    /// Output directory [default: $DETAILNET_OUT/<command>, or runs/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 48)]
    pub side: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CoarsenArgs {
    #[arg(long, default_value_t = 2)]
    pub erosion: usize,
    #[arg(long, default_value_t = 0.15)]
    pub drop: f64,
    #[arg(long, default_value_t = 0.25)]
    pub bleed: f64,
    #[arg(long, default_value_t = 1)]
    pub bleed_width: usize,
    #[arg(long, default_value_t = 0.97)]
    pub min_precision: f64,
}

impl CoarsenArgs {
    pub fn spec(&self) -> CoarsenSpec {
        CoarsenSpec {
            erosion_radius: self.erosion,
            drop_prob: self.drop,
            bleed_prob: self.bleed,
            bleed_width: self.bleed_width,
            min_precision: self.min_precision,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub coarsen: CoarsenArgs,
    #[arg(long, default_value_t = 50)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Polynomial decay power.
    #[arg(long, default_value_t = 0.9)]
    pub power: f64,
    #[arg(long, default_value_t = 0.99)]
    pub momentum: f64,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 48)]
    pub crop: usize,
    /// Validation interval in iterations (0: only after the last one).
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
    /// Clip the global gradient norm to this value (0 disables).
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
}

impl OptimArgs {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            base_lr: self.lr,
            poly_power: self.power,
            momentum: self.momentum,
            batch_size: self.batch,
            total_iters: self.iters,
            crop: self.crop,
            seed,
            eval_every: self.eval_every,
            grad_clip: self.grad_clip,
            augment: AugmentRanges::default(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NetArgs {
    #[arg(long, value_enum, default_value_t = ModelKind::Detailer)]
    pub kind: ModelKind,
    /// Where the coarse embedding joins a detailer.
    #[arg(long, default_value = "after-final", value_parser = parse_injection)]
    pub injection: String,
    #[arg(long, default_value_t = 64)]
    pub embed_width: usize,
}

fn parse_injection(s: &str) -> Result<String, String> {
    let p: InjectionPoint = s.parse().map_err(|e: detailnet::Error| e.to_string())?;
    if p.is_detailer() {
        Ok(s.to_string())
    } else {
        Err("choose one of before-pool, after-pool, after-final".into())
    }
}

impl NetArgs {
    pub fn config(&self, num_classes: usize, seed: u64) -> NetworkConfig {
        let base = match self.kind {
            ModelKind::Classifier => NetworkConfig::classifier(num_classes),
            ModelKind::Detailer => {
                let p = self.injection.parse().expect("validated by clap");
                NetworkConfig::detailer(num_classes, p)
            }
        };
        NetworkConfig {
            embed_width: self.embed_width,
            ..base
        }
        .with_seed(seed)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Optional validation dataset directory, logged as val_miou.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Seed for weights, batch sampling and augmentation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Keep coarse labels where present and use predictions elsewhere.
    #[arg(long)]
    pub composite: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistillArgs {
    /// Detailer checkpoint acting as teacher.
    #[arg(long)]
    pub teacher: PathBuf,
    /// Training dataset (with coarse masks).
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset for the students.
    #[arg(long)]
    pub val: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    /// Tables to produce.
    #[arg(long, value_delimiter = ',', default_values_t = [1u8, 3, 4, 5])]
    pub tables: Vec<u8>,
    /// Training-set sizes (table 1).
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 25, 50])]
    pub sizes: Vec<usize>,
    /// Image sides (table 3); the first is the base resolution of every other table.
    #[arg(long, value_delimiter = ',', default_values_t = [48usize, 96])]
    pub resolutions: Vec<usize>,
    /// Injection points (table 4).
    #[arg(long, value_delimiter = ',', default_values_t = ["before-pool".to_string(), "after-pool".into(), "after-final".into()], value_parser = parse_injection)]
    pub injections: Vec<String>,
    /// Embedding widths (table 5).
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 32, 64])]
    pub embed_widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 50)]
    pub val_size: usize,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Seed of the data pools; the validation set and every training set derive from it.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[command(flatten)]
    pub coarsen: CoarsenArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

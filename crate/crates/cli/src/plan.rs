use std::collections::BTreeSet;
use std::path::PathBuf;

use detailnet::data::{CoarsenSpec, SceneSpec};
use detailnet::net::{InjectionPoint, NetworkConfig};
use detailnet::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::args::{OptimArgs, SweepArgs};
use crate::error::{CliError, Result};

pub const TABLES: [u8; 4] = [1, 3, 4, 5];

/// Optimizer settings shared by every run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub lr: f64,
    pub power: f64,
    pub momentum: f64,
    pub batch: usize,
    pub iters: usize,
    pub grad_clip: f64,
    /// Crop at the base resolution; other resolutions scale it.
    pub crop: usize,
}

impl From<&OptimArgs> for Recipe {
    fn from(o: &OptimArgs) -> Self {
        Self {
            lr: o.lr,
            power: o.power,
            momentum: o.momentum,
            batch: o.batch,
            iters: o.iters,
            grad_clip: o.grad_clip,
            crop: o.crop,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub tables: Vec<u8>,
    pub sizes: Vec<usize>,
    pub resolutions: Vec<usize>,
    pub injections: Vec<InjectionPoint>,
    pub embed_widths: Vec<usize>,
    pub seeds: Vec<u64>,
    pub val_size: usize,
    pub num_classes: usize,
    pub data_seed: u64,
    pub coarsen: CoarsenSpec,
    pub recipe: Recipe,
    pub out_dir: PathBuf,
}

impl ExperimentPlan {
    pub fn from_args(args: &SweepArgs, out_dir: PathBuf) -> Result<Self> {
        let injections = args
            .injections
            .iter()
            .map(|s| s.parse::<InjectionPoint>())
            .collect::<detailnet::Result<Vec<_>>>()?;
        let plan = Self {
            tables: args.tables.clone(),
            sizes: args.sizes.clone(),
            resolutions: args.resolutions.clone(),
            injections,
            embed_widths: args.embed_widths.clone(),
            seeds: args.seeds.clone(),
            val_size: args.val_size,
            num_classes: args.classes,
            data_seed: args.data_seed,
            coarsen: args.coarsen.spec(),
            recipe: Recipe::from(&args.optim),
            out_dir,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        for (name, empty) in [
            ("tables", self.tables.is_empty()),
            ("sizes", self.sizes.is_empty()),
            ("resolutions", self.resolutions.is_empty()),
            ("injections", self.injections.is_empty()),
            ("embed widths", self.embed_widths.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return bad(format!("plan has no {name}"));
            }
        }
        if let Some(t) = self.tables.iter().find(|t| !TABLES.contains(t)) {
            return bad(format!("unknown table {t}; choose from 1, 3, 4, 5"));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.sizes.contains(&0) || self.val_size == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if self.injections.iter().any(|p| !p.is_detailer()) {
            return bad("injection points must be detailer variants".into());
        }
        self.coarsen.validate()?;
        for &res in &self.resolutions {
            self.scene(res).validate()?;
            let net = NetworkConfig::classifier(self.num_classes);
            self.train_config(res, 0).validate()?;
            let crop = self.crop(res);
            if crop < net.min_input_side() || crop % net.encoder_downsample != 0 {
                return bad(format!(
                    "crop {crop} at resolution {res} must be a multiple of {} and at least {}",
                    net.encoder_downsample,
                    net.min_input_side()
                ));
            }
        }
        for &w in &self.embed_widths {
            NetworkConfig {
                embed_width: w,
                ..NetworkConfig::detailer(self.num_classes, InjectionPoint::AfterFinal)
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn base_resolution(&self) -> usize {
        self.resolutions[0]
    }

    /// Largest training size; tables 3 to 5 train on it.
    pub fn ablation_size(&self) -> usize {
        *self.sizes.iter().max().expect("validated nonempty")
    }

    pub fn scene(&self, resolution: usize) -> SceneSpec {
        SceneSpec::new(self.num_classes, resolution, resolution)
    }

    /// The base crop scaled to `resolution`, rounded down to a multiple of 4.
    pub fn crop(&self, resolution: usize) -> usize {
        let scaled = self.recipe.crop * resolution / self.base_resolution();
        scaled - scaled % 4
    }

    pub fn train_config(&self, resolution: usize, seed: u64) -> TrainConfig {
        let r = &self.recipe;
        TrainConfig {
            base_lr: r.lr,
            poly_power: r.power,
            momentum: r.momentum,
            batch_size: r.batch,
            total_iters: r.iters,
            grad_clip: r.grad_clip,
            crop: self.crop(resolution),
            seed,
            ..TrainConfig::default()
        }
    }
}

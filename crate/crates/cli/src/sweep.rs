//! Table sweeps with per-row result files and resume.
//!
//! Every (axis point, seed) pair is one training run. Its result lands in
//! `rows/<key>.json` (written atomically) together with a fingerprint of the
//! settings that produced it; a rerun skips rows whose fingerprint matches.
//! Keys leave out the table, so a configuration shared by several tables
//! trains once.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use detailnet::data::{derive_seed, generate_dataset, Dataset};
use detailnet::eval::{evaluate_coarse, evaluate_model, EvalOptions};
use detailnet::net::{InjectionPoint, NetworkConfig};
use detailnet::train::{train, write_metrics_csv};
use serde::{Deserialize, Serialize};

use crate::args::ModelKind;
use crate::error::{CliError, Result};
use crate::output::{write_atomic, write_json_atomic};
use crate::plan::ExperimentPlan;

pub const DEFAULT_EMBED_WIDTH: usize = 64;
pub const DEFAULT_INJECTION: InjectionPoint = InjectionPoint::AfterFinal;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSpec {
    pub table: u8,
    pub size: usize,
    pub resolution: usize,
    pub model: ModelKind,
    pub injection: InjectionPoint,
    pub embed_width: usize,
    pub seed: u64,
}

impl RowSpec {
    pub fn key(&self) -> String {
        let model = match self.model {
            ModelKind::Classifier => "classifier".to_string(),
            ModelKind::Detailer => format!("detailer-{}-e{}", self.injection, self.embed_width),
        };
        format!("n{}_r{}_{}_s{}", self.size, self.resolution, model, self.seed)
    }

    pub fn network(&self, num_classes: usize) -> NetworkConfig {
        let base = match self.model {
            ModelKind::Classifier => NetworkConfig::classifier(num_classes),
            ModelKind::Detailer => NetworkConfig::detailer(num_classes, self.injection),
        };
        NetworkConfig {
            embed_width: self.embed_width,
            ..base
        }
        .with_seed(self.seed)
    }

    /// Values of the table's axis columns, in column order.
    fn axis_values(&self) -> Vec<String> {
        let model = || match self.model {
            ModelKind::Classifier => "classifier".to_string(),
            ModelKind::Detailer => "detailer".to_string(),
        };
        match self.table {
            1 => vec![self.size.to_string(), model()],
            3 => vec![self.resolution.to_string(), model()],
            4 => vec![self.injection.to_string()],
            _ => vec![self.embed_width.to_string()],
        }
    }
}

fn axis_columns(table: u8) -> &'static [&'static str] {
    match table {
        1 => &["size", "model"],
        3 => &["resolution", "model"],
        4 => &["injection"],
        _ => &["embed_width"],
    }
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "seed",
    "miou",
    "miou_std",
    "composite_miou",
    "composite_miou_std",
    "coarse_miou",
    "runs",
    "status",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub spec: RowSpec,
    pub fingerprint: String,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub miou: Option<f64>,
    pub composite_miou: Option<f64>,
    pub coarse_miou: Option<f64>,
    pub final_loss: Option<f64>,
}

impl RowResult {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Rows of every requested table, in table order, axis order, then seed order.
pub fn plan_rows(plan: &ExperimentPlan) -> Vec<RowSpec> {
    let base = plan.base_resolution();
    let size = plan.ablation_size();
    let mut rows = Vec::new();
    let spec = |table, size, resolution, model, injection, embed_width, seed| RowSpec {
        table,
        size,
        resolution,
        model,
        injection,
        embed_width,
        seed,
    };
    let models = [ModelKind::Detailer, ModelKind::Classifier];
    for &table in &plan.tables {
        match table {
            1 => {
                for &n in &plan.sizes {
                    for model in models {
                        for &s in &plan.seeds {
                            rows.push(spec(1, n, base, model, DEFAULT_INJECTION, DEFAULT_EMBED_WIDTH, s));
                        }
                    }
                }
            }
            3 => {
                for &r in &plan.resolutions {
                    for model in models {
                        for &s in &plan.seeds {
                            rows.push(spec(3, size, r, model, DEFAULT_INJECTION, DEFAULT_EMBED_WIDTH, s));
                        }
                    }
                }
            }
            4 => {
                for &p in &plan.injections {
                    for &s in &plan.seeds {
                        rows.push(spec(4, size, base, ModelKind::Detailer, p, DEFAULT_EMBED_WIDTH, s));
                    }
                }
            }
            _ => {
                for &w in &plan.embed_widths {
                    for &s in &plan.seeds {
                        rows.push(spec(5, size, base, ModelKind::Detailer, DEFAULT_INJECTION, w, s));
                    }
                }
            }
        }
    }
    rows
}

/// Everything besides the row itself that determines a row's numbers.
fn fingerprint(plan: &ExperimentPlan, spec: &RowSpec) -> String {
    #[derive(Serialize)]
    struct Inputs<'a> {
        key: &'a str,
        num_classes: usize,
        val_size: usize,
        data_seed: u64,
        coarsen: &'a detailnet::data::CoarsenSpec,
        recipe: &'a crate::plan::Recipe,
        base_resolution: usize,
    }
    serde_json::to_string(&Inputs {
        key: &spec.key(),
        num_classes: plan.num_classes,
        val_size: plan.val_size,
        data_seed: plan.data_seed,
        coarsen: &plan.coarsen,
        recipe: &plan.recipe,
        base_resolution: plan.base_resolution(),
    })
    .expect("fingerprint serializes")
}

pub fn row_path(plan: &ExperimentPlan, spec: &RowSpec) -> PathBuf {
    plan.out_dir.join("rows").join(format!("{}.json", spec.key()))
}

/// Directory holding the row's checkpoint and metrics.csv.
pub fn run_dir(plan: &ExperimentPlan, spec: &RowSpec) -> PathBuf {
    plan.out_dir.join("runs").join(spec.key())
}

/// Lazily generated datasets, shared by all rows of a sweep.
#[derive(Default)]
pub struct DataCache {
    val: HashMap<usize, (Dataset, f64)>,
    pools: HashMap<(usize, u64), Dataset>,
}

impl DataCache {
    /// Validation set at `resolution` and its coarse-baseline mIoU.
    pub fn val(&mut self, plan: &ExperimentPlan, resolution: usize) -> Result<&(Dataset, f64)> {
        if !self.val.contains_key(&resolution) {
            let seed = derive_seed(plan.data_seed, 1000, resolution as u64);
            let ds = generate_dataset(&plan.scene(resolution), &plan.coarsen, plan.val_size, seed)?;
            let coarse = evaluate_coarse(&ds)?.miou;
            self.val.insert(resolution, (ds, coarse));
        }
        Ok(&self.val[&resolution])
    }

    /// The first `size` triplets of the seed's training pool. Pools are
    /// generated at the largest size, so smaller training sets are nested.
    pub fn train(&mut self, plan: &ExperimentPlan, resolution: usize, seed: u64, size: usize) -> Result<Dataset> {
        let key = (resolution, seed);
        if !self.pools.contains_key(&key) {
            let pool_seed = derive_seed(plan.data_seed, 2000 + resolution as u64, seed);
            let count = plan.sizes.iter().copied().max().unwrap_or(size).max(size);
            let ds = generate_dataset(&plan.scene(resolution), &plan.coarsen, count, pool_seed)?;
            self.pools.insert(key, ds);
        }
        let pool = &self.pools[&key];
        Ok(Dataset {
            num_classes: pool.num_classes,
            triplets: pool.triplets[..size].to_vec(),
            provenance: None,
        })
    }
}

fn execute(plan: &ExperimentPlan, spec: &RowSpec, data: &mut DataCache) -> Result<RowResult> {
    let train_set = data.train(plan, spec.resolution, spec.seed, spec.size)?;
    let (val, coarse_miou) = data.val(plan, spec.resolution)?;
    let cfg = plan.train_config(spec.resolution, spec.seed);
    let outcome = train(&spec.network(plan.num_classes), &train_set.triplets, None, &cfg)?;
    let opts = EvalOptions::for_network(&outcome.network);
    let plain = evaluate_model(&outcome.network, &outcome.normalization, &val.triplets, opts)?;
    let comp = evaluate_model(&outcome.network, &outcome.normalization, &val.triplets, opts.composite())?;

    let dir = run_dir(plan, spec);
    let mut ckpt = outcome.checkpoint();
    ckpt.meta.insert("seed".into(), spec.seed.to_string());
    ckpt.meta.insert("train_size".into(), spec.size.to_string());
    ckpt.meta.insert("image_width".into(), spec.resolution.to_string());
    ckpt.meta.insert("image_height".into(), spec.resolution.to_string());
    ckpt.save(&dir.join("checkpoint"))?;
    write_metrics_csv(&dir.join("metrics.csv"), &outcome.log)?;
    Ok(RowResult {
        spec: spec.clone(),
        fingerprint: fingerprint(plan, spec),
        status: "ok".into(),
        miou: Some(plain.miou),
        composite_miou: Some(comp.miou),
        coarse_miou: Some(*coarse_miou),
        final_loss: outcome.log.last().map(|r| r.loss),
    })
}

fn load_row(path: &Path) -> Option<RowResult> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

#[derive(Debug, Default)]
pub struct SweepSummary {
    pub rows: Vec<RowResult>,
    pub tables: Vec<PathBuf>,
    pub executed: usize,
    pub skipped: usize,
}

impl SweepSummary {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Runs (or resumes) every row of `plan`, then writes the table files.
/// A failing row is recorded with its error and the sweep moves on.
pub fn run_sweep(plan: &ExperimentPlan, progress: &mut dyn FnMut(&str)) -> Result<SweepSummary> {
    plan.validate()?;
    fs::create_dir_all(plan.out_dir.join("rows")).map_err(|e| CliError::io(&plan.out_dir, e))?;
    write_json_atomic(&plan.out_dir.join("plan.json"), plan)?;
    let mut data = DataCache::default();
    let mut summary = SweepSummary::default();
    let specs = plan_rows(plan);
    for (i, spec) in specs.iter().enumerate() {
        let path = row_path(plan, spec);
        let fp = fingerprint(plan, spec);
        if let Some(mut done) = load_row(&path).filter(|r| r.is_ok() && r.fingerprint == fp) {
            done.spec = spec.clone();
            progress(&format!("[{}/{}] {} (done)", i + 1, specs.len(), spec.key()));
            summary.skipped += 1;
            summary.rows.push(done);
            continue;
        }
        progress(&format!("[{}/{}] {}", i + 1, specs.len(), spec.key()));
        let result = execute(plan, spec, &mut data).unwrap_or_else(|e| RowResult {
            spec: spec.clone(),
            fingerprint: fp,
            status: format!("error: {e}"),
            miou: None,
            composite_miou: None,
            coarse_miou: None,
            final_loss: None,
        });
        write_json_atomic(&path, &result)?;
        summary.executed += 1;
        summary.rows.push(result);
    }
    for &table in &plan.tables {
        let path = plan.out_dir.join(format!("table{table}.csv"));
        let rows: Vec<&RowResult> = summary.rows.iter().filter(|r| r.spec.table == table).collect();
        write_atomic(&path, table_csv(table, &rows, &plan.seeds)?.as_bytes())?;
        summary.tables.push(path);
    }
    Ok(summary)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    });
    (Some(mean), std)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Seed rows of each axis point followed by its `mean` row.
pub fn table_csv(table: u8, rows: &[&RowResult], seeds: &[u64]) -> Result<String> {
    let mut groups: BTreeMap<usize, (Vec<String>, Vec<&RowResult>)> = BTreeMap::new();
    let mut order: Vec<Vec<String>> = Vec::new();
    for r in rows {
        let axis = r.spec.axis_values();
        let idx = order.iter().position(|a| *a == axis).unwrap_or_else(|| {
            order.push(axis.clone());
            order.len() - 1
        });
        groups.entry(idx).or_insert_with(|| (axis, Vec::new())).1.push(r);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = axis_columns(table).iter().copied().chain(METRIC_COLUMNS).collect();
    let wrap = |e| CliError::Csv {
        path: PathBuf::from(format!("table{table}.csv")),
        source: e,
    };
    w.write_record(&header).map_err(wrap)?;
    for (_, (axis, mut members)) in groups {
        members.sort_by_key(|r| seeds.iter().position(|&s| s == r.spec.seed));
        for r in &members {
            let mut rec = axis.clone();
            rec.extend([
                r.spec.seed.to_string(),
                cell(r.miou),
                String::new(),
                cell(r.composite_miou),
                String::new(),
                cell(r.coarse_miou),
                "1".into(),
                r.status.clone(),
            ]);
            w.write_record(&rec).map_err(wrap)?;
        }
        let ok: Vec<&&RowResult> = members.iter().filter(|r| r.is_ok()).collect();
        let pick = |f: fn(&RowResult) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        let (miou, miou_std) = mean_std(&pick(|r| r.miou));
        let (comp, comp_std) = mean_std(&pick(|r| r.composite_miou));
        let (coarse, _) = mean_std(&pick(|r| r.coarse_miou));
        let failed = members.len() - ok.len();
        let status = if failed == 0 {
            "ok".to_string()
        } else {
            format!("{failed} failed")
        };
        let mut rec = axis.clone();
        rec.extend([
            "mean".into(),
            cell(miou),
            cell(miou_std),
            cell(comp),
            cell(comp_std),
            cell(coarse),
            ok.len().to_string(),
            status,
        ]);
        w.write_record(&rec).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| wrap(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

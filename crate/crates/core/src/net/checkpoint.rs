//! On-disk network snapshots.
//!
//! A checkpoint is a directory holding `manifest.txt` (one `key = value` per
//! line) and one little-endian `f32` blob per parameter tensor, named
//! `<layer path>.weight.bin` / `<layer path>.bias.bin`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::NetworkConfig;
use super::model::Network;
use crate::data::Normalization;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "detailnet-checkpoint-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub normalization: Normalization,
    /// Free-form provenance (iteration, training seed, ...).
    pub meta: BTreeMap<String, String>,
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_blob(path: &Path, values: &[f32]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_blob(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes, expected {} f32 values",
            path.display(),
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

impl Checkpoint {
    pub fn new(network: Network<f32>, normalization: Normalization) -> Self {
        Self {
            network,
            normalization,
            meta: BTreeMap::new(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = self.network.config();
        let mut lines = vec![
            format!("format = {FORMAT}"),
            format!("num_classes = {}", cfg.num_classes),
            format!("injection = {}", cfg.injection),
            format!("embed_width = {}", cfg.embed_width),
            format!("encoder_channels = {}", join(&cfg.encoder_channels)),
            format!("ppm_bins = {}", join(&cfg.ppm_bins)),
            format!("encoder_downsample = {}", cfg.encoder_downsample),
            format!("final_channels = {}", cfg.final_channels),
            format!("seed = {}", cfg.seed),
            format!("norm_mean = {}", join(&self.normalization.mean)),
            format!("norm_std = {}", join(&self.normalization.std)),
            format!("layers = {}", self.network.layer_paths().join(",")),
        ];
        for (k, v) in &self.meta {
            lines.push(format!("meta.{k} = {v}"));
        }
        for (path, layer) in self.network.layer_paths().iter().zip(self.network.layers()) {
            write_blob(&dir.join(format!("{path}.weight.bin")), layer.weight.values())?;
            write_blob(&dir.join(format!("{path}.bias.bin")), &layer.bias)?;
        }
        let manifest = dir.join(MANIFEST);
        fs::write(&manifest, lines.join("\n") + "\n").map_err(|e| Error::io(&manifest, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST);
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let mut kv = BTreeMap::new();
        let mut offset = 0;
        for line in text.lines() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let Some((k, v)) = trimmed.split_once('=') else {
                    return Err(Error::Parse {
                        file: manifest_path,
                        offset,
                        reason: format!("expected key = value, got {trimmed:?}"),
                    });
                };
                kv.insert(k.trim().to_string(), v.trim().to_string());
            }
            offset += line.len() + 1;
        }
        let field = |key: &str| -> Result<&String> {
            kv.get(key).ok_or_else(|| {
                Error::Checkpoint(format!("{}: missing key {key}", manifest_path.display()))
            })
        };
        let bad = |key: &str, v: &str| {
            Error::Checkpoint(format!("{}: bad value {v:?} for {key}", manifest_path.display()))
        };
        let num = |key: &str| -> Result<usize> {
            let v = field(key)?;
            v.parse().map_err(|_| bad(key, v))
        };
        let list = |key: &str| -> Result<Vec<usize>> {
            let v = field(key)?;
            v.split(',').map(|s| s.trim().parse().map_err(|_| bad(key, v))).collect()
        };
        let floats = |key: &str| -> Result<[f32; 3]> {
            let v = field(key)?;
            let parsed: Vec<f32> = v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad(key, v)))
                .collect::<Result<_>>()?;
            parsed.try_into().map_err(|_| bad(key, v))
        };

        if field("format")? != FORMAT {
            return Err(bad("format", field("format")?));
        }
        let config = NetworkConfig {
            num_classes: num("num_classes")?,
            injection: field("injection")?.parse()?,
            embed_width: num("embed_width")?,
            encoder_channels: list("encoder_channels")?,
            ppm_bins: list("ppm_bins")?,
            encoder_downsample: num("encoder_downsample")?,
            final_channels: num("final_channels")?,
            seed: field("seed")?.parse().map_err(|_| bad("seed", field("seed").unwrap()))?,
        };
        let normalization = Normalization {
            mean: floats("norm_mean")?,
            std: floats("norm_std")?,
        };

        let mut network = Network::<f32>::new(config)?;
        let paths = network.layer_paths();
        if field("layers")? != &paths.join(",") {
            return Err(Error::Checkpoint(format!(
                "{}: layer list {:?} does not match configuration ({})",
                manifest_path.display(),
                field("layers")?,
                paths.join(",")
            )));
        }
        for (path, layer) in paths.iter().zip(network.layers_mut()) {
            let wpath: PathBuf = dir.join(format!("{path}.weight.bin"));
            let weights = read_blob(&wpath, layer.weight.dims().len())?;
            layer.weight.values_mut().copy_from_slice(&weights);
            layer.bias = read_blob(&dir.join(format!("{path}.bias.bin")), layer.bias.len())?;
        }
        let meta = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self {
            network,
            normalization,
            meta,
        })
    }
}

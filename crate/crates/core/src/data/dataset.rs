use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::coarsen::{coarsen, CoarsenSpec};
use super::pnm::{self, Raster};
use super::scene::{generate_scene, SceneSpec};
use crate::error::{shape_err, Error, Result};
use crate::mask::LabelMask;
use crate::tensor::{Dims, Tensor4};

pub const DATASET_MANIFEST: &str = "manifest.json";
const FORMAT: &str = "detailnet-dataset-v1";

/// Image `(1, 3, H, W)` with its fine and coarse annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriplet {
    pub image: Tensor4<f32>,
    pub fine: LabelMask,
    pub coarse: LabelMask,
}

impl SampleTriplet {
    pub fn new(image: Tensor4<f32>, fine: LabelMask, coarse: LabelMask) -> Result<Self> {
        let d = image.dims();
        if d.n != 1 || d.c != 3 {
            return shape_err(format!("triplet image must be (1, 3, H, W), got {d}"));
        }
        for m in [&fine, &coarse] {
            if (m.width(), m.height()) != (d.w, d.h) {
                return shape_err(format!(
                    "mask {}x{} does not match image {d}",
                    m.width(),
                    m.height()
                ));
            }
        }
        Ok(Self { image, fine, coarse })
    }

    pub fn width(&self) -> usize {
        self.fine.width()
    }

    pub fn height(&self) -> usize {
        self.fine.height()
    }
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Channel statistics over every pixel of every image, accumulated in f64.
    pub fn from_triplets(triplets: &[SampleTriplet]) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut count = 0usize;
        for t in triplets {
            for c in 0..3 {
                for &v in t.image.plane(0, c) {
                    sum[c] += f64::from(v);
                    sq[c] += f64::from(v) * f64::from(v);
                }
            }
            count += t.image.dims().plane();
        }
        if count == 0 {
            return Self::identity();
        }
        let n = count as f64;
        let mean = sum.map(|s| s / n);
        let std: Vec<f64> = (0..3)
            .map(|c| (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-6))
            .collect();
        Self {
            mean: mean.map(|m| m as f32),
            std: [std[0] as f32, std[1] as f32, std[2] as f32],
        }
    }

    pub fn apply(&self, image: &mut Tensor4<f32>) {
        let d = image.dims();
        for n in 0..d.n {
            for c in 0..d.c.min(3) {
                let (m, s) = (self.mean[c], self.std[c]);
                image.plane_mut(n, c).iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
    }
}

/// How a dataset was generated; `None` for hand-assembled sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene: SceneSpec,
    pub coarsen: CoarsenSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub triplets: Vec<SampleTriplet>,
    pub provenance: Option<Provenance>,
}

/// SplitMix64 finaliser over `(seed, stream, index)`, for independent per-item seeds.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every sample to the nearest multiple of 1/255.
pub fn quantize_image(image: &mut Tensor4<f32>) {
    image
        .values_mut()
        .iter_mut()
        .for_each(|v| *v = f32::from(quantize(*v)) / 255.0);
}

/// Generates `count` triplets. Item `i` uses seeds derived from `(seed, i)`, so
/// the result is a pure function of the arguments. Images are quantized to
/// 8 bits so that in-memory and on-disk datasets agree exactly.
pub fn generate_dataset(
    scene: &SceneSpec,
    coarsen_spec: &CoarsenSpec,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    scene.validate()?;
    coarsen_spec.validate()?;
    let mut triplets = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let scene_i = SceneSpec {
            seed: derive_seed(seed, 1, i),
            ..scene.clone()
        };
        let (mut image, fine) = generate_scene(&scene_i)?;
        quantize_image(&mut image);
        let coarse = coarsen(
            &fine,
            &CoarsenSpec {
                seed: derive_seed(seed, 2, i),
                ..coarsen_spec.clone()
            },
        )?;
        triplets.push(SampleTriplet { image, fine, coarse });
    }
    Ok(Dataset {
        num_classes: scene.num_classes,
        triplets,
        provenance: Some(Provenance {
            scene: scene.clone(),
            coarsen: coarsen_spec.clone(),
            seed,
        }),
    })
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    image: String,
    fine: String,
    coarse: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    num_classes: usize,
    #[serde(default)]
    provenance: Option<Provenance>,
    samples: Vec<ManifestEntry>,
}

fn mask_raster(m: &LabelMask) -> Raster {
    Raster {
        width: m.width(),
        height: m.height(),
        channels: 1,
        data: m.labels().to_vec(),
    }
}

fn image_raster(image: &Tensor4<f32>) -> Raster {
    let d = image.dims();
    let mut data = Vec::with_capacity(d.plane() * 3);
    for i in 0..d.plane() {
        for c in 0..3 {
            data.push(quantize(image.plane(0, c)[i]));
        }
    }
    Raster {
        width: d.w,
        height: d.h,
        channels: 3,
        data,
    }
}

/// Writes `{id}_img.ppm`, `{id}_fine.pgm`, `{id}_coarse.pgm` and `manifest.json`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut samples = Vec::with_capacity(dataset.triplets.len());
    for (i, t) in dataset.triplets.iter().enumerate() {
        let id = format!("{i:05}");
        let entry = ManifestEntry {
            image: format!("{id}_img.ppm"),
            fine: format!("{id}_fine.pgm"),
            coarse: format!("{id}_coarse.pgm"),
            id,
        };
        pnm::write(&dir.join(&entry.image), &image_raster(&t.image))?;
        pnm::write(&dir.join(&entry.fine), &mask_raster(&t.fine))?;
        pnm::write(&dir.join(&entry.coarse), &mask_raster(&t.coarse))?;
        samples.push(entry);
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        num_classes: dataset.num_classes,
        provenance: dataset.provenance.clone(),
        samples,
    };
    let path = dir.join(DATASET_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn read_mask(path: &Path, num_classes: usize) -> Result<LabelMask> {
    let r = pnm::read(path)?;
    if r.channels != 1 {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            reason: "mask must be a P5 greymap".into(),
        });
    }
    let mask = LabelMask::new(r.width, r.height, r.data)?;
    mask.validate(num_classes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(mask)
}

fn read_image(path: &Path) -> Result<Tensor4<f32>> {
    let r = pnm::read(path)?;
    if r.channels != 3 {
        return Err(Error::Parse {
            file: path.to_path_buf(),
            offset: 0,
            reason: "image must be a P6 pixmap".into(),
        });
    }
    Ok(Tensor4::from_fn(Dims::new(1, 3, r.height, r.width), |_, c, y, x| {
        f32::from(r.data[(y * r.width + x) * 3 + c]) / 255.0
    }))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(DATASET_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| {
        // serde_json reports line/column; convert to a byte offset
        let offset = text
            .lines()
            .take(e.line().saturating_sub(1))
            .map(|l| l.len() + 1)
            .sum::<usize>()
            + e.column().saturating_sub(1);
        Error::Parse {
            file: path.clone(),
            offset,
            reason: e.to_string(),
        }
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Parse {
            file: path,
            offset: 0,
            reason: format!("unknown dataset format {:?}", manifest.format),
        });
    }
    let mut triplets = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let image = read_image(&dir.join(&entry.image))?;
        let fine = read_mask(&dir.join(&entry.fine), manifest.num_classes)?;
        let coarse = read_mask(&dir.join(&entry.coarse), manifest.num_classes)?;
        triplets.push(SampleTriplet::new(image, fine, coarse).map_err(|e| {
            Error::Data(format!("sample {}: {e}", entry.id))
        })?);
    }
    Ok(Dataset {
        num_classes: manifest.num_classes,
        triplets,
        provenance: manifest.provenance,
    })
}

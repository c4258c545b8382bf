//! Random scenes of flat-coloured shapes over a background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::tensor::{Dims, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Polygon,
}

/// Parameters of the scene generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub num_classes: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of foreground shapes per scene.
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub kinds: Vec<ShapeKind>,
    /// Shape radius range as a fraction of the shorter canvas side.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Mean RGB colour per class, entries in `[0, 1]`.
    pub palette: Vec<[f64; 3]>,
    /// Per-instance standard deviation around the class colour.
    pub color_jitter: f64,
    /// Per-pixel Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Class colours evenly spread in hue, pulled toward grey by `1 - separation`.
pub fn default_palette(num_classes: usize, separation: f64) -> Vec<[f64; 3]> {
    (0..num_classes)
        .map(|k| {
            let hue = k as f64 / num_classes as f64;
            let rgb = [0.0, 1.0 / 3.0, 2.0 / 3.0]
                .map(|offset| 0.5 + 0.5 * (2.0 * PI * (hue + offset)).cos());
            rgb.map(|v| 0.5 + separation * (v - 0.5))
        })
        .collect()
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::new(5, 48, 48)
    }
}

impl SceneSpec {
    pub fn new(num_classes: usize, width: usize, height: usize) -> Self {
        Self {
            num_classes,
            width,
            height,
            min_shapes: 3,
            max_shapes: 6,
            kinds: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Polygon],
            min_radius: 0.12,
            max_radius: 0.3,
            palette: default_palette(num_classes, 0.35),
            color_jitter: 0.1,
            noise_sigma: 0.06,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.num_classes < 2 || self.num_classes > 254 {
            return bad(format!("num_classes {} outside [2, 254]", self.num_classes));
        }
        if self.width == 0 || self.height == 0 {
            return bad("canvas must be non-empty".into());
        }
        if self.min_shapes > self.max_shapes {
            return bad(format!(
                "shape count range {}..={} is empty",
                self.min_shapes, self.max_shapes
            ));
        }
        if self.kinds.is_empty() {
            return bad("no shape kinds".into());
        }
        if !(0.0 < self.min_radius && self.min_radius <= self.max_radius) {
            return bad(format!("radius range {}..{}", self.min_radius, self.max_radius));
        }
        if self.palette.len() != self.num_classes {
            return bad(format!(
                "palette has {} colours for {} classes",
                self.palette.len(),
                self.num_classes
            ));
        }
        if self.palette.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("palette colours must lie in [0, 1]".into());
        }
        if self.color_jitter < 0.0 || self.noise_sigma < 0.0 {
            return bad("jitter and noise must be non-negative".into());
        }
        Ok(())
    }
}

enum Shape {
    Rectangle { cx: f64, cy: f64, hw: f64, hh: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Shape {
    fn sample(kind: ShapeKind, spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Self {
        let side = spec.width.min(spec.height) as f64;
        let cx = rng.random::<f64>() * spec.width as f64;
        let cy = rng.random::<f64>() * spec.height as f64;
        let mut radius = || rng.random_range(spec.min_radius..=spec.max_radius) * side;
        match kind {
            ShapeKind::Rectangle => Shape::Rectangle {
                cx,
                cy,
                hw: radius(),
                hh: radius(),
            },
            ShapeKind::Ellipse => {
                let (rx, ry) = (radius(), radius());
                Shape::Ellipse {
                    cx,
                    cy,
                    rx,
                    ry,
                    angle: rng.random::<f64>() * PI,
                }
            }
            ShapeKind::Polygon => {
                let r = radius();
                let n = rng.random_range(5..=7);
                let mut angles: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 * PI).collect();
                angles.sort_by(f64::total_cmp);
                let vertices = angles
                    .into_iter()
                    .map(|a| {
                        let rr = r * rng.random_range(0.6..=1.0);
                        (cx + rr * a.cos(), cy + rr * a.sin())
                    })
                    .collect();
                Shape::Polygon { vertices }
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rectangle { cx, cy, hw, hh } => (x - cx).abs() <= hw && (y - cy).abs() <= hh,
            Shape::Ellipse {
                cx,
                cy,
                rx,
                ry,
                angle,
            } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Shape::Polygon { ref vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[(i + n - 1) % n];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

/// Renders one scene: an RGB image `(1, 3, H, W)` in `[0, 1]` and its fine mask.
///
/// The background is class 0; shapes are painted in order, each with one
/// class in `1..C`, so later shapes occlude earlier ones.
pub fn generate_scene(spec: &SceneSpec) -> Result<(Tensor4<f32>, LabelMask)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let jitter = Normal::new(0.0, spec.color_jitter.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let instance_color = |class: usize, rng: &mut ChaCha8Rng| -> [f64; 3] {
        spec.palette[class].map(|m| {
            let j = if spec.color_jitter > 0.0 { jitter.sample(rng) } else { 0.0 };
            (m + j).clamp(0.0, 1.0)
        })
    };

    let mut fine = LabelMask::filled(w, h, 0);
    let mut colors = vec![instance_color(0, &mut rng); w * h];
    let count = rng.random_range(spec.min_shapes..=spec.max_shapes);
    for _ in 0..count {
        let kind = spec.kinds[rng.random_range(0..spec.kinds.len())];
        let class = rng.random_range(1..spec.num_classes);
        let shape = Shape::sample(kind, spec, &mut rng);
        let color = instance_color(class, &mut rng);
        for y in 0..h {
            for x in 0..w {
                if shape.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    fine.set(x, y, class as u8);
                    colors[y * w + x] = color;
                }
            }
        }
    }

    let mut image = Tensor4::zeros(Dims::new(1, 3, h, w));
    for c in 0..3 {
        let plane = image.plane_mut(0, c);
        for (v, rgb) in plane.iter_mut().zip(&colors) {
            let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = (rgb[c] + n).clamp(0.0, 1.0) as f32;
        }
    }
    Ok((image, fine))
}

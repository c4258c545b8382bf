//! Joint geometric augmentation of an image and its two masks.
//!
//! One transform (scale, rotation about the scaled canvas centre, horizontal
//! flip, crop offset) is sampled per call and applied to all three planes:
//! bilinear for the image, nearest-neighbour for masks. Samples falling
//! outside the source canvas become 0 in the image and ignore in the masks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Normalization, SampleTriplet};
use crate::mask::{LabelMask, IGNORE};
use crate::tensor::{Dims, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentRanges {
    pub min_scale: f64,
    pub max_scale: f64,
    pub max_rotation_deg: f64,
    pub flip_prob: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            min_scale: 0.5,
            max_scale: 2.0,
            max_rotation_deg: 10.0,
            flip_prob: 0.5,
        }
    }
}

/// One sampled geometric map from source canvas to a `crop x crop` window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub scale: f64,
    pub rotation_deg: f64,
    pub flip: bool,
    /// Window origin in scaled-canvas pixels; negative values pad.
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation_deg: 0.0,
            flip: false,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(
        rng: &mut R,
        ranges: &AugmentRanges,
        width: usize,
        height: usize,
        crop: usize,
    ) -> Self {
        let scale = rng.random_range(ranges.min_scale..=ranges.max_scale);
        let rotation_deg = rng.random_range(-ranges.max_rotation_deg..=ranges.max_rotation_deg);
        let flip = rng.random::<f64>() < ranges.flip_prob;
        let mut offset = |extent: usize| {
            let slack = (extent as f64 * scale).round() - crop as f64;
            let t = rng.random::<f64>();
            // slack < 0 pads: the canvas lands somewhere inside the window
            (t * slack).round()
        };
        let offset_x = offset(width);
        let offset_y = offset(height);
        Self {
            scale,
            rotation_deg,
            flip,
            offset_x,
            offset_y,
        }
    }

    /// Continuous source coordinate for the centre of output pixel `(x, y)`.
    pub fn source(&self, x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
        let sw = width as f64 * self.scale;
        let sh = height as f64 * self.scale;
        let mut px = x as f64 + 0.5 + self.offset_x;
        let py = y as f64 + 0.5 + self.offset_y;
        if self.flip {
            px = sw - px;
        }
        let (cx, cy) = (sw / 2.0, sh / 2.0);
        let (s, c) = (-self.rotation_deg.to_radians()).sin_cos();
        let (dx, dy) = (px - cx, py - cy);
        let rx = cx + dx * c - dy * s;
        let ry = cy + dx * s + dy * c;
        (rx / self.scale, ry / self.scale)
    }
}

fn inside(u: f64, extent: usize) -> bool {
    u >= 0.0 && u < extent as f64
}

fn sample_bilinear(plane: &[f32], w: usize, h: usize, u: f64, v: f64) -> f32 {
    if !inside(u, w) || !inside(v, h) {
        return 0.0;
    }
    let fx = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let at = |x: usize, y: usize| f64::from(plane[y * w + x]);
    let top = at(x0, y0) * (1.0 - ax) + at(x1, y0) * ax;
    let bottom = at(x0, y1) * (1.0 - ax) + at(x1, y1) * ax;
    (top * (1.0 - ay) + bottom * ay) as f32
}

fn sample_nearest(mask: &LabelMask, u: f64, v: f64) -> u8 {
    if !inside(u, mask.width()) || !inside(v, mask.height()) {
        return IGNORE;
    }
    mask.get(u.floor() as usize, v.floor() as usize)
}

/// Applies `t` to every plane of the triplet, producing a `crop x crop` sample.
pub fn apply_transform(triplet: &SampleTriplet, t: &Transform, crop: usize) -> SampleTriplet {
    let (w, h) = (triplet.width(), triplet.height());
    let coords: Vec<(f64, f64)> = (0..crop)
        .flat_map(|y| (0..crop).map(move |x| (x, y)))
        .map(|(x, y)| t.source(x, y, w, h))
        .collect();
    let mut image = Tensor4::zeros(Dims::new(1, 3, crop, crop));
    for c in 0..3 {
        let src = triplet.image.plane(0, c);
        let dst = image.plane_mut(0, c);
        for (v, &(u, vv)) in dst.iter_mut().zip(&coords) {
            *v = sample_bilinear(src, w, h, u, vv);
        }
    }
    let warp = |m: &LabelMask| {
        let labels = coords.iter().map(|&(u, v)| sample_nearest(m, u, v)).collect();
        LabelMask::new(crop, crop, labels).expect("crop-sized")
    };
    SampleTriplet {
        image,
        fine: warp(&triplet.fine),
        coarse: warp(&triplet.coarse),
    }
}

/// Samples one transform from `seed`, applies it and normalizes the image.
pub fn augment(
    triplet: &SampleTriplet,
    crop: usize,
    seed: u64,
    ranges: &AugmentRanges,
    norm: &Normalization,
) -> SampleTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Transform::sample(&mut rng, ranges, triplet.width(), triplet.height(), crop);
    let mut out = apply_transform(triplet, &t, crop);
    norm.apply(&mut out.image);
    out
}

//! Simulated coarse annotation: region erosion, region dropping and boundary bleed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{LabelMask, IGNORE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarsenSpec {
    /// Disk radius removed from every region boundary.
    pub erosion_radius: usize,
    /// Probability that a whole region stays unlabeled.
    pub drop_prob: f64,
    /// Probability that a region's label spills over its true boundary.
    pub bleed_prob: f64,
    /// Width in pixels of a spill.
    pub bleed_width: usize,
    /// Spills are withdrawn (last first) until labeled-pixel precision reaches this.
    pub min_precision: f64,
    pub seed: u64,
}

impl Default for CoarsenSpec {
    fn default() -> Self {
        Self {
            erosion_radius: 2,
            drop_prob: 0.15,
            bleed_prob: 0.25,
            bleed_width: 1,
            min_precision: 0.97,
            seed: 0,
        }
    }
}

impl CoarsenSpec {
    /// Spec under which the coarse mask equals the fine mask.
    pub fn identity() -> Self {
        Self {
            erosion_radius: 0,
            drop_prob: 0.0,
            bleed_prob: 0.0,
            bleed_width: 0,
            min_precision: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("drop_prob", self.drop_prob),
            ("bleed_prob", self.bleed_prob),
            ("min_precision", self.min_precision),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// 4-connected components of equal label. Returns per-pixel region ids and
/// the class of each region, ids assigned in raster order of first pixel.
pub fn connected_regions(mask: &LabelMask) -> (Vec<u32>, Vec<u8>) {
    let (w, h) = (mask.width(), mask.height());
    let mut ids = vec![u32::MAX; w * h];
    let mut classes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if ids[start] != u32::MAX {
            continue;
        }
        let id = classes.len() as u32;
        let label = mask.labels()[start];
        classes.push(label);
        ids[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let neighbours = [
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
            ];
            for j in neighbours.into_iter().flatten() {
                if ids[j] == u32::MAX && mask.labels()[j] == label {
                    ids[j] = id;
                    stack.push(j);
                }
            }
        }
    }
    (ids, classes)
}

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// Keeps a pixel only if every in-canvas pixel within `radius` shares its region.
pub fn erode_regions(ids: &[u32], width: usize, height: usize, radius: usize) -> Vec<bool> {
    let offsets = disk(radius);
    let mut keep = vec![true; ids.len()];
    for y in 0..height {
        for x in 0..width {
            let id = ids[y * width + x];
            keep[y * width + x] = offsets.iter().all(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    return true;
                }
                ids[ny as usize * width + nx as usize] == id
            });
        }
    }
    keep
}

/// Fraction of labeled coarse pixels agreeing with `fine`; 1 when none are labeled.
pub fn labeled_precision(coarse: &LabelMask, fine: &LabelMask) -> f64 {
    let mut labeled = 0usize;
    let mut correct = 0usize;
    for (&c, &f) in coarse.labels().iter().zip(fine.labels()) {
        if c != IGNORE {
            labeled += 1;
            correct += usize::from(c == f);
        }
    }
    if labeled == 0 {
        1.0
    } else {
        correct as f64 / labeled as f64
    }
}

/// Degrades a fine mask into a coarse one.
pub fn coarsen(fine: &LabelMask, spec: &CoarsenSpec) -> Result<LabelMask> {
    spec.validate()?;
    if !fine.is_total() {
        return Err(Error::Data("coarsen expects a fine mask without ignore pixels".into()));
    }
    let (w, h) = (fine.width(), fine.height());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (ids, classes) = connected_regions(fine);
    let keep = erode_regions(&ids, w, h, spec.erosion_radius);
    let dropped: Vec<bool> = classes.iter().map(|_| rng.random::<f64>() < spec.drop_prob).collect();

    let mut coarse = LabelMask::filled(w, h, IGNORE);
    for i in 0..w * h {
        if keep[i] && !dropped[ids[i] as usize] {
            coarse.labels_mut()[i] = fine.labels()[i];
        }
    }

    // Spills: a kept region's label extends past its boundary into
    // neighbouring unlabeled pixels.
    let offsets = disk(spec.bleed_width);
    let mut spills: Vec<Vec<usize>> = Vec::new();
    for (region, &class) in classes.iter().enumerate() {
        let bleeds = rng.random::<f64>() < spec.bleed_prob;
        if !bleeds || dropped[region] || spec.bleed_width == 0 {
            continue;
        }
        let mut spill = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if ids[i] == region as u32 || coarse.labels()[i] != IGNORE {
                    continue;
                }
                let near = offsets.iter().any(|&(dx, dy)| {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    nx >= 0
                        && ny >= 0
                        && nx < w as isize
                        && ny < h as isize
                        && ids[ny as usize * w + nx as usize] == region as u32
                });
                if near {
                    spill.push(i);
                }
            }
        }
        for &i in &spill {
            coarse.labels_mut()[i] = class;
        }
        spills.push(spill);
    }

    while labeled_precision(&coarse, fine) < spec.min_precision {
        let Some(spill) = spills.pop() else { break };
        for i in spill {
            coarse.labels_mut()[i] = IGNORE;
        }
    }
    Ok(coarse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_mask() -> LabelMask {
        // a 4x4 class-1 block and a 2x6 class-2 bar on background 0
        LabelMask::from_rows(&[
            &[0, 0, 0, 0, 0, 0, 0, 0],
            &[0, 1, 1, 1, 1, 0, 0, 0],
            &[0, 1, 1, 1, 1, 0, 2, 2],
            &[0, 1, 1, 1, 1, 0, 2, 2],
            &[0, 1, 1, 1, 1, 0, 2, 2],
            &[0, 0, 0, 0, 0, 0, 2, 2],
            &[0, 0, 0, 0, 0, 0, 2, 2],
            &[0, 0, 0, 0, 0, 0, 2, 2],
        ])
        .unwrap()
    }

    #[test]
    fn identity_spec_copies_fine() {
        let m = hand_mask();
        assert_eq!(coarsen(&m, &CoarsenSpec::identity()).unwrap(), m);
    }

    #[test]
    fn regions_are_four_connected() {
        let m = LabelMask::from_rows(&[&[1, 0], &[0, 1]]).unwrap();
        let (ids, classes) = connected_regions(&m);
        assert_eq!(classes.len(), 4);
        assert_eq!(ids, vec![0, 1, 2, 3]);
        let (_, classes) = connected_regions(&hand_mask());
        assert_eq!(classes, vec![0, 1, 2]);
    }

    #[test]
    fn erosion_by_half_width_removes_block() {
        let spec = CoarsenSpec {
            erosion_radius: 2,
            ..CoarsenSpec::identity()
        };
        let coarse = coarsen(&hand_mask(), &spec).unwrap();
        // the 4-wide block has no pixel 2 away from its boundary
        assert!(!coarse.labels().contains(&1));
        // radius 1 keeps the 2x2 core of the block
        let spec = CoarsenSpec {
            erosion_radius: 1,
            ..CoarsenSpec::identity()
        };
        let coarse = coarsen(&hand_mask(), &spec).unwrap();
        let kept: Vec<(usize, usize)> = (0..8)
            .flat_map(|y| (0..8).map(move |x| (x, y)))
            .filter(|&(x, y)| coarse.get(x, y) == 1)
            .collect();
        assert_eq!(kept, vec![(2, 2), (3, 2), (2, 3), (3, 3)]);
    }

    #[test]
    fn canvas_border_does_not_erode() {
        let spec = CoarsenSpec {
            erosion_radius: 1,
            ..CoarsenSpec::identity()
        };
        let coarse = coarsen(&hand_mask(), &spec).unwrap();
        // the class-2 bar touches the right and bottom border; column 7 survives below row 3
        assert_eq!(coarse.get(7, 7), 2);
        assert_eq!(coarse.get(6, 7), IGNORE);
        assert_eq!(coarse.get(0, 0), 0);
    }

    #[test]
    fn dropping_everything_leaves_ignore() {
        let spec = CoarsenSpec {
            drop_prob: 1.0,
            ..CoarsenSpec::identity()
        };
        let coarse = coarsen(&hand_mask(), &spec).unwrap();
        assert_eq!(coarse.labeled_count(), 0);
    }

    #[test]
    fn bleed_respects_precision_floor() {
        for seed in 0..10 {
            let spec = CoarsenSpec {
                bleed_prob: 1.0,
                bleed_width: 2,
                min_precision: 0.97,
                seed,
                ..CoarsenSpec::default()
            };
            let coarse = coarsen(&hand_mask(), &spec).unwrap();
            assert!(labeled_precision(&coarse, &hand_mask()) >= 0.97);
        }
    }

    #[test]
    fn without_bleed_labels_are_exact() {
        for seed in 0..10 {
            let spec = CoarsenSpec {
                bleed_prob: 0.0,
                seed,
                ..CoarsenSpec::default()
            };
            let coarse = coarsen(&hand_mask(), &spec).unwrap();
            assert_eq!(labeled_precision(&coarse, &hand_mask()), 1.0);
        }
    }

    #[test]
    fn rejects_ignore_in_fine() {
        let m = LabelMask::from_rows(&[&[0, IGNORE]]).unwrap();
        assert!(matches!(coarsen(&m, &CoarsenSpec::default()), Err(Error::Data(_))));
    }
}

//! Per-pixel class annotations.

use crate::error::{shape_err, Error, Result};

/// Label value for pixels that carry no class. Excluded from loss and metrics.
pub const IGNORE: u8 = 255;

/// Row-major grid of class indices, with [`IGNORE`] marking unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return shape_err(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            labels,
        }
    }

    /// Builds a mask from rows, mostly for tests.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return shape_err("ragged rows");
        }
        Self::new(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn same_dims(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub(crate) fn expect_same_dims(&self, other: &LabelMask, what: &str) -> Result<()> {
        if !self.same_dims(other) {
            return shape_err(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            ));
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != IGNORE).count()
    }

    /// Fraction of pixels carrying a real class.
    pub fn coverage(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labeled_count() as f64 / self.labels.len() as f64
    }

    pub fn is_total(&self) -> bool {
        self.labels.iter().all(|&l| l != IGNORE)
    }

    /// Checks that every entry is a class in `[0, num_classes)` or [`IGNORE`].
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        for (i, &l) in self.labels.iter().enumerate() {
            if l != IGNORE && usize::from(l) >= num_classes {
                return Err(Error::Data(format!(
                    "label {l} at pixel ({}, {}) outside [0, {num_classes})",
                    i % self.width,
                    i / self.width
                )));
            }
        }
        Ok(())
    }

    /// Sorted set of classes present (ignore excluded).
    pub fn classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[usize::from(l)] = true;
        }
        (0..255u8).filter(|&c| seen[usize::from(c)]).collect()
    }

    /// Nearest-neighbour resampling with source index `floor(d * in / out)`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> LabelMask {
        let xs = nearest_indices(self.width, width);
        let ys = nearest_indices(self.height, height);
        LabelMask::from_fn(width, height, |x, y| self.get(xs[x], ys[y]))
    }

    pub fn flip_horizontal(&self) -> LabelMask {
        LabelMask::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }
}

/// Source indices for nearest-neighbour resampling of one axis.
pub fn nearest_indices(input: usize, output: usize) -> Vec<usize> {
    (0..output)
        .map(|d| ((d * input) / output).min(input.saturating_sub(1)))
        .collect()
}

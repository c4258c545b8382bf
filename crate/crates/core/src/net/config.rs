use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where the embedded coarse mask joins the visual features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionPoint {
    /// Plain classifier, no coarse input.
    None,
    /// Concatenated with the encoder output, before the pyramid pooling module.
    BeforePool,
    /// Concatenated with the pyramid pooling output.
    AfterPool,
    /// Concatenated with the final convolution block output, before the head.
    AfterFinal,
}

impl InjectionPoint {
    pub const DETAILER: [InjectionPoint; 3] = [
        InjectionPoint::BeforePool,
        InjectionPoint::AfterPool,
        InjectionPoint::AfterFinal,
    ];

    pub fn is_detailer(self) -> bool {
        self != InjectionPoint::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InjectionPoint::None => "none",
            InjectionPoint::BeforePool => "before-pool",
            InjectionPoint::AfterPool => "after-pool",
            InjectionPoint::AfterFinal => "after-final",
        }
    }
}

impl fmt::Display for InjectionPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InjectionPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(InjectionPoint::None),
            "before-pool" => Ok(InjectionPoint::BeforePool),
            "after-pool" => Ok(InjectionPoint::AfterPool),
            "after-final" => Ok(InjectionPoint::AfterFinal),
            other => Err(Error::Argument(format!(
                "unknown injection point {other:?} (expected none, before-pool, after-pool or after-final)"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Real classes; the ignore label is not a channel.
    pub num_classes: usize,
    pub injection: InjectionPoint,
    /// Filters of the 1x1 coarse-mask embedding.
    pub embed_width: usize,
    /// Output channels of each 3x3 encoder convolution.
    pub encoder_channels: Vec<usize>,
    /// Pooled grid sizes of the pyramid pooling branches.
    pub ppm_bins: Vec<usize>,
    /// Total stride of the encoder. A power of two.
    pub encoder_downsample: usize,
    /// Width of the final convolution block.
    pub final_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            injection: InjectionPoint::None,
            embed_width: 64,
            encoder_channels: vec![16, 32, 64],
            ppm_bins: vec![1, 2, 3, 6],
            encoder_downsample: 4,
            final_channels: 32,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn classifier(num_classes: usize) -> Self {
        Self {
            num_classes,
            ..Self::default()
        }
    }

    pub fn detailer(num_classes: usize, injection: InjectionPoint) -> Self {
        Self {
            num_classes,
            injection,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        if self.num_classes < 2 || self.num_classes > 254 {
            return bad(format!("num_classes {} outside [2, 254]", self.num_classes));
        }
        if self.embed_width == 0 {
            return bad("embed_width must be at least 1".into());
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return bad(format!("encoder_channels {:?} must be nonempty and positive", self.encoder_channels));
        }
        if self.ppm_bins.is_empty() || self.ppm_bins.contains(&0) {
            return bad(format!("ppm_bins {:?} must be nonempty and positive", self.ppm_bins));
        }
        if self.final_channels == 0 {
            return bad("final_channels must be at least 1".into());
        }
        let ds = self.encoder_downsample;
        if !ds.is_power_of_two() {
            return bad(format!("encoder_downsample {ds} must be a power of two"));
        }
        if ds.trailing_zeros() as usize > self.encoder_channels.len() {
            return bad(format!(
                "encoder_downsample {ds} needs more than {} stride-2 layers",
                self.encoder_channels.len()
            ));
        }
        Ok(())
    }

    /// Number of leading stride-2 encoder layers.
    pub fn strided_layers(&self) -> usize {
        self.encoder_downsample.trailing_zeros() as usize
    }

    /// Smallest input side length accepted by the network.
    pub fn min_input_side(&self) -> usize {
        let bins = self.ppm_bins.iter().copied().max().unwrap_or(1);
        bins * self.encoder_downsample
    }
}

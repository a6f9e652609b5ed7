//! Pipeline-level configuration shared by training, evaluation, and the CLI.

use serde::{Deserialize, Serialize};

use crate::cnn1d::BranchConfig;
use crate::error::{Error, Result};
use crate::mtf::{BpConfig, Topology};
use crate::resnet2d::ResNetConfig;
use crate::ssa::SsaConfig;

/// Markov-field imaging settings: region layout, state count, smoothing
/// grid, inference, and the rendered image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MtfSettings {
    /// Time segments per channel (nodes per channel row).
    pub segments: usize,
    /// Discrete states per node.
    pub states: usize,
    /// Region connectivity.
    pub topology: Topology,
    /// Candidate pairwise strengths; validation accuracy picks one.
    pub beta_grid: Vec<f64>,
    /// Belief-propagation settings.
    pub bp: BpConfig,
    /// Rendered image height in pixels.
    pub image_height: usize,
    /// Rendered image width in pixels.
    pub image_width: usize,
}

impl Default for MtfSettings {
    fn default() -> Self {
        Self {
            segments: 8,
            states: 8,
            topology: Topology::Grid,
            beta_grid: vec![0.1, 1.0, 10.0],
            bp: BpConfig::default(),
            image_height: 32,
            image_width: 32,
        }
    }
}

impl MtfSettings {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 {
            return Err(Error::Config("need at least one segment".into()));
        }
        if self.states < 2 {
            return Err(Error::Config("need at least two states".into()));
        }
        if self.beta_grid.is_empty() {
            return Err(Error::Config("beta grid must not be empty".into()));
        }
        if self.beta_grid.iter().any(|&b| !(b >= 0.0) || !b.is_finite()) {
            return Err(Error::Config(format!(
                "beta grid entries must be finite and nonnegative, got {:?}",
                self.beta_grid
            )));
        }
        if self.image_height < 8 || self.image_width < 8 {
            return Err(Error::Config(format!(
                "rendered images must be at least 8x8, got {}x{}",
                self.image_height, self.image_width
            )));
        }
        self.bp.validate()
    }
}

/// Everything that defines the pipeline other than the training loop:
/// preprocessing, decomposition, the 1D branches, field imaging, the 2D
/// network, and the fusion switch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Z-normalize each channel per item before decomposition.
    pub znormalize: bool,
    pub ssa: SsaConfig,
    pub branch: BranchConfig,
    pub mtf: MtfSettings,
    pub resnet: ResNetConfig,
    /// Concatenate pooled 1D features with the 2D embedding before the head.
    pub fusion: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            znormalize: true,
            ssa: SsaConfig::default(),
            branch: BranchConfig::default(),
            mtf: MtfSettings::default(),
            resnet: ResNetConfig::default(),
            fusion: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.ssa.validate()?;
        self.branch.validate()?;
        self.mtf.validate()?;
        self.resnet.validate()?;
        let factor = self.resnet.downsample_factor();
        if self.mtf.image_height < factor || self.mtf.image_width < factor {
            return Err(Error::Config(format!(
                "{}x{} images cannot pass {} downsampling stages",
                self.mtf.image_height,
                self.mtf.image_width,
                self.resnet.stages.len()
            )));
        }
        Ok(())
    }
}

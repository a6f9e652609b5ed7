//! 2D residual network with per-stage channel attention.
//!
//! Images pass through stages of residual blocks
//! (`conv → BN → relu → conv → BN`, added to an identity or 1×1-conv
//! shortcut, then `relu`). Stages after the first open with a stride-2
//! block. After each stage, channel attention scores every feature map from
//! its global average (shared scoring parameters per channel, softmax over
//! channels) and rescales it. A global average pool produces the embedding
//! consumed by the dense classification head, optionally fused with pooled
//! features from the 1D branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::tape::{BnStats, Tape, Var};

/// Batch-norm running-average retention factor.
pub const BN_MOMENTUM: f64 = 0.9;
/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;

/// Network layout; `Default` gives the documented defaults.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResNetConfig {
    /// Stages as `(feature maps, residual blocks)`.
    pub stages: Vec<(usize, usize)>,
    /// Apply channel attention after the corresponding stage.
    pub attention_after_stage: Vec<bool>,
    /// Width of the attention tanh projection.
    pub attention_dim: usize,
    /// Output class count of the dense head.
    pub classes: usize,
}

impl Default for ResNetConfig {
    fn default() -> Self {
        Self {
            stages: vec![(16, 2), (32, 2), (64, 2)],
            attention_after_stage: vec![true; 3],
            attention_dim: 32,
            classes: 2,
        }
    }
}

impl ResNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("network needs at least one stage".into()));
        }
        if self.stages.iter().any(|&(c, b)| c == 0 || b == 0) {
            return Err(Error::Config(
                "every stage needs at least one feature map and one block".into(),
            ));
        }
        if self.attention_after_stage.len() != self.stages.len() {
            return Err(Error::Config(format!(
                "{} attention flags for {} stages",
                self.attention_after_stage.len(),
                self.stages.len()
            )));
        }
        if self.attention_dim == 0 {
            return Err(Error::Config("attention_dim must be at least 1".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        Ok(())
    }

    /// Total spatial shrink factor: stages after the first downsample by 2.
    pub fn downsample_factor(&self) -> usize {
        1 << (self.stages.len() - 1)
    }

    /// Feature-map count of the final stage (the embedding width).
    pub fn embedding_dim(&self) -> usize {
        self.stages.last().map(|&(c, _)| c).unwrap_or(0)
    }

    /// Per-block `(in_channels, out_channels, stride)`, given the image
    /// channel count; the source of truth for parameter construction.
    pub fn block_dims(&self, input_channels: usize) -> Vec<Vec<(usize, usize, usize)>> {
        let mut c_in = input_channels;
        self.stages
            .iter()
            .enumerate()
            .map(|(s, &(c_out, blocks))| {
                (0..blocks)
                    .map(|b| {
                        let stride = if s > 0 && b == 0 { 2 } else { 1 };
                        let dims = (c_in, c_out, stride);
                        c_in = c_out;
                        dims
                    })
                    .collect()
            })
            .collect()
    }
}

/// True when a block cannot use the identity shortcut.
pub fn needs_projection(c_in: usize, c_out: usize, stride: usize) -> bool {
    c_in != c_out || stride > 1
}

/// Tape handles for one residual block.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    /// 3×3 kernel `(C_out, C_in, 3, 3)` and bias.
    pub conv1: (Var, Var),
    /// Batch-norm `(gamma, beta)`.
    pub bn1: (Var, Var),
    pub conv2: (Var, Var),
    pub bn2: (Var, Var),
    /// 1×1 projection when channels or resolution change.
    pub shortcut: Option<(Var, Var)>,
}

/// Tape handles for one channel-attention block.
#[derive(Clone, Copy, Debug)]
pub struct CcsaParams {
    /// `(d_a, 1)` projection of the per-channel global average.
    pub w_x: Var,
    /// `(d_a)` bias.
    pub b_x: Var,
    /// `(d_a, 1)` scoring vector.
    pub w_a: Var,
}

/// All network parameters as tape handles.
#[derive(Clone, Debug)]
pub struct ResNetParams {
    pub stages: Vec<Vec<BlockParams>>,
    /// One entry per stage; `None` where attention is disabled.
    pub attention: Vec<Option<CcsaParams>>,
}

/// Batch-norm running statistics for every block, `(bn1, bn2)` each.
#[derive(Clone, Debug, PartialEq)]
pub struct ResNetStats<S> {
    pub blocks: Vec<Vec<(BnStats<S>, BnStats<S>)>>,
}

impl<S: Scalar> ResNetStats<S> {
    pub fn new(config: &ResNetConfig) -> Self {
        let blocks = config
            .stages
            .iter()
            .map(|&(c, blocks)| {
                (0..blocks)
                    .map(|_| (BnStats::new(c), BnStats::new(c)))
                    .collect()
            })
            .collect();
        Self { blocks }
    }
}

/// One residual block: `relu(BN(conv(relu(BN(conv(x))))) + shortcut(x))`.
pub fn residual_block<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    params: &BlockParams,
    stats: &mut (BnStats<S>, BnStats<S>),
    stride: usize,
    training: bool,
) -> Result<Var> {
    let momentum = real::<S>(BN_MOMENTUM);
    let eps = real::<S>(BN_EPS);
    let h = tape.conv2d(x, params.conv1.0, params.conv1.1, stride)?;
    let h = tape.batch_norm(h, params.bn1.0, params.bn1.1, &mut stats.0, training, momentum, eps)?;
    let h = tape.relu(h)?;
    let h = tape.conv2d(h, params.conv2.0, params.conv2.1, 1)?;
    let h = tape.batch_norm(h, params.bn2.0, params.bn2.1, &mut stats.1, training, momentum, eps)?;
    let shortcut = match params.shortcut {
        Some((w, b)) => tape.conv2d(x, w, b, stride)?,
        None => {
            if stride != 1 || tape.value(x).shape()[0] != tape.value(h).shape()[0] {
                return Err(Error::Shape(
                    "identity shortcut needs matching channels and stride 1".into(),
                ));
            }
            x
        }
    };
    let sum = tape.add(h, shortcut)?;
    tape.relu(sum)
}

/// Channel attention: each feature map is scored from its global average
/// through a shared `tanh` projection, weights are softmax-normalized over
/// channels and rescale the maps.
pub fn ccsa<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    params: &CcsaParams,
) -> Result<(Var, Var)> {
    let pooled = tape.global_avg_pool2d(x)?;
    let c = tape.value(pooled).shape()[0];
    let row = tape.reshape(pooled, &[1, c])?;
    let proj = tape.matmul(params.w_x, row)?;
    let biased = tape.add_col_bias(proj, params.b_x)?;
    let z = tape.tanh(biased)?;
    let w_a_t = tape.transpose(params.w_a)?;
    let scores = tape.matmul(w_a_t, z)?;
    let weights_row = tape.softmax(scores, 1)?;
    let weights = tape.reshape(weights_row, &[c])?;
    let attended = tape.scale_channels(x, weights)?;
    Ok((weights, attended))
}

/// Runs all stages on an image `(C_in, H, W)` and returns the pooled
/// embedding `(C_last)`.
pub fn resnet_forward<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ResNetConfig,
    params: &ResNetParams,
    stats: &mut ResNetStats<S>,
    image: Var,
    training: bool,
) -> Result<Var> {
    Ok(resnet_forward_traced(tape, config, params, stats, image, training)?.0)
}

/// Like [`resnet_forward`], additionally returning each stage's output
/// feature maps (post-attention where enabled) for visualization.
pub fn resnet_forward_traced<S: Scalar>(
    tape: &mut Tape<S>,
    config: &ResNetConfig,
    params: &ResNetParams,
    stats: &mut ResNetStats<S>,
    image: Var,
    training: bool,
) -> Result<(Var, Vec<Var>)> {
    config.validate()?;
    let shape = tape.value(image).shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "expected a (channels, H, W) image, got {shape:?}"
        )));
    }
    let factor = config.downsample_factor();
    if shape[1] < factor || shape[2] < factor {
        return Err(Error::Shape(format!(
            "{}x{} image is smaller than the total downsampling factor {factor}",
            shape[1], shape[2]
        )));
    }
    if params.stages.len() != config.stages.len()
        || params.attention.len() != config.stages.len()
    {
        return Err(Error::Shape("parameter layout does not match the config".into()));
    }
    let mut h = image;
    let mut stage_outputs = Vec::with_capacity(config.stages.len());
    for (s, &(_, blocks)) in config.stages.iter().enumerate() {
        if params.stages[s].len() != blocks {
            return Err(Error::Shape(format!(
                "stage {s} expects {blocks} blocks, got {}",
                params.stages[s].len()
            )));
        }
        for b in 0..blocks {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            h = residual_block(
                tape,
                h,
                &params.stages[s][b],
                &mut stats.blocks[s][b],
                stride,
                training,
            )?;
        }
        if config.attention_after_stage[s] {
            let p = params.attention[s].as_ref().ok_or_else(|| {
                Error::Shape(format!("stage {s} attends but has no attention parameters"))
            })?;
            let (_, attended) = ccsa(tape, h, p)?;
            h = attended;
        }
        stage_outputs.push(h);
    }
    let embedding = tape.global_avg_pool2d(h)?;
    Ok((embedding, stage_outputs))
}

/// Dense head: `logits = W·features + b`, shapes `(K, D)·(D) + (K)`.
pub fn classify_head<S: Scalar>(
    tape: &mut Tape<S>,
    w: Var,
    b: Var,
    features: Var,
) -> Result<Var> {
    let d = {
        let shape = tape.value(features).shape();
        if shape.len() != 1 {
            return Err(Error::Shape(format!(
                "head features must be rank-1, got {shape:?}"
            )));
        }
        shape[0]
    };
    let k = tape.value(b).shape()[0];
    let col = tape.reshape(features, &[d, 1])?;
    let prod = tape.matmul(w, col)?;
    let logits = tape.add_col_bias(prod, b)?;
    tape.reshape(logits, &[k])
}

//! Parallel 1D convolution branches with cross-channel attention.
//!
//! Each decomposition component (trend / seasonal / noise) gets its own
//! branch: a stack of `conv1d → relu → max-pool` layers applied to every
//! input channel with shared weights. Attention then weighs the channels:
//! per-channel maps are time-mean pooled, projected through a `tanh` layer,
//! scored, and softmax-normalized; the weights rescale the stacked maps.
//! Region features for the downstream Markov field are mean-pools of the
//! attended maps over a channel × time-segment grid, concatenated across
//! branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Architecture of one branch; `Default` gives the documented defaults.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BranchConfig {
    /// Conv layers as `(feature maps, kernel size)`; kernels must be odd.
    pub layers: Vec<(usize, usize)>,
    /// Max-pool window applied after each layer; 1 disables pooling.
    pub pool: usize,
    /// Width of the attention tanh projection.
    pub attention_dim: usize,
    /// Attend after every layer instead of only after the last one.
    pub attend_every_layer: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            layers: vec![(16, 7), (32, 5)],
            pool: 2,
            attention_dim: 32,
            attend_every_layer: false,
        }
    }
}

impl BranchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("branch needs at least one layer".into()));
        }
        for &(maps, kernel) in &self.layers {
            if maps == 0 {
                return Err(Error::Config("layer with zero feature maps".into()));
            }
            if kernel == 0 || kernel % 2 == 0 {
                return Err(Error::Config(format!(
                    "kernel sizes must be odd, got {kernel}"
                )));
            }
        }
        if self.pool == 0 {
            return Err(Error::Config("pool window must be at least 1".into()));
        }
        if self.attention_dim == 0 {
            return Err(Error::Config("attention_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of attention blocks the branch uses.
    pub fn attention_count(&self) -> usize {
        if self.attend_every_layer {
            self.layers.len()
        } else {
            1
        }
    }

    /// Largest kernel, the minimum admissible input length.
    pub fn min_input_len(&self) -> usize {
        self.layers.iter().map(|&(_, k)| k).max().unwrap_or(1)
    }
}

/// Tape handles for one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    /// `(d_a, F)` projection.
    pub w_h: Var,
    /// `(d_a)` bias, broadcast across channels.
    pub b_h: Var,
    /// `(d_a, 1)` scoring vector.
    pub w_a: Var,
}

/// Tape handles for one branch: conv `(weight, bias)` per layer plus one
/// attention block per attended layer.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub convs: Vec<(Var, Var)>,
    pub attn: Vec<AttentionParams>,
}

/// Attention weights and attended maps of one branch.
#[derive(Clone, Copy, Debug)]
pub struct BranchOutput {
    /// `(C)` channel weights from the final attention block.
    pub attention: Var,
    /// `(C, F, T)` attended feature maps.
    pub attended: Var,
}

/// Channel attention over per-channel maps (each `(F, T)`).
///
/// `A = softmax(W_aᵀ·tanh(W_h·M + b_h))` where `M` stacks the time-mean
/// pooled maps as columns; returns the weights `(C)` and the attended stack
/// `(C, F, T)`.
pub fn cross_channel_attention<S: Scalar>(
    tape: &mut Tape<S>,
    params: &AttentionParams,
    channel_maps: &[Var],
) -> Result<(Var, Var)> {
    if channel_maps.is_empty() {
        return Err(Error::Shape("attention needs at least one channel".into()));
    }
    let c = channel_maps.len();
    let (f, t) = {
        let shape = tape.value(channel_maps[0]).shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!(
                "channel maps must be rank-2, got {shape:?}"
            )));
        }
        (shape[0], shape[1])
    };
    let mut pooled_cols = Vec::with_capacity(c);
    let mut stacked_rows = Vec::with_capacity(c);
    for &map in channel_maps {
        if tape.value(map).shape() != [f, t] {
            return Err(Error::Shape("channel maps differ in shape".into()));
        }
        let pooled = tape.mean_axis(map, 1)?;
        pooled_cols.push(tape.reshape(pooled, &[f, 1])?);
        stacked_rows.push(tape.reshape(map, &[1, f, t])?);
    }
    let m = tape.concat(&pooled_cols, 1)?;
    let proj = tape.matmul(params.w_h, m)?;
    let biased = tape.add_col_bias(proj, params.b_h)?;
    let z = tape.tanh(biased)?;
    let w_a_t = tape.transpose(params.w_a)?;
    let scores = tape.matmul(w_a_t, z)?;
    let weights_row = tape.softmax(scores, 1)?;
    let weights = tape.reshape(weights_row, &[c])?;
    let stacked = tape.concat(&stacked_rows, 0)?;
    let attended = tape.scale_channels(stacked, weights)?;
    Ok((weights, attended))
}

/// Runs one branch over all input channels (each a rank-1 series of equal
/// length) and applies attention per the config.
pub fn branch_forward<S: Scalar>(
    tape: &mut Tape<S>,
    config: &BranchConfig,
    params: &BranchParams,
    channels: &[Var],
) -> Result<BranchOutput> {
    config.validate()?;
    if channels.is_empty() {
        return Err(Error::Shape("branch needs at least one channel".into()));
    }
    if params.convs.len() != config.layers.len() {
        return Err(Error::Shape(format!(
            "{} conv parameter pairs for {} layers",
            params.convs.len(),
            config.layers.len()
        )));
    }
    if params.attn.len() != config.attention_count() {
        return Err(Error::Shape(format!(
            "{} attention blocks configured, {} provided",
            config.attention_count(),
            params.attn.len()
        )));
    }
    let n = tape.value(channels[0]).len();
    if n < config.min_input_len() {
        return Err(Error::Shape(format!(
            "series length {n} shorter than the largest kernel {}",
            config.min_input_len()
        )));
    }
    let mut maps: Vec<Var> = channels
        .iter()
        .map(|&ch| {
            let shape = tape.value(ch).shape().to_vec();
            match shape.as_slice() {
                [len] => tape.reshape(ch, &[1, *len]),
                [1, _] => Ok(ch),
                other => Err(Error::Shape(format!(
                    "branch input must be a series, got {other:?}"
                ))),
            }
        })
        .collect::<Result<_>>()?;

    let mut last_attention = None;
    for (layer, &(w, b)) in params.convs.iter().enumerate() {
        for map in maps.iter_mut() {
            let conv = tape.conv1d(*map, w, b)?;
            let act = tape.relu(conv)?;
            *map = if config.pool > 1 {
                tape.max_pool1d(act, config.pool)?
            } else {
                act
            };
        }
        let attend_here = config.attend_every_layer || layer + 1 == config.layers.len();
        if attend_here {
            let attn_idx = if config.attend_every_layer { layer } else { 0 };
            let (weights, attended) =
                cross_channel_attention(tape, &params.attn[attn_idx], &maps)?;
            last_attention = Some((weights, attended));
            if layer + 1 < config.layers.len() {
                // Unstack the attended maps for the next layer.
                let shape = tape.value(attended).shape().to_vec();
                let (f, t) = (shape[1], shape[2]);
                for (c, map) in maps.iter_mut().enumerate() {
                    let piece = tape.slice(attended, &[c, 0, 0], &[c + 1, f, t])?;
                    *map = tape.reshape(piece, &[f, t])?;
                }
            }
        }
    }
    let (attention, attended) =
        last_attention.expect("the final layer always runs attention");
    Ok(BranchOutput {
        attention,
        attended,
    })
}

/// Branch forward with attention replaced by the identity: the conv stack
/// runs unchanged, channels are stacked unscaled, and the reported weights
/// are the uniform `1/C` constant. Used by the attention ablation; any
/// attention parameters in `params` are ignored.
pub fn branch_forward_identity_attention<S: Scalar>(
    tape: &mut Tape<S>,
    config: &BranchConfig,
    params: &BranchParams,
    channels: &[Var],
) -> Result<BranchOutput> {
    config.validate()?;
    if channels.is_empty() {
        return Err(Error::Shape("branch needs at least one channel".into()));
    }
    if params.convs.len() != config.layers.len() {
        return Err(Error::Shape(format!(
            "{} conv parameter pairs for {} layers",
            params.convs.len(),
            config.layers.len()
        )));
    }
    let n = tape.value(channels[0]).len();
    if n < config.min_input_len() {
        return Err(Error::Shape(format!(
            "series length {n} shorter than the largest kernel {}",
            config.min_input_len()
        )));
    }
    let mut maps: Vec<Var> = channels
        .iter()
        .map(|&ch| {
            let shape = tape.value(ch).shape().to_vec();
            match shape.as_slice() {
                [len] => tape.reshape(ch, &[1, *len]),
                [1, _] => Ok(ch),
                other => Err(Error::Shape(format!(
                    "branch input must be a series, got {other:?}"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    for &(w, b) in &params.convs {
        for map in maps.iter_mut() {
            let conv = tape.conv1d(*map, w, b)?;
            let act = tape.relu(conv)?;
            *map = if config.pool > 1 {
                tape.max_pool1d(act, config.pool)?
            } else {
                act
            };
        }
    }
    let c = maps.len();
    let rows: Vec<Var> = maps
        .iter()
        .map(|&m| {
            let shape = tape.value(m).shape().to_vec();
            tape.reshape(m, &[1, shape[0], shape[1]])
        })
        .collect::<Result<_>>()?;
    let attended = tape.concat(&rows, 0)?;
    let uniform = real::<S>(1.0 / c as f64);
    let attention = tape.constant(Tensor::full(&[c], uniform));
    Ok(BranchOutput {
        attention,
        attended,
    })
}

/// Mean over time then over channels of an attended stack `(C, F, T)`,
/// giving one `(F)` summary vector.
pub fn pooled_branch_features<S: Scalar>(tape: &mut Tape<S>, attended: Var) -> Result<Var> {
    let over_time = tape.mean_axis(attended, 2)?;
    tape.mean_axis(over_time, 0)
}

/// Half-open time spans `[⌊i·T/n⌋, ⌊(i+1)·T/n⌋)` per segment; every span
/// must be nonempty.
pub fn segment_spans(t: usize, segments: usize) -> Result<Vec<(usize, usize)>> {
    if segments == 0 {
        return Err(Error::Region("segment count must be positive".into()));
    }
    let spans: Vec<(usize, usize)> = (0..segments)
        .map(|i| (i * t / segments, (i + 1) * t / segments))
        .collect();
    if let Some(i) = spans.iter().position(|&(lo, hi)| lo >= hi) {
        return Err(Error::Region(format!(
            "segment {i} of {segments} is empty for {t} time steps"
        )));
    }
    Ok(spans)
}

/// Mean-pooled features per region node, off the gradient tape.
///
/// Each branch tensor is `(C, F_b, T)`; region `(c, seg)` (node index
/// `c·segments + seg`) collects the time-span mean of every feature row of
/// channel `c`, concatenated across branches into a row of the returned
/// `(C·segments) × Σ F_b` matrix.
pub fn region_features<S: Scalar>(
    branches: &[&Tensor<S>],
    segments: usize,
) -> Result<Tensor<S>> {
    if branches.is_empty() {
        return Err(Error::Shape("region features need at least one branch".into()));
    }
    let c = branches[0].shape()[0];
    let t = branches[0].shape()[2];
    for b in branches {
        if b.rank() != 3 || b.shape()[0] != c || b.shape()[2] != t {
            return Err(Error::Shape(format!(
                "branch maps disagree: {:?} vs (C={c}, _, T={t})",
                b.shape()
            )));
        }
    }
    let spans = segment_spans(t, segments)?;
    let d_f: usize = branches.iter().map(|b| b.shape()[1]).sum();
    let mut data = Vec::with_capacity(c * segments * d_f);
    for ch in 0..c {
        for &(lo, hi) in &spans {
            for b in branches {
                let f_count = b.shape()[1];
                for f in 0..f_count {
                    let row = &b.data()[(ch * f_count + f) * t..][..t];
                    let sum: S = row[lo..hi].iter().copied().sum();
                    data.push(sum / crate::scalar::real::<S>((hi - lo) as f64));
                }
            }
        }
    }
    Tensor::new(vec![c * segments, d_f], data)
}

//! Model serialization.
//!
//! Checkpoints are pretty-printed JSON with sorted keys and shortest-round-
//! trip float formatting, so saving the same model twice produces identical
//! bytes. Values are stored as `f64` regardless of the compute type; `f32`
//! models round-trip exactly because every `f32` is representable in `f64`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::resnet2d::ResNetStats;
use crate::scalar::{real, Scalar};
use crate::tensor::tape::BnStats;
use crate::tensor::Tensor;
use crate::train::model::{effective_resnet, AblationSet, Model};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A tensor flattened for storage (row-major values).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl TensorData {
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Self {
        Self {
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.to_real()).collect(),
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Result<Tensor<S>> {
        Tensor::new(
            self.shape.clone(),
            self.values.iter().map(|&v| real::<S>(v)).collect(),
        )
        .map_err(|e| Error::Checkpoint(format!("stored tensor is inconsistent: {e}")))
    }
}

/// Running statistics of one residual block's two batch norms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnPair {
    pub mean1: Vec<f64>,
    pub var1: Vec<f64>,
    pub mean2: Vec<f64>,
    pub var2: Vec<f64>,
}

/// Serializable snapshot of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub problem: Option<String>,
    pub label_names: Vec<String>,
    pub config: ModelConfig,
    pub ablation: AblationSet,
    pub beta: f64,
    pub params: BTreeMap<String, TensorData>,
    pub mtf_unary: Option<TensorData>,
    /// `bn[stage][block]`, empty under `no_mtf`.
    pub bn: Vec<Vec<BnPair>>,
}

fn reals<S: Scalar>(xs: &[f64]) -> Vec<S> {
    xs.iter().map(|&v| real::<S>(v)).collect()
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &Model<S>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            problem: model.problem.clone(),
            label_names: model.label_names.clone(),
            config: model.config.clone(),
            ablation: model.ablation,
            beta: model.beta,
            params: model
                .params
                .iter()
                .map(|(k, v)| (k.clone(), TensorData::from_tensor(v)))
                .collect(),
            mtf_unary: model.mtf_unary.as_ref().map(TensorData::from_tensor),
            bn: model
                .bn
                .blocks
                .iter()
                .map(|stage| {
                    stage
                        .iter()
                        .map(|(a, b)| BnPair {
                            mean1: a.mean.iter().map(|v| v.to_real()).collect(),
                            var1: a.var.iter().map(|v| v.to_real()).collect(),
                            mean2: b.mean.iter().map(|v| v.to_real()).collect(),
                            var2: b.var.iter().map(|v| v.to_real()).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Rebuilds the model, validating structure against the stored config.
    pub fn into_model<S: Scalar>(self) -> Result<Model<S>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("stored config is invalid: {e}")))?;
        if self.label_names.len() < 2 {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {} labels; a classifier needs at least two",
                self.label_names.len()
            )));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Checkpoint(format!(
                "stored smoothing strength {} is invalid",
                self.beta
            )));
        }
        let params = self
            .params
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.to_tensor()?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let (bn, mtf_unary);
        if self.ablation.no_mtf {
            if self.mtf_unary.is_some() || !self.bn.is_empty() {
                return Err(Error::Checkpoint(
                    "checkpoint trained without the field stage must not carry field state".into(),
                ));
            }
            bn = ResNetStats { blocks: vec![] };
            mtf_unary = None;
        } else {
            let rcfg = effective_resnet(&self.config, self.ablation, self.label_names.len());
            let dims = rcfg.block_dims(1);
            if self.bn.len() != dims.len()
                || self.bn.iter().zip(&dims).any(|(s, d)| s.len() != d.len())
            {
                return Err(Error::Checkpoint(
                    "stored batch-norm statistics do not match the network layout".into(),
                ));
            }
            let blocks = self
                .bn
                .iter()
                .zip(&dims)
                .map(|(stage, stage_dims)| {
                    stage
                        .iter()
                        .zip(stage_dims)
                        .map(|(pair, &(_, co, _))| {
                            if [&pair.mean1, &pair.var1, &pair.mean2, &pair.var2]
                                .iter()
                                .any(|v| v.len() != co)
                            {
                                return Err(Error::Checkpoint(format!(
                                    "batch-norm statistics sized for the wrong width \
                                     (expected {co} channels)"
                                )));
                            }
                            Ok((
                                BnStats {
                                    mean: reals::<S>(&pair.mean1),
                                    var: reals::<S>(&pair.var1),
                                },
                                BnStats {
                                    mean: reals::<S>(&pair.mean2),
                                    var: reals::<S>(&pair.var2),
                                },
                            ))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            bn = ResNetStats { blocks };
            let unary = self
                .mtf_unary
                .as_ref()
                .ok_or_else(|| Error::Checkpoint("missing field unary weights".into()))?;
            let unary = unary.to_tensor()?;
            if unary.rank() != 2 || unary.shape()[0] != self.config.mtf.states {
                return Err(Error::Checkpoint(format!(
                    "field unary weights must be a matrix with {} rows",
                    self.config.mtf.states
                )));
            }
            mtf_unary = Some(unary);
        }
        Ok(Model {
            config: self.config,
            ablation: self.ablation,
            label_names: self.label_names,
            problem: self.problem,
            params,
            bn,
            mtf_unary,
            beta: self.beta,
        })
    }

    /// Deterministic pretty JSON (sorted keys, shortest float repr, trailing
    /// newline).
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("cannot encode checkpoint: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("cannot decode checkpoint: {e}")))
    }
}

pub fn save_checkpoint<S: Scalar>(model: &Model<S>, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::from_model(model).to_json()?)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Model<S>> {
    Checkpoint::from_json(&fs::read_to_string(path)?)?.into_model()
}

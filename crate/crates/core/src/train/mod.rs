//! Training, evaluation and ablation for the assembled pipeline.
//!
//! Training is deterministic for a given config and seed: initialization,
//! the validation split and epoch shuffles each draw from named RNG streams,
//! batches run samples in parallel but reduce gradients and batch-norm
//! statistics in sample order, and the smoothing-strength search trains one
//! model per grid value with identical initialization. Two runs with the
//! same inputs produce bit-identical histories and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod synth;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use metrics::{metrics_from_confusion, F1Average, Metrics};
pub use model::{
    argmax, fold_bn_stats, prepare_samples, predict_logits, trace_features, train_sample,
    AblationSet, FeatureTrace, ForwardContext, Model, PreparedSample,
};
pub use optim::{Optimizer, OptimizerKind};
pub use synth::{synthetic_frequency_dataset, SynthSpec};

use model::SampleGrads;

/// Share of each class held out for validation-based model selection.
pub const VAL_FRACTION: f64 = 0.2;

/// Knobs of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation accuracy.
    pub early_stop_patience: usize,
    pub ablation: AblationSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::default(),
            batch_size: 32,
            epochs: 100,
            seed: 42,
            early_stop_patience: 10,
            ablation: AblationSet::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Config(
                "early_stop_patience must be at least 1".into(),
            ));
        }
        self.optimizer.validate()
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

/// A trained model with its history and the smoothing-strength search trail.
pub struct FitResult<S> {
    pub model: Model<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    /// `(beta, best validation accuracy)` per grid candidate.
    pub beta_search: Vec<(f64, f64)>,
}

/// Splits item indices into train and validation lists, holding out
/// `fraction` of each class (never a class's last item). Shuffles within
/// each class are seeded; both lists come back sorted.
pub fn stratified_split(
    labels: &[usize],
    classes: usize,
    fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mut rng = crate::rng::StreamRng::new(seed, &format!("split-{c}"));
        rng.shuffle(&mut members);
        let held = ((fraction * members.len() as f64).round() as usize).min(members.len() - 1);
        val.extend_from_slice(&members[..held]);
        train.extend_from_slice(&members[held..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn accuracy_over<S: Scalar>(
    model: &Model<S>,
    ctx: &ForwardContext<S>,
    prepared: &[PreparedSample<S>],
    indices: &[usize],
) -> Result<f64> {
    let correct = indices
        .par_iter()
        .map(|&i| {
            let logits = predict_logits(model, ctx, &prepared[i])?;
            Ok(usize::from(argmax(&logits) == prepared[i].label))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(correct as f64 / indices.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn train_once<S: Scalar>(
    dataset: &Dataset<S>,
    prepared: &[PreparedSample<S>],
    train_idx: &[usize],
    val_idx: &[usize],
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    beta: f64,
) -> Result<(Model<S>, Vec<EpochRecord>, usize, f64)> {
    let mut model = Model::init(
        config,
        train_cfg.ablation,
        &dataset.label_names,
        train_cfg.seed,
    )?;
    model.beta = beta;
    model.problem = dataset.problem_name.clone();
    let ctx = ForwardContext::for_model(&model, dataset.channel_count())?;
    let mut opt = Optimizer::new(train_cfg.optimizer.clone())?;

    let mut history = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut best_state: Option<(std::collections::BTreeMap<String, Tensor<S>>, _)> = None;
    let mut since_best = 0usize;

    for epoch in 0..train_cfg.epochs {
        let mut order = train_idx.to_vec();
        crate::rng::StreamRng::new(train_cfg.seed, &format!("shuffle-{epoch}")).shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_id, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let results: Vec<SampleGrads<S>> = chunk
                .par_iter()
                .map(|&i| train_sample(&model, &ctx, &prepared[i]))
                .collect::<Result<Vec<_>>>()?;

            let scale = S::one() / crate::scalar::real::<S>(chunk.len() as f64);
            let mut summed: Vec<Tensor<S>> = results[0].grads.clone();
            for r in &results[1..] {
                for (acc, g) in summed.iter_mut().zip(&r.grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            for g in &mut summed {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            let grads: std::collections::BTreeMap<String, Tensor<S>> = model
                .params
                .keys()
                .cloned()
                .zip(summed)
                .collect();
            opt.step(&mut model.params, &grads)?;

            for r in &results {
                let loss = r.loss.to_real();
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in epoch {epoch}, batch {batch_id}"
                    )));
                }
                loss_sum += loss;
                correct += usize::from(r.correct);
                if let Some(capture) = &r.bn_captured {
                    fold_bn_stats(&mut model.bn, capture);
                }
            }
        }

        let train_loss = loss_sum / train_idx.len() as f64;
        let train_accuracy = correct as f64 / train_idx.len() as f64;
        let val_accuracy = if val_idx.is_empty() {
            train_accuracy
        } else {
            accuracy_over(&model, &ctx, prepared, val_idx)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_accuracy,
        });

        if val_accuracy > best_val {
            best_val = val_accuracy;
            best_epoch = epoch;
            best_state = Some((model.params.clone(), model.bn.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.early_stop_patience {
                break;
            }
        }
    }

    if let Some((params, bn)) = best_state {
        model.params = params;
        model.bn = bn;
    }
    Ok((model, history, best_epoch, best_val))
}

/// Trains on `dataset` and returns the best model.
///
/// Holds out a stratified validation split, trains one model per smoothing
/// strength in the configured grid (a single pass when the field stage is
/// ablated), selects by validation accuracy (earlier grid entries win ties),
/// and restores each model's best-epoch parameters.
pub fn fit<S: Scalar>(
    dataset: &Dataset<S>,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FitResult<S>> {
    config.validate()?;
    train_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let classes = dataset.n_classes();
    if classes < 2 {
        return Err(Error::Label(format!(
            "training needs at least two classes, got {classes}"
        )));
    }
    let prepared = prepare_samples(dataset, config, train_cfg.ablation)?;
    let (train_idx, val_idx) =
        stratified_split(&dataset.labels, classes, VAL_FRACTION, train_cfg.seed);
    if train_idx.is_empty() {
        return Err(Error::Data("no training samples after the split".into()));
    }

    let betas: Vec<f64> = if train_cfg.ablation.no_mtf {
        vec![1.0]
    } else {
        config.mtf.beta_grid.clone()
    };
    let mut beta_search = Vec::with_capacity(betas.len());
    let mut best: Option<(Model<S>, Vec<EpochRecord>, usize, f64)> = None;
    for &beta in &betas {
        let candidate = train_once(
            dataset, &prepared, &train_idx, &val_idx, config, train_cfg, beta,
        )?;
        beta_search.push((beta, candidate.3));
        if best.as_ref().map_or(true, |b| candidate.3 > b.3) {
            best = Some(candidate);
        }
    }
    let (model, history, best_epoch, best_val_accuracy) =
        best.expect("beta grid is validated nonempty");
    Ok(FitResult {
        model,
        history,
        best_epoch,
        best_val_accuracy,
        beta_search,
    })
}

/// Scores a model on a labelled dataset.
///
/// The dataset's label names must match the model's exactly (same order);
/// rows of the confusion matrix are true classes, columns predictions.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    average: F1Average,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    if dataset.label_names != model.label_names {
        return Err(Error::Label(format!(
            "dataset labels {:?} do not match the model's {:?}",
            dataset.label_names, model.label_names
        )));
    }
    let prepared = prepare_samples(dataset, &model.config, model.ablation)?;
    let ctx = ForwardContext::for_model(model, dataset.channel_count())?;
    let predictions = prepared
        .par_iter()
        .map(|sample| Ok(argmax(&predict_logits(model, &ctx, sample)?)))
        .collect::<Result<Vec<usize>>>()?;
    let k = model.label_names.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (pred, sample) in predictions.iter().zip(&prepared) {
        confusion[sample.label][*pred] += 1;
    }
    metrics_from_confusion(&confusion, average)
}

/// One line of an ablation report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub dataset: String,
    pub accuracy: f64,
    /// Accuracy difference to the full model (0 for the full row).
    pub delta: f64,
    pub f1: f64,
}

/// The standard ablation grid, in report order.
pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no_ssa", "no_mtf", "no_ccsa"];

/// Trains the full model and the three single-stage ablations with the same
/// seed and scores each on the test set (any ablation flags already present
/// in `train_cfg` are ignored).
pub fn ablate<S: Scalar>(
    train_set: &Dataset<S>,
    test_set: &Dataset<S>,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let dataset_name = test_set
        .problem_name
        .clone()
        .unwrap_or_else(|| "dataset".to_string());
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    let mut full_accuracy = 0.0;
    for &variant in &ABLATION_VARIANTS {
        let mut cfg = train_cfg.clone();
        cfg.ablation = AblationSet::default();
        if variant != "full" {
            cfg.ablation.set(variant)?;
        }
        let fitted = fit(train_set, config, &cfg)?;
        let metrics = evaluate(&fitted.model, test_set, F1Average::Macro)?;
        if variant == "full" {
            full_accuracy = metrics.accuracy;
        }
        rows.push(AblationRow {
            variant: variant.to_string(),
            dataset: dataset_name.clone(),
            accuracy: metrics.accuracy,
            delta: metrics.accuracy - full_accuracy,
            f1: metrics.averaged_f1,
        });
    }
    Ok(rows)
}

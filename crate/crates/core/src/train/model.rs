//! The assembled pipeline model: named parameters, per-sample forward pass,
//! and input preparation.
//!
//! A model is a `BTreeMap` from parameter name to value tensor plus the
//! non-trainable pieces (batch-norm running statistics, the fixed unary
//! weight matrix of the Markov field, the selected smoothing strength).
//! Every forward pass builds a fresh tape, so samples can run in parallel;
//! parameter initialization draws each tensor from an RNG stream named after
//! the parameter, which keeps shared parameters identical across ablation
//! variants.
//!
//! Per sample the pipeline is: decomposition (precomputed) → per-branch 1D
//! conv stacks with channel attention → pooled summary features, and — unless
//! the field stage is ablated — region features → unary potentials → belief
//! propagation → rendered image → 2D residual network → embedding, fused
//! with the pooled features before the dense head. The image is built from
//! feature *values* (inference is not differentiated); gradients reach the
//! 1D branches through the fusion path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cnn1d::{
    branch_forward, branch_forward_identity_attention, pooled_branch_features, region_features,
    AttentionParams, BranchConfig, BranchParams,
};
use crate::config::ModelConfig;
use crate::dataio::{znormalize, Dataset, MtfImage};
use crate::error::{Error, Result};
use crate::mtf::{
    belief_propagation, build_region_graph, levels_to_unit, unary_potentials, BpConfig, MtfGraph,
    RenderBasis,
};
use crate::resnet2d::{
    classify_head, needs_projection, resnet_forward_traced, BlockParams, CcsaParams, ResNetConfig,
    ResNetParams, ResNetStats, BN_MOMENTUM,
};
use crate::rng::StreamRng;
use crate::scalar::{real, Scalar};
use crate::ssa::decompose;
use crate::tensor::init::glorot_uniform;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Pipeline stages removed for an ablation run; all false is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSet {
    /// Feed the raw series into a single branch instead of decomposing.
    pub no_ssa: bool,
    /// Skip field imaging and the 2D network; pooled 1D features go
    /// straight to the head.
    pub no_mtf: bool,
    /// Replace every attention block (1D and 2D) with the identity.
    pub no_ccsa: bool,
}

impl AblationSet {
    /// Enables the named flag (`no_ssa`, `no_mtf`, or `no_ccsa`).
    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no_ssa" => self.no_ssa = true,
            "no_mtf" => self.no_mtf = true,
            "no_ccsa" => self.no_ccsa = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation {other}; expected no_ssa, no_mtf, or no_ccsa"
                )))
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        !(self.no_ssa || self.no_mtf || self.no_ccsa)
    }

    /// Active flags in canonical order.
    pub fn active(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.no_ssa {
            out.push("no_ssa");
        }
        if self.no_mtf {
            out.push("no_mtf");
        }
        if self.no_ccsa {
            out.push("no_ccsa");
        }
        out
    }
}

/// Branch names and configs for a variant: three component branches
/// normally, or one raw branch with tripled first-layer maps (keeping the
/// parameter count close) when decomposition is ablated.
pub fn branch_layout(config: &ModelConfig, ablation: AblationSet) -> Vec<(String, BranchConfig)> {
    if ablation.no_ssa {
        let mut cfg = config.branch.clone();
        if let Some(first) = cfg.layers.first_mut() {
            first.0 *= 3;
        }
        vec![("raw".to_string(), cfg)]
    } else {
        ["trend", "seasonal", "noise"]
            .into_iter()
            .map(|name| (name.to_string(), config.branch.clone()))
            .collect()
    }
}

/// The 2D network config actually used: classes from the dataset, attention
/// disabled everywhere under the attention ablation.
pub fn effective_resnet(
    config: &ModelConfig,
    ablation: AblationSet,
    classes: usize,
) -> ResNetConfig {
    let mut r = config.resnet.clone();
    r.classes = classes;
    if ablation.no_ccsa {
        r.attention_after_stage = vec![false; r.stages.len()];
    }
    r
}

/// Width of the pooled 1D feature vector (also the per-region feature
/// width): final-layer map counts summed over branches.
pub fn pooled_dim(layouts: &[(String, BranchConfig)]) -> usize {
    layouts
        .iter()
        .map(|(_, b)| b.layers.last().map(|&(f, _)| f).unwrap_or(0))
        .sum()
}

/// A pipeline model: configuration, labels, and all state.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: ModelConfig,
    pub ablation: AblationSet,
    pub label_names: Vec<String>,
    pub problem: Option<String>,
    /// Trainable tensors keyed by dotted path; key order is update order.
    pub params: BTreeMap<String, Tensor<S>>,
    /// Batch-norm running statistics (empty under `no_mtf`).
    pub bn: ResNetStats<S>,
    /// Fixed `(states, feature_dim)` unary weights of the field
    /// (`None` under `no_mtf`).
    pub mtf_unary: Option<Tensor<S>>,
    /// Selected pairwise smoothing strength.
    pub beta: f64,
}

struct Registry<S> {
    params: BTreeMap<String, Tensor<S>>,
    seed: u64,
}

impl<S: Scalar> Registry<S> {
    fn glorot(&mut self, name: String, shape: &[usize]) -> Result<()> {
        let mut rng = StreamRng::new(self.seed, &name);
        let tensor = glorot_uniform(shape, &mut rng)?;
        self.params.insert(name, tensor);
        Ok(())
    }

    fn zeros(&mut self, name: String, shape: &[usize]) {
        self.params.insert(name, Tensor::zeros(shape));
    }

    fn ones(&mut self, name: String, shape: &[usize]) {
        self.params.insert(name, Tensor::full(shape, S::one()));
    }
}

impl<S: Scalar> Model<S> {
    /// Fresh model with seeded initialization: weights are Glorot-uniform
    /// from per-parameter-name streams, biases zero, batch-norm scale one.
    pub fn init(
        config: &ModelConfig,
        ablation: AblationSet,
        label_names: &[String],
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let classes = label_names.len();
        if classes < 2 {
            return Err(Error::Label(format!(
                "need at least two classes, got {classes}"
            )));
        }
        let layouts = branch_layout(config, ablation);
        let mut reg = Registry {
            params: BTreeMap::new(),
            seed,
        };
        for (name, bcfg) in &layouts {
            bcfg.validate()?;
            let mut c_in = 1usize;
            for (l, &(maps, k)) in bcfg.layers.iter().enumerate() {
                reg.glorot(format!("branch.{name}.conv{l}.w"), &[maps, c_in, k])?;
                reg.zeros(format!("branch.{name}.conv{l}.b"), &[maps]);
                c_in = maps;
            }
            if !ablation.no_ccsa {
                for a in 0..bcfg.attention_count() {
                    let f = if bcfg.attend_every_layer {
                        bcfg.layers[a].0
                    } else {
                        bcfg.layers.last().expect("validated nonempty").0
                    };
                    reg.glorot(
                        format!("branch.{name}.attn{a}.w_h"),
                        &[bcfg.attention_dim, f],
                    )?;
                    reg.zeros(format!("branch.{name}.attn{a}.b_h"), &[bcfg.attention_dim]);
                    reg.glorot(
                        format!("branch.{name}.attn{a}.w_a"),
                        &[bcfg.attention_dim, 1],
                    )?;
                }
            }
        }
        let pooled = pooled_dim(&layouts);
        let (bn, mtf_unary, head_dim);
        if ablation.no_mtf {
            bn = ResNetStats { blocks: vec![] };
            mtf_unary = None;
            head_dim = pooled;
        } else {
            let rcfg = effective_resnet(config, ablation, classes);
            rcfg.validate()?;
            for (s, blocks) in rcfg.block_dims(1).iter().enumerate() {
                for (b, &(ci, co, stride)) in blocks.iter().enumerate() {
                    let base = format!("resnet.stage{s}.block{b}");
                    reg.glorot(format!("{base}.conv1.w"), &[co, ci, 3, 3])?;
                    reg.zeros(format!("{base}.conv1.b"), &[co]);
                    reg.ones(format!("{base}.bn1.gamma"), &[co]);
                    reg.zeros(format!("{base}.bn1.beta"), &[co]);
                    reg.glorot(format!("{base}.conv2.w"), &[co, co, 3, 3])?;
                    reg.zeros(format!("{base}.conv2.b"), &[co]);
                    reg.ones(format!("{base}.bn2.gamma"), &[co]);
                    reg.zeros(format!("{base}.bn2.beta"), &[co]);
                    if needs_projection(ci, co, stride) {
                        reg.glorot(format!("{base}.shortcut.w"), &[co, ci, 1, 1])?;
                        reg.zeros(format!("{base}.shortcut.b"), &[co]);
                    }
                }
                if rcfg.attention_after_stage[s] {
                    reg.glorot(format!("resnet.attn{s}.w_x"), &[rcfg.attention_dim, 1])?;
                    reg.zeros(format!("resnet.attn{s}.b_x"), &[rcfg.attention_dim]);
                    reg.glorot(format!("resnet.attn{s}.w_a"), &[rcfg.attention_dim, 1])?;
                }
            }
            let mut unary_rng = StreamRng::new(seed, "mtf.unary");
            mtf_unary = Some(glorot_uniform(
                &[config.mtf.states, pooled],
                &mut unary_rng,
            )?);
            bn = ResNetStats::new(&rcfg);
            head_dim = if config.fusion {
                rcfg.embedding_dim() + pooled
            } else {
                rcfg.embedding_dim()
            };
        }
        reg.glorot("head.w".to_string(), &[classes, head_dim])?;
        reg.zeros("head.b".to_string(), &[classes]);
        Ok(Model {
            config: config.clone(),
            ablation,
            label_names: label_names.to_vec(),
            problem: None,
            params: reg.params,
            bn,
            mtf_unary,
            beta: 1.0,
        })
    }
}

/// Per-branch channel series for one item, precomputed once per dataset
/// (decomposition depends only on the input).
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample<S> {
    /// `branches[b][c]` is branch `b`'s series for channel `c`.
    pub branches: Vec<Vec<Vec<S>>>,
    pub label: usize,
}

/// Normalizes and decomposes every item; items run in parallel and are
/// merged in dataset order.
pub fn prepare_samples<S: Scalar>(
    dataset: &Dataset<S>,
    config: &ModelConfig,
    ablation: AblationSet,
) -> Result<Vec<PreparedSample<S>>> {
    use rayon::prelude::*;
    dataset
        .items
        .par_iter()
        .zip(&dataset.labels)
        .map(|(item, &label)| {
            let series = if config.znormalize {
                znormalize(item)
            } else {
                item.clone()
            };
            let branches = if ablation.no_ssa {
                vec![series.channels().to_vec()]
            } else {
                let parts = decompose(&series, &config.ssa)?;
                let pick = |f: fn(&crate::ssa::ChannelComponents<S>) -> &Vec<S>| {
                    parts.channels.iter().map(|c| f(c).clone()).collect::<Vec<_>>()
                };
                vec![
                    pick(|c| &c.trend),
                    pick(|c| &c.seasonal),
                    pick(|c| &c.noise),
                ]
            };
            Ok(PreparedSample { branches, label })
        })
        .collect()
}

/// Everything about a forward pass that does not change per sample: branch
/// layouts, the effective 2D config, the field graph template (with the
/// smoothing strength set), and the cached render basis.
#[derive(Clone, Debug)]
pub struct ForwardContext<S> {
    pub layouts: Vec<(String, BranchConfig)>,
    pub resnet: Option<ResNetConfig>,
    pub graph: Option<MtfGraph<S>>,
    pub basis: Option<RenderBasis<S>>,
    pub fusion: bool,
    pub segments: usize,
    pub bp: BpConfig,
}

impl<S: Scalar> ForwardContext<S> {
    pub fn new(
        config: &ModelConfig,
        ablation: AblationSet,
        channels: usize,
        classes: usize,
        beta: f64,
    ) -> Result<Self> {
        config.validate()?;
        let layouts = branch_layout(config, ablation);
        if ablation.no_mtf {
            return Ok(Self {
                layouts,
                resnet: None,
                graph: None,
                basis: None,
                fusion: false,
                segments: config.mtf.segments,
                bp: config.mtf.bp,
            });
        }
        let rcfg = effective_resnet(config, ablation, classes);
        let mut graph =
            build_region_graph(channels, config.mtf.segments, config.mtf.topology, config.mtf.states)?;
        graph.set_uniform_beta(real::<S>(beta))?;
        let basis = RenderBasis::new(&graph, config.mtf.image_height, config.mtf.image_width)?;
        Ok(Self {
            layouts,
            resnet: Some(rcfg),
            graph: Some(graph),
            basis: Some(basis),
            fusion: config.fusion,
            segments: config.mtf.segments,
            bp: config.mtf.bp,
        })
    }

    /// Matching model for this context at the given seed.
    pub fn for_model(model: &Model<S>, channels: usize) -> Result<Self> {
        Self::new(
            &model.config,
            model.ablation,
            channels,
            model.label_names.len(),
            model.beta,
        )
    }
}

fn pv(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
}

fn build_param_vars<S: Scalar>(
    tape: &mut Tape<S>,
    params: &BTreeMap<String, Tensor<S>>,
    with_grads: bool,
) -> BTreeMap<String, Var> {
    params
        .iter()
        .map(|(k, v)| (k.clone(), tape.leaf(v.clone(), with_grads)))
        .collect()
}

fn resnet_param_vars(
    vars: &BTreeMap<String, Var>,
    cfg: &ResNetConfig,
) -> Result<ResNetParams> {
    let stages = cfg
        .block_dims(1)
        .iter()
        .enumerate()
        .map(|(s, blocks)| {
            blocks
                .iter()
                .enumerate()
                .map(|(b, &(ci, co, stride))| {
                    let p = |part: &str| {
                        pv(vars, &format!("resnet.stage{s}.block{b}.{part}"))
                    };
                    Ok(BlockParams {
                        conv1: (p("conv1.w")?, p("conv1.b")?),
                        bn1: (p("bn1.gamma")?, p("bn1.beta")?),
                        conv2: (p("conv2.w")?, p("conv2.b")?),
                        bn2: (p("bn2.gamma")?, p("bn2.beta")?),
                        shortcut: if needs_projection(ci, co, stride) {
                            Some((p("shortcut.w")?, p("shortcut.b")?))
                        } else {
                            None
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let attention = (0..cfg.stages.len())
        .map(|s| {
            if cfg.attention_after_stage[s] {
                Ok(Some(CcsaParams {
                    w_x: pv(vars, &format!("resnet.attn{s}.w_x"))?,
                    b_x: pv(vars, &format!("resnet.attn{s}.b_x"))?,
                    w_a: pv(vars, &format!("resnet.attn{s}.w_a"))?,
                }))
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResNetParams { stages, attention })
}

struct ForwardTrace<S> {
    logits: Var,
    image: Option<MtfImage<S>>,
    /// Unit-interval expected level per field node (channel-major).
    field_values: Option<Vec<S>>,
    stages: Vec<Var>,
    branch_attention: Vec<(String, Var)>,
}

fn forward_logits<S: Scalar>(
    tape: &mut Tape<S>,
    model: &Model<S>,
    vars: &BTreeMap<String, Var>,
    ctx: &ForwardContext<S>,
    sample: &PreparedSample<S>,
    bn: &mut ResNetStats<S>,
    training: bool,
) -> Result<ForwardTrace<S>> {
    if sample.branches.len() != ctx.layouts.len() {
        return Err(Error::Shape(format!(
            "sample has {} branches, model expects {}",
            sample.branches.len(),
            ctx.layouts.len()
        )));
    }
    let ablation = model.ablation;
    let mut outputs = Vec::with_capacity(ctx.layouts.len());
    let mut branch_attention = Vec::with_capacity(ctx.layouts.len());
    for ((name, bcfg), series_list) in ctx.layouts.iter().zip(&sample.branches) {
        let channels: Vec<Var> = series_list
            .iter()
            .map(|s| Ok(tape.constant(Tensor::new(vec![s.len()], s.clone())?)))
            .collect::<Result<_>>()?;
        let convs = (0..bcfg.layers.len())
            .map(|l| {
                Ok((
                    pv(vars, &format!("branch.{name}.conv{l}.w"))?,
                    pv(vars, &format!("branch.{name}.conv{l}.b"))?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let attn = if ablation.no_ccsa {
            vec![]
        } else {
            (0..bcfg.attention_count())
                .map(|a| {
                    Ok(AttentionParams {
                        w_h: pv(vars, &format!("branch.{name}.attn{a}.w_h"))?,
                        b_h: pv(vars, &format!("branch.{name}.attn{a}.b_h"))?,
                        w_a: pv(vars, &format!("branch.{name}.attn{a}.w_a"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        let bparams = BranchParams { convs, attn };
        let out = if ablation.no_ccsa {
            branch_forward_identity_attention(tape, bcfg, &bparams, &channels)?
        } else {
            branch_forward(tape, bcfg, &bparams, &channels)?
        };
        branch_attention.push((name.clone(), out.attention));
        outputs.push(out);
    }
    let pooled_parts: Vec<Var> = outputs
        .iter()
        .map(|o| pooled_branch_features(tape, o.attended))
        .collect::<Result<_>>()?;
    let pooled = if pooled_parts.len() == 1 {
        pooled_parts[0]
    } else {
        tape.concat(&pooled_parts, 0)?
    };

    let (features, image, field_values, stages) =
        match (&ctx.resnet, &ctx.graph, &ctx.basis, &model.mtf_unary) {
            (Some(rcfg), Some(graph_template), Some(basis), Some(unary_w)) => {
                let attended_values: Vec<Tensor<S>> = outputs
                    .iter()
                    .map(|o| tape.value(o.attended).clone())
                    .collect();
                let refs: Vec<&Tensor<S>> = attended_values.iter().collect();
                let feats = region_features(&refs, ctx.segments)?;
                let mut graph = graph_template.clone();
                unary_potentials(&mut graph, &feats, unary_w)?;
                let outcome = belief_propagation(&graph, &ctx.bp)?;
                let expected = outcome.marginals.expected_levels(graph.levels());
                let values01 = levels_to_unit(&expected);
                let image = basis.render(&values01)?;
                let image_tensor = Tensor::new(
                    vec![1, image.height(), image.width()],
                    image.pixels().to_vec(),
                )?;
                let image_var = tape.constant(image_tensor);
                let rparams = resnet_param_vars(vars, rcfg)?;
                let (embed, stages) =
                    resnet_forward_traced(tape, rcfg, &rparams, bn, image_var, training)?;
                let head_in = if ctx.fusion {
                    tape.concat(&[embed, pooled], 0)?
                } else {
                    embed
                };
                (head_in, Some(image), Some(values01), stages)
            }
            _ => (pooled, None, None, vec![]),
        };
    let logits = classify_head(tape, pv(vars, "head.w")?, pv(vars, "head.b")?, features)?;
    Ok(ForwardTrace {
        logits,
        image,
        field_values,
        stages,
        branch_attention,
    })
}

/// Index of the largest entry; the first maximum wins ties.
pub fn argmax<S: Scalar>(xs: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Zero-initialized statistics shaped like the network's; used to capture
/// one sample's batch moments (momentum `m` stores `(1−m)·moment` into a
/// zeroed slot, so folding recovers the sequential running average exactly).
pub fn zeroed_stats_like<S: Scalar>(cfg: &ResNetConfig) -> ResNetStats<S> {
    let mut stats = ResNetStats::new(cfg);
    for stage in &mut stats.blocks {
        for (a, b) in stage {
            a.var.iter_mut().for_each(|v| *v = S::zero());
            b.var.iter_mut().for_each(|v| *v = S::zero());
        }
    }
    stats
}

/// Folds one sample's captured moments into the running statistics:
/// `r = momentum·r + captured`, where `captured` already carries the
/// `(1−momentum)` factor. Applied in sample order this is bit-identical to
/// updating the running statistics sequentially.
pub fn fold_bn_stats<S: Scalar>(running: &mut ResNetStats<S>, captured: &ResNetStats<S>) {
    let m = real::<S>(BN_MOMENTUM);
    for (run_stage, cap_stage) in running.blocks.iter_mut().zip(&captured.blocks) {
        for ((run1, run2), (cap1, cap2)) in run_stage.iter_mut().zip(cap_stage) {
            for (r, &c) in run1.mean.iter_mut().zip(&cap1.mean) {
                *r = m * *r + c;
            }
            for (r, &c) in run1.var.iter_mut().zip(&cap1.var) {
                *r = m * *r + c;
            }
            for (r, &c) in run2.mean.iter_mut().zip(&cap2.mean) {
                *r = m * *r + c;
            }
            for (r, &c) in run2.var.iter_mut().zip(&cap2.var) {
                *r = m * *r + c;
            }
        }
    }
}

/// One training pass over a sample: loss, prediction, gradients (aligned
/// with the parameter map's key order), and captured batch-norm moments.
pub struct SampleGrads<S> {
    pub loss: S,
    pub predicted: usize,
    pub correct: bool,
    pub grads: Vec<Tensor<S>>,
    pub bn_captured: Option<ResNetStats<S>>,
}

pub fn train_sample<S: Scalar>(
    model: &Model<S>,
    ctx: &ForwardContext<S>,
    sample: &PreparedSample<S>,
) -> Result<SampleGrads<S>> {
    let mut tape = Tape::new();
    let vars = build_param_vars(&mut tape, &model.params, true);
    let mut bn = match &ctx.resnet {
        Some(rcfg) => zeroed_stats_like(rcfg),
        None => ResNetStats { blocks: vec![] },
    };
    let trace = forward_logits(&mut tape, model, &vars, ctx, sample, &mut bn, true)?;
    let loss = tape.cross_entropy(trace.logits, sample.label)?;
    tape.backward(loss)?;
    let loss_val = tape.value(loss).scalar()?;
    let predicted = argmax(tape.value(trace.logits).data());
    let grads = model
        .params
        .iter()
        .map(|(name, p)| {
            tape.grad(vars[name])
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok(SampleGrads {
        loss: loss_val,
        predicted,
        correct: predicted == sample.label,
        grads,
        bn_captured: ctx.resnet.as_ref().map(|_| bn),
    })
}

/// Inference logits for one sample (running statistics, no mutation).
pub fn predict_logits<S: Scalar>(
    model: &Model<S>,
    ctx: &ForwardContext<S>,
    sample: &PreparedSample<S>,
) -> Result<Vec<S>> {
    let mut tape = Tape::new();
    let vars = build_param_vars(&mut tape, &model.params, false);
    let mut bn = model.bn.clone();
    let trace = forward_logits(&mut tape, model, &vars, ctx, sample, &mut bn, false)?;
    Ok(tape.value(trace.logits).data().to_vec())
}

/// Inference intermediates for visualization.
pub struct FeatureTrace<S> {
    /// Rendered field image (absent under `no_mtf`).
    pub image: Option<MtfImage<S>>,
    /// Unit-interval expected level per field node, channel-major (absent
    /// under `no_mtf`).
    pub field_values: Option<Vec<S>>,
    /// Post-attention feature maps per 2D stage.
    pub stage_maps: Vec<Tensor<S>>,
    /// 1D attention weights per branch.
    pub branch_attention: Vec<(String, Vec<S>)>,
    pub logits: Vec<S>,
}

pub fn trace_features<S: Scalar>(
    model: &Model<S>,
    ctx: &ForwardContext<S>,
    sample: &PreparedSample<S>,
) -> Result<FeatureTrace<S>> {
    let mut tape = Tape::new();
    let vars = build_param_vars(&mut tape, &model.params, false);
    let mut bn = model.bn.clone();
    let trace = forward_logits(&mut tape, model, &vars, ctx, sample, &mut bn, false)?;
    Ok(FeatureTrace {
        image: trace.image,
        field_values: trace.field_values,
        stage_maps: trace
            .stages
            .iter()
            .map(|&v| tape.value(v).clone())
            .collect(),
        branch_attention: trace
            .branch_attention
            .iter()
            .map(|(n, v)| (n.clone(), tape.value(*v).data().to_vec()))
            .collect(),
        logits: tape.value(trace.logits).data().to_vec(),
    })
}

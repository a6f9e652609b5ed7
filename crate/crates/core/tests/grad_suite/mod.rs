//! Central-finite-difference checks for every differentiable tape op and for
//! the composed network pieces, in 64-bit precision. Each case returns its
//! worst relative error so callers can assert against their own bound; the
//! registry in [`cases`] drives both the per-op test target and the
//! acceptance sweep.

use steam_eeg_core::cnn1d::{branch_forward, AttentionParams, BranchConfig, BranchParams};
use steam_eeg_core::resnet2d::{ccsa, classify_head, residual_block, BlockParams, CcsaParams};
use steam_eeg_core::rng::StreamRng;
use steam_eeg_core::tensor::gradcheck::grad_check;
use steam_eeg_core::tensor::tape::{BnStats, Tape, Var};
use steam_eeg_core::tensor::Tensor;
use steam_eeg_core::Result;

pub const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

/// A named gradient check: `run()` reports the worst relative error, which
/// must stay at or below `tol`.
pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn() -> f64,
}

/// Every gradient case, ops first, composites last.
pub fn cases() -> Vec<Case> {
    let op = |name, run| Case {
        name,
        tol: TOL,
        run,
    };
    vec![
        op("add+mul+sum", add_mul_sum),
        op("add_col_bias", add_col_bias),
        op("scale", scale),
        op("matmul", matmul),
        op("transpose", transpose),
        op("conv1d", conv1d),
        op("conv2d strides 1 and 2", conv2d_strides),
        op("max_pool1d windows 2 and 3", max_pool1d),
        op("global_avg_pool2d", global_avg_pool2d),
        op("relu", relu),
        op("tanh", tanh),
        op("softmax all axes", softmax_axes),
        op("batch_norm training and eval", batch_norm_modes),
        op("concat both axes", concat_axes),
        op("slice", slice),
        op("reshape", reshape),
        op("mean and mean_axis", reductions),
        op("scale_channels", scale_channels),
        op("cross_entropy", cross_entropy),
        Case {
            name: "cross_entropy grad = softmax - one-hot",
            tol: 1e-6,
            run: cross_entropy_grad_structure,
        },
        op("composite: branch with attention", composite_branch),
        op("composite: residual block with ccsa", composite_residual_block),
        op("composite: full tiny model on 8x8 image", composite_full_model),
    ]
}

fn seeded(shape: &[usize], stream: &str) -> Tensor<f64> {
    let mut rng = StreamRng::new(17, stream);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| rng.uniform::<f64>(-0.9, 0.9))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Seeded values pushed away from zero so kinked ops (relu) see no input
/// within the finite-difference step of the kink.
fn seeded_off_kink(shape: &[usize], stream: &str) -> Tensor<f64> {
    let mut t = seeded(shape, stream);
    for v in t.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    t
}

/// Contracts any tensor to a scalar with fixed weights, so gradients stay
/// entry-dependent.
fn contracted(tape: &mut Tape<f64>, x: Var, stream: &str) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(seeded(&shape, stream));
    let prod = tape.mul(x, w)?;
    tape.sum(prod)
}

fn worst<F>(name: &str, inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check(build, inputs, STEP)
        .unwrap_or_else(|e| panic!("{name}: gradient check failed to run: {e}"))
        .max_rel_error
}

pub fn add_mul_sum() -> f64 {
    let inputs = [
        seeded(&[2, 3], "a"),
        seeded(&[2, 3], "b"),
        seeded(&[2, 3], "c"),
    ];
    worst("add+mul+sum", &inputs, |tape, v| {
        let s = tape.add(v[0], v[1])?;
        let p = tape.mul(s, v[2])?;
        tape.sum(p)
    })
}

pub fn add_col_bias() -> f64 {
    let inputs = [seeded(&[3, 4], "m"), seeded(&[3], "bias")];
    worst("add_col_bias", &inputs, |tape, v| {
        let out = tape.add_col_bias(v[0], v[1])?;
        contracted(tape, out, "w")
    })
}

pub fn scale() -> f64 {
    let inputs = [seeded(&[2, 5], "x")];
    worst("scale", &inputs, |tape, v| {
        let out = tape.scale(v[0], 1.7)?;
        contracted(tape, out, "w")
    })
}

pub fn matmul() -> f64 {
    let inputs = [seeded(&[2, 3], "a"), seeded(&[3, 4], "b")];
    worst("matmul", &inputs, |tape, v| {
        let out = tape.matmul(v[0], v[1])?;
        contracted(tape, out, "w")
    })
}

pub fn transpose() -> f64 {
    let inputs = [seeded(&[2, 3], "a")];
    worst("transpose", &inputs, |tape, v| {
        let out = tape.transpose(v[0])?;
        contracted(tape, out, "w")
    })
}

pub fn conv1d() -> f64 {
    let inputs = [
        seeded(&[2, 7], "x"),
        seeded(&[3, 2, 3], "k"),
        seeded(&[3], "b"),
    ];
    worst("conv1d", &inputs, |tape, v| {
        let out = tape.conv1d(v[0], v[1], v[2])?;
        contracted(tape, out, "w")
    })
}

pub fn conv2d_strides() -> f64 {
    let inputs = [
        seeded(&[2, 5, 5], "x"),
        seeded(&[3, 2, 3, 3], "k"),
        seeded(&[3], "b"),
    ];
    let s1 = worst("conv2d stride 1", &inputs, |tape, v| {
        let out = tape.conv2d(v[0], v[1], v[2], 1)?;
        contracted(tape, out, "w")
    });
    let s2 = worst("conv2d stride 2", &inputs, |tape, v| {
        let out = tape.conv2d(v[0], v[1], v[2], 2)?;
        contracted(tape, out, "w")
    });
    s1.max(s2)
}

pub fn max_pool1d() -> f64 {
    // Hand-picked values keep window maxima well separated from runners-up,
    // so the subgradient choice is stable under the probe step.
    let x = Tensor::new(
        vec![2, 6],
        vec![
            0.3, -0.7, 0.9, 0.1, -0.4, 0.6, //
            0.8, -0.2, -0.9, 0.5, 0.2, -0.6,
        ],
    )
    .unwrap();
    let w2 = worst("max_pool1d window 2", &[x.clone()], |tape, v| {
        let out = tape.max_pool1d(v[0], 2)?;
        contracted(tape, out, "w")
    });
    // Window 3 over length 6 plus a remainder-dropping case via length 7.
    let x7 = Tensor::new(vec![1, 7], vec![0.3, -0.7, 0.9, 0.1, -0.4, 0.6, 0.2]).unwrap();
    let w3r = worst("max_pool1d window 3 with remainder", &[x7], |tape, v| {
        let out = tape.max_pool1d(v[0], 3)?;
        contracted(tape, out, "w")
    });
    let w3 = worst("max_pool1d window 3", &[x], |tape, v| {
        let out = tape.max_pool1d(v[0], 3)?;
        contracted(tape, out, "w")
    });
    w2.max(w3r).max(w3)
}

pub fn global_avg_pool2d() -> f64 {
    let inputs = [seeded(&[3, 2, 4], "x")];
    worst("global_avg_pool2d", &inputs, |tape, v| {
        let out = tape.global_avg_pool2d(v[0])?;
        contracted(tape, out, "w")
    })
}

pub fn relu() -> f64 {
    let inputs = [seeded_off_kink(&[2, 5], "x")];
    worst("relu", &inputs, |tape, v| {
        let out = tape.relu(v[0])?;
        contracted(tape, out, "w")
    })
}

pub fn tanh() -> f64 {
    let inputs = [seeded(&[2, 5], "x")];
    worst("tanh", &inputs, |tape, v| {
        let out = tape.tanh(v[0])?;
        contracted(tape, out, "w")
    })
}

pub fn softmax_axes() -> f64 {
    let inputs = [seeded(&[2, 3], "x")];
    let a0 = worst("softmax axis 0", &inputs, |tape, v| {
        let out = tape.softmax(v[0], 0)?;
        contracted(tape, out, "w")
    });
    let a1 = worst("softmax axis 1", &inputs, |tape, v| {
        let out = tape.softmax(v[0], 1)?;
        contracted(tape, out, "w")
    });
    let rank1 = [seeded(&[4], "x1")];
    let r1 = worst("softmax rank-1", &rank1, |tape, v| {
        let out = tape.softmax(v[0], 0)?;
        contracted(tape, out, "w")
    });
    a0.max(a1).max(r1)
}

pub fn batch_norm_modes() -> f64 {
    let inputs = [
        seeded(&[2, 6], "x"),
        seeded(&[2], "gamma"),
        seeded(&[2], "beta"),
    ];
    let train = worst("batch_norm training", &inputs, |tape, v| {
        let mut stats = BnStats::new(2);
        let out = tape.batch_norm(v[0], v[1], v[2], &mut stats, true, 0.9, 1e-5)?;
        contracted(tape, out, "w")
    });
    let eval = worst("batch_norm eval", &inputs, |tape, v| {
        let mut stats = BnStats::new(2);
        stats.mean = vec![0.3, -0.2];
        stats.var = vec![0.8, 1.4];
        let out = tape.batch_norm(v[0], v[1], v[2], &mut stats, false, 0.9, 1e-5)?;
        contracted(tape, out, "w")
    });
    train.max(eval)
}

pub fn concat_axes() -> f64 {
    let inputs = [seeded(&[2, 3], "a"), seeded(&[1, 3], "b")];
    let a0 = worst("concat axis 0", &inputs, |tape, v| {
        let out = tape.concat(&[v[0], v[1]], 0)?;
        contracted(tape, out, "w")
    });
    let inputs = [seeded(&[2, 2], "a"), seeded(&[2, 3], "b")];
    let a1 = worst("concat axis 1", &inputs, |tape, v| {
        let out = tape.concat(&[v[0], v[1]], 1)?;
        contracted(tape, out, "w")
    });
    a0.max(a1)
}

pub fn slice() -> f64 {
    let inputs = [seeded(&[3, 4], "x")];
    worst("slice", &inputs, |tape, v| {
        let out = tape.slice(v[0], &[1, 0], &[3, 3])?;
        contracted(tape, out, "w")
    })
}

pub fn reshape() -> f64 {
    let inputs = [seeded(&[2, 6], "x")];
    worst("reshape", &inputs, |tape, v| {
        let out = tape.reshape(v[0], &[3, 4])?;
        contracted(tape, out, "w")
    })
}

pub fn reductions() -> f64 {
    let inputs = [seeded(&[2, 3, 4], "x")];
    let mut err = worst("mean", &inputs, |tape, v| tape.mean(v[0]));
    for axis in 0..3 {
        err = err.max(worst(&format!("mean_axis {axis}"), &inputs, |tape, v| {
            let out = tape.mean_axis(v[0], axis)?;
            contracted(tape, out, "w")
        }));
    }
    err
}

pub fn scale_channels() -> f64 {
    let inputs = [seeded(&[3, 2, 2], "x"), seeded(&[3], "a")];
    worst("scale_channels", &inputs, |tape, v| {
        let out = tape.scale_channels(v[0], v[1])?;
        contracted(tape, out, "w")
    })
}

pub fn cross_entropy() -> f64 {
    let inputs = [seeded(&[4], "logits")];
    worst("cross_entropy", &inputs, |tape, v| {
        tape.cross_entropy(v[0], 2)
    })
}

/// Analytic structure check: returns the worst absolute deviation of the
/// logit gradient from `softmax(z) - one_hot(label)`.
pub fn cross_entropy_grad_structure() -> f64 {
    let logits = Tensor::new(vec![3], vec![0.4, -1.1, 0.7]).unwrap();
    let mut tape: Tape<f64> = Tape::new();
    let z = tape.leaf(logits.clone(), true);
    let loss = tape.cross_entropy(z, 1).unwrap();
    tape.backward(loss).unwrap();
    let grad = tape.grad(z).unwrap().data().to_vec();
    let hi: f64 = logits
        .data()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data().iter().map(|v| (v - hi).exp()).collect();
    let total: f64 = exps.iter().sum();
    grad.iter()
        .enumerate()
        .map(|(k, &g)| {
            let expected = exps[k] / total - if k == 1 { 1.0 } else { 0.0 };
            (g - expected).abs()
        })
        .fold(0.0, f64::max)
}

pub fn composite_branch() -> f64 {
    // Two channels through a two-layer conv branch with one attention block;
    // series, kernels, biases and attention weights are all checked.
    let config = BranchConfig {
        layers: vec![(3, 3), (4, 3)],
        pool: 2,
        attention_dim: 2,
        attend_every_layer: false,
    };
    let inputs = [
        seeded(&[3, 1, 3], "c0w"),
        seeded(&[3], "c0b"),
        seeded(&[4, 3, 3], "c1w"),
        seeded(&[4], "c1b"),
        seeded(&[2, 4], "wh"),
        seeded(&[2], "bh"),
        seeded(&[2, 1], "wa"),
        seeded(&[12], "s0"),
        seeded(&[12], "s1"),
    ];
    worst("branch with attention", &inputs, move |tape, v| {
        let params = BranchParams {
            convs: vec![(v[0], v[1]), (v[2], v[3])],
            attn: vec![AttentionParams {
                w_h: v[4],
                b_h: v[5],
                w_a: v[6],
            }],
        };
        let out = branch_forward(tape, &config, &params, &[v[7], v[8]])?;
        contracted(tape, out.attended, "w")
    })
}

pub fn composite_residual_block() -> f64 {
    // A downsampling residual block (projection shortcut) followed by
    // channel attention, in training mode so the batch statistics are part
    // of the differentiated graph.
    let inputs = [
        seeded(&[3, 2, 3, 3], "c1w"),
        seeded(&[3], "c1b"),
        seeded(&[3], "g1"),
        seeded(&[3], "be1"),
        seeded(&[3, 3, 3, 3], "c2w"),
        seeded(&[3], "c2b"),
        seeded(&[3], "g2"),
        seeded(&[3], "be2"),
        seeded(&[3, 2, 1, 1], "pw"),
        seeded(&[3], "pb"),
        seeded(&[2, 1], "wx"),
        seeded(&[2], "bx"),
        seeded(&[2, 1], "wa"),
        seeded(&[2, 6, 6], "img"),
    ];
    worst("residual block with attention", &inputs, |tape, v| {
        let params = BlockParams {
            conv1: (v[0], v[1]),
            bn1: (v[2], v[3]),
            conv2: (v[4], v[5]),
            bn2: (v[6], v[7]),
            shortcut: Some((v[8], v[9])),
        };
        let mut stats = (BnStats::new(3), BnStats::new(3));
        let h = residual_block(tape, v[13], &params, &mut stats, 2, true)?;
        let attn = CcsaParams {
            w_x: v[10],
            b_x: v[11],
            w_a: v[12],
        };
        let (_, attended) = ccsa(tape, h, &attn)?;
        contracted(tape, attended, "w")
    })
}

pub fn composite_full_model() -> f64 {
    // The complete differentiable graph of the pipeline at miniature size:
    // three conv branches with attention over two channels, pooled features,
    // a two-stage residual network with per-stage attention on a fixed 8x8
    // rendered image, feature fusion, dense head and cross-entropy. The
    // image enters the network as data (inference over the field is not
    // differentiated), so it is a constant here, exactly as in training.
    let branch_cfg = BranchConfig {
        layers: vec![(2, 3)],
        pool: 2,
        attention_dim: 2,
        attend_every_layer: false,
    };
    let mut inputs = Vec::new();
    for b in 0..3 {
        inputs.push(seeded(&[2, 1, 3], &format!("b{b}.cw")));
        inputs.push(seeded(&[2], &format!("b{b}.cb")));
        inputs.push(seeded(&[2, 2], &format!("b{b}.wh")));
        inputs.push(seeded(&[2], &format!("b{b}.bh")));
        inputs.push(seeded(&[2, 1], &format!("b{b}.wa")));
    }
    // Stage 0: one block 1->2 (projection shortcut), attention.
    inputs.push(seeded(&[2, 1, 3, 3], "s0.c1w"));
    inputs.push(seeded(&[2], "s0.c1b"));
    inputs.push(seeded(&[2], "s0.g1"));
    inputs.push(seeded(&[2], "s0.b1"));
    inputs.push(seeded(&[2, 2, 3, 3], "s0.c2w"));
    inputs.push(seeded(&[2], "s0.c2b"));
    inputs.push(seeded(&[2], "s0.g2"));
    inputs.push(seeded(&[2], "s0.b2"));
    inputs.push(seeded(&[2, 1, 1, 1], "s0.pw"));
    inputs.push(seeded(&[2], "s0.pb"));
    inputs.push(seeded(&[2, 1], "s0.wx"));
    inputs.push(seeded(&[2], "s0.bx"));
    inputs.push(seeded(&[2, 1], "s0.wa"));
    // Stage 1: one downsampling block 2->3, attention.
    inputs.push(seeded(&[3, 2, 3, 3], "s1.c1w"));
    inputs.push(seeded(&[3], "s1.c1b"));
    inputs.push(seeded(&[3], "s1.g1"));
    inputs.push(seeded(&[3], "s1.b1"));
    inputs.push(seeded(&[3, 3, 3, 3], "s1.c2w"));
    inputs.push(seeded(&[3], "s1.c2b"));
    inputs.push(seeded(&[3], "s1.g2"));
    inputs.push(seeded(&[3], "s1.b2"));
    inputs.push(seeded(&[3, 2, 1, 1], "s1.pw"));
    inputs.push(seeded(&[3], "s1.pb"));
    inputs.push(seeded(&[2, 1], "s1.wx"));
    inputs.push(seeded(&[2], "s1.bx"));
    inputs.push(seeded(&[2, 1], "s1.wa"));
    // Head over embedding (3) + pooled branch features (3 branches x 2).
    inputs.push(seeded(&[2, 9], "head.w"));
    inputs.push(seeded(&[2], "head.b"));
    // Channel series (two channels, shared by the three branches).
    inputs.push(seeded(&[10], "ch0"));
    inputs.push(seeded(&[10], "ch1"));

    worst("full tiny model", &inputs, move |tape, v| {
        let mut pooled_parts = Vec::new();
        for b in 0..3 {
            let o = b * 5;
            let params = BranchParams {
                convs: vec![(v[o], v[o + 1])],
                attn: vec![AttentionParams {
                    w_h: v[o + 2],
                    b_h: v[o + 3],
                    w_a: v[o + 4],
                }],
            };
            let out = branch_forward(tape, &branch_cfg, &params, &[v[43], v[44]])?;
            let mean_t = tape.mean_axis(out.attended, 2)?;
            let pooled = tape.mean_axis(mean_t, 0)?;
            pooled_parts.push(pooled);
        }
        let pooled = tape.concat(&pooled_parts, 0)?;

        let image = tape.constant(seeded(&[1, 8, 8], "image"));
        let block0 = BlockParams {
            conv1: (v[15], v[16]),
            bn1: (v[17], v[18]),
            conv2: (v[19], v[20]),
            bn2: (v[21], v[22]),
            shortcut: Some((v[23], v[24])),
        };
        let mut stats0 = (BnStats::new(2), BnStats::new(2));
        let h = residual_block(tape, image, &block0, &mut stats0, 1, true)?;
        let attn0 = CcsaParams {
            w_x: v[25],
            b_x: v[26],
            w_a: v[27],
        };
        let (_, h) = ccsa(tape, h, &attn0)?;
        let block1 = BlockParams {
            conv1: (v[28], v[29]),
            bn1: (v[30], v[31]),
            conv2: (v[32], v[33]),
            bn2: (v[34], v[35]),
            shortcut: Some((v[36], v[37])),
        };
        let mut stats1 = (BnStats::new(3), BnStats::new(3));
        let h = residual_block(tape, h, &block1, &mut stats1, 2, true)?;
        let attn1 = CcsaParams {
            w_x: v[38],
            b_x: v[39],
            w_a: v[40],
        };
        let (_, h) = ccsa(tape, h, &attn1)?;
        let embedding = tape.global_avg_pool2d(h)?;

        let fused = tape.concat(&[embedding, pooled], 0)?;
        let logits = classify_head(tape, v[41], v[42], fused)?;
        tape.cross_entropy(logits, 1)
    })
}

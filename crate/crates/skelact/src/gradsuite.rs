//! The gradient verification table: every op kind plus the composite
//! stacks (2-block GCN, mix pooling + embedding + encoder) and both
//! losses, each checked against central finite differences on seeded
//! random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tapegrad::{grad_check_inputs, Tensor};

use crate::backbone::{Backbone, GcnConfig};
use crate::error::Result;
use crate::interaction::{default_streams, EncoderConfig, InteractionMode, InteractionStage};
use crate::layout::JointLayout;
use crate::nn::ForwardCtx;
use crate::params::{Bindings, BufferStore, ParamStore};

pub const GRADCHECK_EPS: f64 = 1e-5;

fn to_tape_err(e: crate::error::Error) -> tapegrad::Error {
    tapegrad::Error::InvalidArg {
        detail: e.to_string(),
    }
}
pub const GRADCHECK_TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let mag: f64 = rng.gen_range(0.2..1.5);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
    .with_requires_grad(true)
}

fn rand_readout(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

type Check = (&'static str, Box<dyn Fn(u64) -> Result<f64>>);

fn op_checks() -> Vec<Check> {
    vec![
        (
            "matmul",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.matmul(v[0], v[1])?;
                        Ok(t.mean_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "batched_matmul",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 4]),
                    rand_tensor(&mut rng, &[2, 4, 3]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.batched_matmul(v[0], v[1])?;
                        Ok(t.mean_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "conv1d_time",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 6, 2]),
                    rand_tensor(&mut rng, &[4, 3, 3]),
                    rand_tensor(&mut rng, &[4]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.conv1d_time(v[0], v[1], v[2], 2, 1)?;
                        Ok(t.mean_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "add",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.add(v[0], v[1])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "mul",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 2]),
                    rand_tensor(&mut rng, &[3, 1]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.mul(v[0], v[1])?;
                        Ok(t.sum_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "relu",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[4, 5])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.relu(v[0])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "sigmoid",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 3])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.sigmoid(v[0])?;
                        Ok(t.sum_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "softmax",
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 5]), rand_readout(&mut rng, &[3, 5])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.softmax(v[0])?;
                        let z = t.mul(y, v[1])?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "softmax_masked",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mask: Vec<f64> = (0..12)
                    .map(|i| if i % 5 == 2 { 0.0 } else { 1.0 })
                    .collect();
                let inputs = [
                    rand_tensor(&mut rng, &[2, 6]),
                    Tensor::from_vec(vec![2, 6], mask).unwrap(),
                    rand_readout(&mut rng, &[2, 6]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.softmax_masked(v[0], v[1])?;
                        let z = t.mul(y, v[2])?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "layernorm",
            Box::new(move |seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[3, 6]),
                    rand_tensor(&mut rng, &[6]),
                    rand_tensor(&mut rng, &[6]),
                    rand_readout(&mut rng, &[3, 6]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.layernorm(v[0], v[1], v[2], 1e-5)?;
                        let z = t.mul(y, v[3])?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "batchnorm_train",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 4, 2]),
                    rand_tensor(&mut rng, &[3]),
                    rand_tensor(&mut rng, &[3]),
                    rand_readout(&mut rng, &[2, 3, 4, 2]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let (y, _, _) = t.batchnorm_train(v[0], v[1], v[2], 1e-5)?;
                        let z = t.mul(y, v[3])?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "batchnorm_eval",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 2, 2]),
                    rand_tensor(&mut rng, &[3]),
                    rand_tensor(&mut rng, &[3]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let mean = t.constant(vec![3], vec![0.1, -0.2, 0.3])?;
                        let var = t.constant(vec![3], vec![1.1, 0.9, 1.3])?;
                        let y = t.batchnorm_eval(v[0], v[1], v[2], mean, var, 1e-5)?;
                        Ok(t.sum_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "mean_axes",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[2, 3, 2, 2])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.mean_axes(v[0], &[1, 3])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "sum_axes",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[4, 3])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.sum_axes(v[0], &[0])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "concat",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 2])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.concat(&[v[0], v[1]], 1)?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "linear",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [
                    rand_tensor(&mut rng, &[2, 3, 4]),
                    rand_tensor(&mut rng, &[4, 2]),
                    rand_tensor(&mut rng, &[2]),
                ];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.linear(v[0], v[1], v[2])?;
                        Ok(t.mean_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "permute",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[2, 3, 4])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.permute(v[0], &[2, 0, 1])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "reshape",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 4])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.reshape(v[0], &[6, 2])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "scale",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[5])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.scale(v[0], -2.5)?;
                        Ok(t.sum_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "add_scalar",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[5])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.add_scalar(v[0], 0.7)?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "select_rows",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[4, 3])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.select_rows(v[0], &[2, 0, 2])?;
                        let z = t.mul(y, y)?;
                        Ok(t.sum_all(z)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "sum_all",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 3])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.mul(v[0], v[0])?;
                        Ok(t.sum_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "mean_all",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 3])];
                Ok(grad_check_inputs(
                    |t, v| {
                        let y = t.mul(v[0], v[0])?;
                        Ok(t.mean_all(y)?)
                    },
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "cross_entropy",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let inputs = [rand_tensor(&mut rng, &[3, 4])];
                Ok(grad_check_inputs(
                    |t, v| Ok(t.cross_entropy(v[0], &[1, 0, 2])?),
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
        (
            "bce_with_logits",
            Box::new(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let targets = Tensor::from_fn(vec![3, 4], |i| ((i * 7) % 2) as f64);
                let inputs = [rand_tensor(&mut rng, &[3, 4]), targets];
                Ok(grad_check_inputs(
                    |t, v| Ok(t.bce_with_logits(v[0], v[1])?),
                    &inputs,
                    GRADCHECK_EPS,
                )?)
            }),
        ),
    ]
}

/// Tiny layout used by the composite checks.
fn mini_layout() -> JointLayout {
    JointLayout {
        name: "mini5".into(),
        parents: vec![None, Some(0), Some(0), Some(1), Some(2)],
        parts: vec![0, 0, 1, 1, 1],
        num_parts: 2,
    }
}

/// Gradient of a 2-block GCN stack w.r.t. its input (training-mode
/// normalization, so batch statistics are differentiated through).
fn check_gcn_stack(seed: u64) -> Result<f64> {
    let cfg = GcnConfig {
        num_stages: 2,
        base_channels: 4,
        inflate_stages: vec![2],
        downsample_stages: vec![2],
        tcn_kernel: 3,
        in_channels: 2,
    };
    let mut store = ParamStore::new();
    let mut buffers = BufferStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let layout = mini_layout();
    let backbone = Backbone::new(&mut store, &mut buffers, &mut rng, cfg, &layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = rand_tensor(&mut rng, &[2, 2, 6, 5]);
    let readout = rand_readout(&mut rng, &[2, 8, 3, 5]);
    let inputs = [x, readout];
    Ok(grad_check_inputs(
        |tape, v| {
            let binds = Bindings::bind_frozen(&store, tape);
            let mut ctx = ForwardCtx::train();
            let feats = backbone
                .forward(tape, &binds, &buffers, v[0], &mut ctx)
                .map_err(to_tape_err)?;
            let z = tape.mul(feats.var, v[1])?;
            Ok(tape.sum_all(z)?)
        },
        &inputs,
        GRADCHECK_EPS,
    )?)
}

/// Gradient of mix pooling + embedding + one encoder block w.r.t. the
/// backbone features (with one padded sequence in the mask).
fn check_interaction_stack(seed: u64) -> Result<f64> {
    let layout = mini_layout();
    let enc = EncoderConfig {
        depth: 1,
        heads: 8,
        model_dim: 8,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let stage = InteractionStage::new(
        &mut store,
        &mut rng,
        InteractionMode::Transformer,
        default_streams(),
        enc,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = 3;
    let x = rand_tensor(&mut rng, &[m, 8, 4, 5]);
    let readout = rand_readout(&mut rng, &[m, 8]);
    let st: Vec<f64> = (0..m * 5).map(|i| (i as f64 * 0.13).sin() * 0.4 + 0.5).collect();
    let inputs = [x, readout];
    Ok(grad_check_inputs(
        |tape, v| {
            let binds = Bindings::bind_frozen(&store, tape);
            let st_var = tape.constant(vec![m, 5], st.clone())?;
            let mut ctx = ForwardCtx::eval();
            let out = stage
                .forward(
                    tape,
                    &binds,
                    &layout,
                    v[0],
                    st_var,
                    &[true, true, false],
                    &mut ctx,
                )
                .map_err(to_tape_err)?;
            let z = tape.mul(out, v[1])?;
            Ok(tape.sum_all(z)?)
        },
        &inputs,
        GRADCHECK_EPS,
    )?)
}

/// Runs the full table: every op kind, the composite stacks, both losses.
pub fn run_suite() -> Result<Vec<GradCheckEntry>> {
    let mut entries = Vec::new();
    for (name, check) in op_checks() {
        let mut max_err = 0.0f64;
        for seed in 0..SEEDS {
            max_err = max_err.max(check(1000 + seed)?);
        }
        entries.push(GradCheckEntry {
            name: name.to_string(),
            max_rel_err: max_err,
            pass: max_err < GRADCHECK_TOL,
        });
    }
    let mut max_err = 0.0f64;
    for seed in 0..3 {
        max_err = max_err.max(check_gcn_stack(2000 + seed)?);
    }
    entries.push(GradCheckEntry {
        name: "gcn_stack_2blocks".into(),
        max_rel_err: max_err,
        pass: max_err < GRADCHECK_TOL,
    });
    let mut max_err = 0.0f64;
    for seed in 0..3 {
        max_err = max_err.max(check_interaction_stack(3000 + seed)?);
    }
    entries.push(GradCheckEntry {
        name: "mixpool_embed_encoder".into(),
        max_rel_err: max_err,
        pass: max_err < GRADCHECK_TOL,
    });
    Ok(entries)
}

//! Shared layer building blocks over the tape engine.

use tapegrad::{Tape, Var};

use crate::error::Result;
use crate::params::{BufId, Bindings, BufferStore, ParamId, ParamStore};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;
/// Running-statistics update rate.
pub const BN_MOMENTUM: f64 = 0.1;

/// Attention weights captured from one encoder block (all heads, full
/// token grid including masked rows/columns).
#[derive(Clone, Debug)]
pub struct CapturedAttn {
    pub layer: usize,
    pub heads: usize,
    pub tokens: usize,
    /// [heads, tokens, tokens], row-major.
    pub weights: Vec<f64>,
}

/// Per-forward state: mode flag, pending running-stat updates, optional
/// attention capture.
#[derive(Default)]
pub struct ForwardCtx {
    pub training: bool,
    pub bn_updates: Vec<(BufId, BufId, Vec<f64>, Vec<f64>)>,
    pub capture_attention: bool,
    pub attention: Vec<CapturedAttn>,
}

impl ForwardCtx {
    pub fn train() -> Self {
        ForwardCtx {
            training: true,
            ..Default::default()
        }
    }

    pub fn eval() -> Self {
        ForwardCtx::default()
    }
}

/// y = x·W + b over the last axis.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[in_dim, out_dim], in_dim, rng);
        let b = store.add_uniform(format!("{name}.b"), &[out_dim], in_dim, rng);
        LinearLayer {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    /// Near-zero init (used by the box/time embedding).
    pub fn new_near_zero(
        store: &mut ParamStore,
        rng: &mut impl rand::Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bound: f64,
    ) -> Self {
        let w = store.add_scaled_uniform(format!("{name}.w"), &[in_dim, out_dim], bound, rng);
        let b = store.add_scaled_uniform(format!("{name}.b"), &[out_dim], bound, rng);
        LinearLayer {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binds: &Bindings, x: Var) -> Result<Var> {
        Ok(tape.linear(x, binds.var(self.w), binds.var(self.b))?)
    }

    pub fn param_count(&self) -> u64 {
        (self.in_dim * self.out_dim + self.out_dim) as u64
    }
}

/// Per-channel normalization (axis 1): batch statistics in training,
/// running statistics in evaluation.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub run_mean: BufId,
    pub run_var: BufId,
    pub channels: usize,
}

impl BatchNormLayer {
    pub fn new(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        name: &str,
        channels: usize,
    ) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), &[channels], 1.0);
        let beta = store.add_const(format!("{name}.beta"), &[channels], 0.0);
        let run_mean = buffers.add(
            format!("{name}.running_mean"),
            tapegrad::Tensor::zeros([channels]),
        );
        let run_var = buffers.add(
            format!("{name}.running_var"),
            tapegrad::Tensor::full([channels], 1.0),
        );
        BatchNormLayer {
            gamma,
            beta,
            run_mean,
            run_var,
            channels,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        buffers: &BufferStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let gamma = binds.var(self.gamma);
        let beta = binds.var(self.beta);
        if ctx.training {
            let (y, mean, var) = tape.batchnorm_train(x, gamma, beta, BN_EPS)?;
            ctx.bn_updates.push((self.run_mean, self.run_var, mean, var));
            Ok(y)
        } else {
            let mean = tape.leaf(buffers.get(self.run_mean));
            let var = tape.leaf(buffers.get(self.run_var));
            Ok(tape.batchnorm_eval(x, gamma, beta, mean, var, BN_EPS)?)
        }
    }

    pub fn param_count(&self) -> u64 {
        2 * self.channels as u64
    }
}

/// Applies collected batch statistics to the running buffers.
pub fn apply_bn_updates(buffers: &mut BufferStore, updates: &[(BufId, BufId, Vec<f64>, Vec<f64>)]) {
    for (mean_id, var_id, mean, var) in updates {
        let rm = buffers.get_mut(*mean_id).data_mut();
        for (r, m) in rm.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = buffers.get_mut(*var_id).data_mut();
        for (r, v) in rv.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// LayerNorm with learned affine over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

impl LayerNormLayer {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gamma = store.add_const(format!("{name}.gamma"), &[dim], 1.0);
        let beta = store.add_const(format!("{name}.beta"), &[dim], 0.0);
        LayerNormLayer { gamma, beta, dim }
    }

    pub fn forward(&self, tape: &mut Tape, binds: &Bindings, x: Var) -> Result<Var> {
        Ok(tape.layernorm(x, binds.var(self.gamma), binds.var(self.beta), LN_EPS)?)
    }

    pub fn param_count(&self) -> u64 {
        2 * self.dim as u64
    }
}

//! Spatial-temporal GCN backbone: per-stage spatial graph convolution
//! (3-partition adjacency mixing) followed by a temporal 1-D convolution,
//! each with normalization and ReLU, with residual connections.
//! Sequences are processed independently; there is no cross-sequence
//! mixing in this stage.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Var};

use crate::error::{Error, Result};
use crate::layout::JointLayout;
use crate::nn::{BatchNormLayer, ForwardCtx};
use crate::params::{Bindings, BufferStore, ParamId, ParamStore};

/// Partitioned, normalized adjacency. Partition 0 is the exact identity
/// (self loops); partitions 1/2 are the centripetal (child→parent) and
/// centrifugal (parent→child) edges, normalized as D^{-1/2} A D^{-1/2}
/// with degrees taken from the full skeleton graph plus self loops, so
/// entries are 1/sqrt(d_i d_j) and all lie in [0,1].
#[derive(Clone, Debug)]
pub struct AdjacencyGraph {
    pub v: usize,
    pub edges: Vec<(usize, usize)>,
    pub partitions: Vec<Vec<f64>>,
}

pub const NUM_PARTITIONS: usize = 3;

pub fn build_graph(layout: &JointLayout) -> Result<AdjacencyGraph> {
    layout.validate()?;
    let v = layout.num_joints();
    let edges = layout.edges();
    // degrees of A + I over the undirected skeleton
    let mut degree = vec![1.0f64; v];
    for &(c, p) in &edges {
        degree[c] += 1.0;
        degree[p] += 1.0;
    }
    let mut identity = vec![0.0; v * v];
    for i in 0..v {
        identity[i * v + i] = 1.0;
    }
    let mut centripetal = vec![0.0; v * v];
    let mut centrifugal = vec![0.0; v * v];
    for &(child, parent) in &edges {
        let norm = 1.0 / (degree[child] * degree[parent]).sqrt();
        centripetal[child * v + parent] = norm;
        centrifugal[parent * v + child] = norm;
    }
    Ok(AdjacencyGraph {
        v,
        edges,
        partitions: vec![identity, centripetal, centrifugal],
    })
}

/// Backbone architecture plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub num_stages: usize,
    pub base_channels: usize,
    /// 1-based stage indices where channels double.
    #[serde(default)]
    pub inflate_stages: Vec<usize>,
    /// 1-based stage indices with temporal stride 2.
    #[serde(default)]
    pub downsample_stages: Vec<usize>,
    #[serde(default = "default_tcn_kernel")]
    pub tcn_kernel: usize,
    pub in_channels: usize,
}

fn default_tcn_kernel() -> usize {
    3
}

impl GcnConfig {
    /// 6 stages, base 64, inflate + downsample at stage 6, 128 out.
    pub fn variant_s(in_channels: usize) -> Self {
        GcnConfig {
            num_stages: 6,
            base_channels: 64,
            inflate_stages: vec![6],
            downsample_stages: vec![6],
            tcn_kernel: 3,
            in_channels,
        }
    }

    /// 10 stages, base 64, inflate + downsample at stages 5 and 8, 256 out.
    pub fn variant_l(in_channels: usize) -> Self {
        GcnConfig {
            num_stages: 10,
            base_channels: 64,
            inflate_stages: vec![5, 8],
            downsample_stages: vec![5, 8],
            tcn_kernel: 3,
            in_channels,
        }
    }

    /// Small plan for desk-scale experiments.
    pub fn variant_micro(in_channels: usize) -> Self {
        GcnConfig {
            num_stages: 3,
            base_channels: 8,
            inflate_stages: vec![3],
            downsample_stages: vec![3],
            tcn_kernel: 3,
            in_channels,
        }
    }

    pub fn by_name(name: &str, in_channels: usize) -> Result<Self> {
        match name {
            "s" => Ok(Self::variant_s(in_channels)),
            "l" => Ok(Self::variant_l(in_channels)),
            "micro" => Ok(Self::variant_micro(in_channels)),
            other => Err(Error::config(format!("unknown backbone variant '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages == 0 || self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::config("backbone stages/channels must be positive"));
        }
        if self.tcn_kernel == 0 || self.tcn_kernel % 2 == 0 {
            return Err(Error::config(format!(
                "tcn_kernel must be odd, got {}",
                self.tcn_kernel
            )));
        }
        for &s in self.inflate_stages.iter().chain(&self.downsample_stages) {
            if s == 0 || s > self.num_stages {
                return Err(Error::config(format!(
                    "stage index {s} outside 1..={}",
                    self.num_stages
                )));
            }
        }
        Ok(())
    }

    /// Per-stage (c_in, c_out, stride), stage indices 1-based.
    pub fn stage_plan(&self) -> Vec<(usize, usize, usize)> {
        let mut plan = Vec::with_capacity(self.num_stages);
        let mut channels = self.base_channels;
        for s in 1..=self.num_stages {
            let c_in = if s == 1 { self.in_channels } else { channels };
            if self.inflate_stages.contains(&s) {
                channels *= 2;
            }
            let stride = if self.downsample_stages.contains(&s) { 2 } else { 1 };
            plan.push((c_in, channels, stride));
        }
        plan
    }

    pub fn out_channels(&self) -> usize {
        self.base_channels << self.inflate_stages.len()
    }

    /// T_f = T / 2^{#downsample stages} (ceil at each stage).
    pub fn temporal_out(&self, t: usize) -> usize {
        let mut t = t;
        for _ in &self.downsample_stages {
            t = t.div_ceil(2);
        }
        t
    }
}

struct GcnBlock {
    partition_w: Vec<ParamId>,
    partition_b: Vec<ParamId>,
    gcn_res: Option<(ParamId, ParamId)>,
    bn1: BatchNormLayer,
    tcn_w: ParamId,
    tcn_b: ParamId,
    tcn_res: Option<(ParamId, ParamId)>,
    bn2: BatchNormLayer,
    c_in: usize,
    c_out: usize,
    stride: usize,
    kernel: usize,
}

impl GcnBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        kernel: usize,
    ) -> Self {
        let partition_w = (0..NUM_PARTITIONS)
            .map(|p| store.add_uniform(format!("{name}.gcn.w{p}"), &[c_in, c_out], c_in, rng))
            .collect();
        let partition_b = (0..NUM_PARTITIONS)
            .map(|p| store.add_uniform(format!("{name}.gcn.b{p}"), &[c_out], c_in, rng))
            .collect();
        let gcn_res = (c_in != c_out).then(|| {
            (
                store.add_uniform(format!("{name}.gcn.res.w"), &[c_in, c_out], c_in, rng),
                store.add_uniform(format!("{name}.gcn.res.b"), &[c_out], c_in, rng),
            )
        });
        let bn1 = BatchNormLayer::new(store, buffers, &format!("{name}.bn1"), c_out);
        let tcn_w = store.add_uniform(
            format!("{name}.tcn.w"),
            &[c_out, c_out, kernel],
            c_out * kernel,
            rng,
        );
        let tcn_b = store.add_uniform(format!("{name}.tcn.b"), &[c_out], c_out * kernel, rng);
        let tcn_res = (stride != 1).then(|| {
            (
                store.add_uniform(format!("{name}.tcn.res.w"), &[c_out, c_out, 1], c_out, rng),
                store.add_uniform(format!("{name}.tcn.res.b"), &[c_out], c_out, rng),
            )
        });
        let bn2 = BatchNormLayer::new(store, buffers, &format!("{name}.bn2"), c_out);
        GcnBlock {
            partition_w,
            partition_b,
            gcn_res,
            bn1,
            tcn_w,
            tcn_b,
            tcn_res,
            bn2,
            c_in,
            c_out,
            stride,
            kernel,
        }
    }

    /// x: [N, C_in, T, V] -> [N, C_out, T', V]
    fn forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        buffers: &BufferStore,
        graph: &AdjacencyGraph,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (n, t, v) = (shape[0], shape[2], shape[3]);
        // channels-last view for the per-partition channel maps
        let xl = tape.permute(x, &[0, 2, 3, 1])?; // [N,T,V,C]
        let x_rows = tape.reshape(xl, &[n * t * v, self.c_in])?;
        let mut acc: Option<Var> = None;
        for p in 0..NUM_PARTITIONS {
            let h = tape.linear(x_rows, binds.var(self.partition_w[p]), binds.var(self.partition_b[p]))?;
            let h = tape.reshape(h, &[n, t, v, self.c_out])?;
            let h = tape.permute(h, &[0, 1, 3, 2])?; // [N,T,C',V]
            let h = tape.reshape(h, &[n * t * self.c_out, v])?;
            let a = tape.constant(vec![v, v], graph.partitions[p].clone())?;
            let mixed = tape.matmul(h, a)?;
            acc = Some(match acc {
                Some(prev) => tape.add(prev, mixed)?,
                None => mixed,
            });
        }
        let gcn = acc.expect("at least one partition");
        let gcn = tape.reshape(gcn, &[n, t, self.c_out, v])?;
        let gcn = tape.permute(gcn, &[0, 2, 1, 3])?; // [N,C',T,V]
        let with_res = match &self.gcn_res {
            None => tape.add(gcn, x)?,
            Some((w, b)) => {
                let proj = tape.linear(x_rows, binds.var(*w), binds.var(*b))?;
                let proj = tape.reshape(proj, &[n, t, v, self.c_out])?;
                let proj = tape.permute(proj, &[0, 3, 1, 2])?;
                tape.add(gcn, proj)?
            }
        };
        let y = self.bn1.forward(tape, binds, buffers, with_res, ctx)?;
        let y = tape.relu(y)?;

        let pad = self.kernel / 2;
        let conv = tape.conv1d_time(y, binds.var(self.tcn_w), binds.var(self.tcn_b), self.stride, pad)?;
        let with_res = match &self.tcn_res {
            None => tape.add(conv, y)?,
            Some((w, b)) => {
                let proj = tape.conv1d_time(y, binds.var(*w), binds.var(*b), self.stride, 0)?;
                tape.add(conv, proj)?
            }
        };
        let z = self.bn2.forward(tape, binds, buffers, with_res, ctx)?;
        Ok(tape.relu(z)?)
    }
}

/// Per-sequence spatio-temporal features: [M_total, C_out, T_f, V].
pub struct BackboneFeatures {
    pub var: Var,
    pub m_total: usize,
    pub c_out: usize,
    pub t_f: usize,
    pub v: usize,
}

pub struct Backbone {
    blocks: Vec<GcnBlock>,
    pub graph: AdjacencyGraph,
    pub config: GcnConfig,
}

impl Backbone {
    pub fn new(
        store: &mut ParamStore,
        buffers: &mut BufferStore,
        rng: &mut impl Rng,
        config: GcnConfig,
        layout: &JointLayout,
    ) -> Result<Self> {
        config.validate()?;
        let graph = build_graph(layout)?;
        let blocks = config
            .stage_plan()
            .into_iter()
            .enumerate()
            .map(|(i, (c_in, c_out, stride))| {
                GcnBlock::new(
                    store,
                    buffers,
                    rng,
                    &format!("backbone.stage{}", i + 1),
                    c_in,
                    c_out,
                    stride,
                    config.tcn_kernel,
                )
            })
            .collect();
        Ok(Backbone {
            blocks,
            graph,
            config,
        })
    }

    /// batch: [M_total, C_in, T, V]
    pub fn forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        buffers: &BufferStore,
        batch: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<BackboneFeatures> {
        let shape = tape.shape(batch).to_vec();
        if shape.len() != 4 || shape[1] != self.config.in_channels || shape[3] != self.graph.v {
            return Err(Error::data(format!(
                "backbone expects [M, {}, T, {}], got {:?}",
                self.config.in_channels, self.graph.v, shape
            )));
        }
        let t_f = self.config.temporal_out(shape[2]);
        if t_f == 0 {
            return Err(Error::config(format!(
                "T={} collapses to zero after downsampling",
                shape[2]
            )));
        }
        let mut x = batch;
        for block in &self.blocks {
            x = block.forward(tape, binds, buffers, &self.graph, x, ctx)?;
        }
        Ok(BackboneFeatures {
            var: x,
            m_total: shape[0],
            c_out: self.config.out_channels(),
            t_f,
            v: self.graph.v,
        })
    }
}

/// Analytic parameter count; matches the constructed model exactly.
pub fn backbone_param_count(cfg: &GcnConfig) -> u64 {
    let mut total = 0u64;
    for (c_in, c_out, stride) in cfg.stage_plan() {
        let (c_in, c_out) = (c_in as u64, c_out as u64);
        total += NUM_PARTITIONS as u64 * (c_in * c_out + c_out); // partition maps
        if c_in != c_out {
            total += c_in * c_out + c_out; // gcn residual projection
        }
        total += 2 * c_out; // bn1
        total += c_out * c_out * cfg.tcn_kernel as u64 + c_out; // tcn
        if stride != 1 {
            total += c_out * c_out + c_out; // strided residual projection
        }
        total += 2 * c_out; // bn2
    }
    total
}

/// Analytic MACs for one T-frame sequence; matches the tape meter exactly.
pub fn backbone_flops_per_sequence(cfg: &GcnConfig, t: usize, v: usize) -> u64 {
    let mut total = 0u64;
    let mut t_cur = t as u64;
    let v = v as u64;
    for (c_in, c_out, stride) in cfg.stage_plan() {
        let (c_in, c_out) = (c_in as u64, c_out as u64);
        total += NUM_PARTITIONS as u64 * t_cur * v * c_in * c_out; // channel maps
        total += NUM_PARTITIONS as u64 * t_cur * c_out * v * v; // adjacency mixing
        if c_in != c_out {
            total += t_cur * v * c_in * c_out; // residual projection
        }
        let t_out = if stride == 2 { t_cur.div_ceil(2) } else { t_cur };
        total += t_out * v * c_out * c_out * cfg.tcn_kernel as u64; // tcn
        if stride != 1 {
            total += t_out * v * c_out * c_out; // strided residual
        }
        t_cur = t_out;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use tapegrad::Tensor;

    #[test]
    fn coco17_graph_partitions() {
        let g = build_graph(&JointLayout::coco17()).unwrap();
        assert_eq!(g.edges.len(), 16);
        // identity partition is the exact 17x17 identity
        for i in 0..17 {
            for j in 0..17 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(g.partitions[0][i * 17 + j], want);
            }
        }
        // entries bounded and per-partition row sums bounded by 1
        for part in &g.partitions {
            for i in 0..17 {
                let row = &part[i * 17..(i + 1) * 17];
                assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
                let sum: f64 = row.iter().sum();
                assert!(sum <= 1.0 + 1e-12, "row sum {sum}");
            }
        }
    }

    #[test]
    fn single_joint_graph() {
        let g = build_graph(&JointLayout::single()).unwrap();
        assert_eq!(g.partitions[0], vec![1.0]);
        assert_eq!(g.partitions[1], vec![0.0]);
        assert_eq!(g.partitions[2], vec![0.0]);
    }

    #[test]
    fn variant_plans_match_published_shapes() {
        let s = GcnConfig::variant_s(2);
        assert_eq!(s.out_channels(), 128);
        assert_eq!(s.temporal_out(30), 15);
        let l = GcnConfig::variant_l(2);
        assert_eq!(l.out_channels(), 256);
        assert_eq!(l.temporal_out(300), 75);
        // stride-2 stages halve T with ceil division
        assert_eq!(s.temporal_out(31), 16);
    }

    fn build_tiny(
        cfg: &GcnConfig,
    ) -> (ParamStore, BufferStore, Backbone) {
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let backbone = Backbone::new(
            &mut store,
            &mut buffers,
            &mut rng,
            cfg.clone(),
            &JointLayout::coco17(),
        )
        .unwrap();
        (store, buffers, backbone)
    }

    #[test]
    fn zero_input_zero_params_gives_zero_output() {
        let cfg = GcnConfig {
            num_stages: 2,
            base_channels: 4,
            inflate_stages: vec![],
            downsample_stages: vec![],
            tcn_kernel: 3,
            in_channels: 2,
        };
        let (mut store, buffers, backbone) = build_tiny(&cfg);
        // zero all biases and beta (weights may stay)
        for i in 0..store.len() {
            let id = crate::params::ParamId(i);
            let name = store.name(id).to_string();
            if name.ends_with(".b") || name.ends_with(".beta")
                || name.ends_with(".b0") || name.ends_with(".b1") || name.ends_with(".b2")
            {
                let shape = store.get(id).shape().to_vec();
                *store.get_mut(id) = Tensor::zeros(shape).with_requires_grad(true);
            }
        }
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let x = tape.constant(vec![2, 2, 6, 17], vec![0.0; 2 * 2 * 6 * 17]).unwrap();
        let mut ctx = ForwardCtx::train();
        let out = backbone
            .forward(&mut tape, &binds, &buffers, x, &mut ctx)
            .unwrap();
        assert!(tape.data(out.var).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_count_analytic_matches_store() {
        for cfg in [GcnConfig::variant_s(2), GcnConfig::variant_l(3), GcnConfig::variant_micro(2)] {
            let (store, _, _) = build_tiny(&cfg);
            assert_eq!(store.total_params(), backbone_param_count(&cfg), "{cfg:?}");
        }
    }

    #[test]
    fn flops_analytic_matches_tape_meter() {
        let cfg = GcnConfig::variant_micro(2);
        let (store, buffers, backbone) = build_tiny(&cfg);
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let m = 3;
        let t = 8;
        let x = tape
            .constant(vec![m, 2, t, 17], vec![0.1; m * 2 * t * 17])
            .unwrap();
        let before = tape.flops().total();
        let mut ctx = ForwardCtx::eval();
        backbone
            .forward(&mut tape, &binds, &buffers, x, &mut ctx)
            .unwrap();
        let measured = tape.flops().total() - before;
        let analytic = backbone_flops_per_sequence(&cfg, t, 17) * m as u64;
        assert_eq!(measured, analytic);
    }

    #[test]
    fn batch_permutation_permutes_outputs() {
        let cfg = GcnConfig::variant_micro(2);
        let (store, buffers, backbone) = build_tiny(&cfg);
        let t = 8;
        let per = 2 * t * 17;
        let seq_a: Vec<f64> = (0..per).map(|i| (i as f64 * 0.17).sin()).collect();
        let seq_b: Vec<f64> = (0..per).map(|i| (i as f64 * 0.29).cos()).collect();
        let run = |first: &[f64], second: &[f64]| {
            let mut tape = Tape::new();
            let binds = Bindings::bind_all(&store, &mut tape);
            let mut data = first.to_vec();
            data.extend_from_slice(second);
            let x = tape.constant(vec![2, 2, t, 17], data).unwrap();
            let mut ctx = ForwardCtx::eval();
            let out = backbone
                .forward(&mut tape, &binds, &buffers, x, &mut ctx)
                .unwrap();
            tape.data(out.var).to_vec()
        };
        let ab = run(&seq_a, &seq_b);
        let ba = run(&seq_b, &seq_a);
        let half = ab.len() / 2;
        assert_eq!(&ab[..half], &ba[half..]);
        assert_eq!(&ab[half..], &ba[..half]);
    }

    #[test]
    fn stage1_independence_zeroing_other_sequence() {
        let cfg = GcnConfig::variant_micro(2);
        let (store, buffers, backbone) = build_tiny(&cfg);
        let t = 8;
        let per = 2 * t * 17;
        let seq_a: Vec<f64> = (0..per).map(|i| (i as f64 * 0.17).sin()).collect();
        let seq_b: Vec<f64> = (0..per).map(|i| (i as f64 * 0.29).cos()).collect();
        let run = |second: &[f64]| {
            let mut tape = Tape::new();
            let binds = Bindings::bind_all(&store, &mut tape);
            let mut data = seq_a.to_vec();
            data.extend_from_slice(second);
            let x = tape.constant(vec![2, 2, t, 17], data).unwrap();
            let mut ctx = ForwardCtx::eval();
            let out = backbone
                .forward(&mut tape, &binds, &buffers, x, &mut ctx)
                .unwrap();
            tape.data(out.var).to_vec()
        };
        let with_b = run(&seq_b);
        let with_zero = run(&vec![0.0; per]);
        let half = with_b.len() / 2;
        assert_eq!(&with_b[..half], &with_zero[..half]);
    }

    #[test]
    fn identity_adjacency_kernel1_reduces_to_pointwise_maps() {
        // single stage, identity-only adjacency, kernel 1, stride 1, eval
        // mode: the block must equal two explicit pointwise affine+ReLU maps
        let cfg = GcnConfig {
            num_stages: 1,
            base_channels: 3,
            inflate_stages: vec![],
            downsample_stages: vec![],
            tcn_kernel: 1,
            in_channels: 3,
        };
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layout = JointLayout::coco17();
        let mut backbone =
            Backbone::new(&mut store, &mut buffers, &mut rng, cfg, &layout).unwrap();
        // force identity-only adjacency
        let v = 17;
        backbone.graph.partitions[1] = vec![0.0; v * v];
        backbone.graph.partitions[2] = vec![0.0; v * v];

        let (n, t) = (2, 4);
        let x_data: Vec<f64> = (0..n * 3 * t * v).map(|i| (i as f64 * 0.01).sin()).collect();
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let x = tape.constant(vec![n, 3, t, v], x_data.clone()).unwrap();
        let mut ctx = ForwardCtx::eval();
        let out = backbone
            .forward(&mut tape, &binds, &buffers, x, &mut ctx)
            .unwrap();
        let got = tape.data(out.var).to_vec();

        // direct composition: y = relu(bn_affine(W0ᵀx + b0 + x)); z = relu(bn_affine(Wtᵀy + bt + y))
        let w0 = store.get(crate::params::ParamId(0)).data().to_vec();
        let b0 = store.get(crate::params::ParamId(3)).data().to_vec();
        // eval-mode bn with fresh buffers: gamma=1, beta=0, mean=0, var=1
        let bn = |x: f64| x / (1.0f64 + 1e-5).sqrt();
        let tcn_w = store
            .iter()
            .find(|(n, _)| n.ends_with("tcn.w"))
            .unwrap()
            .1
            .data()
            .to_vec();
        let tcn_b = store
            .iter()
            .find(|(n, _)| n.ends_with("tcn.b"))
            .unwrap()
            .1
            .data()
            .to_vec();
        let c = 3;
        let mut expect = vec![0.0; got.len()];
        for ni in 0..n {
            for tt in 0..t {
                for vv in 0..v {
                    // first map
                    let mut h = [0.0f64; 3];
                    for co in 0..c {
                        let mut acc = b0[co];
                        for ci in 0..c {
                            acc += x_data[((ni * c + ci) * t + tt) * v + vv] * w0[ci * c + co];
                        }
                        acc += x_data[((ni * c + co) * t + tt) * v + vv]; // residual
                        h[co] = bn(acc).max(0.0);
                    }
                    for co in 0..c {
                        let mut acc = tcn_b[co];
                        for ci in 0..c {
                            acc += h[ci] * tcn_w[(co * c + ci)];
                        }
                        acc += h[co]; // tcn residual (identity at stride 1)
                        expect[((ni * c + co) * t + tt) * v + vv] = bn(acc).max(0.0);
                    }
                }
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

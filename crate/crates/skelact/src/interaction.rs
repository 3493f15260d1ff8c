//! Inter-sequence modeling: mix pooling to L tokens per sequence, a
//! box/time embedding, stacked post-layernorm transformer encoders with
//! padding masks, intra-sequence aggregation, and the simpler interaction
//! baselines used for ablations.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Var};

use crate::error::{Error, Result};
use crate::layout::JointLayout;
use crate::nn::{CapturedAttn, ForwardCtx, LayerNormLayer, LinearLayer, LN_EPS};
use crate::params::{Bindings, ParamStore};

/// Temporal reduction of a pooling stream: T_f -> A.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemporalReduce {
    One,
    Full,
    Groups(usize),
}

/// Spatial reduction of a pooling stream: V -> B.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialReduce {
    One,
    Parts,
    Joints,
}

/// One "A×B" partial dimension-reduction stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStream {
    pub temporal: TemporalReduce,
    pub spatial: SpatialReduce,
}

impl PoolStream {
    /// Parses "1x1", "Tx1", "1xP", "1xV", "TxP", "4x1", ...
    pub fn parse(token: &str) -> Result<Self> {
        let (a, b) = token
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::config(format!("bad stream '{token}', expected AxB")))?;
        let temporal = match a {
            "1" => TemporalReduce::One,
            "T" | "t" => TemporalReduce::Full,
            g => TemporalReduce::Groups(
                g.parse()
                    .map_err(|_| Error::config(format!("bad temporal reduce '{g}'")))?,
            ),
        };
        let spatial = match b {
            "1" => SpatialReduce::One,
            "P" | "p" => SpatialReduce::Parts,
            "V" | "v" => SpatialReduce::Joints,
            other => return Err(Error::config(format!("bad spatial reduce '{other}'"))),
        };
        Ok(PoolStream { temporal, spatial })
    }

    pub fn tokens(&self, t_f: usize, p: usize, v: usize) -> usize {
        let a = match self.temporal {
            TemporalReduce::One => 1,
            TemporalReduce::Full => t_f,
            TemporalReduce::Groups(g) => g,
        };
        let b = match self.spatial {
            SpatialReduce::One => 1,
            SpatialReduce::Parts => p,
            SpatialReduce::Joints => v,
        };
        a * b
    }
}

/// Default stream set {1×1, T×1, 1×P}: L = 1 + T_f + P.
pub fn default_streams() -> Vec<PoolStream> {
    vec![
        PoolStream {
            temporal: TemporalReduce::One,
            spatial: SpatialReduce::One,
        },
        PoolStream {
            temporal: TemporalReduce::Full,
            spatial: SpatialReduce::One,
        },
        PoolStream {
            temporal: TemporalReduce::One,
            spatial: SpatialReduce::Parts,
        },
    ]
}

pub fn parse_streams(tokens: &[String]) -> Result<Vec<PoolStream>> {
    if tokens.is_empty() {
        return Ok(default_streams());
    }
    tokens.iter().map(|t| PoolStream::parse(t)).collect()
}

pub fn token_count(streams: &[PoolStream], t_f: usize, p: usize, v: usize) -> usize {
    streams.iter().map(|s| s.tokens(t_f, p, v)).sum()
}

/// Joint-to-part averaging matrix [V, P]: column p holds 1/|part p| at the
/// member joints.
pub fn part_pool_matrix(layout: &JointLayout) -> Vec<f64> {
    let v = layout.num_joints();
    let p = layout.num_parts;
    let mut sizes = vec![0usize; p];
    for &part in &layout.parts {
        sizes[part] += 1;
    }
    let mut m = vec![0.0; v * p];
    for (j, &part) in layout.parts.iter().enumerate() {
        m[j * p + part] = 1.0 / sizes[part] as f64;
    }
    m
}

/// Mean-pools `features` [M, C, T_f, V] through each stream and
/// concatenates along the token axis in stream order: [M, L, C].
pub fn mix_pool(
    tape: &mut Tape,
    features: Var,
    streams: &[PoolStream],
    layout: &JointLayout,
) -> Result<Var> {
    let shape = tape.shape(features).to_vec();
    if shape.len() != 4 {
        return Err(Error::data(format!(
            "mix_pool expects [M,C,T,V], got {shape:?}"
        )));
    }
    let (m, c, t_f, v) = (shape[0], shape[1], shape[2], shape[3]);
    if v != layout.num_joints() {
        return Err(Error::data(format!(
            "part map covers {} joints, features have {v}",
            layout.num_joints()
        )));
    }
    let p = layout.num_parts;
    let mut stream_tokens = Vec::with_capacity(streams.len());
    for stream in streams {
        // spatial reduction first
        let (spatial, b) = match stream.spatial {
            SpatialReduce::One => (tape.mean_axes(features, &[3])?, 1), // [M,C,T]
            SpatialReduce::Joints => (features, v),
            SpatialReduce::Parts => {
                let rows = tape.reshape(features, &[m * c * t_f, v])?;
                let pm = tape.constant(vec![v, p], part_pool_matrix(layout))?;
                let pooled = tape.matmul(rows, pm)?;
                (tape.reshape(pooled, &[m, c, t_f, p])?, p)
            }
        };
        // restore a 4-D [M,C,T,B] view
        let spatial = if b == 1 {
            tape.reshape(spatial, &[m, c, t_f, 1])?
        } else {
            spatial
        };
        let (temporal, a) = match stream.temporal {
            TemporalReduce::One => (tape.mean_axes(spatial, &[2])?, 1), // [M,C,B]
            TemporalReduce::Full => (spatial, t_f),
            TemporalReduce::Groups(g) => {
                if g == 0 || t_f % g != 0 {
                    return Err(Error::config(format!(
                        "temporal groups {g} must divide T_f={t_f}"
                    )));
                }
                let grouped = tape.reshape(spatial, &[m, c, g, t_f / g, b])?;
                (tape.mean_axes(grouped, &[3])?, g) // [M,C,g,B]
            }
        };
        // [M, C, A*B] -> tokens [M, A*B, C]
        let flat = tape.reshape(temporal, &[m, c, a * b])?;
        stream_tokens.push(tape.permute(flat, &[0, 2, 1])?);
    }
    Ok(tape.concat(&stream_tokens, 1)?)
}

/// Encoder stack shape. Head width is C/2, so the concatenated head output
/// is 4C wide before the output projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub depth: usize,
    pub heads: usize,
    pub model_dim: usize,
}

impl EncoderConfig {
    pub fn new(model_dim: usize) -> Self {
        EncoderConfig {
            depth: 2,
            heads: 8,
            model_dim,
        }
    }

    pub fn head_width(&self) -> usize {
        self.model_dim / 2
    }

    pub fn qkv_dim(&self) -> usize {
        self.heads * self.head_width()
    }

    pub fn ffn_hidden(&self) -> usize {
        2 * self.model_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim % 2 != 0 {
            return Err(Error::config(format!(
                "encoder width {} must be even",
                self.model_dim
            )));
        }
        if self.depth == 0 || self.heads == 0 {
            return Err(Error::config("encoder depth/heads must be positive"));
        }
        Ok(())
    }
}

struct EncoderBlock {
    wq: LinearLayer,
    wk: LinearLayer,
    wv: LinearLayer,
    wo: LinearLayer,
    ln1: LayerNormLayer,
    ffn1: LinearLayer,
    ffn2: LinearLayer,
    ln2: LayerNormLayer,
}

impl EncoderBlock {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, cfg: &EncoderConfig) -> Self {
        let c = cfg.model_dim;
        let qkv = cfg.qkv_dim();
        EncoderBlock {
            wq: LinearLayer::new(store, rng, &format!("{name}.wq"), c, qkv),
            wk: LinearLayer::new(store, rng, &format!("{name}.wk"), c, qkv),
            wv: LinearLayer::new(store, rng, &format!("{name}.wv"), c, qkv),
            wo: LinearLayer::new(store, rng, &format!("{name}.wo"), qkv, c),
            ln1: LayerNormLayer::new(store, &format!("{name}.ln1"), c),
            ffn1: LinearLayer::new(store, rng, &format!("{name}.ffn1"), c, cfg.ffn_hidden()),
            ffn2: LinearLayer::new(store, rng, &format!("{name}.ffn2"), cfg.ffn_hidden(), c),
            ln2: LayerNormLayer::new(store, &format!("{name}.ln2"), c),
        }
    }

    /// x: [S, C]; mask: [S] (1 = live). Post-layernorm block; masked tokens
    /// neither attend nor are attended to and are zeroed on output.
    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        cfg: &EncoderConfig,
        layer_idx: usize,
        x: Var,
        mask: Var,
        mask_col: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let s = tape.shape(x)[0];
        let (h, hw) = (cfg.heads, cfg.head_width());
        let to_heads = |tape: &mut Tape, v: Var| -> Result<Var> {
            let v = tape.reshape(v, &[s, h, hw])?;
            Ok(tape.permute(v, &[1, 0, 2])?) // [H, S, hw]
        };
        let q = self.wq.forward(tape, binds, x)?;
        let k = self.wk.forward(tape, binds, x)?;
        let v = self.wv.forward(tape, binds, x)?;
        let q = to_heads(tape, q)?;
        let k = to_heads(tape, k)?;
        let v = to_heads(tape, v)?;
        let kt = tape.permute(k, &[0, 2, 1])?; // [H, hw, S]
        let scores = tape.batched_matmul(q, kt)?; // [H, S, S]
        let scores = tape.scale(scores, 1.0 / (hw as f64).sqrt())?;
        let attn = tape.softmax_masked(scores, mask)?;
        if ctx.capture_attention {
            ctx.attention.push(CapturedAttn {
                layer: layer_idx,
                heads: h,
                tokens: s,
                weights: tape.data(attn).to_vec(),
            });
        }
        let mixed = tape.batched_matmul(attn, v)?; // [H, S, hw]
        let mixed = tape.permute(mixed, &[1, 0, 2])?; // [S, H, hw]
        let mixed = tape.reshape(mixed, &[s, h * hw])?;
        let mixed = self.wo.forward(tape, binds, mixed)?;
        let x = tape.add(x, mixed)?;
        let x = self.ln1.forward(tape, binds, x)?;
        let ff = self.ffn1.forward(tape, binds, x)?;
        let ff = tape.relu(ff)?;
        let ff = self.ffn2.forward(tape, binds, ff)?;
        let x = tape.add(x, ff)?;
        let x = self.ln2.forward(tape, binds, x)?;
        Ok(tape.mul(x, mask_col)?)
    }

    fn param_count(&self) -> u64 {
        self.wq.param_count()
            + self.wk.param_count()
            + self.wv.param_count()
            + self.wo.param_count()
            + self.ln1.param_count()
            + self.ffn1.param_count()
            + self.ffn2.param_count()
            + self.ln2.param_count()
    }
}

/// Interaction-stage variants. `Transformer` is the full token pathway;
/// the rest operate on globally pooled per-sequence vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionMode {
    Transformer,
    Na,
    AddGlobal,
    ConcatGlobal,
    NonLocal,
}

impl InteractionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Self::Transformer),
            "na" => Ok(Self::Na),
            "add_global" => Ok(Self::AddGlobal),
            "concat_global" => Ok(Self::ConcatGlobal),
            "non_local" => Ok(Self::NonLocal),
            other => Err(Error::config(format!("unknown interaction mode '{other}'"))),
        }
    }
}

/// Two-layer MLP used by the ablation baselines.
struct Mlp {
    l1: LinearLayer,
    l2: LinearLayer,
}

impl Mlp {
    fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, din: usize, dout: usize) -> Self {
        Mlp {
            l1: LinearLayer::new(store, rng, &format!("{name}.l1"), din, dout),
            l2: LinearLayer::new(store, rng, &format!("{name}.l2"), dout, dout),
        }
    }

    fn forward(&self, tape: &mut Tape, binds: &Bindings, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, binds, x)?;
        let h = tape.relu(h)?;
        self.l2.forward(tape, binds, h)
    }
}

struct NonLocalBlock {
    theta: LinearLayer,
    phi: LinearLayer,
    g: LinearLayer,
    out: LinearLayer,
}

pub struct InteractionStage {
    pub mode: InteractionMode,
    pub streams: Vec<PoolStream>,
    pub encoder: EncoderConfig,
    embed: Option<LinearLayer>,
    embed_ln: Option<LayerNormLayer>,
    blocks: Vec<EncoderBlock>,
    add_global: Option<Mlp>,
    concat_global: Option<Mlp>,
    non_local: Option<(NonLocalBlock, Mlp)>,
}

impl InteractionStage {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        mode: InteractionMode,
        streams: Vec<PoolStream>,
        encoder: EncoderConfig,
    ) -> Result<Self> {
        encoder.validate()?;
        let c = encoder.model_dim;
        let mut stage = InteractionStage {
            mode,
            streams,
            encoder,
            embed: None,
            embed_ln: None,
            blocks: Vec::new(),
            add_global: None,
            concat_global: None,
            non_local: None,
        };
        match mode {
            InteractionMode::Transformer => {
                stage.embed = Some(LinearLayer::new_near_zero(
                    store, rng, "interaction.embed", 5, c, 1e-3,
                ));
                stage.embed_ln = Some(LayerNormLayer::new(store, "interaction.embed_ln", c));
                stage.blocks = (0..encoder.depth)
                    .map(|i| EncoderBlock::new(store, rng, &format!("interaction.enc{i}"), &encoder))
                    .collect();
            }
            InteractionMode::Na => {}
            InteractionMode::AddGlobal => {
                stage.add_global = Some(Mlp::new(store, rng, "interaction.add_global", c, c));
            }
            InteractionMode::ConcatGlobal => {
                stage.concat_global =
                    Some(Mlp::new(store, rng, "interaction.concat_global", 2 * c, c));
            }
            InteractionMode::NonLocal => {
                stage.non_local = Some((
                    NonLocalBlock {
                        theta: LinearLayer::new(store, rng, "interaction.nl.theta", c, c),
                        phi: LinearLayer::new(store, rng, "interaction.nl.phi", c, c),
                        g: LinearLayer::new(store, rng, "interaction.nl.g", c, c),
                        out: LinearLayer::new(store, rng, "interaction.nl.out", c, c),
                    },
                    Mlp::new(store, rng, "interaction.nl.mlp", c, c),
                ));
            }
        }
        Ok(stage)
    }

    /// features: [M, C, T_f, V]; st_input: [M, 5] (bbox + normalized time,
    /// zeros on padded slots); seq_mask: [M] 1=real 0=padded.
    /// Returns per-sequence features [M, C]; padded rows are zero.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        layout: &JointLayout,
        features: Var,
        st_input: Var,
        seq_mask: &[bool],
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let shape = tape.shape(features).to_vec();
        let (m, c) = (shape[0], shape[1]);
        if seq_mask.len() != m {
            return Err(Error::data("sequence mask length mismatch"));
        }
        if !seq_mask.iter().any(|&live| live) {
            return Err(Error::data("all sequences masked"));
        }
        match self.mode {
            InteractionMode::Transformer => {
                let t_f = shape[2];
                let l = token_count(&self.streams, t_f, layout.num_parts, layout.num_joints());
                let tokens = mix_pool(tape, features, &self.streams, layout)?; // [M, L, C]
                // per-sequence embedding broadcast over the token axis
                let emb = self
                    .embed
                    .as_ref()
                    .expect("transformer mode has embedding")
                    .forward(tape, binds, st_input)?; // [M, C]
                let emb = tape.reshape(emb, &[m, 1, c])?;
                let tokens = tape.add(tokens, emb)?;
                let tokens = self
                    .embed_ln
                    .as_ref()
                    .expect("transformer mode has embedding LN")
                    .forward(tape, binds, tokens)?;
                // flatten to the joint token grid
                let s = m * l;
                let mut x = tape.reshape(tokens, &[s, c])?;
                let token_mask: Vec<f64> = seq_mask
                    .iter()
                    .flat_map(|&live| std::iter::repeat(if live { 1.0 } else { 0.0 }).take(l))
                    .collect();
                let mask = tape.constant(vec![s], token_mask.clone())?;
                let mask_col = tape.constant(vec![s, 1], token_mask)?;
                // masked tokens are zero on input
                x = tape.mul(x, mask_col)?;
                for (i, block) in self.blocks.iter().enumerate() {
                    x = block.forward(tape, binds, &self.encoder, i, x, mask, mask_col, ctx)?;
                }
                // intra-sequence average pooling: L tokens -> 1 per sequence
                let grouped = tape.reshape(x, &[m, l, c])?;
                Ok(tape.mean_axes(grouped, &[1])?)
            }
            _ => {
                // global 1x1 pooling, then the simple baseline
                let pooled = tape.mean_axes(features, &[2, 3])?; // [M, C]
                let maskf: Vec<f64> = seq_mask
                    .iter()
                    .map(|&live| if live { 1.0 } else { 0.0 })
                    .collect();
                let live = maskf.iter().sum::<f64>();
                let mask_col = tape.constant(vec![m, 1], maskf.clone())?;
                let pooled = tape.mul(pooled, mask_col)?;
                let out = self.baseline_forward(tape, binds, pooled, mask_col, &maskf, live, m, c)?;
                Ok(tape.mul(out, mask_col)?)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn baseline_forward(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        pooled: Var,
        mask_col: Var,
        maskf: &[f64],
        live: f64,
        m: usize,
        c: usize,
    ) -> Result<Var> {
        match self.mode {
            InteractionMode::Na => Ok(pooled),
            InteractionMode::AddGlobal => {
                let mean = self.masked_mean(tape, pooled, live)?; // [1, C]
                let g = self
                    .add_global
                    .as_ref()
                    .expect("mode params")
                    .forward(tape, binds, mean)?;
                Ok(tape.add(pooled, g)?)
            }
            InteractionMode::ConcatGlobal => {
                let mean = self.masked_mean(tape, pooled, live)?; // [1, C]
                let ones = tape.constant(vec![m, 1], vec![1.0; m])?;
                let tiled = tape.matmul(ones, mean)?; // [M, C]
                let joined = tape.concat(&[pooled, tiled], 1)?; // [M, 2C]
                self.concat_global
                    .as_ref()
                    .expect("mode params")
                    .forward(tape, binds, joined)
            }
            InteractionMode::NonLocal => {
                let (nl, mlp) = self.non_local.as_ref().expect("mode params");
                let theta = nl.theta.forward(tape, binds, pooled)?;
                let phi = nl.phi.forward(tape, binds, pooled)?;
                let g = nl.g.forward(tape, binds, pooled)?;
                let phit = tape.permute(phi, &[1, 0])?;
                let scores = tape.matmul(theta, phit)?; // [M, M]
                let scores = tape.scale(scores, 1.0 / (c as f64).sqrt())?;
                let mask = tape.constant(vec![m], maskf.to_vec())?;
                let attn = tape.softmax_masked(scores, mask)?;
                let mixed = tape.matmul(attn, g)?;
                let mixed = nl.out.forward(tape, binds, mixed)?;
                let res = tape.add(pooled, mixed)?;
                let res = tape.mul(res, mask_col)?;
                mlp.forward(tape, binds, res)
            }
            InteractionMode::Transformer => unreachable!(),
        }
    }

    /// Mean over unmasked rows of [M, C] (padded rows are already zero).
    fn masked_mean(&self, tape: &mut Tape, pooled: Var, live: f64) -> Result<Var> {
        let c = tape.shape(pooled)[1];
        let summed = tape.sum_axes(pooled, &[0])?;
        let mean = tape.scale(summed, 1.0 / live)?;
        Ok(tape.reshape(mean, &[1, c])?)
    }

    pub fn param_count(&self) -> u64 {
        let mut total = 0;
        if let Some(e) = &self.embed {
            total += e.param_count();
        }
        if let Some(ln) = &self.embed_ln {
            total += ln.param_count();
        }
        for b in &self.blocks {
            total += b.param_count();
        }
        total
    }
}

/// Analytic MACs of the encoder pathway for M sequences of L tokens:
/// the box/time embedding, QKV/output/FFN projections and the two batched
/// attention matmuls per block. Matches the tape meter exactly.
pub fn head_flops(cfg: &EncoderConfig, m: usize, l: usize) -> u64 {
    let s = (m * l) as u64;
    let c = cfg.model_dim as u64;
    let qkv = cfg.qkv_dim() as u64;
    let hw = cfg.head_width() as u64;
    let h = cfg.heads as u64;
    let per_block = 3 * s * c * qkv      // q, k, v projections
        + 2 * h * s * s * hw             // scores + apply
        + s * qkv * c                    // output projection
        + 2 * s * c * cfg.ffn_hidden() as u64; // ffn
    (m as u64) * 5 * c + cfg.depth as u64 * per_block
}

/// Analytic MACs of mix pooling itself: only the joint→part averaging is a
/// matmul; plain means contribute none.
pub fn mix_pool_flops(streams: &[PoolStream], m: usize, c: usize, t_f: usize, v: usize, p: usize) -> u64 {
    streams
        .iter()
        .filter(|s| s.spatial == SpatialReduce::Parts)
        .count() as u64
        * (m * c * t_f * v * p) as u64
}

/// Attention-only MACs (the quadratic term).
pub fn attention_flops(cfg: &EncoderConfig, m: usize, l: usize) -> u64 {
    let s = (m * l) as u64;
    let hw = cfg.head_width() as u64;
    let h = cfg.heads as u64;
    cfg.depth as u64 * 2 * h * s * s * hw
}

// ── attention export ─────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenLabel {
    /// Original sequence slot in the clip.
    pub sequence: usize,
    pub key_frame: usize,
    /// Person slot among sequences sharing the key frame.
    pub person_slot: usize,
    /// Token kind within the sequence: "global", "t3", "part2", ...
    pub kind: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnMatrix {
    pub layer: usize,
    pub head: usize,
    /// Row-major (live tokens)² attention weights; rows sum to 1.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnExport {
    pub layers: usize,
    pub heads: usize,
    pub tokens: Vec<TokenLabel>,
    pub matrices: Vec<AttnMatrix>,
}

/// Token kind labels in stream order for one sequence.
pub fn token_kinds(streams: &[PoolStream], t_f: usize, p: usize, v: usize) -> Vec<String> {
    let mut kinds = Vec::new();
    for stream in streams {
        let a = match stream.temporal {
            TemporalReduce::One => 1,
            TemporalReduce::Full => t_f,
            TemporalReduce::Groups(g) => g,
        };
        let b = match stream.spatial {
            SpatialReduce::One => 1,
            SpatialReduce::Parts => p,
            SpatialReduce::Joints => v,
        };
        for ai in 0..a {
            for bi in 0..b {
                let kind = match (a, b) {
                    (1, 1) => "global".to_string(),
                    (_, 1) => format!("t{ai}"),
                    (1, _) => format!("part{bi}"),
                    _ => format!("t{ai}part{bi}"),
                };
                kinds.push(kind);
            }
        }
    }
    kinds
}

/// Restricts captured attention to live tokens and packages it with labels.
pub fn export_attention(
    captured: &[CapturedAttn],
    labels: Vec<TokenLabel>,
    live: &[bool],
) -> AttnExport {
    let n_live = live.iter().filter(|&&l| l).count();
    let live_idx: Vec<usize> = (0..live.len()).filter(|&i| live[i]).collect();
    let mut matrices = Vec::new();
    let mut heads = 0;
    let mut layers = 0;
    for cap in captured {
        heads = cap.heads;
        layers = layers.max(cap.layer + 1);
        let s = cap.tokens;
        for h in 0..cap.heads {
            let mut weights = Vec::with_capacity(n_live * n_live);
            for &r in &live_idx {
                for &c in &live_idx {
                    weights.push(cap.weights[h * s * s + r * s + c]);
                }
            }
            matrices.push(AttnMatrix {
                layer: cap.layer,
                head: h,
                weights,
            });
        }
    }
    AttnExport {
        layers,
        heads,
        tokens: labels,
        matrices,
    }
}

/// Aggregated per-sequence feature: mean over the L tokens (already done in
/// `forward`); exposed for tests via plain layer norm epsilon reuse.
pub const EMBED_LN_EPS: f64 = LN_EPS;

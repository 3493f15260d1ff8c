//! The full two-stage recognizer: GCN backbone over sequences, interaction
//! stage over the clip, task heads. Also checkpoint save/load.
//!
//! Sequences are re-ordered internally by a content-based canonical key
//! before any computation, so every reduction runs in an order independent
//! of the caller's slot arrangement: video-level outputs are bit-exactly
//! invariant to input sequence order, and per-sequence outputs are mapped
//! back to the original slots.

use std::cmp::Ordering;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Tensor, Var};

use crate::backbone::{Backbone, GcnConfig};
use crate::error::{Error, Result};
use crate::heads::{Head, HeadSpec};
use crate::interaction::{
    token_count, token_kinds, EncoderConfig, InteractionMode, InteractionStage, PoolStream,
    TokenLabel,
};
use crate::layout::JointLayout;
use crate::nn::ForwardCtx;
use crate::params::{Bindings, BufferStore, ParamStore};
use crate::sequencing::{ClipSample, SkeletonSequence};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layout: JointLayout,
    pub backbone: GcnConfig,
    pub mode: InteractionMode,
    pub streams: Vec<PoolStream>,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub heads: Vec<HeadSpec>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.backbone.validate()?;
        if self.heads.is_empty() {
            return Err(Error::config("model needs at least one head"));
        }
        self.encoder_config().validate()?;
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            depth: self.encoder_depth,
            heads: self.encoder_heads,
            model_dim: self.backbone.out_channels(),
        }
    }
}

pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub buffers: BufferStore,
    pub backbone: Backbone,
    pub interaction: InteractionStage,
    pub heads: Vec<Head>,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut buffers = BufferStore::new();
        let backbone = Backbone::new(
            &mut store,
            &mut buffers,
            &mut rng,
            config.backbone.clone(),
            &config.layout,
        )?;
        let interaction = InteractionStage::new(
            &mut store,
            &mut rng,
            config.mode,
            config.streams.clone(),
            config.encoder_config(),
        )?;
        let feature_dim = config.backbone.out_channels();
        let heads = config
            .heads
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                Head::new(
                    &mut store,
                    &mut rng,
                    &format!("head{i}.{:?}", spec.task).to_lowercase(),
                    spec.clone(),
                    feature_dim,
                )
            })
            .collect();
        Ok(Model {
            config,
            store,
            buffers,
            backbone,
            interaction,
            heads,
        })
    }

    pub fn param_count(&self) -> u64 {
        self.store.total_params()
    }

    /// Runs both stages on one clip. Sequence features come back in
    /// canonical order together with the slot mappings.
    pub fn forward_clip(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        clip: &ClipSample,
        ctx: &mut ForwardCtx,
    ) -> Result<ClipForward> {
        let m = clip.m();
        if m == 0 {
            return Err(Error::data("empty clip"));
        }
        if clip.num_real() == 0 {
            return Err(Error::data("all sequences masked"));
        }
        let canon = canonical_order(clip);
        let mut orig_to_canon = vec![0usize; m];
        for (slot, &orig) in canon.iter().enumerate() {
            orig_to_canon[orig] = slot;
        }
        let (t, v, c_in) = clip_dims(clip, &self.config)?;
        let mut input = vec![0.0; m * c_in * t * v];
        let mut st = vec![0.0; m * 5];
        let mut pad_canon = vec![true; m];
        for (slot, &orig) in canon.iter().enumerate() {
            if let Some(seq) = &clip.sequences[orig] {
                pad_canon[slot] = false;
                // [T,V,C] -> [C,T,V]
                for tt in 0..t {
                    for vv in 0..v {
                        for cc in 0..c_in {
                            input[((slot * c_in + cc) * t + tt) * v + vv] =
                                seq.data[(tt * v + vv) * c_in + cc];
                        }
                    }
                }
                st[slot * 5] = seq.center_bbox.x_min;
                st[slot * 5 + 1] = seq.center_bbox.y_min;
                st[slot * 5 + 2] = seq.center_bbox.x_max;
                st[slot * 5 + 3] = seq.center_bbox.y_max;
                st[slot * 5 + 4] = seq.norm_time;
            }
        }
        let input = tape.constant(vec![m, c_in, t, v], input)?;
        let st = tape.constant(vec![m, 5], st)?;
        let feats = self
            .backbone
            .forward(tape, binds, &self.buffers, input, ctx)?;
        let live: Vec<bool> = pad_canon.iter().map(|&p| !p).collect();
        let features = self.interaction.forward(
            tape,
            binds,
            &self.config.layout,
            feats.var,
            st,
            &live,
            ctx,
        )?;
        Ok(ClipForward {
            features,
            canon,
            orig_to_canon,
            pad_canon,
            t_f: feats.t_f,
        })
    }

    /// Video/group logits [1, K] for the given head.
    pub fn video_logits(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        fwd: &ClipForward,
        head_idx: usize,
    ) -> Result<Var> {
        self.heads[head_idx].video_logits(tape, binds, fwd.features, &fwd.pad_canon)
    }

    /// Instance logits [1, K] for the query at an original slot index.
    pub fn instance_logits_for(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        fwd: &ClipForward,
        head_idx: usize,
        orig_query: usize,
    ) -> Result<Var> {
        if orig_query >= fwd.orig_to_canon.len() {
            return Err(Error::data(format!("query slot {orig_query} out of range")));
        }
        let slot = fwd.orig_to_canon[orig_query];
        if fwd.pad_canon[slot] {
            return Err(Error::data("query slot is padded"));
        }
        let all = self.heads[head_idx].instance_logits(tape, binds, fwd.features)?;
        Ok(tape.select_rows(all, &[slot])?)
    }

    /// Per-sequence logits for every live slot, returned in original-slot
    /// order as (orig_index, row).
    pub fn instance_logits_all(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        fwd: &ClipForward,
        head_idx: usize,
    ) -> Result<Vec<(usize, Vec<f64>)>> {
        let all = self.heads[head_idx].instance_logits(tape, binds, fwd.features)?;
        let k = tape.shape(all)[1];
        let data = tape.data(all);
        let mut out = Vec::new();
        for (orig, &slot) in fwd.orig_to_canon.iter().enumerate() {
            if !fwd.pad_canon[slot] {
                out.push((orig, data[slot * k..(slot + 1) * k].to_vec()));
            }
        }
        Ok(out)
    }

    /// Labels for the clip's token grid (canonical order) plus per-token
    /// liveness, for attention export.
    pub fn token_labels(&self, clip: &ClipSample, fwd: &ClipForward) -> (Vec<TokenLabel>, Vec<bool>) {
        let layout = &self.config.layout;
        let kinds = token_kinds(
            &self.interaction.streams,
            fwd.t_f,
            layout.num_parts,
            layout.num_joints(),
        );
        let l = kinds.len();
        debug_assert_eq!(
            l,
            token_count(
                &self.interaction.streams,
                fwd.t_f,
                layout.num_parts,
                layout.num_joints()
            )
        );
        // person slot: position among live sequences sharing a key frame
        let mut labels = Vec::with_capacity(fwd.canon.len() * l);
        let mut live = Vec::with_capacity(fwd.canon.len() * l);
        let mut seen: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        for (slot, &orig) in fwd.canon.iter().enumerate() {
            let (key_frame, person_slot) = match &clip.sequences[orig] {
                Some(seq) => {
                    let entry = seen.entry(seq.key_frame).or_insert(0);
                    let p = *entry;
                    *entry += 1;
                    (seq.key_frame, p)
                }
                None => (0, 0),
            };
            for kind in &kinds {
                labels.push(TokenLabel {
                    sequence: orig,
                    key_frame,
                    person_slot,
                    kind: kind.clone(),
                });
                live.push(!fwd.pad_canon[slot]);
            }
        }
        // only live tokens are exported
        let labels = labels
            .into_iter()
            .zip(&live)
            .filter(|(_, &l)| l)
            .map(|(t, _)| t)
            .collect();
        (labels, live)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .store
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_string(&ckpt).map_err(|e| Error::other(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::data(format!("bad checkpoint: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::data(format!(
                "checkpoint version {} unsupported (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            )));
        }
        let mut model = Model::new(ckpt.config, 0)?;
        for nt in ckpt.params {
            let tensor = Tensor::from_vec(nt.shape, nt.data)?;
            model.store.set_by_name(&nt.name, tensor)?;
        }
        for nt in ckpt.buffers {
            let tensor = Tensor::from_vec(nt.shape, nt.data)?;
            model.buffers.set_by_name(&nt.name, tensor)?;
        }
        Ok(model)
    }
}

/// Output of one clip forward.
pub struct ClipForward {
    /// [M, C] per-sequence features in canonical order; padded rows zero.
    pub features: Var,
    /// canonical slot -> original index
    pub canon: Vec<usize>,
    /// original index -> canonical slot
    pub orig_to_canon: Vec<usize>,
    pub pad_canon: Vec<bool>,
    pub t_f: usize,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: ModelConfig,
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
}

fn clip_dims(clip: &ClipSample, config: &ModelConfig) -> Result<(usize, usize, usize)> {
    let first = clip
        .sequences
        .iter()
        .flatten()
        .next()
        .ok_or_else(|| Error::data("all sequences masked"))?;
    let (t, v, c) = (first.t, first.v, first.c);
    if v != config.layout.num_joints() {
        return Err(Error::data(format!(
            "sequence has V={v}, model layout has {}",
            config.layout.num_joints()
        )));
    }
    if c != config.backbone.in_channels {
        return Err(Error::data(format!(
            "sequence has C={c}, backbone expects {}",
            config.backbone.in_channels
        )));
    }
    for seq in clip.sequences.iter().flatten() {
        if seq.t != t || seq.v != v || seq.c != c {
            return Err(Error::data("mixed sequence shapes in one clip"));
        }
    }
    Ok((t, v, c))
}

/// Content-based ordering: real sequences sorted by (norm_time, key_frame,
/// bbox, validity, data), padded slots last. Identical contents keep their
/// relative input order, which cannot affect any computed value.
fn canonical_order(clip: &ClipSample) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..clip.m()).collect();
    idx.sort_by(|&a, &b| match (&clip.sequences[a], &clip.sequences[b]) {
        (Some(x), Some(y)) => seq_cmp(x, y).then(a.cmp(&b)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(&b),
    });
    idx
}

fn seq_cmp(x: &SkeletonSequence, y: &SkeletonSequence) -> Ordering {
    x.norm_time
        .total_cmp(&y.norm_time)
        .then(x.key_frame.cmp(&y.key_frame))
        .then(x.center_bbox.x_min.total_cmp(&y.center_bbox.x_min))
        .then(x.center_bbox.y_min.total_cmp(&y.center_bbox.y_min))
        .then(x.center_bbox.x_max.total_cmp(&y.center_bbox.x_max))
        .then(x.center_bbox.y_max.total_cmp(&y.center_bbox.y_max))
        .then(x.valid_mask.cmp(&y.valid_mask))
        .then_with(|| {
            for (a, b) in x.data.iter().zip(&y.data) {
                let ord = a.total_cmp(b);
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            x.data.len().cmp(&y.data.len())
        })
}

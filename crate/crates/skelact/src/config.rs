//! TOML experiment configuration. CLI flags override individual fields.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::GcnConfig;
use crate::error::{Error, Result};
use crate::heads::HeadSpec;
use crate::interaction::{parse_streams, InteractionMode};
use crate::layout::JointLayout;
use crate::model::ModelConfig;
use crate::pipeline::Modality;
use crate::sequencing::{MPolicy, SequencingConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AppConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub sequencing: SequencingSection,
    #[serde(default)]
    pub m_policy: MPolicySection,
    #[serde(default)]
    pub backbone: BackboneSection,
    #[serde(default)]
    pub interaction: InteractionSection,
    #[serde(default)]
    pub head: HeadSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub instance: InstanceSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataSection {
    pub layout: String,
    pub c: usize,
    pub modality: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            layout: "coco17".into(),
            c: 2,
            modality: "joint".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequencingSection {
    pub t: usize,
    pub iou_threshold: f64,
}

impl Default for SequencingSection {
    fn default() -> Self {
        SequencingSection {
            t: 30,
            iou_threshold: crate::sequencing::DEFAULT_IOU_THRESHOLD,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MPolicySection {
    pub kind: String,
    pub m: usize,
    pub m_min: usize,
    pub m_max: usize,
}

impl Default for MPolicySection {
    fn default() -> Self {
        MPolicySection {
            kind: "fixed".into(),
            m: 20,
            m_min: 5,
            m_max: 20,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneSection {
    /// "s", "l", "micro", or "custom" (explicit fields below).
    pub variant: String,
    pub num_stages: usize,
    pub base_channels: usize,
    pub inflate_stages: Vec<usize>,
    pub downsample_stages: Vec<usize>,
    pub tcn_kernel: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection {
            variant: "s".into(),
            num_stages: 6,
            base_channels: 64,
            inflate_stages: vec![6],
            downsample_stages: vec![6],
            tcn_kernel: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionSection {
    pub mode: String,
    pub streams: Vec<String>,
    pub encoder_blocks: usize,
    pub heads: usize,
}

impl Default for InteractionSection {
    fn default() -> Self {
        InteractionSection {
            mode: "transformer".into(),
            streams: vec!["1x1".into(), "Tx1".into(), "1xP".into()],
            encoder_blocks: 2,
            heads: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadSection {
    pub tasks: Vec<HeadSpec>,
    pub lambda: f64,
    /// "a:b" weights for probability-space late fusion.
    pub fuse_ratio: String,
}

impl Default for HeadSection {
    fn default() -> Self {
        HeadSection {
            tasks: vec![],
            lambda: 100.0,
            fuse_ratio: "2:1".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 100,
            batch_size: 16,
            base_lr: 0.1,
            milestones: vec![70, 85],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceSection {
    pub window_seconds: f64,
}

impl Default for InstanceSection {
    fn default() -> Self {
        InstanceSection { window_seconds: 5.0 }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn layout(&self) -> Result<JointLayout> {
        JointLayout::by_name(&self.data.layout)
    }

    pub fn modality(&self) -> Result<Modality> {
        Modality::parse(&self.data.modality)
    }

    pub fn gcn_config(&self) -> Result<GcnConfig> {
        let cfg = if self.backbone.variant == "custom" {
            GcnConfig {
                num_stages: self.backbone.num_stages,
                base_channels: self.backbone.base_channels,
                inflate_stages: self.backbone.inflate_stages.clone(),
                downsample_stages: self.backbone.downsample_stages.clone(),
                tcn_kernel: self.backbone.tcn_kernel,
                in_channels: self.data.c,
            }
        } else {
            GcnConfig::by_name(&self.backbone.variant, self.data.c)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn sequencing_config(&self) -> SequencingConfig {
        SequencingConfig {
            t: self.sequencing.t,
            iou_threshold: self.sequencing.iou_threshold,
        }
    }

    pub fn m_policy(&self) -> Result<MPolicy> {
        let policy = match self.m_policy.kind.as_str() {
            "fixed" => MPolicy::Fixed { m: self.m_policy.m },
            "range" => MPolicy::Range {
                m_min: self.m_policy.m_min,
                m_max: self.m_policy.m_max,
            },
            other => return Err(Error::config(format!("unknown m_policy kind '{other}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        if self.head.tasks.is_empty() {
            return Err(Error::config("config declares no head tasks"));
        }
        Ok(ModelConfig {
            layout: self.layout()?,
            backbone: self.gcn_config()?,
            mode: InteractionMode::parse(&self.interaction.mode)?,
            streams: parse_streams(&self.interaction.streams)?,
            encoder_depth: self.interaction.encoder_blocks,
            encoder_heads: self.interaction.heads,
            heads: self.head.tasks.clone(),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            milestones: self.train.milestones.clone(),
            lr_decay: self.train.lr_decay,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            seed: self.seed,
            lambda: Some(self.head.lambda),
        }
    }

    pub fn fuse_ratio(&self) -> Result<(f64, f64)> {
        let (a, b) = self
            .head
            .fuse_ratio
            .split_once(':')
            .ok_or_else(|| Error::config("fuse_ratio must be 'a:b'"))?;
        let a: f64 = a.trim().parse().map_err(|_| Error::config("bad fuse ratio"))?;
        let b: f64 = b.trim().parse().map_err(|_| Error::config("bad fuse ratio"))?;
        Ok((a, b))
    }

    pub fn window_frames(&self, fps: f64) -> usize {
        (self.instance.window_seconds * fps).round() as usize
    }
}

//! Dataset schema, serialization and synthetic generation.
//!
//! Coordinates are normalized to [0,1] by frame width/height; a skeleton is
//! V joints with confidences plus a detection bbox and score. Missing
//! persons in a frame are simply absent.

mod io;
mod synth;

pub use io::{load_dataset, save_dataset, SCHEMA_VERSION};
pub use synth::{
    distance_trend_label, synth_generate, ClassSpec, LabelMode, PersonMotion, Scenario, SynthSpec,
    NUM_MOTIONS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::JointLayout;

/// Axis-aligned box in normalized frame units; empty boxes are invalid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::data(format!(
                "empty bbox ({}, {}, {}, {})",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Zero-area placeholder used for padded slots; never passes validate().
    pub fn zero() -> Self {
        BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: 0.0,
            y_max: 0.0,
        }
    }
}

/// One person in one frame: V joints (C coords each, normalized), per-joint
/// confidences, detection bbox and detector score. `track_id` carries the
/// ground-truth identity for synthetic data and diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub frame_index: usize,
    pub joints: Vec<f64>,
    pub joint_conf: Vec<f64>,
    pub bbox: BBox,
    pub detector_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

impl Skeleton {
    pub fn validate(&self, v: usize, c: usize) -> Result<()> {
        if self.joints.len() != v * c {
            return Err(Error::data(format!(
                "skeleton in frame {} has {} joint coords, expected {}x{}",
                self.frame_index,
                self.joints.len(),
                v,
                c
            )));
        }
        if self.joint_conf.len() != v {
            return Err(Error::data(format!(
                "skeleton in frame {} has {} confidences, expected {v}",
                self.frame_index,
                self.joint_conf.len()
            )));
        }
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.detector_score) {
            return Err(Error::data(format!(
                "detector score {} outside [0,1]",
                self.detector_score
            )));
        }
        Ok(())
    }

    pub fn joint(&self, j: usize, c_dims: usize) -> &[f64] {
        &self.joints[j * c_dims..(j + 1) * c_dims]
    }
}

/// A multi-label proposal anchored at a key frame (instance-level tasks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub frame: usize,
    pub bbox: BBox,
    /// One bit per class.
    pub targets: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Labels {
    Video { class_id: usize },
    Instance { proposals: Vec<Proposal> },
    Group { class_id: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub video_id: String,
    pub fps: f64,
    pub num_frames: usize,
    /// frames[t] lists the skeletons detected in frame t.
    pub frames: Vec<Vec<Skeleton>>,
    pub labels: Labels,
}

impl VideoRecord {
    pub fn validate(&self, v: usize, c: usize, num_classes: usize) -> Result<()> {
        if self.frames.len() != self.num_frames {
            return Err(Error::data(format!(
                "video {}: {} frame lists for num_frames={}",
                self.video_id,
                self.frames.len(),
                self.num_frames
            )));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            for s in frame {
                if s.frame_index != t {
                    return Err(Error::data(format!(
                        "video {}: skeleton indexed {} stored in frame {t}",
                        self.video_id, s.frame_index
                    )));
                }
                s.validate(v, c)?;
            }
        }
        match &self.labels {
            Labels::Video { class_id } | Labels::Group { class_id } => {
                if *class_id >= num_classes {
                    return Err(Error::data(format!(
                        "video {}: class {} >= K={}",
                        self.video_id, class_id, num_classes
                    )));
                }
            }
            Labels::Instance { proposals } => {
                for p in proposals {
                    if p.frame >= self.num_frames {
                        return Err(Error::data(format!(
                            "video {}: proposal frame {} out of range",
                            self.video_id, p.frame
                        )));
                    }
                    if p.targets.len() != num_classes {
                        return Err(Error::data(format!(
                            "video {}: proposal has {} targets, expected {}",
                            self.video_id,
                            p.targets.len(),
                            num_classes
                        )));
                    }
                    p.bbox.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Total detections across all frames.
    pub fn num_skeletons(&self) -> usize {
        self.frames.iter().map(|f| f.len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: u32,
    /// Joints per skeleton.
    pub v: usize,
    /// Coordinate dims per joint (2 or 3).
    pub c: usize,
    pub num_classes: usize,
    pub layout: String,
    #[serde(skip)]
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.c != 2 && self.c != 3 {
            return Err(Error::data(format!("C must be 2 or 3, got {}", self.c)));
        }
        for video in &self.videos {
            video.validate(self.v, self.c, self.num_classes)?;
        }
        Ok(())
    }

    pub fn joint_layout(&self) -> Result<JointLayout> {
        let l = JointLayout::by_name(&self.layout)?;
        if l.num_joints() != self.v {
            return Err(Error::config(format!(
                "layout '{}' has {} joints but dataset declares V={}",
                self.layout,
                l.num_joints(),
                self.v
            )));
        }
        Ok(l)
    }
}

/// Bone modality: each joint becomes the difference to its parent joint;
/// the root bone is the zero vector. Exactly translation-invariant.
///
/// `seq` is row-major [T, V, C]; the layout must cover all V joints.
pub fn bone_transform(seq: &[f64], t: usize, v: usize, c: usize, layout: &JointLayout) -> Result<Vec<f64>> {
    if layout.num_joints() != v {
        return Err(Error::data(format!(
            "parent map covers {} joints, sequence has {v}",
            layout.num_joints()
        )));
    }
    if seq.len() != t * v * c {
        return Err(Error::data(format!(
            "sequence buffer {} != T*V*C = {}",
            seq.len(),
            t * v * c
        )));
    }
    let mut out = vec![0.0; seq.len()];
    for tt in 0..t {
        let base = tt * v * c;
        for j in 0..v {
            if let Some(p) = layout.parents[j] {
                for d in 0..c {
                    out[base + j * c + d] = seq[base + j * c + d] - seq[base + p * c + d];
                }
            }
        }
    }
    Ok(out)
}

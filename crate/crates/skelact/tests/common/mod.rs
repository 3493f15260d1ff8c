//! Shared fixtures for the integration suites.

use skelact::backbone::GcnConfig;
use skelact::data::{ClassSpec, LabelMode, Scenario, SynthSpec};
use skelact::heads::{HeadSpec, LossKind, TaskKind};
use skelact::interaction::{default_streams, InteractionMode};
use skelact::layout::JointLayout;
use skelact::model::{Model, ModelConfig};
use skelact::sequencing::SkeletonSequence;

/// Small 17-joint model used by the invariant tests.
pub fn micro_model_config(mode: InteractionMode, classes: usize) -> ModelConfig {
    ModelConfig {
        layout: JointLayout::coco17(),
        backbone: GcnConfig::variant_micro(2),
        mode,
        streams: default_streams(),
        encoder_depth: 2,
        encoder_heads: 8,
        heads: vec![HeadSpec {
            task: TaskKind::Video,
            classes,
            loss: LossKind::Ce,
        }],
    }
}

pub fn micro_model(mode: InteractionMode, classes: usize, seed: u64) -> Model {
    Model::new(micro_model_config(mode, classes), seed).unwrap()
}

/// Deterministic non-degenerate sequence.
pub fn make_sequence(seed: usize, t: usize, v: usize, c: usize) -> SkeletonSequence {
    let data = (0..t * v * c)
        .map(|i| (((seed * 131 + i * 17) % 997) as f64 / 997.0) * 0.8 + 0.1)
        .collect();
    SkeletonSequence {
        data,
        t,
        v,
        c,
        valid_mask: vec![true; t],
        center_bbox: skelact::data::BBox {
            x_min: 0.1 + 0.02 * (seed % 7) as f64,
            y_min: 0.2,
            x_max: 0.4 + 0.02 * (seed % 7) as f64,
            y_max: 0.7,
        },
        norm_time: (seed % 11) as f64 / 11.0,
        key_frame: seed % 23,
        source_ids: vec![],
    }
}

/// The marginal-matched relational dataset: approach-and-meet vs
/// parallel-walk, labels decided purely by inter-person geometry.
pub fn interaction_spec(num_videos: usize, frames: usize) -> SynthSpec {
    SynthSpec {
        num_videos,
        persons: (2, 2),
        frames,
        fps: 8.0,
        v: 17,
        layout: "coco17".into(),
        jitter_std: 0.004,
        dropout_prob: 0.0,
        label_mode: LabelMode::Video,
        classes: vec![
            ClassSpec {
                name: "approach".into(),
                scenario: Scenario::ApproachAndMeet,
            },
            ClassSpec {
                name: "parallel".into(),
                scenario: Scenario::ParallelWalk,
            },
        ],
        proposal_stride: 0,
    }
}

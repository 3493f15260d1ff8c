//! From dataset records to model inputs: per-video sequence caches,
//! modality transforms, and clip assembly for video-level and
//! proposal-anchored samples.

use serde::{Deserialize, Serialize};

use crate::data::{bone_transform, Dataset, Labels, Proposal};
use crate::error::{Error, Result};
use crate::layout::JointLayout;
use crate::sequencing::{
    sample_sequences, select_m, ClipLabels, ClipSample, MPolicy, SelectMode, SequencingConfig,
    SkeletonSequence,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Joint,
    Bone,
}

impl Modality {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Modality::Joint),
            "bone" => Ok(Modality::Bone),
            other => Err(Error::config(format!("unknown modality '{other}'"))),
        }
    }
}

/// A video with its sequences sampled once and cached.
pub struct PreparedVideo {
    pub video_index: usize,
    pub sequences: Vec<SkeletonSequence>,
    pub labels: Labels,
    pub fps: f64,
    pub num_frames: usize,
}

/// One trainable/evaluable unit: a whole video (video/group tasks) or one
/// proposal of a video (instance task).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleRef {
    pub video: usize,
    pub proposal: Option<usize>,
}

pub struct PreparedDataset {
    pub videos: Vec<PreparedVideo>,
    pub num_classes: usize,
    pub layout: JointLayout,
    pub c: usize,
}

/// Samples sequences for every video and applies the modality transform.
pub fn prepare_dataset(
    ds: &Dataset,
    seq_cfg: &SequencingConfig,
    modality: Modality,
) -> Result<PreparedDataset> {
    let layout = ds.joint_layout()?;
    let mut videos = Vec::with_capacity(ds.videos.len());
    for (i, record) in ds.videos.iter().enumerate() {
        let mut sequences = sample_sequences(record, ds.v, ds.c, seq_cfg)?;
        if modality == Modality::Bone {
            for seq in &mut sequences {
                seq.data = bone_transform(&seq.data, seq.t, seq.v, seq.c, &layout)?;
            }
        }
        videos.push(PreparedVideo {
            video_index: i,
            sequences,
            labels: record.labels.clone(),
            fps: record.fps,
            num_frames: record.num_frames,
        });
    }
    Ok(PreparedDataset {
        videos,
        num_classes: ds.num_classes,
        layout,
        c: ds.c,
    })
}

impl PreparedDataset {
    /// All sample units, in dataset order.
    pub fn samples(&self) -> Vec<SampleRef> {
        let mut out = Vec::new();
        for (vi, video) in self.videos.iter().enumerate() {
            match &video.labels {
                Labels::Video { .. } | Labels::Group { .. } => out.push(SampleRef {
                    video: vi,
                    proposal: None,
                }),
                Labels::Instance { proposals } => {
                    for pi in 0..proposals.len() {
                        out.push(SampleRef {
                            video: vi,
                            proposal: Some(pi),
                        });
                    }
                }
            }
        }
        out
    }
}

/// Builds the clip for one sample. Returns None when an instance proposal
/// has no matching sequence (e.g. its skeleton was dropped upstream).
pub fn build_clip(
    prepared: &PreparedDataset,
    sample: SampleRef,
    policy: &MPolicy,
    seed: u64,
    mode: SelectMode,
    window_frames: Option<usize>,
) -> Result<Option<ClipSample>> {
    let video = &prepared.videos[sample.video];
    match sample.proposal {
        None => {
            if video.sequences.is_empty() {
                return Ok(None);
            }
            let mut clip = select_m(&video.sequences, policy, seed, mode)?;
            clip.labels = Some(match &video.labels {
                Labels::Video { class_id } => ClipLabels::Video { class_id: *class_id },
                Labels::Group { class_id } => ClipLabels::Group { class_id: *class_id },
                Labels::Instance { .. } => {
                    return Err(Error::data(
                        "video-level sample built from an instance-labeled record",
                    ))
                }
            });
            Ok(Some(clip))
        }
        Some(pi) => {
            let proposals = match &video.labels {
                Labels::Instance { proposals } => proposals,
                _ => return Err(Error::data("proposal sample on a non-instance record")),
            };
            let proposal = &proposals[pi];
            let window = window_frames.unwrap_or(video.num_frames.max(1));
            let start = proposal.frame.saturating_sub(window / 2);
            let end = (proposal.frame + window.div_ceil(2)).min(video.num_frames);
            build_instance_clip(video, proposal, start..end, policy, seed, mode)
        }
    }
}

/// Clip for one proposal: candidate sequences are those with key frames in
/// `window`; the query (best-IoU sequence near the proposal frame) is
/// always kept, the rest are selected by the usual policy.
pub fn build_instance_clip(
    video: &PreparedVideo,
    proposal: &Proposal,
    window: std::ops::Range<usize>,
    policy: &MPolicy,
    seed: u64,
    mode: SelectMode,
) -> Result<Option<ClipSample>> {
    let candidates: Vec<&SkeletonSequence> = video
        .sequences
        .iter()
        .filter(|s| window.contains(&s.key_frame))
        .collect();
    let query = match find_query(&candidates, proposal) {
        Some(q) => q,
        None => return Ok(None),
    };
    let others: Vec<SkeletonSequence> = candidates
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != query)
        .map(|(_, s)| (*s).clone())
        .collect();
    let m_target = match (mode, policy) {
        (SelectMode::Train, _) => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            policy.draw(&mut rng)
        }
        (SelectMode::Test, MPolicy::Fixed { m }) => *m,
        (SelectMode::Test, MPolicy::Range { m_min, m_max }) => {
            candidates.len().clamp(*m_min, *m_max)
        }
    };
    // query first, then the policy fills the remaining slots
    let rest_policy = MPolicy::Fixed {
        m: m_target.saturating_sub(1).max(1),
    };
    let mut rest = if m_target > 1 && !others.is_empty() {
        select_m(&others, &rest_policy, seed.wrapping_add(1), mode)?
    } else {
        ClipSample {
            sequences: vec![None; m_target.saturating_sub(1)],
            pad_mask: vec![true; m_target.saturating_sub(1)],
            labels: None,
        }
    };
    let mut sequences = vec![Some(candidates[query].clone())];
    sequences.append(&mut rest.sequences);
    sequences.truncate(m_target.max(1));
    let pad_mask: Vec<bool> = sequences.iter().map(|s| s.is_none()).collect();
    Ok(Some(ClipSample {
        sequences,
        pad_mask,
        labels: Some(ClipLabels::Instance {
            query: 0,
            targets: proposal.targets.clone(),
        }),
    }))
}

/// Best-IoU sequence whose key frame is nearest the proposal's frame.
fn find_query(candidates: &[&SkeletonSequence], proposal: &Proposal) -> Option<usize> {
    let mut best: Option<(usize, f64, usize)> = None; // (idx, iou, frame_dist)
    for (i, seq) in candidates.iter().enumerate() {
        let overlap = crate::sequencing::iou(&seq.center_bbox, &proposal.bbox);
        if overlap < 0.3 {
            continue;
        }
        let dist = seq.key_frame.abs_diff(proposal.frame);
        let better = match best {
            None => true,
            Some((_, b_iou, b_dist)) => {
                dist < b_dist || (dist == b_dist && overlap > b_iou)
            }
        };
        if better {
            best = Some((i, overlap, dist));
        }
    }
    best.map(|(i, _, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, ClassSpec, LabelMode, Scenario, SynthSpec};

    fn spec(label_mode: LabelMode) -> SynthSpec {
        SynthSpec {
            num_videos: 4,
            persons: (2, 2),
            frames: 24,
            fps: 8.0,
            v: 17,
            layout: "coco17".into(),
            jitter_std: 0.005,
            dropout_prob: 0.0,
            label_mode,
            classes: vec![
                ClassSpec {
                    name: "a".into(),
                    scenario: Scenario::ApproachAndMeet,
                },
                ClassSpec {
                    name: "b".into(),
                    scenario: Scenario::ParallelWalk,
                },
            ],
            proposal_stride: 0,
        }
    }

    #[test]
    fn video_clips_have_labels_and_masks() {
        let ds = synth_generate(&spec(LabelMode::Video), 1).unwrap();
        let prepared = prepare_dataset(
            &ds,
            &SequencingConfig {
                t: 8,
                iou_threshold: 0.3,
            },
            Modality::Joint,
        )
        .unwrap();
        let samples = prepared.samples();
        assert_eq!(samples.len(), 4);
        let clip = build_clip(
            &prepared,
            samples[0],
            &MPolicy::Fixed { m: 16 },
            0,
            SelectMode::Test,
            None,
        )
        .unwrap()
        .unwrap();
        assert_eq!(clip.m(), 16);
        assert!(matches!(clip.labels, Some(ClipLabels::Video { .. })));
        assert!(clip.num_real() >= 2);
    }

    #[test]
    fn bone_modality_changes_data() {
        let ds = synth_generate(&spec(LabelMode::Video), 1).unwrap();
        let cfg = SequencingConfig {
            t: 8,
            iou_threshold: 0.3,
        };
        let joint = prepare_dataset(&ds, &cfg, Modality::Joint).unwrap();
        let bone = prepare_dataset(&ds, &cfg, Modality::Bone).unwrap();
        assert_ne!(
            joint.videos[0].sequences[0].data,
            bone.videos[0].sequences[0].data
        );
    }

    #[test]
    fn instance_clip_keeps_query_first() {
        let mut s = spec(LabelMode::Instance);
        s.proposal_stride = 8;
        let ds = synth_generate(&s, 2).unwrap();
        let prepared = prepare_dataset(
            &ds,
            &SequencingConfig {
                t: 8,
                iou_threshold: 0.3,
            },
            Modality::Joint,
        )
        .unwrap();
        let samples = prepared.samples();
        assert!(!samples.is_empty());
        let clip = build_clip(
            &prepared,
            samples[0],
            &MPolicy::Fixed { m: 6 },
            0,
            SelectMode::Test,
            Some(16),
        )
        .unwrap()
        .unwrap();
        match clip.labels {
            Some(ClipLabels::Instance { query, .. }) => assert_eq!(query, 0),
            other => panic!("expected instance labels, got {other:?}"),
        }
        assert!(clip.sequences[0].is_some());
    }
}

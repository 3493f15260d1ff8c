//! Short-sequence input construction: key frames at stride T/2, greedy
//! IoU linking inside a centered window, fixed/adaptive sequence-count
//! batching, and the confidence-rank baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, Skeleton, VideoRecord};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

/// Intersection over union; symmetric, 1 iff identical, 0 iff disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One person hypothesis inside a window: the (frame, detection index)
/// pairs that were linked together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tracklet {
    pub detections: Vec<(usize, usize)>,
}

/// Greedy frame-to-frame linking over `frames[window]`. At each step the
/// (tracklet, detection) pairs are matched in descending IoU order against
/// each tracklet's last linked bbox; pairs below `iou_threshold` are left
/// unmatched and spawn new tracklets. Ties break on (tracklet index,
/// detection index). Tracklets stay alive to the end of the window, so a
/// gap can be bridged when the IoU across it is still above threshold.
pub fn build_tracklets(
    frames: &[Vec<Skeleton>],
    window: std::ops::Range<usize>,
    iou_threshold: f64,
) -> Vec<Tracklet> {
    let window = window.start.min(frames.len())..window.end.min(frames.len());
    let mut tracklets: Vec<Tracklet> = Vec::new();
    let mut last_bbox: Vec<BBox> = Vec::new();
    for t in window {
        let dets = &frames[t];
        if dets.is_empty() {
            continue;
        }
        // all candidate pairs sorted by descending IoU, deterministic ties
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (ti, bbox) in last_bbox.iter().enumerate() {
            for (di, det) in dets.iter().enumerate() {
                let v = iou(bbox, &det.bbox);
                if v >= iou_threshold {
                    pairs.push((v, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut track_used = vec![false; tracklets.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, ti, di) in pairs {
            if track_used[ti] || det_used[di] {
                continue;
            }
            track_used[ti] = true;
            det_used[di] = true;
            tracklets[ti].detections.push((t, di));
            last_bbox[ti] = dets[di].bbox;
        }
        for (di, det) in dets.iter().enumerate() {
            if !det_used[di] {
                tracklets.push(Tracklet {
                    detections: vec![(t, di)],
                });
                last_bbox.push(det.bbox);
            }
        }
    }
    tracklets
}

/// A linked tracklet materialized as model input: T frames of V×C joint
/// coordinates, zero-filled and masked where the tracklet has no detection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    /// Row-major [T, V, C].
    pub data: Vec<f64>,
    pub t: usize,
    pub v: usize,
    pub c: usize,
    pub valid_mask: Vec<bool>,
    pub center_bbox: BBox,
    /// Key-frame timestamp / num_frames, in [0,1].
    pub norm_time: f64,
    pub key_frame: usize,
    /// Ground-truth identity per frame when available (diagnostics only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_ids: Vec<Option<u64>>,
}

impl SkeletonSequence {
    pub fn num_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Majority-identity fraction over valid frames; None without ids.
    pub fn identity_purity(&self) -> Option<f64> {
        let ids: Vec<u64> = self.source_ids.iter().flatten().copied().collect();
        if ids.is_empty() {
            return None;
        }
        let mut counts = std::collections::HashMap::new();
        for id in &ids {
            *counts.entry(*id).or_insert(0usize) += 1;
        }
        let max = counts.values().max().copied().unwrap_or(0);
        Some(max as f64 / ids.len() as f64)
    }
}

/// Sequence sampling parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SequencingConfig {
    /// Sequence length in frames, >= 2. Odd lengths place the key frame at
    /// slot floor(T/2).
    pub t: usize,
    #[serde(default = "default_iou_threshold")]
    pub iou_threshold: f64,
}

fn default_iou_threshold() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

impl SequencingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::config(format!("T must be >= 2, got {}", self.t)));
        }
        Ok(())
    }
}

/// Key frames at stride T/2: 0, T/2, T, ... while < num_frames.
pub fn key_frames(num_frames: usize, t: usize) -> Vec<usize> {
    (0..num_frames).step_by((t / 2).max(1)).collect()
}

/// Builds one sequence per key-frame skeleton. The window is centered on
/// the key frame, [k - T/2, k + T/2), clipped at the video bounds; frames
/// without a linked detection are zero-filled and masked.
pub fn sample_sequences(
    video: &VideoRecord,
    v: usize,
    c: usize,
    cfg: &SequencingConfig,
) -> Result<Vec<SkeletonSequence>> {
    cfg.validate()?;
    let t = cfg.t;
    let half = t / 2;
    let mut sequences = Vec::new();
    for key in key_frames(video.num_frames, t) {
        let w_start = key.saturating_sub(half);
        let w_end = (key + (t - half)).min(video.num_frames);
        let tracklets = build_tracklets(&video.frames, w_start..w_end, cfg.iou_threshold);
        for (di, det) in video.frames[key].iter().enumerate() {
            let tracklet = tracklets
                .iter()
                .find(|tr| tr.detections.contains(&(key, di)))
                .expect("every detection belongs to exactly one tracklet");
            sequences.push(materialize(
                video, tracklet, det, key, t, half, v, c,
            )?);
        }
    }
    Ok(sequences)
}

#[allow(clippy::too_many_arguments)]
fn materialize(
    video: &VideoRecord,
    tracklet: &Tracklet,
    key_det: &Skeleton,
    key: usize,
    t: usize,
    half: usize,
    v: usize,
    c: usize,
) -> Result<SkeletonSequence> {
    let mut data = vec![0.0; t * v * c];
    let mut valid_mask = vec![false; t];
    let mut source_ids = vec![None; t];
    for &(frame, di) in &tracklet.detections {
        // local slot: window starts at key - half (possibly clipped at 0,
        // but slots always count from key - half)
        let slot = frame as isize - (key as isize - half as isize);
        if slot < 0 || slot >= t as isize {
            continue;
        }
        let slot = slot as usize;
        let skel = &video.frames[frame][di];
        if skel.joints.len() != v * c {
            return Err(Error::data(format!(
                "skeleton in frame {frame} has {} coords, expected {}",
                skel.joints.len(),
                v * c
            )));
        }
        data[slot * v * c..(slot + 1) * v * c].copy_from_slice(&skel.joints);
        valid_mask[slot] = true;
        source_ids[slot] = skel.track_id;
    }
    Ok(SkeletonSequence {
        data,
        t,
        v,
        c,
        valid_mask,
        center_bbox: key_det.bbox,
        norm_time: key as f64 / video.num_frames as f64,
        key_frame: key,
        source_ids,
    })
}

/// Sequence-count policy: a fixed M or an adaptive range.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MPolicy {
    Fixed { m: usize },
    Range { m_min: usize, m_max: usize },
}

impl MPolicy {
    pub fn validate(&self) -> Result<()> {
        match self {
            MPolicy::Fixed { m } if *m >= 1 => Ok(()),
            MPolicy::Range { m_min, m_max } if *m_min >= 1 && m_min <= m_max => Ok(()),
            _ => Err(Error::config(format!("bad M policy {self:?}"))),
        }
    }

    /// Per-batch draw used in training with an adaptive range.
    pub fn draw(&self, rng: &mut impl Rng) -> usize {
        match self {
            MPolicy::Fixed { m } => *m,
            MPolicy::Range { m_min, m_max } => rng.gen_range(*m_min..=*m_max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectMode {
    Train,
    Test,
}

/// The fixed-slot model input: M sequence slots (None = zero padding) with
/// the padding mask (true exactly on padded slots).
#[derive(Clone, Debug)]
pub struct ClipSample {
    pub sequences: Vec<Option<SkeletonSequence>>,
    pub pad_mask: Vec<bool>,
    pub labels: Option<ClipLabels>,
}

/// Task labels carried by a clip. Instance clips designate the query slot
/// (index into `sequences`) the targets belong to.
#[derive(Clone, Debug, PartialEq)]
pub enum ClipLabels {
    Video { class_id: usize },
    Group { class_id: usize },
    Instance { query: usize, targets: Vec<bool> },
}

impl ClipSample {
    pub fn m(&self) -> usize {
        self.sequences.len()
    }

    pub fn num_real(&self) -> usize {
        self.pad_mask.iter().filter(|&&p| !p).count()
    }
}

/// Subsamples or pads `sequences` to the policy's M.
///
/// Train mode: M̃ is drawn from the policy (per-batch callers pass a shared
/// seed so the whole batch uses one M̃) and the subsample is uniform without
/// replacement. Test mode: M = clamp(M', M_min, M_max); kept sequences are
/// ordered by (key_frame ascending, bbox area descending) so the result is
/// deterministic.
pub fn select_m(
    sequences: &[SkeletonSequence],
    policy: &MPolicy,
    seed: u64,
    mode: SelectMode,
) -> Result<ClipSample> {
    policy.validate()?;
    let m_prime = sequences.len();
    let mut order: Vec<usize> = (0..m_prime).collect();
    let target = match mode {
        SelectMode::Train => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = policy.draw(&mut rng);
            order.shuffle(&mut rng);
            m
        }
        SelectMode::Test => {
            order.sort_by(|&a, &b| {
                let (sa, sb) = (&sequences[a], &sequences[b]);
                sa.key_frame
                    .cmp(&sb.key_frame)
                    .then(
                        sb.center_bbox
                            .area()
                            .partial_cmp(&sa.center_bbox.area())
                            .unwrap_or(std::cmp::Ordering::Equal),
                    )
                    .then(a.cmp(&b))
            });
            match policy {
                MPolicy::Fixed { m } => *m,
                MPolicy::Range { m_min, m_max } => m_prime.clamp(*m_min, *m_max),
            }
        }
    };
    let kept = order.into_iter().take(target);
    let mut slots: Vec<Option<SkeletonSequence>> = kept
        .map(|i| Some(sequences[i].clone()))
        .collect();
    slots.resize(target, None);
    let pad_mask: Vec<bool> = slots.iter().map(|s| s.is_none()).collect();
    Ok(ClipSample {
        sequences: slots,
        pad_mask,
        labels: None,
    })
}

/// Prior-practice baseline: per frame keep the M̂ highest-scoring skeletons;
/// the rank-k skeletons across frames form sequence k over the whole video.
pub fn score_based_baseline(
    video: &VideoRecord,
    m_hat: usize,
    v: usize,
    c: usize,
) -> Vec<SkeletonSequence> {
    let t_full = video.num_frames;
    let mut sequences: Vec<SkeletonSequence> = (0..m_hat)
        .map(|_| SkeletonSequence {
            data: vec![0.0; t_full * v * c],
            t: t_full,
            v,
            c,
            valid_mask: vec![false; t_full],
            center_bbox: BBox::zero(),
            norm_time: 0.5,
            key_frame: t_full / 2,
            source_ids: vec![None; t_full],
        })
        .collect();
    for (t, frame) in video.frames.iter().enumerate() {
        let mut ranked: Vec<usize> = (0..frame.len()).collect();
        ranked.sort_by(|&a, &b| {
            frame[b]
                .detector_score
                .partial_cmp(&frame[a].detector_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for (rank, &di) in ranked.iter().take(m_hat).enumerate() {
            let skel = &frame[di];
            let seq = &mut sequences[rank];
            seq.data[t * v * c..(t + 1) * v * c].copy_from_slice(&skel.joints);
            seq.valid_mask[t] = true;
            seq.source_ids[t] = skel.track_id;
            if seq.center_bbox == BBox::zero() {
                seq.center_bbox = skel.bbox;
            }
        }
    }
    sequences
}

/// Mean identity purity over sequences that carry ground-truth ids.
pub fn mean_identity_purity(sequences: &[SkeletonSequence]) -> Option<f64> {
    let purities: Vec<f64> = sequences.iter().filter_map(|s| s.identity_purity()).collect();
    if purities.is_empty() {
        None
    } else {
        Some(purities.iter().sum::<f64>() / purities.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;

    fn skel(t: usize, x: f64, y: f64, w: f64, h: f64, score: f64, id: u64) -> Skeleton {
        Skeleton {
            frame_index: t,
            joints: vec![x + w / 2.0, y + h / 2.0],
            joint_conf: vec![1.0],
            bbox: BBox::new(x, y, x + w, y + h).unwrap(),
            detector_score: score,
            track_id: Some(id),
        }
    }

    fn video(frames: Vec<Vec<Skeleton>>) -> VideoRecord {
        VideoRecord {
            video_id: "t".into(),
            fps: 10.0,
            num_frames: frames.len(),
            frames,
            labels: Labels::Video { class_id: 0 },
        }
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = BBox::new(0.1, 0.1, 0.3, 0.3).unwrap();
        let b = BBox::new(0.5, 0.5, 0.7, 0.7).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_matches_unit_grid_oracle() {
        // (0,0,10,10) vs (5,0,15,10): brute-force count of unit cells
        let a = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = BBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
        let mut inter = 0usize;
        let mut union = 0usize;
        for i in 0..15 {
            for j in 0..10 {
                let (cx, cy) = (i as f64 + 0.5, j as f64 + 0.5);
                let in_a = cx > a.x_min && cx < a.x_max && cy > a.y_min && cy < a.y_max;
                let in_b = cx > b.x_min && cx < b.x_max && cy > b.y_min && cy < b.y_max;
                if in_a && in_b {
                    inter += 1;
                }
                if in_a || in_b {
                    union += 1;
                }
            }
        }
        assert_eq!((inter, union), (50, 150));
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_person_yields_single_tracklet() {
        let frames: Vec<Vec<Skeleton>> = (0..10)
            .map(|t| vec![skel(t, 0.4, 0.4, 0.2, 0.2, 0.9, 0)])
            .collect();
        let tracklets = build_tracklets(&frames, 0..10, 0.3);
        assert_eq!(tracklets.len(), 1);
        assert_eq!(tracklets[0].detections.len(), 10);
    }

    #[test]
    fn disjoint_persons_stay_separate() {
        let frames: Vec<Vec<Skeleton>> = (0..8)
            .map(|t| {
                vec![
                    skel(t, 0.1, 0.1, 0.15, 0.3, 0.9, 0),
                    skel(t, 0.7, 0.5, 0.15, 0.3, 0.8, 1),
                ]
            })
            .collect();
        let tracklets = build_tracklets(&frames, 0..8, 0.3);
        assert_eq!(tracklets.len(), 2);
        for tr in &tracklets {
            let ids: Vec<u64> = tr
                .detections
                .iter()
                .map(|&(t, d)| frames[t][d].track_id.unwrap())
                .collect();
            assert!(ids.windows(2).all(|w| w[0] == w[1]), "identity mixed: {ids:?}");
        }
    }

    #[test]
    fn gap_with_low_iou_splits_tracklet() {
        // person present frames 0-4 around x=0.1, missing frame 5,
        // reappears frames 6-9 at x=0.6 (zero IoU across the gap)
        let mut frames: Vec<Vec<Skeleton>> = Vec::new();
        for t in 0..10 {
            if t == 5 {
                frames.push(vec![]);
            } else if t < 5 {
                frames.push(vec![skel(t, 0.1, 0.1, 0.2, 0.3, 0.9, 0)]);
            } else {
                frames.push(vec![skel(t, 0.6, 0.1, 0.2, 0.3, 0.9, 0)]);
            }
        }
        let tracklets = build_tracklets(&frames, 0..10, 0.3);
        assert_eq!(tracklets.len(), 2);
        assert_eq!(tracklets[0].detections.len(), 5);
        assert_eq!(tracklets[1].detections.len(), 4);
    }

    #[test]
    fn gap_with_high_iou_is_bridged() {
        let mut frames: Vec<Vec<Skeleton>> = Vec::new();
        for t in 0..6 {
            if t == 3 {
                frames.push(vec![]);
            } else {
                frames.push(vec![skel(t, 0.4, 0.4, 0.2, 0.3, 0.9, 0)]);
            }
        }
        let tracklets = build_tracklets(&frames, 0..6, 0.3);
        assert_eq!(tracklets.len(), 1);
        assert_eq!(tracklets[0].detections.len(), 5);
    }

    #[test]
    fn key_frames_at_half_stride() {
        assert_eq!(key_frames(90, 30), vec![0, 15, 30, 45, 60, 75]);
        assert_eq!(key_frames(1, 30), vec![0]);
    }

    #[test]
    fn two_persons_every_key_frame_gives_twelve() {
        let frames: Vec<Vec<Skeleton>> = (0..90)
            .map(|t| {
                vec![
                    skel(t, 0.1, 0.1, 0.15, 0.3, 0.9, 0),
                    skel(t, 0.7, 0.5, 0.15, 0.3, 0.8, 1),
                ]
            })
            .collect();
        let video = video(frames);
        let cfg = SequencingConfig { t: 30, iou_threshold: 0.3 };
        let seqs = sample_sequences(&video, 1, 2, &cfg).unwrap();
        assert_eq!(seqs.len(), 12);
    }

    #[test]
    fn one_frame_video_mostly_masked() {
        let video = video(vec![vec![skel(0, 0.4, 0.4, 0.2, 0.2, 0.9, 0)]]);
        let cfg = SequencingConfig { t: 30, iou_threshold: 0.3 };
        let seqs = sample_sequences(&video, 1, 2, &cfg).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].num_valid(), 1);
        assert_eq!(seqs[0].valid_mask.len(), 30);
        // key frame 0 sits at the window center slot T/2
        assert!(seqs[0].valid_mask[15]);
        assert_eq!(seqs[0].key_frame, 0);
        assert_eq!(seqs[0].norm_time, 0.0);
    }

    #[test]
    fn empty_video_gives_no_sequences() {
        let video = video(vec![vec![]; 20]);
        let cfg = SequencingConfig { t: 10, iou_threshold: 0.3 };
        let seqs = sample_sequences(&video, 1, 2, &cfg).unwrap();
        assert!(seqs.is_empty());
    }

    fn dummy_sequences(n: usize) -> Vec<SkeletonSequence> {
        (0..n)
            .map(|i| SkeletonSequence {
                data: vec![i as f64; 2],
                t: 1,
                v: 1,
                c: 2,
                valid_mask: vec![true],
                center_bbox: BBox::new(0.0, 0.0, 0.1 + i as f64 * 0.01, 0.1).unwrap(),
                norm_time: i as f64 / n as f64,
                key_frame: i,
                source_ids: vec![Some(i as u64)],
            })
            .collect()
    }

    #[test]
    fn select_m_pads_to_fixed() {
        let seqs = dummy_sequences(12);
        let clip = select_m(&seqs, &MPolicy::Fixed { m: 20 }, 0, SelectMode::Test).unwrap();
        assert_eq!(clip.m(), 20);
        assert_eq!(clip.num_real(), 12);
        for (slot, padded) in clip.sequences.iter().zip(&clip.pad_mask) {
            assert_eq!(slot.is_none(), *padded);
        }
    }

    #[test]
    fn select_m_test_uses_actual_count_in_range() {
        let seqs = dummy_sequences(12);
        let clip = select_m(
            &seqs,
            &MPolicy::Range { m_min: 5, m_max: 20 },
            0,
            SelectMode::Test,
        )
        .unwrap();
        assert_eq!(clip.m(), 12);
        assert_eq!(clip.num_real(), 12);
    }

    #[test]
    fn select_m_test_caps_at_max() {
        let seqs = dummy_sequences(50);
        let clip = select_m(
            &seqs,
            &MPolicy::Range { m_min: 5, m_max: 40 },
            0,
            SelectMode::Test,
        )
        .unwrap();
        assert_eq!(clip.m(), 40);
        assert_eq!(clip.num_real(), 40);
    }

    #[test]
    fn select_m_test_is_deterministic() {
        let seqs = dummy_sequences(9);
        let a = select_m(&seqs, &MPolicy::Range { m_min: 2, m_max: 12 }, 1, SelectMode::Test)
            .unwrap();
        let b = select_m(&seqs, &MPolicy::Range { m_min: 2, m_max: 12 }, 99, SelectMode::Test)
            .unwrap();
        assert_eq!(format!("{:?}", a.sequences), format!("{:?}", b.sequences));
    }

    #[test]
    fn baseline_single_person_matches_track() {
        let frames: Vec<Vec<Skeleton>> = (0..6)
            .map(|t| vec![skel(t, 0.2, 0.2, 0.2, 0.3, 0.9, 7)])
            .collect();
        let video = video(frames.clone());
        let seqs = score_based_baseline(&video, 2, 1, 2);
        assert_eq!(seqs.len(), 2);
        assert!(seqs[0].valid_mask.iter().all(|&m| m));
        for t in 0..6 {
            assert_eq!(
                &seqs[0].data[t * 2..(t + 1) * 2],
                frames[t][0].joints.as_slice()
            );
        }
        // only one person: rank-2 sequence stays all zeros
        assert!(seqs[1].data.iter().all(|&x| x == 0.0));
        assert_eq!(seqs[1].num_valid(), 0);
    }

    #[test]
    fn rank_swap_mixes_identities_while_iou_does_not() {
        // two stationary persons whose detector-score ranking swaps mid-video
        let frames: Vec<Vec<Skeleton>> = (0..10)
            .map(|t| {
                let (s0, s1) = if t < 5 { (0.9, 0.6) } else { (0.6, 0.9) };
                vec![
                    skel(t, 0.1, 0.1, 0.15, 0.3, s0, 0),
                    skel(t, 0.7, 0.5, 0.15, 0.3, s1, 1),
                ]
            })
            .collect();
        let video = video(frames);
        let rank_seqs = score_based_baseline(&video, 2, 1, 2);
        let rank_purity = mean_identity_purity(&rank_seqs).unwrap();
        assert!((rank_purity - 0.5).abs() < 1e-9, "rank purity {rank_purity}");
        let tracklets = build_tracklets(&video.frames, 0..10, 0.3);
        assert_eq!(tracklets.len(), 2);
        for tr in &tracklets {
            let ids: std::collections::HashSet<u64> = tr
                .detections
                .iter()
                .map(|&(t, d)| video.frames[t][d].track_id.unwrap())
                .collect();
            assert_eq!(ids.len(), 1);
        }
    }
}

//! Synthetic multi-person skeleton videos with known labels.
//!
//! Each class names a scenario built from a small motion vocabulary
//! (stationary, straight walk, approach-and-meet, parallel walk, cross,
//! follow). Relational scenarios are constructed so that per-person motion
//! statistics match across classes — walk directions, lengths and stop
//! times are drawn from the same distributions — and only the joint
//! geometry (do the two paths meet?) carries the label. Labels are
//! recoverable from the noiseless trajectories by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{BBox, Dataset, Labels, Proposal, Skeleton, VideoRecord, SCHEMA_VERSION};
use crate::error::{Error, Result};

/// Per-person motion kinds; the instance-task label space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonMotion {
    Stationary = 0,
    Walk = 1,
    Approach = 2,
    Cross = 3,
    Follow = 4,
}

pub const NUM_MOTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Stationary,
    StraightWalk,
    ParallelWalk,
    ApproachAndMeet,
    Cross,
    Follow,
}

impl Scenario {
    fn needs_pair(&self) -> bool {
        matches!(
            self,
            Scenario::ParallelWalk | Scenario::ApproachAndMeet | Scenario::Cross | Scenario::Follow
        )
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub scenario: Scenario,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Video,
    Instance,
    Group,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_videos: usize,
    /// Inclusive [min, max] persons per video.
    pub persons: (usize, usize),
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_v")]
    pub v: usize,
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default)]
    pub jitter_std: f64,
    #[serde(default)]
    pub dropout_prob: f64,
    pub label_mode: LabelMode,
    pub classes: Vec<ClassSpec>,
    /// Frames between instance proposals (default: one per second).
    #[serde(default)]
    pub proposal_stride: usize,
}

fn default_fps() -> f64 {
    8.0
}
fn default_v() -> usize {
    17
}
fn default_layout() -> String {
    "coco17".into()
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        match self.label_mode {
            LabelMode::Video | LabelMode::Group => self.classes.len(),
            LabelMode::Instance => NUM_MOTIONS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("synth spec has no classes"));
        }
        if self.persons.0 == 0 || self.persons.0 > self.persons.1 {
            return Err(Error::config(format!(
                "bad persons range {:?}",
                self.persons
            )));
        }
        if self.frames < 2 {
            return Err(Error::config("need at least 2 frames"));
        }
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::config(format!(
                "dropout probability {} outside [0,1]",
                self.dropout_prob
            )));
        }
        if self.jitter_std < 0.0 {
            return Err(Error::config("negative jitter"));
        }
        for class in &self.classes {
            if class.scenario.needs_pair() && self.persons.0 < 2 {
                return Err(Error::config(format!(
                    "class '{}' needs at least 2 persons but persons range is {:?}",
                    class.name, self.persons
                )));
            }
        }
        if self.v != 17 && self.v != 1 {
            return Err(Error::config(format!(
                "generator supports V=17 (coco17) or V=1 (single), got {}",
                self.v
            )));
        }
        Ok(())
    }
}

/// One person's noiseless trajectory plus motion-kind tags.
struct Track {
    centers: Vec<(f64, f64)>,
    height: f64,
    kinds: Vec<PersonMotion>,
}

/// Deterministic generation: same (spec, seed) gives an identical dataset.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut videos = Vec::with_capacity(spec.num_videos);
    for vid in 0..spec.num_videos {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(vid as u64 + 1);
        videos.push(generate_video(spec, vid, &mut rng)?);
    }
    Ok(Dataset {
        schema_version: SCHEMA_VERSION,
        v: spec.v,
        c: 2,
        num_classes: spec.num_classes(),
        layout: spec.layout.clone(),
        videos,
    })
}

fn generate_video(spec: &SynthSpec, vid: usize, rng: &mut ChaCha8Rng) -> Result<VideoRecord> {
    let class_id = rng.gen_range(0..spec.classes.len());
    let scenario = spec.classes[class_id].scenario;
    let n_persons = rng.gen_range(spec.persons.0..=spec.persons.1);
    let tracks = build_tracks(scenario, n_persons, spec.frames, rng);

    let mut frames: Vec<Vec<Skeleton>> = vec![Vec::new(); spec.frames];
    for (pid, track) in tracks.iter().enumerate() {
        let mut walked = 0.0;
        for t in 0..spec.frames {
            if t > 0 {
                let (cx, cy) = track.centers[t];
                let (px, py) = track.centers[t - 1];
                walked += ((cx - px).powi(2) + (cy - py).powi(2)).sqrt();
            }
            if rng.gen_bool(spec.dropout_prob.min(1.0)) {
                continue;
            }
            let skel = render_skeleton(spec, track, pid as u64, t, walked, rng);
            frames[t].push(skel);
        }
    }

    let labels = match spec.label_mode {
        LabelMode::Video => Labels::Video { class_id },
        LabelMode::Group => Labels::Group { class_id },
        LabelMode::Instance => {
            let stride = if spec.proposal_stride > 0 {
                spec.proposal_stride
            } else {
                (spec.fps.round() as usize).max(1)
            };
            let mut proposals = Vec::new();
            let mut t = stride / 2;
            while t < spec.frames {
                for skel in &frames[t] {
                    let pid = skel.track_id.expect("generator sets track ids") as usize;
                    let mut targets = vec![false; NUM_MOTIONS];
                    for kind in &tracks[pid].kinds {
                        targets[*kind as usize] = true;
                    }
                    proposals.push(Proposal {
                        frame: t,
                        bbox: skel.bbox,
                        targets,
                    });
                }
                t += stride;
            }
            Labels::Instance { proposals }
        }
    };

    Ok(VideoRecord {
        video_id: format!("synth{vid:05}"),
        fps: spec.fps,
        num_frames: spec.frames,
        frames,
        labels,
    })
}

// ── trajectory construction ──────────────────────────────────────────────

const ARENA_MIN: f64 = 0.08;
const ARENA_MAX: f64 = 0.92;

fn clamp_xy(p: (f64, f64)) -> (f64, f64) {
    (p.0.clamp(ARENA_MIN, ARENA_MAX), p.1.clamp(ARENA_MIN, ARENA_MAX))
}

/// Shared walk-parameter distribution so that per-person statistics are the
/// same across relational classes.
struct WalkParams {
    length: f64,
    stop_frac: f64,
    theta: f64,
}

fn sample_walk_params(rng: &mut ChaCha8Rng) -> WalkParams {
    WalkParams {
        length: rng.gen_range(0.24..0.42),
        stop_frac: rng.gen_range(0.55..0.8),
        theta: rng.gen_range(0.0..std::f64::consts::TAU),
    }
}

/// Linear walk from `start` toward `dir`, stopping after `stop_frac` of the
/// clip, then standing.
fn walk_then_stand(
    start: (f64, f64),
    theta: f64,
    length: f64,
    stop_frac: f64,
    frames: usize,
) -> Vec<(f64, f64)> {
    let stop = ((frames as f64 - 1.0) * stop_frac).max(1.0);
    (0..frames)
        .map(|t| {
            let progress = (t as f64 / stop).min(1.0);
            clamp_xy((
                start.0 + theta.cos() * length * progress,
                start.1 + theta.sin() * length * progress,
            ))
        })
        .collect()
}

fn build_tracks(
    scenario: Scenario,
    n_persons: usize,
    frames: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Track> {
    let mut tracks: Vec<Track> = Vec::with_capacity(n_persons);
    let heights: Vec<f64> = (0..n_persons).map(|_| rng.gen_range(0.16..0.24)).collect();

    match scenario {
        Scenario::Stationary => {
            for h in heights {
                let pos = random_spot(rng, &tracks);
                tracks.push(Track {
                    centers: vec![pos; frames],
                    height: h,
                    kinds: vec![PersonMotion::Stationary],
                });
            }
        }
        Scenario::StraightWalk => {
            for h in heights {
                let p = sample_walk_params(rng);
                let start = random_spot(rng, &tracks);
                tracks.push(Track {
                    centers: walk_then_stand(start, p.theta, p.length, p.stop_frac, frames),
                    height: h,
                    kinds: vec![PersonMotion::Walk],
                });
            }
        }
        Scenario::ParallelWalk => {
            // the pair shares direction, length and stop time; paths stay
            // separated by a fixed perpendicular offset
            let p = sample_walk_params(rng);
            let sep = rng.gen_range(0.22..0.38);
            let base = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
            let normal = (-(p.theta.sin()), p.theta.cos());
            for i in 0..2 {
                let sgn = if i == 0 { 0.5 } else { -0.5 };
                let start = clamp_xy((
                    base.0 + normal.0 * sep * sgn - p.theta.cos() * p.length * 0.5,
                    base.1 + normal.1 * sep * sgn - p.theta.sin() * p.length * 0.5,
                ));
                tracks.push(Track {
                    centers: walk_then_stand(start, p.theta, p.length, p.stop_frac, frames),
                    height: heights[i],
                    kinds: vec![PersonMotion::Walk],
                });
            }
            extras_walk(&heights[2..], frames, rng, &mut tracks);
        }
        Scenario::ApproachAndMeet => {
            // both reach the meet point when the shared stop time hits
            let meet = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
            let stop_frac = rng.gen_range(0.55..0.8);
            let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
            for i in 0..2 {
                let length = rng.gen_range(0.24..0.42);
                let theta = if i == 0 {
                    theta0
                } else {
                    theta0 + std::f64::consts::PI + rng.gen_range(-0.5..0.5)
                };
                // walk direction points at the meet point
                let start = clamp_xy((
                    meet.0 - theta.cos() * length,
                    meet.1 - theta.sin() * length,
                ));
                tracks.push(Track {
                    centers: walk_then_stand(start, theta, length, stop_frac, frames),
                    height: heights[i],
                    kinds: vec![PersonMotion::Walk, PersonMotion::Approach],
                });
            }
            extras_walk(&heights[2..], frames, rng, &mut tracks);
        }
        Scenario::Cross => {
            // both pass through a common point at the same time and keep going
            let cross = (rng.gen_range(0.38..0.62), rng.gen_range(0.38..0.62));
            let t_cross = rng.gen_range(0.4..0.6);
            let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
            for i in 0..2 {
                let theta = if i == 0 {
                    theta0
                } else {
                    theta0 + rng.gen_range(1.2..1.9) // 70°..110° apart
                };
                let speed = rng.gen_range(0.28..0.4); // path length over the clip
                let centers: Vec<(f64, f64)> = (0..frames)
                    .map(|t| {
                        let s = (t as f64 / (frames as f64 - 1.0) - t_cross) * speed;
                        clamp_xy((cross.0 + theta.cos() * s, cross.1 + theta.sin() * s))
                    })
                    .collect();
                tracks.push(Track {
                    centers,
                    height: heights[i],
                    kinds: vec![PersonMotion::Walk, PersonMotion::Cross],
                });
            }
            extras_walk(&heights[2..], frames, rng, &mut tracks);
        }
        Scenario::Follow => {
            let p = sample_walk_params(rng);
            let start = random_spot(rng, &tracks);
            let leader = walk_then_stand(start, p.theta, p.length, 1.0, frames);
            let lag = ((frames as f64) * rng.gen_range(0.15..0.3)) as usize;
            let offset = 0.08;
            let follower: Vec<(f64, f64)> = (0..frames)
                .map(|t| {
                    let src = leader[t.saturating_sub(lag)];
                    clamp_xy((
                        src.0 - p.theta.cos() * offset,
                        src.1 - p.theta.sin() * offset,
                    ))
                })
                .collect();
            tracks.push(Track {
                centers: leader,
                height: heights[0],
                kinds: vec![PersonMotion::Walk],
            });
            tracks.push(Track {
                centers: follower,
                height: heights[1],
                kinds: vec![PersonMotion::Walk, PersonMotion::Follow],
            });
            extras_walk(&heights[2..], frames, rng, &mut tracks);
        }
    }
    tracks
}

fn extras_walk(heights: &[f64], frames: usize, rng: &mut ChaCha8Rng, tracks: &mut Vec<Track>) {
    for &h in heights {
        let p = sample_walk_params(rng);
        let start = random_spot(rng, tracks);
        tracks.push(Track {
            centers: walk_then_stand(start, p.theta, p.length, p.stop_frac, frames),
            height: h,
            kinds: vec![PersonMotion::Walk],
        });
    }
}

/// Random position keeping some distance from existing tracks' starts.
fn random_spot(rng: &mut ChaCha8Rng, existing: &[Track]) -> (f64, f64) {
    for _ in 0..32 {
        let p = (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85));
        let clear = existing.iter().all(|t| {
            let q = t.centers[0];
            (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) > 0.05
        });
        if clear {
            return p;
        }
    }
    (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85))
}

// ── skeleton rendering ───────────────────────────────────────────────────

/// COCO-17 template offsets in person-height units (x right, y down).
const TEMPLATE17: [(f64, f64); 17] = [
    (0.00, -0.42),
    (0.03, -0.45),
    (-0.03, -0.45),
    (0.06, -0.43),
    (-0.06, -0.43),
    (0.14, -0.28),
    (-0.14, -0.28),
    (0.20, -0.08),
    (-0.20, -0.08),
    (0.23, 0.10),
    (-0.23, 0.10),
    (0.08, 0.02),
    (-0.08, 0.02),
    (0.09, 0.26),
    (-0.09, 0.26),
    (0.10, 0.48),
    (-0.10, 0.48),
];

fn render_skeleton(
    spec: &SynthSpec,
    track: &Track,
    pid: u64,
    t: usize,
    walked: f64,
    rng: &mut ChaCha8Rng,
) -> Skeleton {
    let (cx, cy) = track.centers[t];
    let h = track.height;
    let phase = std::f64::consts::TAU * walked / (0.5 * h);
    let swing = phase.sin();
    let mut joints = Vec::with_capacity(spec.v * 2);
    if spec.v == 17 {
        for (j, (dx, dy)) in TEMPLATE17.iter().enumerate() {
            let gait = match j {
                15 => 0.06 * swing,  // l-ankle
                16 => -0.06 * swing, // r-ankle
                13 => 0.03 * swing,
                14 => -0.03 * swing,
                9 => -0.05 * swing, // arms counter-swing
                10 => 0.05 * swing,
                7 => -0.02 * swing,
                8 => 0.02 * swing,
                _ => 0.0,
            };
            let x = cx + (dx + gait) * h + rng.gen_range(-1.0..1.0) * spec.jitter_std;
            let y = cy + dy * h + rng.gen_range(-1.0..1.0) * spec.jitter_std;
            joints.push(x.clamp(0.0, 1.0));
            joints.push(y.clamp(0.0, 1.0));
        }
    } else {
        let x = cx + rng.gen_range(-1.0..1.0) * spec.jitter_std;
        let y = cy + rng.gen_range(-1.0..1.0) * spec.jitter_std;
        joints.push(x.clamp(0.0, 1.0));
        joints.push(y.clamp(0.0, 1.0));
    }
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for pair in joints.chunks(2) {
        x_min = x_min.min(pair[0]);
        x_max = x_max.max(pair[0]);
        y_min = y_min.min(pair[1]);
        y_max = y_max.max(pair[1]);
    }
    let margin = 0.02 * h;
    let bbox = BBox {
        x_min: (x_min - margin).max(0.0),
        y_min: (y_min - margin).max(0.0),
        x_max: (x_max + margin).min(1.0),
        y_max: (y_max + margin).min(1.0),
    };
    let joint_conf = (0..spec.v).map(|_| rng.gen_range(0.85..1.0)).collect();
    Skeleton {
        frame_index: t,
        joints,
        joint_conf,
        bbox,
        detector_score: rng.gen_range(0.5..1.0),
        track_id: Some(pid),
    }
}

// ── trajectory-level oracle ──────────────────────────────────────────────

/// Hand-written distance-trend classifier: true when the two tracked
/// persons approach and meet (min distance small, distance shrinking),
/// false for parallel-style motion. Reads only the raw trajectories, not
/// any model component.
pub fn distance_trend_label(video: &VideoRecord) -> Option<bool> {
    let mut by_id: std::collections::BTreeMap<u64, Vec<(usize, f64, f64)>> =
        std::collections::BTreeMap::new();
    for frame in &video.frames {
        for s in frame {
            let id = s.track_id?;
            let (cx, cy) = s.bbox.center();
            by_id.entry(id).or_default().push((s.frame_index, cx, cy));
        }
    }
    if by_id.len() < 2 {
        return None;
    }
    let ids: Vec<u64> = by_id.keys().copied().take(2).collect();
    let a = &by_id[&ids[0]];
    let b = &by_id[&ids[1]];
    let mut dists = Vec::new();
    for (t, ax, ay) in a {
        if let Some((_, bx, by)) = b.iter().find(|(tb, _, _)| tb == t) {
            dists.push(((ax - bx).powi(2) + (ay - by).powi(2)).sqrt());
        }
    }
    if dists.len() < 2 {
        return None;
    }
    let first = dists[0];
    let min = dists.iter().cloned().fold(f64::MAX, f64::min);
    Some(min < 0.1 && min < first * 0.5)
}

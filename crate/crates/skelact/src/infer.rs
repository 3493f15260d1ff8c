//! Sliding-window inference over untrimmed videos: windows step by a fixed
//! interval, every window containing a proposal's key frame scores it, and
//! the final per-proposal score is the arithmetic mean over those windows.

use serde::Serialize;
use tapegrad::Tape;

use crate::data::Labels;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::params::Bindings;
use crate::pipeline::{build_instance_clip, PreparedDataset};
use crate::sequencing::MPolicy;

/// Window start times (seconds): 0, step, 2·step, ... while the window
/// still fits inside the video.
pub fn window_starts(duration_s: f64, window_s: f64, step_s: f64) -> Vec<f64> {
    let mut starts = Vec::new();
    let mut s = 0.0;
    let eps = 1e-9;
    while s + window_s <= duration_s + eps {
        starts.push(s);
        s += step_s;
    }
    starts
}

#[derive(Clone, Debug, Serialize)]
pub struct ProposalScores {
    pub video: usize,
    pub proposal: usize,
    pub windows_used: usize,
    /// Mean per-class sigmoid scores over the contributing windows.
    pub scores: Vec<f64>,
}

/// Scores every proposal of every instance-labeled video.
pub fn sliding_window_infer(
    model: &Model,
    prepared: &PreparedDataset,
    head_idx: usize,
    policy: &MPolicy,
    window_s: f64,
    step_s: f64,
) -> Result<Vec<ProposalScores>> {
    if window_s <= 0.0 || step_s <= 0.0 {
        return Err(Error::config("window and step must be positive seconds"));
    }
    let mut out = Vec::new();
    for (vi, video) in prepared.videos.iter().enumerate() {
        let proposals = match &video.labels {
            Labels::Instance { proposals } => proposals,
            _ => continue,
        };
        let duration = video.num_frames as f64 / video.fps;
        let starts = window_starts(duration, window_s, step_s);
        for (pi, proposal) in proposals.iter().enumerate() {
            let key_time = proposal.frame as f64 / video.fps;
            let mut acc: Option<Vec<f64>> = None;
            let mut used = 0usize;
            for &start in &starts {
                if !(start <= key_time && key_time < start + window_s) {
                    continue;
                }
                let w_start = (start * video.fps).round() as usize;
                let w_end = (((start + window_s) * video.fps).round() as usize)
                    .min(video.num_frames);
                let clip = match build_instance_clip(
                    video,
                    proposal,
                    w_start..w_end,
                    policy,
                    0,
                    crate::sequencing::SelectMode::Test,
                )? {
                    Some(c) => c,
                    None => continue,
                };
                let mut tape = Tape::new();
                let binds = Bindings::bind_frozen(&model.store, &mut tape);
                let mut ctx = ForwardCtx::eval();
                let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx)?;
                let logits = model.instance_logits_for(&mut tape, &binds, &fwd, head_idx, 0)?;
                let probs = crate::heads::sigmoid_vec(tape.data(logits));
                match &mut acc {
                    Some(a) => {
                        for (av, p) in a.iter_mut().zip(&probs) {
                            *av += p;
                        }
                    }
                    None => acc = Some(probs),
                }
                used += 1;
            }
            let mut scores = acc.ok_or_else(|| {
                Error::data(format!(
                    "proposal {pi} of video {vi} (key frame {}) falls outside every window",
                    proposal.frame
                ))
            })?;
            for s in scores.iter_mut() {
                *s /= used as f64;
            }
            out.push(ProposalScores {
                video: vi,
                proposal: pi,
                windows_used: used,
                scores,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_windows_for_five_second_window_over_ten_seconds() {
        let starts = window_starts(10.0, 5.0, 1.0);
        assert_eq!(starts.len(), 6);
        assert_eq!(starts[0], 0.0);
        assert_eq!(starts[5], 5.0);
    }

    #[test]
    fn window_longer_than_video_gives_none() {
        assert!(window_starts(3.0, 5.0, 1.0).is_empty());
        // exact fit: one window
        assert_eq!(window_starts(5.0, 5.0, 1.0).len(), 1);
    }
}

//! Evaluation: ranked top-k with a deterministic tie-break (lower class
//! index wins), per-class average precision by all-points interpolation,
//! mAP over classes with positives, and a confusion summary for
//! single-label tasks. Side-effect free and deterministic.

use serde::Serialize;
use tapegrad::Tape;

use crate::error::Result;
use crate::heads::{sigmoid_vec, softmax_vec, LossKind};
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::params::Bindings;
use crate::pipeline::{build_clip, PreparedDataset, SampleRef};
use crate::sequencing::{ClipLabels, MPolicy, SelectMode};

#[derive(Clone, Debug, Default, Serialize)]
pub struct EvalReport {
    pub samples: usize,
    pub skipped: usize,
    pub mean_loss: f64,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub per_class_ap: Option<Vec<f64>>,
    pub map: Option<f64>,
    pub per_category_map: Option<Vec<(String, f64)>>,
    /// confusion[true][predicted] counts (single-label tasks).
    pub confusion: Option<Vec<Vec<usize>>>,
}

/// Probability-space scores plus ground truth for one sample.
#[derive(Clone, Debug)]
pub struct ScoredSample {
    pub probs: Vec<f64>,
    pub label: Option<usize>,
    pub targets: Option<Vec<bool>>,
}

/// Ranks class indices by descending score, ties to the lower class index.
pub fn rank_classes(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Average precision with all-points interpolation over a ranked list.
pub fn average_precision(ranked_positives: &[bool], total_positives: usize) -> f64 {
    if total_positives == 0 {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(ranked_positives.len());
    let mut tp = 0usize;
    for (i, &pos) in ranked_positives.iter().enumerate() {
        if pos {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
    }
    // interpolate: P_int(i) = max_{j>=i} P(j)
    let mut interp = precisions;
    for i in (0..interp.len().saturating_sub(1)).rev() {
        interp[i] = interp[i].max(interp[i + 1]);
    }
    let mut ap = 0.0;
    for (i, &pos) in ranked_positives.iter().enumerate() {
        if pos {
            ap += interp[i] / total_positives as f64;
        }
    }
    ap
}

/// Per-class AP over (score, is_positive) pairs ranked by descending score
/// with a deterministic tie-break on the insertion index.
pub fn class_ap(scores: &[(f64, bool)]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .0
            .partial_cmp(&scores[a].0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let ranked: Vec<bool> = idx.iter().map(|&i| scores[i].1).collect();
    let positives = ranked.iter().filter(|&&p| p).count();
    average_precision(&ranked, positives)
}

/// Optional grouping of classes for per-category mAP.
pub type Categories = Vec<(String, Vec<usize>)>;

/// Runs the model over every sample of the dataset and converts logits to
/// probability-space scores (softmax for single-label heads, sigmoid for
/// multi-label). None marks unmatchable samples.
pub fn score_samples(
    model: &Model,
    prepared: &PreparedDataset,
    head_idx: usize,
    policy: &MPolicy,
    window_frames: Option<usize>,
) -> Result<Vec<Option<ScoredSample>>> {
    let samples = prepared.samples();
    let loss_kind = model.heads[head_idx].spec.loss;
    let run_one = |sample: &SampleRef| -> Result<Option<ScoredSample>> {
        let clip = match build_clip(prepared, *sample, policy, 0, SelectMode::Test, window_frames)? {
            Some(c) => c,
            None => return Ok(None),
        };
        let mut tape = Tape::new();
        let binds = Bindings::bind_frozen(&model.store, &mut tape);
        let mut ctx = ForwardCtx::eval();
        let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx)?;
        let scored = match clip.labels.as_ref().expect("labeled clip") {
            ClipLabels::Video { class_id } | ClipLabels::Group { class_id } => {
                let logits = model.video_logits(&mut tape, &binds, &fwd, head_idx)?;
                let logits = tape.data(logits);
                let probs = match loss_kind {
                    LossKind::Ce => softmax_vec(logits),
                    LossKind::Bce => sigmoid_vec(logits),
                };
                ScoredSample {
                    probs,
                    label: Some(*class_id),
                    targets: None,
                }
            }
            ClipLabels::Instance { query, targets } => {
                let logits = model.instance_logits_for(&mut tape, &binds, &fwd, head_idx, *query)?;
                let logits = tape.data(logits);
                let probs = match loss_kind {
                    LossKind::Ce => softmax_vec(logits),
                    LossKind::Bce => sigmoid_vec(logits),
                };
                ScoredSample {
                    probs,
                    label: None,
                    targets: Some(targets.clone()),
                }
            }
        };
        Ok(Some(scored))
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        samples.par_iter().map(run_one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        samples.iter().map(run_one).collect()
    }
}

/// Builds the metric report from probability-space scores.
pub fn report_from_scores(
    scored: &[Option<ScoredSample>],
    k: usize,
    loss_kind: LossKind,
    categories: Option<&Categories>,
) -> EvalReport {
    let mut report = EvalReport {
        samples: scored.iter().filter(|o| o.is_some()).count(),
        skipped: scored.iter().filter(|o| o.is_none()).count(),
        ..Default::default()
    };
    if report.samples == 0 {
        return report;
    }
    let mut loss_sum = 0.0;
    match loss_kind {
        LossKind::Ce => {
            let mut top1 = 0usize;
            let mut top5 = 0usize;
            let mut confusion = vec![vec![0usize; k]; k];
            let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); k];
            for s in scored.iter().flatten() {
                let label = s.label.expect("single-label sample");
                loss_sum += -s.probs[label].max(1e-300).ln();
                let ranking = rank_classes(&s.probs);
                if ranking[0] == label {
                    top1 += 1;
                }
                if ranking.iter().take(5).any(|&c| c == label) {
                    top5 += 1;
                }
                confusion[label][ranking[0]] += 1;
                for (c, row) in per_class.iter_mut().enumerate() {
                    row.push((s.probs[c], c == label));
                }
            }
            let n = report.samples as f64;
            report.top1 = Some(top1 as f64 / n);
            report.top5 = Some(top5 as f64 / n);
            report.confusion = Some(confusion);
            fill_ap(&mut report, per_class, categories);
        }
        LossKind::Bce => {
            let mut per_class: Vec<Vec<(f64, bool)>> = vec![Vec::new(); k];
            for s in scored.iter().flatten() {
                let targets = s.targets.as_ref().expect("multi-label sample");
                for c in 0..k {
                    let t = if targets[c] { 1.0 } else { 0.0 };
                    let p = s.probs[c].clamp(1e-12, 1.0 - 1e-12);
                    loss_sum += -(t * p.ln() + (1.0 - t) * (1.0 - p).ln()) / k as f64;
                    per_class[c].push((s.probs[c], targets[c]));
                }
            }
            fill_ap(&mut report, per_class, categories);
        }
    }
    report.mean_loss = loss_sum / report.samples as f64;
    report
}

/// Scores then reports in one call.
pub fn evaluate(
    model: &Model,
    prepared: &PreparedDataset,
    head_idx: usize,
    policy: &MPolicy,
    window_frames: Option<usize>,
    categories: Option<&Categories>,
) -> Result<EvalReport> {
    let spec = &model.heads[head_idx].spec;
    let scored = score_samples(model, prepared, head_idx, policy, window_frames)?;
    Ok(report_from_scores(&scored, spec.classes, spec.loss, categories))
}

fn fill_ap(report: &mut EvalReport, per_class: Vec<Vec<(f64, bool)>>, categories: Option<&Categories>) {
    let aps: Vec<f64> = per_class.iter().map(|row| class_ap(row)).collect();
    let with_pos: Vec<usize> = per_class
        .iter()
        .enumerate()
        .filter(|(_, row)| row.iter().any(|(_, p)| *p))
        .map(|(c, _)| c)
        .collect();
    if !with_pos.is_empty() {
        report.map = Some(with_pos.iter().map(|&c| aps[c]).sum::<f64>() / with_pos.len() as f64);
    }
    if let Some(categories) = categories {
        let mut rows = Vec::new();
        for (name, classes) in categories {
            let present: Vec<usize> = classes
                .iter()
                .copied()
                .filter(|c| with_pos.contains(c))
                .collect();
            if !present.is_empty() {
                let m = present.iter().map(|&c| aps[c]).sum::<f64>() / present.len() as f64;
                rows.push((name.clone(), m));
            }
        }
        report.per_category_map = Some(rows);
    }
    report.per_class_ap = Some(aps);
}

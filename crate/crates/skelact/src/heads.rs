//! Task heads and losses: video/group prediction from the masked mean of
//! sequence features, instance prediction per sequence, cross-entropy and
//! binary cross-entropy with a weighted joint combination, and late fusion
//! of probability-space scores.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Var};

use crate::error::{Error, Result};
use crate::nn::LinearLayer;
use crate::params::{Bindings, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Video,
    Instance,
    Group,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Bce,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: TaskKind,
    pub classes: usize,
    pub loss: LossKind,
}

/// Joint-loss weighting: total = mean CE + lambda * mean BCE.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossSpec {
    pub lambda: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec { lambda: 100.0 }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

pub struct Head {
    pub spec: HeadSpec,
    fc: LinearLayer,
}

impl Head {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        spec: HeadSpec,
        feature_dim: usize,
    ) -> Self {
        let fc = LinearLayer::new(store, rng, name, feature_dim, spec.classes);
        Head { spec, fc }
    }

    /// Video/group: masked mean over sequences then affine; returns [1, K].
    /// Padded feature rows must already be zero, so extra padded slots are
    /// exact no-ops on the sum.
    pub fn video_logits(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        features: Var,
        pad_mask: &[bool],
    ) -> Result<Var> {
        let live = pad_mask.iter().filter(|&&p| !p).count();
        if live == 0 {
            return Err(Error::data("all sequences masked"));
        }
        let c = tape.shape(features)[1];
        let summed = tape.sum_axes(features, &[0])?;
        let mean = tape.scale(summed, 1.0 / live as f64)?;
        let mean = tape.reshape(mean, &[1, c])?;
        self.fc.forward(tape, binds, mean)
    }

    /// Instance: per-sequence affine map; returns [M, K]. Rows of padded
    /// slots are meaningless and must be excluded by the caller.
    pub fn instance_logits(
        &self,
        tape: &mut Tape,
        binds: &Bindings,
        features: Var,
    ) -> Result<Var> {
        self.fc.forward(tape, binds, features)
    }

    pub fn param_count(&self) -> u64 {
        self.fc.param_count()
    }
}

/// Mean cross entropy of logits [N, K] with one label per row.
pub fn ce_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    Ok(tape.cross_entropy(logits, labels)?)
}

/// Mean elementwise BCE of logits [N, K] on sigmoid outputs.
pub fn bce_loss(tape: &mut Tape, logits: Var, targets: &[bool]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let t: Vec<f64> = targets.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let tv = tape.constant(shape, t)?;
    Ok(tape.bce_with_logits(logits, tv)?)
}

/// total = ce + lambda * bce, either part optional.
pub fn joint_loss(
    tape: &mut Tape,
    ce: Option<Var>,
    bce: Option<Var>,
    spec: &LossSpec,
) -> Result<Var> {
    spec.validate()?;
    match (ce, bce) {
        (Some(ce), Some(bce)) => {
            let weighted = tape.scale(bce, spec.lambda)?;
            Ok(tape.add(ce, weighted)?)
        }
        (Some(ce), None) => Ok(ce),
        (None, Some(bce)) => Ok(tape.scale(bce, spec.lambda)?),
        (None, None) => Err(Error::data("joint loss needs at least one part")),
    }
}

/// Weighted average of two probability-space score vectors:
/// (a·s_a + b·s_b) / (a + b).
pub fn late_fuse(scores_a: &[f64], scores_b: &[f64], ratio: (f64, f64)) -> Result<Vec<f64>> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::data(format!(
            "late fusion needs equal K, got {} and {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    let (a, b) = ratio;
    if a < 0.0 || b < 0.0 || a + b <= 0.0 {
        return Err(Error::config(format!("bad fusion ratio {a}:{b}")));
    }
    Ok(scores_a
        .iter()
        .zip(scores_b)
        .map(|(&sa, &sb)| (a * sa + b * sb) / (a + b))
        .collect())
}

/// Softmax of a plain logit vector (probability-space scores for fusion
/// and ranking).
pub fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid_vec(logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .map(|&z| {
            if z >= 0.0 {
                1.0 / (1.0 + (-z).exp())
            } else {
                let e = z.exp();
                e / (1.0 + e)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(classes: usize, c: usize) -> (ParamStore, Head) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = Head::new(
            &mut store,
            &mut rng,
            "head.video",
            HeadSpec {
                task: TaskKind::Video,
                classes,
                loss: LossKind::Ce,
            },
            c,
        );
        (store, h)
    }

    #[test]
    fn identical_features_give_single_sequence_logits() {
        let (store, h) = head(4, 6);
        let feat: Vec<f64> = (0..6).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&feat);
        }
        let m5 = tape.constant(vec![5, 6], data).unwrap();
        let m1 = tape.constant(vec![1, 6], feat).unwrap();
        let multi = h.video_logits(&mut tape, &binds, m5, &[false; 5]).unwrap();
        let single = h.video_logits(&mut tape, &binds, m1, &[false]).unwrap();
        for (a, b) in tape.data(multi).iter().zip(tape.data(single)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn all_masked_is_an_error() {
        let (store, h) = head(4, 6);
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let x = tape.constant(vec![2, 6], vec![0.0; 12]).unwrap();
        assert!(h.video_logits(&mut tape, &binds, x, &[true, true]).is_err());
    }

    #[test]
    fn instance_logits_have_one_row_per_slot() {
        let (store, h) = head(3, 6);
        let mut tape = Tape::new();
        let binds = Bindings::bind_all(&store, &mut tape);
        let x = tape.constant(vec![4, 6], vec![0.1; 24]).unwrap();
        let logits = h.instance_logits(&mut tape, &binds, x).unwrap();
        assert_eq!(tape.shape(logits), &[4, 3]);
    }

    #[test]
    fn joint_loss_arithmetic() {
        // CE 1.0 and BCE 0.01 with lambda 100 totals exactly 2.0
        let mut tape = Tape::new();
        let ce = tape.constant(vec![], vec![1.0]).unwrap();
        let bce = tape.constant(vec![], vec![0.01]).unwrap();
        let total = joint_loss(&mut tape, Some(ce), Some(bce), &LossSpec { lambda: 100.0 }).unwrap();
        assert_eq!(tape.data(total)[0], 2.0);
    }

    #[test]
    fn late_fuse_examples() {
        assert_eq!(
            late_fuse(&[0.2, 0.8], &[0.2, 0.8], (1.0, 1.0)).unwrap(),
            vec![0.2, 0.8]
        );
        let fused = late_fuse(&[1.0, 0.0], &[0.0, 1.0], (2.0, 1.0)).unwrap();
        assert!((fused[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((fused[1] - 1.0 / 3.0).abs() < 1e-12);
        // 1:1 is commutative
        let ab = late_fuse(&[0.3, 0.7], &[0.6, 0.4], (1.0, 1.0)).unwrap();
        let ba = late_fuse(&[0.6, 0.4], &[0.3, 0.7], (1.0, 1.0)).unwrap();
        assert_eq!(ab, ba);
        assert!(late_fuse(&[0.1], &[0.1, 0.2], (1.0, 1.0)).is_err());
    }

    #[test]
    fn loss_gradients_are_tight() {
        use tapegrad::{grad_check, Tensor};
        let logits = Tensor::from_fn(vec![3, 4], |i| ((i as f64) * 0.37).sin())
            .with_requires_grad(true);
        let err = grad_check(|t, x| t.cross_entropy(x, &[1, 0, 3]), &logits, 1e-5).unwrap();
        assert!(err < 1e-5, "CE rel err {err}");
        let targets: Vec<f64> = (0..12).map(|i| ((i * 5) % 2) as f64).collect();
        let err = grad_check(
            |t, x| {
                let tv = t.constant(vec![3, 4], targets.clone())?;
                t.bce_with_logits(x, tv)
            },
            &logits,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "BCE rel err {err}");
    }
}

//! End-to-end training: SGD with momentum and weight decay, a multi-step
//! LR schedule, proportional interleaving of multiple datasets with a
//! weighted joint loss, and per-epoch loss curves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tapegrad::{Tape, Var};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::heads::{joint_loss, LossKind, LossSpec};
use crate::model::Model;
use crate::nn::{apply_bn_updates, ForwardCtx};
use crate::params::Bindings;
use crate::pipeline::{build_clip, PreparedDataset, SampleRef};
use crate::sequencing::{ClipLabels, MPolicy, SelectMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            base_lr: 0.1,
            milestones: vec![70, 85],
            lr_decay: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            lambda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if self
            .milestones
            .windows(2)
            .any(|w| w[0] >= w[1])
            || self.milestones.iter().any(|&m| m == 0 || m > self.epochs)
        {
            return Err(Error::config(format!(
                "milestones must be strictly increasing and within 1..={}",
                self.epochs
            )));
        }
        Ok(())
    }

    /// LR after the multi-step schedule: base · decay^(#milestones ≤ epoch).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.base_lr * self.lr_decay.powi(decays as i32)
    }
}

/// One dataset bound to one model head.
pub struct TrainTask {
    pub name: String,
    pub train: PreparedDataset,
    pub val: Option<PreparedDataset>,
    pub head_idx: usize,
    pub policy: MPolicy,
    pub window_frames: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub metric: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub rows: Vec<CurveRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,metric\n");
        for r in &self.rows {
            let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.loss, metric));
        }
        out
    }

    pub fn final_val_loss(&self, split: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.split == split)
            .map(|r| r.loss)
    }
}

struct Sgd {
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    fn new(model: &Model) -> Self {
        let velocity = (0..model.store.len())
            .map(|i| vec![0.0; model.store.get(crate::params::ParamId(i)).numel()])
            .collect();
        Sgd { velocity }
    }

    fn step(&mut self, model: &mut Model, tape: &Tape, binds: &Bindings, lr: f64, cfg: &TrainConfig) {
        for (id, var) in binds.iter() {
            let Some(grad) = tape.grad(var) else { continue };
            let vel = &mut self.velocity[id.0];
            let param = model.store.get_mut(id);
            let data = param.data_mut();
            for ((p, v), &g) in data.iter_mut().zip(vel.iter_mut()).zip(grad) {
                let g = g + cfg.weight_decay * *p;
                *v = cfg.momentum * *v + g;
                *p -= lr * *v;
            }
        }
    }
}

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 27;
    }
    h
}

/// Interleaves per-task sample lists proportionally to their sizes:
/// item j of a size-n list is keyed at (j + 0.5) / n and the union is
/// replayed in key order.
fn proportional_merge(lists: &[Vec<(usize, SampleRef)>]) -> Vec<(usize, SampleRef)> {
    let mut keyed: Vec<(f64, usize, usize)> = Vec::new();
    for (li, list) in lists.iter().enumerate() {
        let n = list.len().max(1) as f64;
        for (j, _) in list.iter().enumerate() {
            keyed.push(((j as f64 + 0.5) / n, li, j));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, li, j)| lists[li][j]).collect()
}

/// Trains the model in place. Deterministic for a fixed seed. Aborts with
/// a diagnostic when the loss turns non-finite.
pub fn train(model: &mut Model, tasks: &[TrainTask], cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::config("no training tasks"));
    }
    let loss_spec = LossSpec {
        lambda: cfg.lambda.unwrap_or(LossSpec::default().lambda),
    };
    loss_spec.validate()?;
    let mut opt = Sgd::new(model);
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64]));
        let mut lists: Vec<Vec<(usize, SampleRef)>> = Vec::new();
        for (ti, task) in tasks.iter().enumerate() {
            let mut samples: Vec<(usize, SampleRef)> = task
                .train
                .samples()
                .into_iter()
                .map(|s| (ti, s))
                .collect();
            samples.shuffle(&mut epoch_rng);
            lists.push(samples);
        }
        let order = proportional_merge(&lists);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            // one adaptive-M draw per task per batch
            let m_for_task: Vec<usize> = tasks
                .iter()
                .enumerate()
                .map(|(ti, task)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                        cfg.seed,
                        epoch as u64,
                        batch_idx as u64,
                        ti as u64,
                    ]));
                    task.policy.draw(&mut rng)
                })
                .collect();

            let mut tape = Tape::new();
            let binds = Bindings::bind_all(&model.store, &mut tape);
            let mut ctx = ForwardCtx::train();
            // per head: single-label rows + labels, multi-label rows + targets
            let mut ce_rows: Vec<(usize, Vec<Var>, Vec<usize>)> = Vec::new();
            let mut bce_rows: Vec<(usize, Vec<Var>, Vec<bool>)> = Vec::new();

            for (slot, (ti, sample)) in batch.iter().enumerate() {
                let task = &tasks[*ti];
                let policy = MPolicy::Fixed { m: m_for_task[*ti] };
                let seed = mix_seed(&[
                    cfg.seed,
                    epoch as u64,
                    batch_idx as u64,
                    slot as u64,
                    0xC11F,
                ]);
                let Some(clip) = build_clip(
                    &task.train,
                    *sample,
                    &policy,
                    seed,
                    SelectMode::Train,
                    task.window_frames,
                )?
                else {
                    continue;
                };
                if clip.num_real() == 0 {
                    continue;
                }
                let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx)?;
                let head = &model.heads[task.head_idx];
                match clip.labels.as_ref().expect("labeled clip") {
                    ClipLabels::Video { class_id } | ClipLabels::Group { class_id } => {
                        let logits = model.video_logits(&mut tape, &binds, &fwd, task.head_idx)?;
                        push_row(&mut ce_rows, task.head_idx, logits, *class_id);
                        debug_assert_eq!(head.spec.loss, LossKind::Ce);
                    }
                    ClipLabels::Instance { query, targets } => {
                        let logits = model.instance_logits_for(
                            &mut tape,
                            &binds,
                            &fwd,
                            task.head_idx,
                            *query,
                        )?;
                        push_targets(&mut bce_rows, task.head_idx, logits, targets);
                        debug_assert_eq!(head.spec.loss, LossKind::Bce);
                    }
                }
            }

            let n_ce: usize = ce_rows.iter().map(|(_, rows, _)| rows.len()).sum();
            let n_bce: usize = bce_rows.iter().map(|(_, rows, _)| rows.len()).sum();
            if n_ce + n_bce == 0 {
                continue;
            }
            // mean CE over all CE samples (weighted mix of per-head means)
            let ce = combine_ce(&mut tape, &ce_rows, n_ce)?;
            let bce = combine_bce(&mut tape, &bce_rows, n_bce)?;
            let total = joint_loss(&mut tape, ce, bce, &loss_spec)?;
            let loss_value = tape.data(total)[0];
            if !loss_value.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss {loss_value} at epoch {epoch}, batch {batch_idx}, lr {lr}"
                )));
            }
            tape.backward(total)?;
            opt.step(model, &tape, &binds, lr, cfg);
            apply_bn_updates(&mut model.buffers, &ctx.bn_updates);
            epoch_loss += loss_value;
            batches += 1;
        }

        log.rows.push(CurveRow {
            epoch,
            split: "train".into(),
            loss: if batches > 0 { epoch_loss / batches as f64 } else { f64::NAN },
            metric: None,
        });
        for task in tasks {
            if let Some(val) = &task.val {
                let report = evaluate(model, val, task.head_idx, &task.policy, task.window_frames, None)?;
                log.rows.push(CurveRow {
                    epoch,
                    split: format!("val:{}", task.name),
                    loss: report.mean_loss,
                    metric: report.top1.or(report.map),
                });
            }
        }
    }
    Ok(log)
}

/// Validation-style report after training (convenience wrapper).
pub fn validate_task(model: &Model, task: &TrainTask) -> Result<Option<EvalReport>> {
    match &task.val {
        Some(val) => Ok(Some(evaluate(
            model,
            val,
            task.head_idx,
            &task.policy,
            task.window_frames,
            None,
        )?)),
        None => Ok(None),
    }
}

fn push_row(rows: &mut Vec<(usize, Vec<Var>, Vec<usize>)>, head: usize, logits: Var, label: usize) {
    if let Some(entry) = rows.iter_mut().find(|(h, _, _)| *h == head) {
        entry.1.push(logits);
        entry.2.push(label);
    } else {
        rows.push((head, vec![logits], vec![label]));
    }
}

fn push_targets(
    rows: &mut Vec<(usize, Vec<Var>, Vec<bool>)>,
    head: usize,
    logits: Var,
    targets: &[bool],
) {
    if let Some(entry) = rows.iter_mut().find(|(h, _, _)| *h == head) {
        entry.1.push(logits);
        entry.2.extend_from_slice(targets);
    } else {
        rows.push((head, vec![logits], targets.to_vec()));
    }
}

fn combine_ce(
    tape: &mut Tape,
    rows: &[(usize, Vec<Var>, Vec<usize>)],
    n_total: usize,
) -> Result<Option<Var>> {
    if n_total == 0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (_, logits, labels) in rows {
        let stacked = tape.concat(logits, 0)?;
        let ce = tape.cross_entropy(stacked, labels)?;
        let weighted = tape.scale(ce, labels.len() as f64 / n_total as f64)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok(total)
}

fn combine_bce(
    tape: &mut Tape,
    rows: &[(usize, Vec<Var>, Vec<bool>)],
    n_total: usize,
) -> Result<Option<Var>> {
    if n_total == 0 {
        return Ok(None);
    }
    let mut total: Option<Var> = None;
    for (_, logits, targets) in rows {
        let stacked = tape.concat(logits, 0)?;
        let t: Vec<f64> = targets.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let shape = tape.shape(stacked).to_vec();
        let tv = tape.constant(shape, t)?;
        let bce = tape.bce_with_logits(stacked, tv)?;
        let weighted = tape.scale(bce, logits.len() as f64 / n_total as f64)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    Ok(total)
}

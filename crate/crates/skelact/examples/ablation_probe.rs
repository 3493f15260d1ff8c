// scratch: probe learning speed/accuracy of transformer vs NA on the
// relational dataset before freezing acceptance parameters
use std::time::Instant;

use skelact::backbone::GcnConfig;
use skelact::data::{synth_generate, ClassSpec, LabelMode, Scenario, SynthSpec};
use skelact::eval::evaluate;
use skelact::heads::{HeadSpec, LossKind, TaskKind};
use skelact::interaction::{default_streams, InteractionMode};
use skelact::layout::JointLayout;
use skelact::model::{Model, ModelConfig};
use skelact::pipeline::{prepare_dataset, Modality};
use skelact::sequencing::{MPolicy, SequencingConfig};
use skelact::train::{train, TrainConfig, TrainTask};

fn spec(n: usize) -> SynthSpec {
    SynthSpec {
        num_videos: n,
        persons: (2, 2),
        frames: 48,
        fps: 8.0,
        v: 17,
        layout: "coco17".into(),
        jitter_std: 0.004,
        dropout_prob: 0.0,
        label_mode: LabelMode::Video,
        classes: vec![
            ClassSpec { name: "approach".into(), scenario: Scenario::ApproachAndMeet },
            ClassSpec { name: "parallel".into(), scenario: Scenario::ParallelWalk },
        ],
        proposal_stride: 0,
    }
}

fn run(mode: InteractionMode, seed: u64, epochs: usize, n_train: usize) -> (f64, f64) {
    let train_ds = synth_generate(&spec(n_train), 100 + seed).unwrap();
    let val_ds = synth_generate(&spec(150), 999).unwrap();
    let seq_cfg = SequencingConfig { t: 16, iou_threshold: 0.3 };
    let prepared_train = prepare_dataset(&train_ds, &seq_cfg, Modality::Joint).unwrap();
    let prepared_val = prepare_dataset(&val_ds, &seq_cfg, Modality::Joint).unwrap();
    let config = ModelConfig {
        layout: JointLayout::coco17(),
        backbone: GcnConfig::variant_micro(2),
        mode,
        streams: default_streams(),
        encoder_depth: 1,
        encoder_heads: 8,
        heads: vec![HeadSpec { task: TaskKind::Video, classes: 2, loss: LossKind::Ce }],
    };
    let mut model = Model::new(config, seed).unwrap();
    let policy = MPolicy::Fixed { m: 12 };
    let tasks = vec![TrainTask {
        name: "main".into(),
        train: prepared_train,
        val: None,
        head_idx: 0,
        policy,
        window_frames: None,
    }];
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        base_lr: 0.1,
        milestones: vec![epochs * 7 / 10, epochs * 9 / 10],
        lr_decay: 0.1,
        momentum: 0.9,
        weight_decay: 5e-4,
        seed,
        lambda: Some(100.0),
    };
    let log = train(&mut model, &tasks, &cfg).unwrap();
    let train_loss = log.rows.iter().rev().find(|r| r.split == "train").unwrap().loss;
    let report = evaluate(&model, &prepared_val, 0, &policy, None, None).unwrap();
    (report.top1.unwrap(), train_loss)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let n_train: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    for mode in [InteractionMode::Transformer, InteractionMode::Na] {
        for seed in 0..2u64 {
            let t0 = Instant::now();
            let (top1, loss) = run(mode, seed, epochs, n_train);
            println!(
                "{mode:?} seed {seed}: val top1 {top1:.3}, final train loss {loss:.4} ({:.1}s)",
                t0.elapsed().as_secs_f64()
            );
        }
    }
}

// scratch: where does the time go?
use std::time::Instant;

use skelact::backbone::GcnConfig;
use skelact::data::{synth_generate, ClassSpec, LabelMode, Scenario, SynthSpec};
use skelact::heads::{HeadSpec, LossKind, TaskKind};
use skelact::interaction::{default_streams, InteractionMode};
use skelact::layout::JointLayout;
use skelact::model::{Model, ModelConfig};
use skelact::nn::ForwardCtx;
use skelact::params::Bindings;
use skelact::pipeline::{build_clip, prepare_dataset, Modality};
use skelact::sequencing::{MPolicy, SelectMode, SequencingConfig};
use tapegrad::Tape;

fn main() {
    let spec = SynthSpec {
        num_videos: 16,
        persons: (2, 2),
        frames: 48,
        fps: 8.0,
        v: 17,
        layout: "coco17".into(),
        jitter_std: 0.004,
        dropout_prob: 0.0,
        label_mode: LabelMode::Video,
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
    };
    let t0 = Instant::now();
    let ds = synth_generate(&spec, 1).unwrap();
    println!("synth 16 videos: {:?}", t0.elapsed());
    let seq_cfg = SequencingConfig {
        t: 16,
        iou_threshold: 0.3,
    };
    let t0 = Instant::now();
    let prepared = prepare_dataset(&ds, &seq_cfg, Modality::Joint).unwrap();
    println!("prepare: {:?}", t0.elapsed());
    let config = ModelConfig {
        layout: JointLayout::coco17(),
        backbone: GcnConfig::variant_micro(2),
        mode: InteractionMode::Transformer,
        streams: default_streams(),
        encoder_depth: 1,
        encoder_heads: 8,
        heads: vec![HeadSpec {
            task: TaskKind::Video,
            classes: 2,
            loss: LossKind::Ce,
        }],
    };
    let model = Model::new(config, 0).unwrap();
    let policy = MPolicy::Fixed { m: 12 };
    let samples = prepared.samples();

    let clip = build_clip(&prepared, samples[0], &policy, 0, SelectMode::Test, None)
        .unwrap()
        .unwrap();
    let t0 = Instant::now();
    for _ in 0..5 {
        let mut tape = Tape::new();
        let binds = Bindings::bind_frozen(&model.store, &mut tape);
        let mut ctx = ForwardCtx::eval();
        let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
        let _ = model.video_logits(&mut tape, &binds, &fwd, 0).unwrap();
    }
    println!("eval forward x5: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let mut tape = Tape::new();
    let binds = Bindings::bind_all(&model.store, &mut tape);
    let mut ctx = ForwardCtx::train();
    let mut logits_rows = Vec::new();
    for s in &samples {
        let clip = build_clip(&prepared, *s, &policy, 0, SelectMode::Train, None)
            .unwrap()
            .unwrap();
        let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
        logits_rows.push(model.video_logits(&mut tape, &binds, &fwd, 0).unwrap());
    }
    let stacked = tape.concat(&logits_rows, 0).unwrap();
    let labels = vec![0usize; logits_rows.len()];
    let loss = tape.cross_entropy(stacked, &labels).unwrap();
    println!("batch-16 forward: {:?} ({} nodes)", t0.elapsed(), tape.len());
    let t0 = Instant::now();
    tape.backward(loss).unwrap();
    println!("batch-16 backward: {:?}", t0.elapsed());
}

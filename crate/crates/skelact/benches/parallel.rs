//! Parallel-vs-sequential throughput of the heavy forward paths. With the
//! `parallel` feature the same kernels run under a 1-thread and an
//! N-thread rayon pool; results are bit-identical, only wall time differs.
//! Without the feature only the sequential path exists.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapegrad::Tape;

use skelact::backbone::GcnConfig;
use skelact::heads::{HeadSpec, LossKind, TaskKind};
use skelact::interaction::{default_streams, InteractionMode};
use skelact::layout::JointLayout;
use skelact::model::{Model, ModelConfig};
use skelact::nn::ForwardCtx;
use skelact::params::Bindings;
use skelact::sequencing::{ClipSample, SkeletonSequence};

fn model_s() -> Model {
    let config = ModelConfig {
        layout: JointLayout::coco17(),
        backbone: GcnConfig::variant_s(2),
        mode: InteractionMode::Transformer,
        streams: default_streams(),
        encoder_depth: 2,
        encoder_heads: 8,
        heads: vec![HeadSpec {
            task: TaskKind::Video,
            classes: 10,
            loss: LossKind::Ce,
        }],
    };
    Model::new(config, 0).unwrap()
}

fn clip(m: usize, t: usize) -> ClipSample {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (v, c) = (17, 2);
    let sequences: Vec<Option<SkeletonSequence>> = (0..m)
        .map(|i| {
            Some(SkeletonSequence {
                data: (0..t * v * c).map(|_| rng.gen_range(0.0..1.0)).collect(),
                t,
                v,
                c,
                valid_mask: vec![true; t],
                center_bbox: skelact::data::BBox {
                    x_min: 0.1,
                    y_min: 0.1,
                    x_max: 0.3,
                    y_max: 0.5,
                },
                norm_time: i as f64 / m as f64,
                key_frame: i,
                source_ids: vec![],
            })
        })
        .collect();
    ClipSample {
        pad_mask: vec![false; m],
        sequences,
        labels: None,
    }
}

fn forward_once(model: &Model, clip: &ClipSample, train: bool) -> f64 {
    let mut tape = Tape::new();
    let binds = if train {
        Bindings::bind_all(&model.store, &mut tape)
    } else {
        Bindings::bind_frozen(&model.store, &mut tape)
    };
    let mut ctx = if train {
        ForwardCtx::train()
    } else {
        ForwardCtx::eval()
    };
    let fwd = model.forward_clip(&mut tape, &binds, clip, &mut ctx).unwrap();
    let logits = model.video_logits(&mut tape, &binds, &fwd, 0).unwrap();
    if train {
        let loss = tape.cross_entropy(logits, &[0]).unwrap();
        tape.backward(loss).unwrap();
        tape.data(loss)[0]
    } else {
        tape.data(logits)[0]
    }
}

#[cfg(feature = "parallel")]
fn bench_with_pool(c: &mut Criterion, threads: usize, label: &str) {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let model = model_s();
    let clip20 = clip(20, 30);
    let mut group = c.benchmark_group(format!("forward_{label}"));
    group.sample_size(10);
    group.bench_function("eval_m20_t30", |b| {
        b.iter(|| pool.install(|| forward_once(&model, &clip20, false)))
    });
    group.bench_function("train_m20_t30", |b| {
        b.iter(|| pool.install(|| forward_once(&model, &clip20, true)))
    });
    group.finish();
}

#[cfg(feature = "parallel")]
fn benches(c: &mut Criterion) {
    bench_with_pool(c, 1, "sequential");
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4);
    bench_with_pool(c, n, &format!("parallel_{n}threads"));
}

#[cfg(not(feature = "parallel"))]
fn benches(c: &mut Criterion) {
    let model = model_s();
    let clip20 = clip(20, 30);
    let mut group = c.benchmark_group("forward_sequential_build");
    group.sample_size(10);
    group.bench_function("eval_m20_t30", |b| b.iter(|| forward_once(&model, &clip20, false)));
    group.bench_function("train_m20_t30", |b| b.iter(|| forward_once(&model, &clip20, true)));
    group.finish();
}

criterion_group!(parallel_benches, benches);
criterion_main!(parallel_benches);

//! Whole-model invariants: token counting, permutation invariance, padding
//! neutrality, attention export, baseline modes, checkpoint round trips.

mod common;

use common::{make_sequence, micro_model, micro_model_config};
use skelact::heads::{HeadSpec, LossKind, TaskKind};
use skelact::interaction::{
    default_streams, export_attention, mix_pool, parse_streams, token_count, InteractionMode,
    InteractionStage, EncoderConfig,
};
use skelact::layout::JointLayout;
use skelact::model::Model;
use skelact::nn::ForwardCtx;
use skelact::params::{Bindings, ParamStore};
use skelact::sequencing::ClipSample;
use tapegrad::Tape;

fn clip_from(seqs: Vec<Option<skelact::sequencing::SkeletonSequence>>) -> ClipSample {
    let pad_mask = seqs.iter().map(|s| s.is_none()).collect();
    ClipSample {
        sequences: seqs,
        pad_mask,
        labels: None,
    }
}

fn video_logits_for(model: &Model, clip: &ClipSample) -> Vec<f64> {
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    let fwd = model.forward_clip(&mut tape, &binds, clip, &mut ctx).unwrap();
    let logits = model.video_logits(&mut tape, &binds, &fwd, 0).unwrap();
    tape.data(logits).to_vec()
}

#[test]
fn token_count_law_default_streams() {
    let streams = default_streams();
    // L = 1 + T_f + P at three (T_f, P) settings, exact
    for (t_f, p) in [(15usize, 5usize), (8, 5), (4, 2)] {
        let v = 17;
        assert_eq!(token_count(&streams, t_f, p, v), 1 + t_f + p);
    }
    // configurable sets obey L = sum A*B
    let streams = parse_streams(&["Tx1".into(), "1xV".into(), "2x1".into()]).unwrap();
    assert_eq!(token_count(&streams, 6, 5, 17), 6 + 17 + 2);
}

#[test]
fn video_logits_bit_exact_under_permutation() {
    let model = micro_model(InteractionMode::Transformer, 3, 42);
    let seqs: Vec<_> = (0..5).map(|i| Some(make_sequence(i, 8, 17, 2))).collect();
    let base = video_logits_for(&model, &clip_from(seqs.clone()));
    // several permutations, including padded slots moved around
    let perms: Vec<Vec<usize>> = vec![
        vec![4, 3, 2, 1, 0],
        vec![2, 0, 4, 1, 3],
        vec![1, 4, 0, 3, 2],
    ];
    for perm in perms {
        let permuted: Vec<_> = perm.iter().map(|&i| seqs[i].clone()).collect();
        let logits = video_logits_for(&model, &clip_from(permuted));
        assert_eq!(base, logits, "perm {perm:?} changed video logits");
    }
}

#[test]
fn padded_slots_change_nothing() {
    let model = micro_model(InteractionMode::Transformer, 3, 43);
    let seqs: Vec<_> = (0..3).map(|i| Some(make_sequence(i, 8, 17, 2))).collect();
    let bare = video_logits_for(&model, &clip_from(seqs.clone()));
    // add padded slots interleaved
    let mut padded = seqs.clone();
    padded.insert(1, None);
    padded.push(None);
    padded.push(None);
    let with_pads = video_logits_for(&model, &clip_from(padded));
    for (a, b) in bare.iter().zip(&with_pads) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }
}

#[test]
fn per_sequence_outputs_map_back_to_original_slots() {
    let model = Model::new(
        skelact::model::ModelConfig {
            heads: vec![HeadSpec {
                task: TaskKind::Instance,
                classes: 4,
                loss: LossKind::Bce,
            }],
            ..micro_model_config(InteractionMode::Transformer, 4)
        },
        7,
    )
    .unwrap();
    let seqs: Vec<_> = (0..4).map(|i| Some(make_sequence(i, 8, 17, 2))).collect();
    let clip = clip_from(seqs.clone());
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
    let rows = model.instance_logits_all(&mut tape, &binds, &fwd, 0).unwrap();
    // permute and compare per-original-slot rows
    let perm = vec![3, 1, 0, 2];
    let permuted: Vec<_> = perm.iter().map(|&i| seqs[i].clone()).collect();
    let clip2 = clip_from(permuted);
    let mut tape2 = Tape::new();
    let binds2 = Bindings::bind_frozen(&model.store, &mut tape2);
    let mut ctx2 = ForwardCtx::eval();
    let fwd2 = model
        .forward_clip(&mut tape2, &binds2, &clip2, &mut ctx2)
        .unwrap();
    let rows2 = model
        .instance_logits_all(&mut tape2, &binds2, &fwd2, 0)
        .unwrap();
    for (new_slot, &old_slot) in perm.iter().enumerate() {
        let a = &rows.iter().find(|(o, _)| *o == old_slot).unwrap().1;
        let b = &rows2.iter().find(|(o, _)| *o == new_slot).unwrap().1;
        assert_eq!(a, b);
    }
}

#[test]
fn single_live_token_attends_to_itself_fully() {
    // one real sequence with a 1x1-only stream: a single live token
    let mut config = micro_model_config(InteractionMode::Transformer, 2);
    config.streams = parse_streams(&["1x1".into()]).unwrap();
    config.encoder_depth = 1;
    let model = Model::new(config, 3).unwrap();
    let clip = clip_from(vec![Some(make_sequence(1, 8, 17, 2)), None]);
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    ctx.capture_attention = true;
    model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
    let cap = &ctx.attention[0];
    let s = cap.tokens;
    assert_eq!(s, 2); // one live, one padded
    for h in 0..cap.heads {
        // live token row: self weight exactly 1.0
        assert_eq!(cap.weights[h * s * s], 1.0);
        assert_eq!(cap.weights[h * s * s + 1], 0.0);
    }
}

#[test]
fn attention_export_rows_stochastic_and_masked_columns_absent() {
    let model = micro_model(InteractionMode::Transformer, 3, 44);
    let clip = clip_from(vec![
        Some(make_sequence(0, 8, 17, 2)),
        None,
        Some(make_sequence(1, 8, 17, 2)),
    ]);
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    ctx.capture_attention = true;
    let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
    let (labels, live) = model.token_labels(&clip, &fwd);
    let export = export_attention(&ctx.attention, labels, &live);
    // N2 x heads matrices
    assert_eq!(export.layers, 2);
    assert_eq!(export.heads, 8);
    assert_eq!(export.matrices.len(), 16);
    let t_f = model.config.backbone.temporal_out(8);
    let l = 1 + t_f + 5;
    let live_tokens = 2 * l;
    assert_eq!(export.tokens.len(), live_tokens);
    for m in &export.matrices {
        assert_eq!(m.weights.len(), live_tokens * live_tokens);
        for row in m.weights.chunks(live_tokens) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn na_baseline_is_identity_on_pooled_features() {
    // NA mode: the head sees exactly the globally pooled backbone features
    let model = micro_model(InteractionMode::Na, 3, 45);
    let clip = clip_from(vec![Some(make_sequence(3, 8, 17, 2))]);
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
    // recompute the pooled features by hand
    let mut tape2 = Tape::new();
    let binds2 = Bindings::bind_frozen(&model.store, &mut tape2);
    let mut ctx2 = ForwardCtx::eval();
    let seq = clip.sequences[0].as_ref().unwrap();
    let (t, v, c) = (seq.t, seq.v, seq.c);
    let mut input = vec![0.0; c * t * v];
    for tt in 0..t {
        for vv in 0..v {
            for cc in 0..c {
                input[(cc * t + tt) * v + vv] = seq.data[(tt * v + vv) * c + cc];
            }
        }
    }
    let x = tape2.constant(vec![1, c, t, v], input).unwrap();
    let feats = model
        .backbone
        .forward(&mut tape2, &binds2, &model.buffers, x, &mut ctx2)
        .unwrap();
    let pooled = tape2.mean_axes(feats.var, &[2, 3]).unwrap();
    assert_eq!(tape.data(fwd.features), tape2.data(pooled));
}

#[test]
fn add_global_with_zeroed_output_layer_is_identity() {
    let mut store = ParamStore::new();
    let mut rng = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(5)
    };
    let stage = InteractionStage::new(
        &mut store,
        &mut rng,
        InteractionMode::AddGlobal,
        default_streams(),
        EncoderConfig {
            depth: 1,
            heads: 8,
            model_dim: 8,
        },
    )
    .unwrap();
    // zero the MLP's output layer so MLP(mean) == 0
    for i in 0..store.len() {
        let id = skelact::params::ParamId(i);
        let name = store.name(id).to_string();
        if name.contains("add_global.l2") {
            let shape = store.get(id).shape().to_vec();
            *store.get_mut(id) = tapegrad::Tensor::zeros(shape).with_requires_grad(true);
        }
    }
    let layout = JointLayout::coco17();
    let mut tape = Tape::new();
    let binds = Bindings::bind_frozen(&store, &mut tape);
    let m = 3;
    let feats: Vec<f64> = (0..m * 8 * 4 * 17).map(|i| (i as f64 * 0.01).sin()).collect();
    let x = tape.constant(vec![m, 8, 4, 17], feats).unwrap();
    let st = tape.constant(vec![m, 5], vec![0.3; m * 5]).unwrap();
    let mut ctx = ForwardCtx::eval();
    let out = stage
        .forward(&mut tape, &binds, &layout, x, st, &[true; 3], &mut ctx)
        .unwrap();
    let pooled = tape.mean_axes(x, &[2, 3]).unwrap();
    for (a, b) in tape.data(out).iter().zip(tape.data(pooled)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn concat_global_and_non_local_shapes() {
    for mode in [InteractionMode::ConcatGlobal, InteractionMode::NonLocal] {
        let model = micro_model(mode, 3, 46);
        let clip = clip_from(vec![
            Some(make_sequence(0, 8, 17, 2)),
            Some(make_sequence(1, 8, 17, 2)),
            None,
        ]);
        let mut tape = Tape::new();
        let binds = Bindings::bind_frozen(&model.store, &mut tape);
        let mut ctx = ForwardCtx::eval();
        let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
        let c = model.config.backbone.out_channels();
        assert_eq!(tape.shape(fwd.features), &[3, c]);
        // padded row zeroed
        let data = tape.data(fwd.features);
        let padded_slot = fwd.orig_to_canon[2];
        assert!(data[padded_slot * c..(padded_slot + 1) * c]
            .iter()
            .all(|&x| x == 0.0));
    }
}

#[test]
fn mix_pool_nested_mean_consistency() {
    // the 1x1 token equals the mean of the Tx1 tokens and the
    // part-size-weighted mean of the 1xP tokens
    let layout = JointLayout::coco17();
    let mut tape = Tape::new();
    let (m, c, t_f, v) = (2, 3, 4, 17);
    let feats: Vec<f64> = (0..m * c * t_f * v).map(|i| ((i * 7) % 23) as f64 * 0.1).collect();
    let x = tape.constant(vec![m, c, t_f, v], feats).unwrap();
    let tokens = mix_pool(&mut tape, x, &default_streams(), &layout).unwrap();
    let l = 1 + t_f + 5;
    assert_eq!(tape.shape(tokens), &[m, l, c]);
    let d = tape.data(tokens);
    let mut part_sizes = vec![0usize; 5];
    for &p in &layout.parts {
        part_sizes[p] += 1;
    }
    for mi in 0..m {
        for cc in 0..c {
            let tok = |ti: usize| d[(mi * l + ti) * c + cc];
            let global = tok(0);
            let t_mean: f64 = (1..=t_f).map(tok).sum::<f64>() / t_f as f64;
            assert!((global - t_mean).abs() < 1e-12);
            let p_mean: f64 = (0..5)
                .map(|p| tok(1 + t_f + p) * part_sizes[p] as f64)
                .sum::<f64>()
                / v as f64;
            assert!((global - p_mean).abs() < 1e-12);
        }
    }
}

#[test]
fn constant_features_give_constant_tokens() {
    let layout = JointLayout::coco17();
    let mut tape = Tape::new();
    let x = tape.constant(vec![1, 2, 4, 17], vec![0.7; 2 * 4 * 17]).unwrap();
    let tokens = mix_pool(&mut tape, x, &default_streams(), &layout).unwrap();
    assert!(tape.data(tokens).iter().all(|&v| (v - 0.7).abs() < 1e-12));
}

#[test]
fn full_model_gradients_finite() {
    let model = micro_model(InteractionMode::Transformer, 3, 47);
    let clip = clip_from(vec![
        Some(make_sequence(0, 8, 17, 2)),
        Some(make_sequence(1, 8, 17, 2)),
        None,
    ]);
    let mut tape = Tape::new();
    let binds = Bindings::bind_all(&model.store, &mut tape);
    let mut ctx = ForwardCtx::train();
    let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx).unwrap();
    let logits = model.video_logits(&mut tape, &binds, &fwd, 0).unwrap();
    let loss = tape.cross_entropy(logits, &[1]).unwrap();
    tape.backward(loss).unwrap();
    let mut any = false;
    for (_, var) in binds.iter() {
        if let Some(g) = tape.grad(var) {
            any = true;
            assert!(g.iter().all(|x| x.is_finite()), "non-finite gradient");
        }
    }
    assert!(any);
}

#[test]
fn checkpoint_roundtrip_reproduces_outputs() {
    let dir = std::env::temp_dir().join("skelact_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    let model = micro_model(InteractionMode::Transformer, 3, 48);
    let clip = clip_from(vec![Some(make_sequence(5, 8, 17, 2))]);
    let before = video_logits_for(&model, &clip);
    model.save(&path).unwrap();
    let loaded = Model::load(&path).unwrap();
    let after = video_logits_for(&loaded, &clip);
    assert_eq!(before, after);
}

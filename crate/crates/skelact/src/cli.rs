//! Command-line entry point. Machine-readable primary output (JSON) goes
//! to stdout, logs to stderr; all randomness flows from --seed. Exit codes:
//! 0 success, 1 runtime failure, 2 usage errors (clap's default).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::AppConfig;
use crate::data::{load_dataset, save_dataset, synth_generate, Labels, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{report_from_scores, score_samples, Categories};
use crate::gradsuite::{run_suite, GRADCHECK_TOL};
use crate::heads::{late_fuse, HeadSpec, LossKind, TaskKind};
use crate::interaction::export_attention;
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::params::Bindings;
use crate::pipeline::{build_clip, prepare_dataset, Modality, PreparedDataset};
use crate::sequencing::{
    build_tracklets, mean_identity_purity, sample_sequences, score_based_baseline, SelectMode,
};
use crate::stats::run_stats;
use crate::train::{train, TrainConfig, TrainTask};

#[derive(Parser)]
#[command(name = "skelact", version, about = "Two-stage skeleton action recognition")]
struct Cli {
    /// TOML experiment configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the parallel kernels (0 = default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Output path for commands that write files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a generator spec file.
    Synth {
        /// TOML generator spec.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Sequence-construction statistics for a dataset.
    SequenceStats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        iou_threshold: Option<f64>,
    },
    /// Train on one or more datasets (one head per dataset, in order).
    Train {
        /// Training dataset(s); repeat the flag for joint training.
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
        /// Validation dataset(s), aligned with --data by position.
        #[arg(long)]
        val: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Head index to evaluate (default 0).
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Second checkpoint for probability-space late fusion.
        #[arg(long)]
        fuse_with: Option<PathBuf>,
        /// Fusion weights "a:b".
        #[arg(long)]
        fuse_ratio: Option<String>,
    },
    /// Sliding-window inference over untrimmed instance-labeled videos.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        window_s: f64,
        #[arg(long, default_value_t = 1.0)]
        step_s: f64,
        #[arg(long, default_value_t = 0)]
        head: usize,
    },
    /// Finite-difference verification of every op and composite stack.
    Gradcheck {
        /// Run the full table.
        #[arg(long)]
        all: bool,
        /// Check a single named entry.
        #[arg(long)]
        op: Option<String>,
    },
    /// Parameter and FLOP report.
    Stats {
        /// Backbone variant override ("s", "l", "micro").
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
    },
    /// Export per-layer, per-head attention matrices for one clip.
    AttnDump {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Video index within the dataset.
        #[arg(long, default_value_t = 0)]
        clip: usize,
    },
}

/// Parses argv and dispatches; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    #[cfg(feature = "parallel")]
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<AppConfig> {
    let mut cfg = match cli_config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::other(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.config, cli.seed)?;
    match cli.cmd {
        Command::Synth { spec } => cmd_synth(&cfg, &spec, cli.out.as_deref()),
        Command::SequenceStats {
            data,
            t,
            iou_threshold,
        } => cmd_sequence_stats(&cfg, &data, t, iou_threshold),
        Command::Train {
            data,
            val,
            epochs,
            batch_size,
            lr,
        } => cmd_train(&cfg, &data, &val, epochs, batch_size, lr, cli.out.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            head,
            fuse_with,
            fuse_ratio,
        } => cmd_eval(&cfg, &checkpoint, &data, head, fuse_with.as_deref(), fuse_ratio),
        Command::Infer {
            checkpoint,
            data,
            window_s,
            step_s,
            head,
        } => cmd_infer(&cfg, &checkpoint, &data, window_s, step_s, head),
        Command::Gradcheck { all, op } => cmd_gradcheck(all, op),
        Command::Stats { backbone, t, m } => cmd_stats(&cfg, backbone, t, m),
        Command::AttnDump {
            checkpoint,
            data,
            clip,
        } => cmd_attn_dump(&cfg, &checkpoint, &data, clip, cli.out.as_deref()),
    }
}

fn cmd_synth(cfg: &AppConfig, spec_path: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SynthSpec =
        toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", spec_path.display())))?;
    let ds = synth_generate(&spec, cfg.seed)?;
    let out = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("synth.jsonl"));
    save_dataset(&out, &ds)?;
    print_json(&serde_json::json!({
        "written": out.display().to_string(),
        "videos": ds.videos.len(),
        "num_classes": ds.num_classes,
        "seed": cfg.seed,
    }))
}

fn cmd_sequence_stats(
    cfg: &AppConfig,
    data: &Path,
    t: Option<usize>,
    iou_threshold: Option<f64>,
) -> Result<()> {
    let ds = load_dataset(data)?;
    let mut seq_cfg = cfg.sequencing_config();
    if let Some(t) = t {
        seq_cfg.t = t;
    }
    if let Some(th) = iou_threshold {
        seq_cfg.iou_threshold = th;
    }
    seq_cfg.validate()?;
    let mut m_prime: Vec<usize> = Vec::new();
    let mut length_hist: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut purities = Vec::new();
    let mut baseline_purities = Vec::new();
    for video in &ds.videos {
        let seqs = sample_sequences(video, ds.v, ds.c, &seq_cfg)?;
        m_prime.push(seqs.len());
        for s in &seqs {
            *length_hist.entry(s.num_valid()).or_insert(0) += 1;
        }
        if let Some(p) = mean_identity_purity(&seqs) {
            purities.push(p);
        }
        let baseline = score_based_baseline(video, 2, ds.v, ds.c);
        if let Some(p) = mean_identity_purity(&baseline) {
            baseline_purities.push(p);
        }
        // tracklet lengths over full-video windows feed the histogram too
        let _ = build_tracklets(&video.frames, 0..video.num_frames, seq_cfg.iou_threshold);
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    print_json(&serde_json::json!({
        "videos": ds.videos.len(),
        "t": seq_cfg.t,
        "iou_threshold": seq_cfg.iou_threshold,
        "m_prime": m_prime,
        "valid_length_histogram": length_hist,
        "mean_identity_purity": mean(&purities),
        "score_baseline_purity": mean(&baseline_purities),
    }))
}

/// Heads inferred from a dataset when the config does not pin them.
fn head_for_dataset(ds_classes: usize, labels: Option<&Labels>) -> HeadSpec {
    match labels {
        Some(Labels::Instance { .. }) => HeadSpec {
            task: TaskKind::Instance,
            classes: ds_classes,
            loss: LossKind::Bce,
        },
        Some(Labels::Group { .. }) => HeadSpec {
            task: TaskKind::Group,
            classes: ds_classes,
            loss: LossKind::Ce,
        },
        _ => HeadSpec {
            task: TaskKind::Video,
            classes: ds_classes,
            loss: LossKind::Ce,
        },
    }
}

fn cmd_train(
    cfg: &AppConfig,
    data: &[PathBuf],
    val: &[PathBuf],
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let seq_cfg = cfg.sequencing_config();
    seq_cfg.validate()?;
    let modality = cfg.modality()?;
    let policy = cfg.m_policy()?;

    let mut datasets = Vec::new();
    for path in data {
        let ds = load_dataset(path)?;
        datasets.push(ds);
    }
    let mut vals = Vec::new();
    for path in val {
        vals.push(Some(load_dataset(path)?));
    }
    vals.resize_with(datasets.len(), || None);

    // model heads: from config when given, otherwise inferred per dataset
    let mut app = cfg.clone();
    if app.head.tasks.is_empty() {
        app.head.tasks = datasets
            .iter()
            .map(|ds| head_for_dataset(ds.num_classes, ds.videos.first().map(|v| &v.labels)))
            .collect();
    }
    if app.head.tasks.len() != datasets.len() {
        return Err(Error::config(format!(
            "{} head tasks configured for {} datasets",
            app.head.tasks.len(),
            datasets.len()
        )));
    }
    let model_cfg = app.model_config()?;
    let mut model = Model::new(model_cfg, app.seed)?;

    let mut tasks = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let window = match app.head.tasks[i].task {
            TaskKind::Instance => Some(app.window_frames(ds.videos.first().map(|v| v.fps).unwrap_or(8.0))),
            _ => None,
        };
        tasks.push(TrainTask {
            name: format!("task{i}"),
            train: prepare_dataset(ds, &seq_cfg, modality)?,
            val: match &vals[i] {
                Some(v) => Some(prepare_dataset(v, &seq_cfg, modality)?),
                None => None,
            },
            head_idx: i,
            policy,
            window_frames: window,
        });
    }

    let mut train_cfg: TrainConfig = app.train_config();
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    if let Some(b) = batch_size {
        train_cfg.batch_size = b;
    }
    if let Some(lr) = lr {
        train_cfg.base_lr = lr;
    }

    let log = train(&mut model, &tasks, &train_cfg)?;
    let ckpt = out
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("model.ckpt.json"));
    model.save(&ckpt)?;
    let curves = ckpt.with_extension("curves.csv");
    std::fs::write(&curves, log.to_csv())?;
    print_json(&serde_json::json!({
        "checkpoint": ckpt.display().to_string(),
        "curves": curves.display().to_string(),
        "epochs": train_cfg.epochs,
        "final_train_loss": log.rows.iter().rev().find(|r| r.split == "train").map(|r| r.loss),
    }))
}

/// Default per-category grouping for the synthetic motion-kind label space.
fn motion_categories(k: usize) -> Option<Categories> {
    (k == crate::data::NUM_MOTIONS).then(|| {
        vec![
            ("static".to_string(), vec![0]),
            ("locomotion".to_string(), vec![1]),
            ("relational".to_string(), vec![2, 3, 4]),
        ]
    })
}

fn cmd_eval(
    cfg: &AppConfig,
    checkpoint: &Path,
    data: &Path,
    head: usize,
    fuse_with: Option<&Path>,
    fuse_ratio: Option<String>,
) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_dataset(data)?;
    let seq_cfg = cfg.sequencing_config();
    let modality = cfg.modality()?;
    let prepared = prepare_dataset(&ds, &seq_cfg, modality)?;
    let policy = cfg.m_policy()?;
    if head >= model.heads.len() {
        return Err(Error::config(format!(
            "head {head} out of range ({} heads)",
            model.heads.len()
        )));
    }
    let spec = model.heads[head].spec.clone();
    let window = match spec.task {
        TaskKind::Instance => Some(cfg.window_frames(ds.videos.first().map(|v| v.fps).unwrap_or(8.0))),
        _ => None,
    };
    let mut scored = score_samples(&model, &prepared, head, &policy, window)?;
    if let Some(other) = fuse_with {
        let other_model = Model::load(other)?;
        // second modality stream: bone when the primary is joint, and vice versa
        let other_modality = match modality {
            Modality::Joint => Modality::Bone,
            Modality::Bone => Modality::Joint,
        };
        let other_prepared = prepare_dataset(&ds, &seq_cfg, other_modality)?;
        let other_scored = score_samples(&other_model, &other_prepared, head, &policy, window)?;
        let ratio_text = fuse_ratio.unwrap_or_else(|| cfg.head.fuse_ratio.clone());
        let (a, b) = parse_ratio(&ratio_text)?;
        for (sa, sb) in scored.iter_mut().zip(other_scored) {
            if let (Some(sa), Some(sb)) = (sa.as_mut(), sb) {
                sa.probs = late_fuse(&sa.probs, &sb.probs, (a, b))?;
            }
        }
    }
    let categories = motion_categories(spec.classes);
    let report = report_from_scores(&scored, spec.classes, spec.loss, categories.as_ref());
    print_json(&report)
}

fn parse_ratio(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| Error::config("fusion ratio must be 'a:b'"))?;
    Ok((
        a.trim().parse().map_err(|_| Error::config("bad ratio"))?,
        b.trim().parse().map_err(|_| Error::config("bad ratio"))?,
    ))
}

fn cmd_infer(
    cfg: &AppConfig,
    checkpoint: &Path,
    data: &Path,
    window_s: f64,
    step_s: f64,
    head: usize,
) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_dataset(data)?;
    let prepared = prepare_dataset(&ds, &cfg.sequencing_config(), cfg.modality()?)?;
    let policy = cfg.m_policy()?;
    let scores = crate::infer::sliding_window_infer(&model, &prepared, head, &policy, window_s, step_s)?;
    print_json(&scores)
}

fn cmd_gradcheck(all: bool, op: Option<String>) -> Result<()> {
    if !all && op.is_none() {
        return Err(Error::config("pass --all or --op <name>"));
    }
    let entries = run_suite()?;
    let filtered: Vec<_> = match &op {
        Some(name) => {
            let hits: Vec<_> = entries.into_iter().filter(|e| &e.name == name).collect();
            if hits.is_empty() {
                return Err(Error::config(format!("unknown gradcheck entry '{name}'")));
            }
            hits
        }
        None => entries,
    };
    for e in &filtered {
        eprintln!(
            "{:<24} {:>12.3e}  {}",
            e.name,
            e.max_rel_err,
            if e.pass { "ok" } else { "FAIL" }
        );
    }
    print_json(&filtered)?;
    if filtered.iter().all(|e| e.pass) {
        Ok(())
    } else {
        Err(Error::other(format!(
            "gradient check failed (tolerance {GRADCHECK_TOL})"
        )))
    }
}

fn cmd_stats(
    cfg: &AppConfig,
    backbone: Option<String>,
    t: Option<usize>,
    m: Option<usize>,
) -> Result<()> {
    let mut app = cfg.clone();
    if let Some(v) = backbone {
        app.backbone.variant = v;
    }
    if app.head.tasks.is_empty() {
        app.head.tasks = vec![HeadSpec {
            task: TaskKind::Video,
            classes: 10,
            loss: LossKind::Ce,
        }];
    }
    let model_cfg = app.model_config()?;
    let t = t.unwrap_or(app.sequencing.t);
    let m = m.unwrap_or(app.m_policy.m);
    let report = run_stats(&model_cfg, m, t)?;
    print_json(&report)
}

fn cmd_attn_dump(
    cfg: &AppConfig,
    checkpoint: &Path,
    data: &Path,
    clip_idx: usize,
    out: Option<&Path>,
) -> Result<()> {
    let model = Model::load(checkpoint)?;
    let ds = load_dataset(data)?;
    let prepared: PreparedDataset = prepare_dataset(&ds, &cfg.sequencing_config(), cfg.modality()?)?;
    let samples = prepared.samples();
    let sample = samples
        .iter()
        .find(|s| s.video == clip_idx)
        .copied()
        .ok_or_else(|| Error::config(format!("no sample for video index {clip_idx}")))?;
    let policy = cfg.m_policy()?;
    let clip = build_clip(&prepared, sample, &policy, 0, SelectMode::Test, None)?
        .ok_or_else(|| Error::data("clip could not be built"))?;
    let mut tape = tapegrad::Tape::new();
    let binds = Bindings::bind_frozen(&model.store, &mut tape);
    let mut ctx = ForwardCtx::eval();
    ctx.capture_attention = true;
    let fwd = model.forward_clip(&mut tape, &binds, &clip, &mut ctx)?;
    let (labels, live) = model.token_labels(&clip, &fwd);
    let export = export_attention(&ctx.attention, labels, &live);
    match out {
        Some(path) => {
            let text =
                serde_json::to_string_pretty(&export).map_err(|e| Error::other(e.to_string()))?;
            std::fs::write(path, text)?;
            print_json(&serde_json::json!({
                "written": path.display().to_string(),
                "layers": export.layers,
                "heads": export.heads,
                "tokens": export.tokens.len(),
            }))
        }
        None => print_json(&export),
    }
}

//! `gdasum`: train, summarize, segment, evaluate and gradient-check from the
//! command line. Every command writes JSON.
//!
//! Exit codes: 0 on success, 1 for invalid input or configuration, 2 when
//! the numerics fail (non-finite loss, indefinite kernel, failed gradcheck).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gdasum::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint};
use gdasum::dataset::{load_manifest, make_splits, select, write_manifest, Setting, SourceDataset, SplitSpec, VideoRecord};
use gdasum::eval::{
    diversity_zeta, evaluate_video, rasterize, shot_features, EvalProtocol, MetricsReport, ShotSelection, VideoMetrics,
};
use gdasum::grad::{run_gradcheck, GradcheckConfig};
use gdasum::kts::{kts_segment, shots_from_changepoints, ChangePoints, Shot};
use gdasum::summary::{generate_summary, ShotSource, Summary};
use gdasum::synthetic::{generate, SyntheticConfig};
use gdasum::train::{train, TrainMode, TrainReport};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{envelope, RunConfig, OUTPUT_VERSION};

#[derive(Parser)]
#[command(name = "gdasum", version, about = "Video summarization with global diverse attention")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, env = "GDASUM_CONFIG", global = true)]
    config: Option<PathBuf>,

    /// Worker threads for data-parallel steps.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per evaluation fold.
    Train(TrainArgs),
    /// Score videos with a checkpoint and select key shots.
    Summarize(SummarizeArgs),
    /// Split videos into shots with kernel temporal segmentation.
    Segment(SegmentArgs),
    /// F-score and diversity of generated summaries against annotations.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a planted-keyframe synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// canonical, augmented or transfer.
    #[arg(long)]
    setting: Option<Setting>,
    /// Target dataset of the splits (summe, tvsum, other).
    #[arg(long)]
    target: Option<SourceDataset>,
    /// Restrict to a single fold.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// supervised, unsupervised or semi.
    #[arg(long)]
    mode: Option<TrainMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Output directory for checkpoints and reports.
    #[arg(long, default_value = "gdasum-run")]
    out: PathBuf,
}

#[derive(Args)]
struct SummarizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Summary length as a fraction of each video.
    #[arg(long)]
    ratio: Option<f64>,
    /// Add per-frame diversity weights and per-shot scores for plotting.
    #[arg(long)]
    emit_plot_data: bool,
    #[arg(long, default_value = "summaries.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Penalty coefficient on the number of shots.
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    max_segments: Option<usize>,
    #[arg(long, default_value = "segments.json")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// A single checkpoint evaluated on every video, or a `train` output
    /// directory whose per-fold checkpoints are evaluated on their test sets.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    ratio: Option<f64>,
    /// Output directory for metrics.json and metrics.csv.
    #[arg(long, default_value = "gdasum-eval")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Negate one parameter's analytic gradient to confirm the check fails.
    #[arg(long)]
    inject_sign_flip: Option<String>,
    #[arg(long, default_value = "gradcheck.json")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    videos: usize,
    #[arg(long, default_value_t = 120)]
    frames: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record the true shot boundaries in the manifest.
    #[arg(long)]
    change_points: bool,
    /// Directory for manifest.json and the feature files.
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .any(|c| c.downcast_ref::<gdasum::Error>().is_some_and(gdasum::Error::is_numerical));
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs.unwrap_or(0))
        .build()
        .context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::Train(args) => cmd_train(config, args),
        Command::Summarize(args) => cmd_summarize(config, args),
        Command::Segment(args) => cmd_segment(config, args),
        Command::Eval(args) => cmd_eval(config, args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    })
}

fn apply_split_args(config: &mut RunConfig, args: &SplitArgs) {
    if let Some(s) = args.setting {
        config.setting = s;
    }
    if args.target.is_some() {
        config.target = args.target;
    }
    if args.fold.is_some() {
        config.fold = args.fold;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_splits(records: &[VideoRecord], config: &RunConfig) -> Result<Vec<SplitSpec>> {
    let target = config.target_for(records)?;
    let splits = make_splits(records, config.setting, target, config.train.seed)?;
    match config.fold {
        None => Ok(splits),
        Some(k) => {
            let n = splits.len();
            let one: Vec<SplitSpec> = splits.into_iter().filter(|s| s.fold_index == k).collect();
            if one.is_empty() {
                return Err(gdasum::Error::InvalidArgument(format!("fold {k} out of range (0..{n})")).into());
            }
            Ok(one)
        }
    }
}

fn fold_checkpoint(dir: &Path, fold: usize) -> PathBuf {
    dir.join(format!("fold{fold}.ckpt"))
}

#[derive(Serialize)]
struct FoldOutcome {
    fold: usize,
    checkpoint: PathBuf,
    report: PathBuf,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    final_loss: Option<f64>,
}

fn cmd_train(mut config: RunConfig, args: TrainArgs) -> Result<()> {
    apply_split_args(&mut config, &args.split);
    if let Some(m) = args.mode {
        config.train.mode = m;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if args.lr.is_some() {
        config.train.learning_rate = args.lr;
    }
    if let Some(s) = args.sigma {
        config.train.sigma = s;
    }
    if let Some(b) = args.beta {
        config.hyper.beta = b;
    }
    let records = load_manifest(&args.split.manifest)?;
    let splits = load_splits(&records, &config)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let config_ref = &config;
    let outcomes: Vec<(SplitSpec, TrainReport)> = splits
        .into_par_iter()
        .map(|split| {
            let (params, mut report) = train(&records, &split, &config_ref.train, &config_ref.hyper)
                .with_context(|| format!("training fold {}", split.fold_index))?;
            let path = fold_checkpoint(&args.out, split.fold_index);
            save_checkpoint(&path, &params, &config_ref.hyper)?;
            report.checkpoint = Some(path);
            Ok((split, report))
        })
        .collect::<Result<_>>()?;

    let mut folds = Vec::new();
    for (split, report) in outcomes {
        let jsonl = args.out.join(format!("fold{}.jsonl", split.fold_index));
        let header = json!({
            "format": "gdasum-train-report",
            "version": OUTPUT_VERSION,
            "fold": split.fold_index,
            "learning_rate": report.learning_rate,
            "early_stopped": report.early_stopped,
            "best_epoch": report.best_epoch,
            "config": config,
        });
        let text = format!("{}\n{}", serde_json::to_string(&header)?, report.to_json_lines()?);
        fs::write(&jsonl, text).with_context(|| format!("writing {}", jsonl.display()))?;
        folds.push(FoldOutcome {
            fold: split.fold_index,
            checkpoint: report.checkpoint.clone().expect("set above"),
            report: jsonl,
            final_loss: report.epochs.last().map(|e| e.loss.total),
            train_ids: split.train_ids,
            test_ids: split.test_ids,
        });
    }
    let summary_path = args.out.join("train.json");
    write_json(&summary_path, &envelope("gdasum-train", &config, json!({ "folds": folds })))?;
    eprintln!("trained {} fold(s); summary in {}", folds.len(), summary_path.display());
    Ok(())
}

fn shot_source<'a>(r: &VideoRecord, config: &RunConfig, cp: &'a mut Option<ChangePoints>) -> Result<ShotSource<'a>> {
    match &r.annotations.change_points {
        Some(b) => {
            *cp = Some(ChangePoints::new(b.clone(), r.n_frames())?);
            Ok(ShotSource::Precomputed(cp.as_ref().expect("just set")))
        }
        None => Ok(ShotSource::Kts(config.kts)),
    }
}

fn summarize_one(r: &VideoRecord, ckpt: &Checkpoint, config: &RunConfig) -> Result<(Summary, gdasum::ForwardTrace)> {
    let x = r.features.to_f64();
    let mut cp = None;
    let source = shot_source(r, config, &mut cp)?;
    generate_summary(x.view(), &ckpt.params, &ckpt.hyper, config.ratio, source).with_context(|| format!("summarizing {}", r.id))
}

fn interval(s: &Shot) -> [usize; 2] {
    [s.start, s.end]
}

fn cmd_summarize(mut config: RunConfig, args: SummarizeArgs) -> Result<()> {
    if let Some(r) = args.ratio {
        config.ratio = r;
    }
    let records = load_manifest(&args.manifest)?;
    let dim = records.first().map_or(0, |r| r.features.dim());
    let ckpt = load_checkpoint_for(&args.checkpoint, dim)?;
    let videos: Vec<serde_json::Value> = records
        .par_iter()
        .map(|r| {
            let (summary, trace) = summarize_one(r, &ckpt, &config)?;
            let mut v = json!({
                "video_id": r.id,
                "ratio": config.ratio,
                "selected_shots": summary.selected_shots().iter().map(interval).collect::<Vec<_>>(),
                "frame_scores": trace.scores.to_vec(),
                "frame_mask": summary.frame_mask,
            });
            if args.emit_plot_data {
                v["plot"] = json!({
                    "shots": summary.shots.iter().map(interval).collect::<Vec<_>>(),
                    "shot_scores": gdasum::summary::shot_scores(trace.scores.view(), &summary.shots).means,
                    "diversity_weights": trace.diversity.to_vec(),
                    "budget": summary.budget,
                });
            }
            Ok(v)
        })
        .collect::<Result<_>>()?;
    write_json(&args.out, &envelope("gdasum-summaries", &config, json!({ "videos": videos })))?;
    eprintln!("summarized {} video(s) into {}", videos.len(), args.out.display());
    Ok(())
}

fn cmd_segment(mut config: RunConfig, args: SegmentArgs) -> Result<()> {
    if let Some(p) = args.penalty {
        config.kts.penalty = p;
    }
    if args.max_segments.is_some() {
        config.kts.max_segments = args.max_segments;
    }
    if !(config.kts.penalty >= 0.0) {
        return Err(gdasum::Error::InvalidArgument("penalty must be nonnegative".into()).into());
    }
    let records = load_manifest(&args.manifest)?;
    let videos: Vec<serde_json::Value> = records
        .par_iter()
        .map(|r| {
            let seg = kts_segment(r.features.to_f64().view(), &config.kts);
            json!({
                "video_id": r.id,
                "change_points": seg.change_points.boundaries,
                "shots": shots_from_changepoints(&seg.change_points).iter().map(interval).collect::<Vec<_>>(),
                "objective": seg.objective,
            })
        })
        .collect();
    write_json(&args.out, &envelope("gdasum-segments", &config, json!({ "videos": videos })))?;
    eprintln!("segmented {} video(s) into {}", videos.len(), args.out.display());
    Ok(())
}

/// Reference masks: user summaries when present, otherwise keyframe labels.
fn reference_masks(r: &VideoRecord) -> Result<Vec<Vec<u8>>> {
    let n = r.n_frames();
    match (&r.annotations.user_summaries, &r.annotations.keyframe_labels) {
        (Some(users), _) if !users.is_empty() => Ok(users.iter().map(|u| rasterize(u, n)).collect()),
        (_, Some(labels)) => Ok(vec![labels.clone()]),
        _ => Err(gdasum::Error::Annotation {
            id: r.id.clone(),
            message: "no user summaries or keyframe labels to evaluate against".into(),
        }
        .into()),
    }
}

fn cmd_eval(mut config: RunConfig, args: EvalArgs) -> Result<()> {
    apply_split_args(&mut config, &args.split);
    if let Some(r) = args.ratio {
        config.ratio = r;
    }
    let records = load_manifest(&args.split.manifest)?;
    let target = config.target_for(&records)?;
    let protocol = EvalProtocol::for_dataset(target);

    // (fold, checkpoint path, test ids)
    let jobs: Vec<(Option<usize>, PathBuf, Vec<String>)> = if args.checkpoint.is_dir() {
        load_splits(&records, &config)?
            .into_iter()
            .map(|s| (Some(s.fold_index), fold_checkpoint(&args.checkpoint, s.fold_index), s.test_ids))
            .collect()
    } else {
        vec![(None, args.checkpoint.clone(), records.iter().map(|r| r.id.clone()).collect())]
    };

    let mut rows: Vec<VideoMetrics> = Vec::new();
    let mut selections = Vec::new();
    for (fold, path, ids) in jobs {
        let ckpt = load_checkpoint(&path)?;
        let test = select(&records, &ids)?;
        let results: Vec<(VideoMetrics, ShotSelection)> = test
            .par_iter()
            .map(|r| {
                let (summary, _) = summarize_one(r, &ckpt, &config)?;
                let users = reference_masks(r)?;
                let metrics = evaluate_video(&r.id, fold, &summary.frame_mask, &users, protocol)?;
                let feats = shot_features(r.features.to_f64().view(), &summary.shots);
                let selected = (0..summary.shots.len()).filter(|&k| summary.selected[k]).collect();
                Ok((metrics, ShotSelection { shot_features: feats, selected }))
            })
            .collect::<Result<_>>()?;
        for (m, s) in results {
            rows.push(m);
            selections.push(s);
        }
    }
    // Videos with an empty summary have no nearest key shot.
    let with_keys: Vec<ShotSelection> = selections.into_iter().filter(|s| !s.selected.is_empty()).collect();
    let zeta = if with_keys.is_empty() {
        None
    } else {
        Some(diversity_zeta(&with_keys, config.zeta)?)
    };
    let report = MetricsReport::from_videos(protocol, rows, zeta);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("metrics.json"), &envelope("gdasum-metrics", &config, &report))?;
    let csv = args.out.join("metrics.csv");
    fs::write(&csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    eprintln!(
        "mean F-score {:.2} over {} video(s); report in {}",
        report.mean_fscore,
        report.per_video.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    let mut gc = GradcheckConfig::default();
    if let Some(n) = args.instances {
        gc.instances = n;
    }
    if let Some(s) = args.seed {
        gc.seed = s;
    }
    gc.sign_flip = args.inject_sign_flip;
    let report = run_gradcheck(&gc)?;
    write_json(
        &args.out,
        &json!({ "format": "gdasum-gradcheck", "version": OUTPUT_VERSION, "report": report }),
    )?;
    eprintln!(
        "max relative error {:.3e} (tolerance {:.0e}); report in {}",
        report.max_relative_error,
        gc.tolerance,
        args.out.display()
    );
    if !report.passed {
        return Err(gdasum::Error::Numerical("analytic and numerical gradients disagree".into()).into());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let sc = SyntheticConfig {
        n_videos: args.videos,
        n_frames: args.frames,
        dim: args.dim,
        seed: args.seed,
        include_change_points: args.change_points,
        ..Default::default()
    };
    let (records, _) = generate(&sc)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = args.out.join("manifest.json");
    write_manifest(&manifest, &records)?;
    eprintln!("wrote {} synthetic video(s) to {}", records.len(), manifest.display());
    Ok(())
}

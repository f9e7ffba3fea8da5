//! Browser demo: train a small model on planted-keyframe videos, segment a
//! video into shots, and run key-shot selection. Each export returns JSON.

use gdasum::dataset::{select, Setting, SplitSpec, VideoRecord};
use gdasum::eval::{fscore, rasterize};
use gdasum::kts::{kts_segment, shots_from_changepoints, KtsConfig, Shot};
use gdasum::summary::{budget_for, generate_summary, knapsack_select, ShotScores, ShotSource, DEFAULT_RATIO};
use gdasum::synthetic::{generate, PlantedVideo, SyntheticConfig};
use gdasum::train::{train, TrainConfig};
use gdasum::{Error, HyperParams, Result};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const DEMO_VIDEOS: usize = 8;

fn demo_data(seed: u64, n_videos: usize, change_points: bool) -> Result<(Vec<VideoRecord>, Vec<PlantedVideo>)> {
    let config = SyntheticConfig {
        n_videos,
        dim: 16,
        include_change_points: change_points,
        seed,
        ..Default::default()
    };
    generate(&config)
}

fn intervals(shots: &[Shot]) -> Vec<[usize; 2]> {
    shots.iter().map(|s| [s.start, s.end]).collect()
}

/// Trains on seven synthetic videos and summarizes the eighth.
pub fn train_and_summarize_json(seed: u64, epochs: usize, variation: bool) -> Result<Value> {
    let (records, planted) = demo_data(seed, DEMO_VIDEOS, false)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    let split = SplitSpec {
        setting: Setting::Canonical,
        fold_index: 0,
        seed,
        train_ids: ids[..DEMO_VIDEOS - 1].to_vec(),
        test_ids: ids[DEMO_VIDEOS - 1..].to_vec(),
    };
    let mut hyper = HyperParams {
        hidden: 64,
        embed: 32,
        dropout: 0.3,
        ..Default::default()
    };
    if !variation {
        hyper.loss_weights.variation = 0.0;
    }
    let config = TrainConfig {
        epochs,
        seed,
        ..Default::default()
    };
    let (params, report) = train(&records, &split, &config, &hyper)?;

    let test = &select(&records, &split.test_ids)?[0];
    let x = test.features.to_f64();
    let (summary, trace) = generate_summary(x.view(), &params, &hyper, DEFAULT_RATIO, ShotSource::Kts(KtsConfig::default()))?;
    let truth = rasterize(&test.annotations.user_summaries.as_ref().expect("planted")[0], test.n_frames());
    let prf = fscore(&summary.frame_mask, &truth)?;
    Ok(json!({
        "video_id": test.id,
        "epochs": report.epochs.iter().map(|e| json!({"epoch": e.epoch, "loss": e.loss.total})).collect::<Vec<_>>(),
        "frame_scores": trace.scores.to_vec(),
        "diversity": trace.diversity.to_vec(),
        "shots": intervals(&summary.shots),
        "selected": summary.selected,
        "frame_mask": summary.frame_mask,
        "planted_mask": truth,
        "clusters": planted[DEMO_VIDEOS - 1].shots.iter().map(|&(s, e, c)| [s, e, c]).collect::<Vec<_>>(),
        "precision": prf.precision,
        "recall": prf.recall,
        "fscore": prf.fscore,
    }))
}

/// Segments one synthetic video and reports the true boundaries alongside.
pub fn segment_json(seed: u64, penalty: f64, max_segments: Option<usize>) -> Result<Value> {
    if !(penalty >= 0.0) {
        return Err(Error::InvalidArgument("penalty must be nonnegative".into()));
    }
    let (records, planted) = demo_data(seed, 1, true)?;
    let r = &records[0];
    let config = KtsConfig {
        penalty,
        max_segments,
        ..Default::default()
    };
    let seg = kts_segment(r.features.to_f64().view(), &config);
    Ok(json!({
        "n_frames": r.n_frames(),
        "change_points": seg.change_points.boundaries,
        "true_change_points": r.annotations.change_points,
        "shots": intervals(&shots_from_changepoints(&seg.change_points)),
        "clusters": planted[0].shots.iter().map(|&(s, e, c)| [s, e, c]).collect::<Vec<_>>(),
        "key_shots": planted[0].key_shots,
        "scatter": seg.scatter,
        "objective": seg.objective,
    }))
}

/// 0/1 knapsack over consecutive shots of the given lengths.
pub fn knapsack_json(scores: &[f64], lengths: &[usize], ratio: f64) -> Result<Value> {
    if scores.len() != lengths.len() {
        return Err(Error::Shape(format!("{} scores but {} lengths", scores.len(), lengths.len())));
    }
    if lengths.contains(&0) {
        return Err(Error::InvalidArgument("shot lengths must be positive".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    let mut shots = Vec::with_capacity(lengths.len());
    let mut start = 0;
    for &l in lengths {
        shots.push(Shot { start, end: start + l });
        start += l;
    }
    let budget = budget_for(start, ratio);
    let summary = knapsack_select(
        &ShotScores {
            shots,
            means: scores.to_vec(),
            lengths: lengths.to_vec(),
        },
        budget,
    );
    Ok(json!({
        "n_frames": start,
        "budget": budget,
        "selected": summary.selected,
        "selected_frames": summary.selected_frames(),
        "value": summary.value,
    }))
}

fn to_js(result: Result<Value>) -> std::result::Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn train_and_summarize(seed: u32, epochs: u32, variation: bool) -> std::result::Result<String, JsError> {
    to_js(train_and_summarize_json(seed.into(), epochs as usize, variation))
}

/// `max_segments = 0` keeps the default cap.
#[wasm_bindgen]
pub fn segment(seed: u32, penalty: f64, max_segments: u32) -> std::result::Result<String, JsError> {
    let cap = (max_segments > 0).then_some(max_segments as usize);
    to_js(segment_json(seed.into(), penalty, cap))
}

#[wasm_bindgen]
pub fn knapsack(scores: Vec<f64>, lengths: Vec<u32>, ratio: f64) -> std::result::Result<String, JsError> {
    let lengths: Vec<usize> = lengths.into_iter().map(|l| l as usize).collect();
    to_js(knapsack_json(&scores, &lengths, ratio))
}

//! Per-video training loop.
//!
//! Each epoch visits the training videos in a freshly shuffled order and
//! applies one forward pass, one backward pass and one Adam update per
//! video. All randomness (initialization, shuffling, dropout) comes from a
//! single seeded stream, so a run is reproducible bit for bit.


use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{select, SourceDataset, SplitSpec, VideoRecord};
use crate::error::{Error, Result};
use crate::eval::{fscore, rasterize};
use crate::grad::backward;
use crate::kts::{ChangePoints, KtsConfig};
use crate::loss::{LossBreakdown, Objective};
use crate::model::{forward, init_params, Dropout, HyperParams, ModelParams};
use crate::optim::{adam_step, clip_grad_norm, AdamConfig, OptimizerState};
use crate::summary::{generate_summary, ShotSource, DEFAULT_RATIO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Supervised,
    Unsupervised,
    /// Labeled videos train supervised, unlabeled ones unsupervised.
    Semi,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Self::Supervised),
            "unsupervised" => Ok(Self::Unsupervised),
            "semi" => Ok(Self::Semi),
            other => Err(Error::InvalidArgument(format!("unknown training mode {other:?}"))),
        }
    }
}

/// Learning rate used when none is configured.
pub fn default_lr(source: SourceDataset) -> f64 {
    match source {
        SourceDataset::Summe => 5e-5,
        SourceDataset::Tvsum => 1e-4,
        SourceDataset::Other => 5e-4,
    }
}

/// Stop when the validation F-score has not improved for `patience` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    /// Fraction of the training videos held out for validation.
    pub validation_fraction: f64,
    pub ratio: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 20,
            validation_fraction: 0.2,
            ratio: DEFAULT_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    /// `None` picks [`default_lr`] for the split's target dataset.
    pub learning_rate: Option<f64>,
    /// Target mean score for unsupervised videos.
    pub sigma: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub grad_clip: Option<f64>,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Supervised,
            epochs: 200,
            learning_rate: None,
            sigma: 0.3,
            adam: AdamConfig::default(),
            seed: 0,
            grad_clip: Some(5.0),
            early_stop: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rate must be positive, got {lr}"));
            }
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("gradient clip must be positive, got {c}"));
            }
        }
        if let Some(es) = &self.early_stop {
            if !(es.validation_fraction > 0.0 && es.validation_fraction < 1.0) {
                return bad("validation fraction must lie in (0, 1)".into());
            }
            if es.patience == 0 {
                return bad("patience must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's videos.
    pub loss: LossBreakdown,
    pub n_supervised: usize,
    pub n_unsupervised: usize,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_fscore: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fold_index: usize,
    pub learning_rate: f64,
    pub epochs: Vec<EpochRecord>,
    pub early_stopped: bool,
    /// Epoch whose parameters were returned when early stopping is on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<std::path::PathBuf>,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

struct Sample<'a> {
    id: &'a str,
    x: Array2<f64>,
    labels: Option<&'a [u8]>,
}

fn target_source(records: &[&VideoRecord]) -> SourceDataset {
    records.first().map_or(SourceDataset::Other, |r| r.source_dataset)
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let started = std::time::Instant::now();
    move || started.elapsed().as_secs_f64()
}

/// wasm32-unknown-unknown has no clock; epochs report zero seconds.
#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

/// Trains on `split.train_ids` and returns the final parameters, or the best
/// validated ones when early stopping is enabled.
pub fn train(
    records: &[VideoRecord],
    split: &SplitSpec,
    config: &TrainConfig,
    hyper: &HyperParams,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    hyper.validate()?;
    let mut train_set = select(records, &split.train_ids)?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    let feature = train_set[0].features.dim();
    if let Some(r) = train_set.iter().find(|r| r.features.dim() != feature) {
        return Err(Error::DimensionMismatch {
            id: r.id.clone(),
            message: format!("feature dim {} differs from {feature}", r.features.dim()),
        });
    }
    match config.mode {
        TrainMode::Supervised => {
            if let Some(r) = train_set.iter().find(|r| !r.is_labeled()) {
                return Err(Error::Annotation {
                    id: r.id.clone(),
                    message: "supervised training needs keyframe labels".into(),
                });
            }
        }
        TrainMode::Semi => {
            if !train_set.iter().any(|r| r.is_labeled()) {
                return Err(Error::InvalidArgument(
                    "semi-supervised training needs at least one labeled video".into(),
                ));
            }
        }
        TrainMode::Unsupervised => {}
    }

    let test_set = select(records, &split.test_ids)?;
    let lr = config
        .learning_rate
        .unwrap_or_else(|| default_lr(target_source(if test_set.is_empty() { &train_set } else { &test_set })));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(hyper.dims(feature), &mut rng);

    let mut validation = Vec::new();
    if let Some(es) = &config.early_stop {
        train_set.shuffle(&mut rng);
        let n_val = ((train_set.len() as f64 * es.validation_fraction).round() as usize)
            .clamp(1, train_set.len().saturating_sub(1));
        if n_val == 0 {
            return Err(Error::InvalidArgument(
                "early stopping needs at least two training videos".into(),
            ));
        }
        validation = train_set.split_off(train_set.len() - n_val);
        train_set.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let samples: Vec<Sample<'_>> = train_set
        .iter()
        .map(|r| Sample {
            id: &r.id,
            x: r.features.to_f64(),
            labels: match config.mode {
                TrainMode::Unsupervised => None,
                _ => r.annotations.keyframe_labels.as_deref(),
            },
        })
        .collect();

    let mut state = OptimizerState::new(&params);
    let mut report = TrainReport {
        fold_index: split.fold_index,
        learning_rate: lr,
        epochs: Vec::with_capacity(config.epochs),
        early_stopped: false,
        best_epoch: None,
        checkpoint: None,
    };
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 1..=config.epochs {
        let started = stopwatch();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let (mut n_sup, mut n_unsup) = (0, 0);
        for &i in &order {
            let s = &samples[i];
            let objective = match s.labels {
                Some(k) => {
                    n_sup += 1;
                    Objective::Supervised { keyframes: k }
                }
                None => {
                    n_unsup += 1;
                    Objective::Unsupervised { sigma: config.sigma }
                }
            };
            let dropout = if hyper.dropout > 0.0 {
                Dropout::Sample(&mut rng)
            } else {
                Dropout::Off
            };
            let trace = forward(s.x.view(), &params, hyper, dropout).map_err(|e| at_video(e, s.id, epoch))?;
            let (loss, mut grads) =
                backward(&trace, s.x.view(), &params, hyper, objective).map_err(|e| at_video(e, s.id, epoch))?;
            if let Some(c) = config.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(&mut params, &grads, &mut state, lr, &config.adam).map_err(|e| at_video(e, s.id, epoch))?;
            sum.accumulate(&loss);
        }

        let validation_fscore = match &config.early_stop {
            Some(es) => Some(validation_fscore(&validation, &params, hyper, es.ratio)?),
            None => None,
        };
        report.epochs.push(EpochRecord {
            epoch,
            loss: sum.scaled(1.0 / samples.len() as f64),
            n_supervised: n_sup,
            n_unsupervised: n_unsup,
            seconds: started(),
            validation_fscore,
        });

        if let (Some(es), Some(f)) = (&config.early_stop, validation_fscore) {
            match &best {
                Some((b, _, _)) if f <= *b => {}
                _ => best = Some((f, epoch, params.clone())),
            }
            let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
            if epoch - best_epoch >= es.patience {
                report.early_stopped = true;
                break;
            }
        }
    }

    if let Some((_, epoch, p)) = best {
        report.best_epoch = Some(epoch);
        params = p;
    }
    Ok((params, report))
}

fn at_video(err: Error, id: &str, epoch: usize) -> Error {
    match err {
        Error::Numerical(m) => Error::Numerical(format!("video {id}, epoch {epoch}: {m}")),
        Error::NotPositiveDefinite { .. } => {
            Error::Numerical(format!("video {id}, epoch {epoch}: {err}"))
        }
        other => other,
    }
}

/// Mean F-score of generated summaries against each video's keyframe labels
/// or, if absent, its first user summary.
fn validation_fscore(
    videos: &[&VideoRecord],
    params: &ModelParams,
    hyper: &HyperParams,
    ratio: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in videos {
        let n = r.n_frames();
        let reference = match (&r.annotations.keyframe_labels, &r.annotations.user_summaries) {
            (Some(k), _) => k.clone(),
            (None, Some(u)) if !u.is_empty() => rasterize(&u[0], n),
            _ => continue,
        };
        let x = r.features.to_f64();
        let cp;
        let source = match &r.annotations.change_points {
            Some(b) => {
                cp = ChangePoints::new(b.clone(), n)?;
                ShotSource::Precomputed(&cp)
            }
            None => ShotSource::Kts(KtsConfig::default()),
        };
        let (summary, _) = generate_summary(x.view(), params, hyper, ratio, source)?;
        total += fscore(&summary.frame_mask, &reference)?.fscore;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_splits, Setting};
    use crate::synthetic::{generate, SyntheticConfig};

    fn tiny_hyper() -> HyperParams {
        HyperParams {
            hidden: 16,
            embed: 8,
            // At width 8 a 0.6 rate often drops a whole row.
            dropout: 0.2,
            ..Default::default()
        }
    }

    fn data() -> Vec<VideoRecord> {
        generate(&SyntheticConfig {
            n_videos: 5,
            n_frames: 60,
            dim: 8,
            key_shot_len: (4, 5),
            shot_len: (6, 10),
            ..Default::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let recs = data();
        let split = &make_splits(&recs, Setting::Canonical, SourceDataset::Other, 1).unwrap()[0];
        let config = TrainConfig {
            epochs: 0,
            seed: 3,
            ..Default::default()
        };
        let (p, report) = train(&recs, split, &config, &tiny_hyper()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(p, init_params(tiny_hyper().dims(8), &mut rng));
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn deterministic_and_counts_videos() {
        let mut recs = data();
        recs[1].annotations.keyframe_labels = None;
        let split = &make_splits(&recs, Setting::Canonical, SourceDataset::Other, 1).unwrap()[0];
        let config = TrainConfig {
            mode: TrainMode::Semi,
            epochs: 2,
            learning_rate: Some(1e-3),
            ..Default::default()
        };
        let (a, ra) = train(&recs, split, &config, &tiny_hyper()).unwrap();
        let (b, rb) = train(&recs, split, &config, &tiny_hyper()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epochs.len(), 2);
        for (x, y) in ra.epochs.iter().zip(&rb.epochs) {
            assert_eq!(x.loss, y.loss);
        }
        let e = &ra.epochs[0];
        assert_eq!(e.n_supervised + e.n_unsupervised, split.train_ids.len());
        let unlabeled = split.train_ids.iter().filter(|id| **id == recs[1].id).count();
        assert_eq!(e.n_unsupervised, unlabeled);
        assert_eq!(ra.to_json_lines().unwrap().lines().count(), 2);
    }

    #[test]
    fn supervised_requires_labels() {
        let mut recs = data();
        for r in &mut recs {
            r.annotations.keyframe_labels = None;
        }
        let split = &make_splits(&recs, Setting::Canonical, SourceDataset::Other, 1).unwrap()[0];
        let config = TrainConfig {
            epochs: 1,
            ..Default::default()
        };
        assert!(train(&recs, split, &config, &tiny_hyper()).is_err());
        let semi = TrainConfig {
            mode: TrainMode::Semi,
            ..config.clone()
        };
        assert!(train(&recs, split, &semi, &tiny_hyper()).is_err());
        let unsup = TrainConfig {
            mode: TrainMode::Unsupervised,
            ..config
        };
        train(&recs, split, &unsup, &tiny_hyper()).unwrap();
    }

    #[test]
    fn early_stop_returns_best_epoch() {
        let recs = data();
        let split = SplitSpec {
            setting: Setting::Canonical,
            fold_index: 0,
            seed: 0,
            train_ids: recs.iter().map(|r| r.id.clone()).collect(),
            test_ids: vec![],
        };
        let config = TrainConfig {
            epochs: 6,
            learning_rate: Some(1e-3),
            early_stop: Some(EarlyStop {
                patience: 2,
                ..Default::default()
            }),
            ..Default::default()
        };
        let (_, report) = train(&recs, &split, &config, &tiny_hyper()).unwrap();
        assert!(report.best_epoch.is_some());
        assert!(report.epochs.iter().all(|e| e.validation_fscore.is_some()));
    }
}

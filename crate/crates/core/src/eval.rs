//! Summary evaluation: frame-overlap F-score against user summaries, and the
//! shot-level diversity metric ζ.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{Interval, SourceDataset};
use crate::error::{Error, Result};
use crate::kts::Shot;

/// How per-user F-scores of one video are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalProtocol {
    MaxOverUsers,
    MeanOverUsers,
}

impl EvalProtocol {
    /// SumMe-style benchmarks take the best match, everything else averages.
    pub fn for_dataset(source: SourceDataset) -> Self {
        match source {
            SourceDataset::Summe => Self::MaxOverUsers,
            SourceDataset::Tvsum | SourceDataset::Other => Self::MeanOverUsers,
        }
    }
}

/// Precision, recall and F-score, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Frame-overlap precision/recall/F between two 0/1 masks.
///
/// Two empty masks agree perfectly (F = 100); a single empty mask scores zero.
pub fn fscore(machine: &[u8], user: &[u8]) -> Result<Prf> {
    if machine.len() != user.len() {
        return Err(Error::Shape(format!(
            "machine mask has {} frames, user mask {}",
            machine.len(),
            user.len()
        )));
    }
    let m: usize = machine.iter().map(|&v| usize::from(v != 0)).sum();
    let u: usize = user.iter().map(|&v| usize::from(v != 0)).sum();
    let overlap = machine
        .iter()
        .zip(user)
        .filter(|(&a, &b)| a != 0 && b != 0)
        .count();
    let prf = match (m, u) {
        (0, 0) => Prf {
            precision: 100.0,
            recall: 100.0,
            fscore: 100.0,
        },
        (0, _) | (_, 0) => Prf {
            precision: 0.0,
            recall: 0.0,
            fscore: 0.0,
        },
        _ => {
            let p = overlap as f64 / m as f64;
            let r = overlap as f64 / u as f64;
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            Prf {
                precision: 100.0 * p,
                recall: 100.0 * r,
                fscore: 100.0 * f,
            }
        }
    };
    Ok(prf)
}

pub fn protocol_aggregate(per_user: &[f64], protocol: EvalProtocol) -> Result<f64> {
    if per_user.is_empty() {
        return Err(Error::InvalidArgument("no user summaries to aggregate".into()));
    }
    Ok(match protocol {
        EvalProtocol::MaxOverUsers => per_user.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        EvalProtocol::MeanOverUsers => per_user.iter().sum::<f64>() / per_user.len() as f64,
    })
}

/// Frame mask of a set of half-open intervals.
pub fn rasterize(intervals: &[Interval], n_frames: usize) -> Vec<u8> {
    let mut mask = vec![0u8; n_frames];
    for &[s, e] in intervals {
        mask[s.min(n_frames)..e.min(n_frames)].fill(1);
    }
    mask
}

/// Mean feature vector of each shot, one row per shot.
pub fn shot_features(x: ArrayView2<'_, f64>, shots: &[Shot]) -> Array2<f64> {
    let mut out = Array2::zeros((shots.len(), x.ncols()));
    for (mut row, s) in out.rows_mut().into_iter().zip(shots) {
        let mean = x
            .slice(ndarray::s![s.start..s.end, ..])
            .mean_axis(ndarray::Axis(0))
            .expect("non-empty shot");
        row.assign(&mean);
    }
    out
}

/// Shot features of one video together with its selected key shots.
#[derive(Debug, Clone)]
pub struct ShotSelection {
    pub shot_features: Array2<f64>,
    pub selected: Vec<usize>,
}

/// Normalization of the ζ double sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZetaNormalization {
    /// `(1/M) Σ_m (1/T_m) Σ_i ...`, each video normalized by its own shot count.
    #[default]
    PerVideo,
    /// `(Σ_m Σ_i ...) / Σ_m T_m`, one pooled shot count.
    Global,
}

/// Mean distance from every shot to its nearest selected key shot.
pub fn diversity_zeta(videos: &[ShotSelection], normalization: ZetaNormalization) -> Result<f64> {
    if videos.is_empty() {
        return Err(Error::InvalidArgument("no videos for the diversity metric".into()));
    }
    let mut per_video = Vec::with_capacity(videos.len());
    let mut pooled = 0.0;
    let mut total_shots = 0usize;
    for (m, v) in videos.iter().enumerate() {
        if v.selected.is_empty() {
            return Err(Error::InvalidArgument(format!("video {m} has no selected shots")));
        }
        let t = v.shot_features.nrows();
        if let Some(&bad) = v.selected.iter().find(|&&q| q >= t) {
            return Err(Error::InvalidArgument(format!(
                "video {m}: selected shot {bad} out of range ({t} shots)"
            )));
        }
        let sum: f64 = v
            .shot_features
            .rows()
            .into_iter()
            .map(|shot| {
                v.selected
                    .iter()
                    .map(|&q| {
                        let key = v.shot_features.row(q);
                        key.iter()
                            .zip(shot)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        per_video.push(sum / t as f64);
        pooled += sum;
        total_shots += t;
    }
    Ok(match normalization {
        ZetaNormalization::PerVideo => per_video.iter().sum::<f64>() / videos.len() as f64,
        ZetaNormalization::Global => pooled / total_shots as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
    pub per_user_fscore: Vec<f64>,
}

/// Scores one machine mask against every user mask; precision and recall are
/// those of the user whose F-score is reported under `max`, or averaged
/// under `mean`.
pub fn evaluate_video(
    video_id: &str,
    fold: Option<usize>,
    machine: &[u8],
    users: &[Vec<u8>],
    protocol: EvalProtocol,
) -> Result<VideoMetrics> {
    let prfs = users
        .iter()
        .map(|u| fscore(machine, u))
        .collect::<Result<Vec<_>>>()?;
    let per_user: Vec<f64> = prfs.iter().map(|p| p.fscore).collect();
    let f = protocol_aggregate(&per_user, protocol)?;
    let (precision, recall) = match protocol {
        EvalProtocol::MaxOverUsers => {
            let best = prfs
                .iter()
                .find(|p| p.fscore == f)
                .expect("aggregate comes from the list");
            (best.precision, best.recall)
        }
        EvalProtocol::MeanOverUsers => {
            let k = prfs.len() as f64;
            (
                prfs.iter().map(|p| p.precision).sum::<f64>() / k,
                prfs.iter().map(|p| p.recall).sum::<f64>() / k,
            )
        }
    };
    Ok(VideoMetrics {
        video_id: video_id.to_string(),
        fold,
        precision,
        recall,
        fscore: f,
        per_user_fscore: per_user,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: EvalProtocol,
    pub per_video: Vec<VideoMetrics>,
    /// Mean F-score of each fold's test videos.
    pub per_fold: BTreeMap<usize, f64>,
    /// Mean over folds, or over videos when no folds are recorded.
    pub mean_fscore: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
}

impl MetricsReport {
    pub fn from_videos(protocol: EvalProtocol, per_video: Vec<VideoMetrics>, zeta: Option<f64>) -> Self {
        let mut folds: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for v in &per_video {
            if let Some(f) = v.fold {
                folds.entry(f).or_default().push(v.fscore);
            }
        }
        let per_fold: BTreeMap<usize, f64> = folds
            .into_iter()
            .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        let mean_fscore = if per_fold.is_empty() {
            if per_video.is_empty() {
                0.0
            } else {
                per_video.iter().map(|v| v.fscore).sum::<f64>() / per_video.len() as f64
            }
        } else {
            per_fold.values().sum::<f64>() / per_fold.len() as f64
        };
        Self {
            protocol,
            per_video,
            per_fold,
            mean_fscore,
            zeta,
        }
    }

    /// `video_id,fold,precision,recall,fscore` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,fold,precision,recall,fscore\n");
        for v in &self.per_video {
            let fold = v.fold.map(|f| f.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{:.4},{:.4},{:.4}\n",
                v.video_id, fold, v.precision, v.recall, v.fscore
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fscore_hand_example() {
        // overlap 3, machine 5, user 6
        let machine = [1, 1, 1, 1, 1, 0, 0, 0, 0];
        let user = [1, 1, 1, 0, 0, 1, 1, 1, 0];
        let prf = fscore(&machine, &user).unwrap();
        assert!((prf.precision - 60.0).abs() < 1e-12);
        assert!((prf.recall - 50.0).abs() < 1e-12);
        assert!((prf.fscore - 600.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn fscore_conventions() {
        assert_eq!(fscore(&[1, 1, 0], &[1, 1, 0]).unwrap().fscore, 100.0);
        assert_eq!(fscore(&[1, 0, 0], &[0, 1, 1]).unwrap().fscore, 0.0);
        assert_eq!(fscore(&[0, 0], &[0, 0]).unwrap().fscore, 100.0);
        assert_eq!(fscore(&[0, 0], &[1, 0]).unwrap().fscore, 0.0);
        assert_eq!(fscore(&[1, 0], &[0, 0]).unwrap().fscore, 0.0);
        assert!(fscore(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn aggregation() {
        assert_eq!(protocol_aggregate(&[40.0, 60.0], EvalProtocol::MaxOverUsers).unwrap(), 60.0);
        assert_eq!(protocol_aggregate(&[40.0, 60.0], EvalProtocol::MeanOverUsers).unwrap(), 50.0);
        for p in [EvalProtocol::MaxOverUsers, EvalProtocol::MeanOverUsers] {
            assert_eq!(protocol_aggregate(&[42.0], p).unwrap(), 42.0);
        }
        assert!(protocol_aggregate(&[], EvalProtocol::MaxOverUsers).is_err());
        assert_eq!(EvalProtocol::for_dataset(SourceDataset::Summe), EvalProtocol::MaxOverUsers);
        assert_eq!(EvalProtocol::for_dataset(SourceDataset::Tvsum), EvalProtocol::MeanOverUsers);
    }

    #[test]
    fn zeta_hand_examples() {
        let v = ShotSelection {
            shot_features: array![[0.0], [1.0], [10.0]],
            selected: vec![0, 2],
        };
        let z = diversity_zeta(std::slice::from_ref(&v), ZetaNormalization::PerVideo).unwrap();
        assert!((z - 1.0 / 3.0).abs() < 1e-15);

        let all = ShotSelection {
            shot_features: array![[0.0, 1.0], [1.0, 2.0], [10.0, 0.0]],
            selected: vec![0, 1, 2],
        };
        assert_eq!(diversity_zeta(&[all], ZetaNormalization::PerVideo).unwrap(), 0.0);

        let twice = [v.clone(), v.clone()];
        let z2 = diversity_zeta(&twice, ZetaNormalization::PerVideo).unwrap();
        assert!((z2 - z).abs() < 1e-15);

        let empty = ShotSelection {
            shot_features: array![[0.0]],
            selected: vec![],
        };
        assert!(diversity_zeta(&[empty], ZetaNormalization::PerVideo).is_err());
    }

    #[test]
    fn zeta_global_pools_shot_counts() {
        let a = ShotSelection {
            shot_features: array![[0.0], [1.0], [10.0]],
            selected: vec![0, 2],
        };
        let b = ShotSelection {
            shot_features: array![[0.0], [4.0]],
            selected: vec![0],
        };
        let per = diversity_zeta(&[a.clone(), b.clone()], ZetaNormalization::PerVideo).unwrap();
        let glob = diversity_zeta(&[a, b], ZetaNormalization::Global).unwrap();
        assert!((per - (1.0 / 3.0 + 2.0) / 2.0).abs() < 1e-15);
        assert!((glob - 5.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn raster_and_report() {
        assert_eq!(rasterize(&[[1, 3], [4, 5]], 6), vec![0, 1, 1, 0, 1, 0]);
        let v = evaluate_video("a", Some(0), &[1, 1, 0, 0], &[vec![1, 1, 0, 0], vec![0, 0, 1, 1]], EvalProtocol::MaxOverUsers)
            .unwrap();
        assert_eq!(v.fscore, 100.0);
        let w = evaluate_video("b", Some(1), &[0, 0, 0, 0], &[vec![1, 0, 0, 0]], EvalProtocol::MaxOverUsers).unwrap();
        assert_eq!(w.fscore, 0.0);
        let r = MetricsReport::from_videos(EvalProtocol::MaxOverUsers, vec![v, w], None);
        assert_eq!(r.per_fold.len(), 2);
        assert_eq!(r.mean_fscore, 50.0);
        assert!(r.to_csv().starts_with("video_id,fold"));
    }
}

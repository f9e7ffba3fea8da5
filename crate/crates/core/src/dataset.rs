//! Feature files, manifests and cross-validation splits.
//!
//! A manifest is a JSON document listing videos; each video points at a
//! headerless little-endian `f32` file holding its `n_frames x dim` feature
//! matrix in row-major order. Paths are resolved relative to the manifest.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of cross-validation folds for the canonical and augmented settings.
pub const N_FOLDS: usize = 5;

/// Per-frame descriptors of one video, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatures {
    data: Array2<f32>,
}

impl FrameFeatures {
    pub fn new(data: Array2<f32>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                id: String::new(),
                frame: idx.0,
                column: idx.1,
            });
        }
        Ok(Self { data })
    }

    /// Rounds `data` to `f32`, the precision of the on-disk format.
    pub fn from_f64(data: &Array2<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| v as f32))
    }

    pub fn n_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in self.data.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(bytes: &[u8], n_frames: usize, dim: usize) -> Result<Self> {
        let expected = n_frames
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Shape("feature dimensions overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::DimensionMismatch {
                id: String::new(),
                message: format!(
                    "expected {expected} bytes for {n_frames}x{dim} f32, found {}",
                    bytes.len()
                ),
            });
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let data = Array2::from_shape_vec((n_frames, dim), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_le_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, n_frames: usize, dim: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_le_bytes(&bytes, n_frames, dim)
    }
}

/// Half-open frame interval `[start, end)`.
pub type Interval = [usize; 2];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Annotations {
    /// Ground-truth keyframe indicators, one 0/1 entry per frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe_labels: Option<Vec<u8>>,
    /// One list of disjoint sorted intervals per annotator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_summaries: Option<Vec<Vec<Interval>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance_scores: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_points: Option<Vec<usize>>,
}

impl Annotations {
    pub fn validate(&self, id: &str, n_frames: usize) -> Result<()> {
        let bad = |message: String| Error::Annotation {
            id: id.to_string(),
            message,
        };
        if let Some(labels) = &self.keyframe_labels {
            if labels.len() != n_frames {
                return Err(bad(format!(
                    "keyframe_labels has length {}, expected {n_frames}",
                    labels.len()
                )));
            }
            if labels.iter().any(|&v| v > 1) {
                return Err(bad("keyframe_labels must be 0/1".into()));
            }
        }
        if let Some(users) = &self.user_summaries {
            for (u, intervals) in users.iter().enumerate() {
                let mut prev_end = 0;
                for (k, &[s, e]) in intervals.iter().enumerate() {
                    if s >= e || e > n_frames || (k > 0 && s < prev_end) {
                        return Err(bad(format!(
                            "user {u}: interval [{s}, {e}) is empty, out of range, overlapping or unsorted"
                        )));
                    }
                    prev_end = e;
                }
            }
        }
        if let Some(scores) = &self.importance_scores {
            for (u, s) in scores.iter().enumerate() {
                if s.len() != n_frames {
                    return Err(bad(format!(
                        "importance_scores[{u}] has length {}, expected {n_frames}",
                        s.len()
                    )));
                }
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(bad(format!("importance_scores[{u}] has non-finite values")));
                }
            }
        }
        if let Some(cps) = &self.change_points {
            let mut prev = 0;
            for &b in cps {
                if b <= prev || b >= n_frames {
                    return Err(bad(format!(
                        "change point {b} is not strictly increasing within (0, {n_frames})"
                    )));
                }
                prev = b;
            }
        }
        Ok(())
    }

    pub fn keyframe_subset(&self) -> Option<Vec<usize>> {
        self.keyframe_labels.as_ref().map(|labels| {
            labels
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1)
                .map(|(i, _)| i)
                .collect()
        })
    }
}

/// Which benchmark family a video belongs to. Datasets other than the two
/// primary benchmarks (OVP, YouTube, VTW, ...) are all `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum SourceDataset {
    Summe,
    Tvsum,
    Other,
}

impl From<String> for SourceDataset {
    fn from(s: String) -> Self {
        s.parse().unwrap_or(Self::Other)
    }
}

impl From<SourceDataset> for String {
    fn from(s: SourceDataset) -> Self {
        s.to_string()
    }
}

impl FromStr for SourceDataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().trim_end_matches("-like") {
            "summe" => Ok(Self::Summe),
            "tvsum" => Ok(Self::Tvsum),
            "other" => Ok(Self::Other),
            _ => Err(Error::InvalidArgument(format!("unknown dataset {s:?}"))),
        }
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Summe => "summe",
            Self::Tvsum => "tvsum",
            Self::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub features: FrameFeatures,
    pub annotations: Annotations,
    pub source_dataset: SourceDataset,
    pub fps: Option<f64>,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    /// Videos with fewer than two frames load fine but have no frame pairs.
    pub fn is_degenerate(&self) -> bool {
        self.n_frames() < 2
    }

    pub fn is_labeled(&self) -> bool {
        self.annotations.keyframe_labels.is_some()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    videos: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    n_frames: usize,
    dim: usize,
    features_file: PathBuf,
    #[serde(default = "default_source")]
    source_dataset: SourceDataset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    #[serde(default)]
    annotations: Annotations,
}

fn default_source() -> SourceDataset {
    SourceDataset::Other
}

pub fn load_manifest(path: &Path) -> Result<Vec<VideoRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(manifest.videos.len());
    for entry in manifest.videos {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::DuplicateId(entry.id));
        }
        let file = base.join(&entry.features_file);
        let features =
            FrameFeatures::read(&file, entry.n_frames, entry.dim).map_err(|e| with_id(e, &entry.id))?;
        entry.annotations.validate(&entry.id, entry.n_frames)?;
        records.push(VideoRecord {
            id: entry.id,
            features,
            annotations: entry.annotations,
            source_dataset: entry.source_dataset,
            fps: entry.fps,
        });
    }
    Ok(records)
}

fn with_id(err: Error, id: &str) -> Error {
    match err {
        Error::DimensionMismatch { message, .. } => Error::DimensionMismatch {
            id: id.to_string(),
            message,
        },
        Error::NonFinite { frame, column, .. } => Error::NonFinite {
            id: id.to_string(),
            frame,
            column,
        },
        other => other,
    }
}

/// Writes `records` as a manifest at `path`, with one `<id>.f32` feature file
/// per video next to it.
pub fn write_manifest(path: &Path, records: &[VideoRecord]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut videos = Vec::with_capacity(records.len());
    for r in records {
        let file_name = PathBuf::from(format!("{}.f32", r.id));
        r.features.write(&base.join(&file_name))?;
        videos.push(ManifestEntry {
            id: r.id.clone(),
            n_frames: r.n_frames(),
            dim: r.features.dim(),
            features_file: file_name,
            source_dataset: r.source_dataset,
            fps: r.fps,
            annotations: r.annotations.clone(),
        });
    }
    let text = serde_json::to_string_pretty(&ManifestFile { videos })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Canonical,
    Augmented,
    Transfer,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Self::Canonical),
            "augmented" => Ok(Self::Augmented),
            "transfer" => Ok(Self::Transfer),
            _ => Err(Error::InvalidArgument(format!("unknown setting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub setting: Setting,
    pub fold_index: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Builds the evaluation splits for `target`.
///
/// Canonical and augmented shuffle the target ids with a seeded PRNG and cut
/// them into five contiguous test blocks; augmented additionally trains on
/// every non-target record. Transfer is a single split that trains on the
/// non-target records and tests on the whole target dataset.
pub fn make_splits(
    records: &[VideoRecord],
    setting: Setting,
    target: SourceDataset,
    seed: u64,
) -> Result<Vec<SplitSpec>> {
    let mut target_ids: Vec<String> = records
        .iter()
        .filter(|r| r.source_dataset == target)
        .map(|r| r.id.clone())
        .collect();
    let mut aux_ids: Vec<String> = records
        .iter()
        .filter(|r| r.source_dataset != target)
        .map(|r| r.id.clone())
        .collect();
    // Only the id set matters, not manifest order.
    target_ids.sort();
    aux_ids.sort();

    if setting == Setting::Transfer {
        if target_ids.is_empty() || aux_ids.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "transfer needs target ({}) and auxiliary ({}) videos",
                target_ids.len(),
                aux_ids.len()
            )));
        }
        return Ok(vec![SplitSpec {
            setting,
            fold_index: 0,
            seed,
            train_ids: aux_ids,
            test_ids: target_ids,
        }]);
    }

    if target_ids.len() < N_FOLDS {
        return Err(Error::InvalidArgument(format!(
            "{setting:?} setting needs at least {N_FOLDS} {target} videos, found {}",
            target_ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    target_ids.shuffle(&mut rng);

    let n = target_ids.len();
    let mut splits = Vec::with_capacity(N_FOLDS);
    let mut start = 0;
    for fold in 0..N_FOLDS {
        let size = n / N_FOLDS + usize::from(fold < n % N_FOLDS);
        let test: Vec<String> = target_ids[start..start + size].to_vec();
        let mut train: Vec<String> = target_ids[..start]
            .iter()
            .chain(&target_ids[start + size..])
            .cloned()
            .collect();
        if setting == Setting::Augmented {
            train.extend(aux_ids.iter().cloned());
        }
        splits.push(SplitSpec {
            setting,
            fold_index: fold,
            seed,
            train_ids: train,
            test_ids: test,
        });
        start += size;
    }
    Ok(splits)
}

/// Looks up records by id in split order.
pub fn select<'a>(records: &'a [VideoRecord], ids: &[String]) -> Result<Vec<&'a VideoRecord>> {
    ids.iter()
        .map(|id| {
            records
                .iter()
                .find(|r| &r.id == id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown video id {id:?}")))
        })
        .collect()
}

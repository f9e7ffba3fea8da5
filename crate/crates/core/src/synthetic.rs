//! Planted-keyframe benchmark.
//!
//! Every video is a sequence of shots, each a run of frames drawn around one
//! of a few Gaussian cluster centers, with consecutive shots on different
//! clusters. A fixed subset of the clusters is salient: each salient cluster
//! appears in exactly one shot per video, and those shots are the planted
//! keyframes. By default key shots share the length range of the others, so
//! only their content sets them apart.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Annotations, FrameFeatures, SourceDataset, VideoRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_videos: usize,
    pub n_frames: usize,
    pub dim: usize,
    pub n_clusters: usize,
    pub n_salient: usize,
    /// Inclusive length range of planted key shots.
    pub key_shot_len: (usize, usize),
    /// Inclusive length range of every other shot.
    pub shot_len: (usize, usize),
    /// Standard deviation of frames around their center.
    pub noise: f64,
    /// Also record the true shot boundaries as precomputed change points.
    pub include_change_points: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_videos: 40,
            n_frames: 120,
            dim: 32,
            n_clusters: 6,
            n_salient: 1,
            key_shot_len: (8, 16),
            shot_len: (8, 16),
            noise: 0.5,
            include_change_points: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_clusters < self.n_salient + 2 {
            return bad("need at least two non-salient clusters");
        }
        if self.key_shot_len.0 == 0 || self.key_shot_len.0 > self.key_shot_len.1 {
            return bad("invalid key shot length range");
        }
        if self.shot_len.0 == 0 || self.shot_len.0 > self.shot_len.1 {
            return bad("invalid shot length range");
        }
        let worst_key = self.n_salient * self.key_shot_len.1;
        // Key shots are separated by at least one regular shot.
        if self.n_frames < worst_key + (self.n_salient + 1) * self.shot_len.1 {
            return bad("videos are too short for the planted shots");
        }
        if self.dim == 0 || !(self.noise >= 0.0) {
            return bad("dim must be positive and noise nonnegative");
        }
        Ok(())
    }
}

/// Ground truth kept alongside the generated records.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedVideo {
    /// `(start, end, cluster)` per shot.
    pub shots: Vec<(usize, usize, usize)>,
    pub key_shots: Vec<usize>,
}

/// Records carry keyframe labels, a single user summary equal to the planted
/// key shots and, on request, the true change points.
pub fn generate(config: &SyntheticConfig) -> Result<(Vec<VideoRecord>, Vec<PlantedVideo>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let centers = Array2::from_shape_fn((config.n_clusters, config.dim), |_| unit.sample(&mut rng));
    let noise = Normal::new(0.0, config.noise).expect("finite noise");

    let mut records = Vec::with_capacity(config.n_videos);
    let mut planted = Vec::with_capacity(config.n_videos);
    for v in 0..config.n_videos {
        let layout = shot_layout(config, &mut rng);
        let n = config.n_frames;
        let mut x = Array2::<f64>::zeros((n, config.dim));
        let mut labels = vec![0u8; n];
        let mut intervals = Vec::new();
        for (k, &(s, e, c)) in layout.shots.iter().enumerate() {
            for t in s..e {
                for j in 0..config.dim {
                    x[[t, j]] = centers[[c, j]] + noise.sample(&mut rng);
                }
            }
            if layout.key_shots.contains(&k) {
                labels[s..e].fill(1);
                intervals.push([s, e]);
            }
        }
        let change_points = config
            .include_change_points
            .then(|| layout.shots.iter().skip(1).map(|&(s, _, _)| s).collect());
        records.push(VideoRecord {
            id: format!("synth_{v:03}"),
            features: FrameFeatures::from_f64(&x)?,
            annotations: Annotations {
                keyframe_labels: Some(labels),
                user_summaries: Some(vec![intervals]),
                importance_scores: None,
                change_points,
            },
            source_dataset: SourceDataset::Other,
            fps: None,
        });
        planted.push(layout);
    }
    Ok((records, planted))
}

fn shot_layout(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> PlantedVideo {
    let n = config.n_frames;
    let key_lens: Vec<usize> = (0..config.n_salient)
        .map(|_| rng.random_range(config.key_shot_len.0..=config.key_shot_len.1))
        .collect();
    let key_total: usize = key_lens.iter().sum();

    // Fill the remaining frames with regular shots, then absorb any remainder
    // too short for a shot into the last one.
    let mut regular = Vec::new();
    let mut left = n - key_total;
    while left > 0 {
        let l = rng.random_range(config.shot_len.0..=config.shot_len.1).min(left);
        regular.push(l);
        left -= l;
    }
    while regular.len() > 1 && *regular.last().expect("nonempty") < config.shot_len.0 {
        let tail = regular.pop().expect("nonempty");
        *regular.last_mut().expect("nonempty") += tail;
    }
    while regular.len() < config.n_salient + 1 {
        let (i, &l) = regular
            .iter()
            .enumerate()
            .max_by_key(|(_, &l)| l)
            .expect("nonempty");
        regular[i] = l / 2;
        regular.insert(i + 1, l - l / 2);
    }

    // Key shots go into distinct gaps between regular shots, never first.
    let mut gaps: Vec<usize> = (1..regular.len()).collect();
    gaps.shuffle(rng);
    let mut key_gaps: Vec<usize> = gaps[..config.n_salient].to_vec();
    key_gaps.sort_unstable();
    let mut salient: Vec<usize> = (0..config.n_salient).collect();
    salient.shuffle(rng);

    let mut shots = Vec::new();
    let mut key_shots = Vec::new();
    let mut start = 0;
    let mut prev: Option<usize> = None;
    let mut next_key = 0;
    for (r, &len) in regular.iter().enumerate() {
        if next_key < key_gaps.len() && key_gaps[next_key] == r {
            let c = salient[next_key];
            let l = key_lens[next_key];
            key_shots.push(shots.len());
            shots.push((start, start + l, c));
            start += l;
            prev = Some(c);
            next_key += 1;
        }
        let c = loop {
            let c = rng.random_range(config.n_salient..config.n_clusters);
            if prev != Some(c) {
                break c;
            }
        };
        shots.push((start, start + len, c));
        start += len;
        prev = Some(c);
    }
    debug_assert_eq!(start, n);
    PlantedVideo { shots, key_shots }
}

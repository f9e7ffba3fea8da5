//! Kernel temporal segmentation.
//!
//! A video is split into `m` contiguous shots minimizing the total
//! within-shot scatter plus a penalty `C · m · (log(N/m) + 1)`. Segment
//! costs come from prefix sums without rescanning frames, and the optimum
//! for every `m` up to `max_segments` comes from one dynamic program.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open frame range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shot {
    pub start: usize,
    pub end: usize,
}

impl Shot {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Sorted shot boundaries strictly inside `(0, n_frames)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangePoints {
    pub boundaries: Vec<usize>,
    pub n_frames: usize,
}

impl ChangePoints {
    pub fn new(boundaries: Vec<usize>, n_frames: usize) -> Result<Self> {
        let mut prev = 0;
        for &b in &boundaries {
            if b <= prev || b >= n_frames {
                return Err(Error::InvalidArgument(format!(
                    "boundary {b} is not strictly increasing within (0, {n_frames})"
                )));
            }
            prev = b;
        }
        Ok(Self {
            boundaries,
            n_frames,
        })
    }

    pub fn n_segments(&self) -> usize {
        self.boundaries.len() + 1
    }
}

pub fn shots_from_changepoints(cp: &ChangePoints) -> Vec<Shot> {
    let mut shots = Vec::with_capacity(cp.n_segments());
    let mut start = 0;
    for &b in cp.boundaries.iter().chain(std::iter::once(&cp.n_frames)) {
        shots.push(Shot { start, end: b });
        start = b;
    }
    shots
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelCost {
    /// Squared Euclidean scatter around the segment mean (linear kernel).
    Linear,
    /// Scatter in the feature space of `k(a, b) = exp(−γ‖a − b‖²)`.
    Rbf { gamma: f64 },
}

/// Within-segment scatter answered from prefix sums.
#[derive(Debug, Clone)]
pub enum SegmentCost {
    Linear {
        /// Row `t` holds `Σ_{s<t} x_s`.
        prefix: Array2<f64>,
        /// Entry `t` holds `Σ_{s<t} ‖x_s‖²`.
        prefix_sq: Array1<f64>,
    },
    Kernel {
        /// `Σ_{s<t} k(x_s, x_s)`.
        prefix_diag: Array1<f64>,
        /// Rectangle sums of the Gram matrix, `(N+1) x (N+1)`.
        prefix_gram: Array2<f64>,
    },
}

impl SegmentCost {
    pub fn new(x: ArrayView2<'_, f64>, kernel: KernelCost) -> Self {
        let (n, d) = x.dim();
        match kernel {
            KernelCost::Linear => {
                let mut prefix = Array2::zeros((n + 1, d));
                let mut prefix_sq = Array1::zeros(n + 1);
                for t in 0..n {
                    let row = x.row(t);
                    let next = &prefix.row(t) + &row;
                    prefix.row_mut(t + 1).assign(&next);
                    prefix_sq[t + 1] = prefix_sq[t] + row.dot(&row);
                }
                SegmentCost::Linear { prefix, prefix_sq }
            }
            KernelCost::Rbf { gamma } => {
                let mut prefix_gram = Array2::zeros((n + 1, n + 1));
                for i in 0..n {
                    for j in 0..n {
                        let dist: f64 = x
                            .row(i)
                            .iter()
                            .zip(x.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        prefix_gram[[i + 1, j + 1]] = (-gamma * dist).exp() + prefix_gram[[i, j + 1]]
                            + prefix_gram[[i + 1, j]]
                            - prefix_gram[[i, j]];
                    }
                }
                // k(x, x) = 1 for the RBF kernel.
                let prefix_diag = Array1::from_shape_fn(n + 1, |t| t as f64);
                SegmentCost::Kernel {
                    prefix_diag,
                    prefix_gram,
                }
            }
        }
    }

    pub fn n_frames(&self) -> usize {
        match self {
            SegmentCost::Linear { prefix_sq, .. } => prefix_sq.len() - 1,
            SegmentCost::Kernel { prefix_diag, .. } => prefix_diag.len() - 1,
        }
    }

    /// Scatter of frames `[a, b)`; zero for empty or single-frame segments.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        if b <= a + 1 {
            return 0.0;
        }
        let len = (b - a) as f64;
        let v = match self {
            SegmentCost::Linear { prefix, prefix_sq } => {
                let sum_sq: f64 = prefix
                    .row(b)
                    .iter()
                    .zip(prefix.row(a))
                    .map(|(hi, lo)| (hi - lo) * (hi - lo))
                    .sum();
                prefix_sq[b] - prefix_sq[a] - sum_sq / len
            }
            SegmentCost::Kernel {
                prefix_diag,
                prefix_gram: g,
            } => {
                let block = g[[b, b]] - g[[a, b]] - g[[b, a]] + g[[a, a]];
                prefix_diag[b] - prefix_diag[a] - block / len
            }
        };
        v.max(0.0)
    }
}

/// `C · m · (log(N/m) + 1)`.
pub fn segment_penalty(n_frames: usize, n_segments: usize, coeff: f64) -> f64 {
    let m = n_segments as f64;
    coeff * m * ((n_frames as f64 / m).ln() + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KtsConfig {
    /// Upper bound on the number of shots; `None` means `ceil(N / 10)`.
    pub max_segments: Option<usize>,
    pub penalty: f64,
    pub kernel: KernelCost,
}

impl Default for KtsConfig {
    fn default() -> Self {
        Self {
            max_segments: None,
            penalty: 1.0,
            kernel: KernelCost::Linear,
        }
    }
}

impl KtsConfig {
    pub fn max_segments_for(&self, n_frames: usize) -> usize {
        self.max_segments
            .unwrap_or_else(|| n_frames.div_ceil(10))
            .clamp(1, n_frames.max(1))
    }
}

/// Result of the segmentation dynamic program.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub change_points: ChangePoints,
    /// `scatter[m - 1]` is the least total cost achievable with `m` shots.
    pub scatter: Vec<f64>,
    /// Penalized objective of the returned segmentation.
    pub objective: f64,
}

pub fn kts_changepoints(x: ArrayView2<'_, f64>, config: &KtsConfig) -> ChangePoints {
    kts_segment(x, config).change_points
}

pub fn kts_segment(x: ArrayView2<'_, f64>, config: &KtsConfig) -> Segmentation {
    let cost = SegmentCost::new(x, config.kernel);
    let n = cost.n_frames();
    let max_m = config.max_segments_for(n);
    // Every (start, end) pair is visited once per segment count; tabulate.
    let table: Vec<Vec<f64>> = (0..=n)
        .map(|s| (0..=n).map(|t| if t > s { cost.cost(s, t) } else { 0.0 }).collect())
        .collect();

    // best[m][t]: least cost of splitting frames [0, t) into m + 1 segments.
    let mut best = vec![vec![f64::INFINITY; n + 1]; max_m];
    let mut back = vec![vec![0usize; n + 1]; max_m];
    for t in 1..=n {
        best[0][t] = table[0][t];
    }
    for m in 1..max_m {
        for t in m + 1..=n {
            let mut arg = m;
            let mut val = f64::INFINITY;
            for s in m..t {
                let c = best[m - 1][s] + table[s][t];
                if c < val {
                    val = c;
                    arg = s;
                }
            }
            best[m][t] = val;
            back[m][t] = arg;
        }
    }

    let scatter: Vec<f64> = (0..max_m).map(|m| best[m][n]).collect();
    let mut chosen = 0;
    let mut objective = f64::INFINITY;
    for (m, &s) in scatter.iter().enumerate() {
        let v = s + segment_penalty(n, m + 1, config.penalty);
        if v < objective {
            objective = v;
            chosen = m;
        }
    }

    let mut boundaries = Vec::with_capacity(chosen);
    let mut t = n;
    for m in (1..=chosen).rev() {
        t = back[m][t];
        boundaries.push(t);
    }
    boundaries.reverse();
    Segmentation {
        change_points: ChangePoints {
            boundaries,
            n_frames: n,
        },
        scatter,
        objective,
    }
}

//! Training objectives.
//!
//! Supervised: binary cross-entropy against keyframe labels plus the negative
//! DPP log-likelihood of the labeled keyframe subset under the
//! quality-diversity kernel `L_ij = y_i y_j exp(−β‖φ_i − φ_j‖²)`.
//!
//! Unsupervised: distance of the mean score from the target ratio `σ` plus
//! the mean pairwise cosine similarity of the embeddings.
//!
//! Both add an explicit L2 penalty on the weight matrices.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{ForwardTrace, HyperParams, ModelParams, WEIGHT_MATRICES};

/// Probabilities inside logarithms are clipped into `[SCORE_CLIP, 1 − SCORE_CLIP]`.
pub const SCORE_CLIP: f64 = 1e-7;

/// Coefficients on the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub keyframe: f64,
    pub variation: f64,
    pub length: f64,
    pub repelling: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            keyframe: 1.0,
            variation: 1.0,
            length: 1.0,
            repelling: 1.0,
        }
    }
}

/// What a single video is trained against.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// 0/1 keyframe labels, one per frame.
    Supervised { keyframes: &'a [u8] },
    /// Target mean score.
    Unsupervised { sigma: f64 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub variation: f64,
    pub keyframe: f64,
    pub length: f64,
    pub repelling: f64,
    pub weight_penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub(crate) fn accumulate(&mut self, other: &LossBreakdown) {
        self.variation += other.variation;
        self.keyframe += other.keyframe;
        self.length += other.length;
        self.repelling += other.repelling;
        self.weight_penalty += other.weight_penalty;
        self.total += other.total;
    }

    pub(crate) fn scaled(mut self, factor: f64) -> Self {
        self.variation *= factor;
        self.keyframe *= factor;
        self.length *= factor;
        self.repelling *= factor;
        self.weight_penalty *= factor;
        self.total *= factor;
        self
    }
}

/// Symmetric DPP kernel built from frame qualities and embeddings.
#[derive(Debug, Clone)]
pub struct DppKernel {
    pub l: Array2<f64>,
    /// `Φ_ij = exp(−β‖φ_i − φ_j‖²)`.
    pub similarity: Array2<f64>,
    pub beta: f64,
}

pub fn dpp_kernel(y: ArrayView1<'_, f64>, phi: ArrayView2<'_, f64>, beta: f64) -> DppKernel {
    let n = y.len();
    let mut similarity = Array2::<f64>::ones((n, n));
    for i in 0..n {
        for j in 0..i {
            let dist: f64 = phi
                .row(i)
                .iter()
                .zip(phi.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let s = (-beta * dist).exp();
            similarity[[i, j]] = s;
            similarity[[j, i]] = s;
        }
    }
    let mut l = similarity.clone();
    for ((i, j), v) in l.indexed_iter_mut() {
        *v *= y[i] * y[j];
    }
    DppKernel {
        l,
        similarity,
        beta,
    }
}

fn principal_submatrix(l: &Array2<f64>, subset: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((subset.len(), subset.len()), |(a, b)| l[[subset[a], subset[b]]])
}

fn check_subset(n: usize, subset: &[usize]) -> Result<()> {
    if subset.iter().any(|&i| i >= n) || subset.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "subset must be strictly increasing indices below {n}"
        )));
    }
    Ok(())
}

/// `log det(L_S) − log det(L + I)`; the empty subset has determinant one.
pub fn dpp_log_prob(l: &Array2<f64>, subset: &[usize]) -> Result<f64> {
    check_subset(l.nrows(), subset)?;
    let mut shifted = l.clone();
    shifted.diag_mut().mapv_inplace(|v| v + 1.0);
    let norm = Cholesky::factor(shifted.view())?.log_det();
    let sub = if subset.is_empty() {
        0.0
    } else {
        Cholesky::factor(principal_submatrix(l, subset).view())?.log_det()
    };
    Ok(sub - norm)
}

/// Negative log-likelihood of the annotated keyframe subset.
pub fn variation_loss(l: &Array2<f64>, keyframe_subset: &[usize]) -> Result<f64> {
    Ok(-dpp_log_prob(l, keyframe_subset)?)
}

pub fn keyframe_loss(y: ArrayView1<'_, f64>, labels: &[u8]) -> Result<f64> {
    if y.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            y.len(),
            labels.len()
        )));
    }
    Ok(y.iter()
        .zip(labels)
        .map(|(&p, &t)| {
            let p = p.clamp(SCORE_CLIP, 1.0 - SCORE_CLIP);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

pub fn length_loss(y: ArrayView1<'_, f64>, sigma: f64) -> f64 {
    (y.mean().unwrap_or(0.0) - sigma).abs()
}

/// Mean pairwise cosine similarity over ordered pairs `i ≠ j`; zero for a
/// single frame.
pub fn repelling_loss(phi: ArrayView2<'_, f64>) -> Result<f64> {
    let n = phi.nrows();
    if n < 2 {
        return Ok(0.0);
    }
    let norms: Vec<f64> = phi.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        return Err(Error::Numerical(format!("embedding of frame {i} has zero norm")));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += phi.row(i).dot(&phi.row(j)) / (norms[i] * norms[j]);
            }
        }
    }
    Ok(sum / (n * (n - 1)) as f64)
}

/// `weight_decay · Σ‖W‖²` over the weight matrices (not biases or norms).
pub fn weight_penalty(params: &ModelParams, weight_decay: f64) -> f64 {
    if weight_decay == 0.0 {
        return 0.0;
    }
    weight_decay
        * params
            .tensors()
            .into_iter()
            .filter(|(name, _, _)| WEIGHT_MATRICES.contains(name))
            .flat_map(|(_, _, v)| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
}

pub(crate) fn label_subset(labels: &[u8]) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == 1)
        .map(|(i, _)| i)
        .collect()
}

pub fn total_loss(
    trace: &ForwardTrace,
    params: &ModelParams,
    hyper: &HyperParams,
    objective: Objective<'_>,
) -> Result<LossBreakdown> {
    let w = hyper.loss_weights;
    let y = trace.scores.view();
    let mut out = LossBreakdown {
        weight_penalty: weight_penalty(params, hyper.weight_decay),
        ..Default::default()
    };
    match objective {
        Objective::Supervised { keyframes } => {
            out.keyframe = keyframe_loss(y, keyframes)?;
            if w.variation != 0.0 {
                let kernel = dpp_kernel(y, trace.embeddings.view(), hyper.beta);
                out.variation = variation_loss(&kernel.l, &label_subset(keyframes))?;
            }
            out.total = w.keyframe * out.keyframe + w.variation * out.variation;
        }
        Objective::Unsupervised { sigma } => {
            out.length = length_loss(y, sigma);
            if w.repelling != 0.0 {
                out.repelling = repelling_loss(trace.embeddings.view())?;
            }
            out.total = w.length * out.length + w.repelling * out.repelling;
        }
    }
    out.total += out.weight_penalty;
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("loss is not finite: {out:?}")));
    }
    Ok(out)
}

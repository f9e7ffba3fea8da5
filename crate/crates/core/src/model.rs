//! Global diverse attention scorer.
//!
//! Frames attend to each other through a scaled dot-product attention matrix
//! that is normalized over the *first* index (each column sums to one). The
//! column weights are turned into a per-frame dissimilarity `d_i ∝ Π_j (1 − α_ij)`,
//! which rescales the value projection of every frame. A feed-forward layer
//! feeds two heads: a score regressor producing `y ∈ (0, 1)^N` and a linear
//! embedding `φ` used by the diversity losses.
//!
//! Nothing in the network depends on frame order, so permuting the input
//! frames permutes every per-frame output the same way.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Frame feature width `D`.
    pub feature: usize,
    /// Hidden width `H` of the score regressor.
    pub hidden: usize,
    /// Embedding width `E`.
    pub embed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub hidden: usize,
    pub embed: usize,
    pub dropout: f64,
    pub weight_decay: f64,
    /// Bandwidth of the Gaussian similarity inside the DPP kernel.
    pub beta: f64,
    /// Attention weights are clipped into `[alpha_clip, 1 − alpha_clip]`
    /// before taking `log(1 − α)`.
    pub alpha_clip: f64,
    pub loss_weights: LossWeights,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden: 1024,
            embed: 256,
            dropout: 0.6,
            weight_decay: 1e-5,
            beta: 1.0,
            alpha_clip: 1e-7,
            loss_weights: LossWeights::default(),
        }
    }
}

impl HyperParams {
    pub fn dims(&self, feature: usize) -> Dims {
        Dims {
            feature,
            hidden: self.hidden,
            embed: self.embed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden == 0 || self.embed == 0 {
            return bad("hidden and embedding widths must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.alpha_clip > 0.0 && self.alpha_clip < 0.5) {
            return bad("alpha_clip must lie in (0, 0.5)");
        }
        Ok(())
    }
}

/// Every learnable tensor. Matrices map column inputs to row outputs
/// (`out = W · in`), so a `rows x cols` matrix has fan-in `cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub ff_w: Array2<f64>,
    pub ff_b: Array1<f64>,
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub reg_w1: Array2<f64>,
    pub reg_b1: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub reg_w2: Array1<f64>,
    pub reg_b2: Array1<f64>,
    pub emb_w: Array2<f64>,
    pub emb_b: Array1<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

/// Names of the tensors that enter the L2 weight penalty.
pub const WEIGHT_MATRICES: [&str; 7] = ["w_q", "w_k", "w_v", "ff_w", "reg_w1", "reg_w2", "emb_w"];

macro_rules! for_each_tensor {
    ($m:ident) => {
        $m!(w_q, w_k, w_v, ff_w, ff_b, ln1_gamma, ln1_beta, reg_w1, reg_b1, ln2_gamma, ln2_beta, reg_w2, reg_b2, emb_w, emb_b)
    };
}

impl ModelParams {
    pub fn dims(&self) -> Dims {
        Dims {
            feature: self.w_q.nrows(),
            hidden: self.reg_w1.nrows(),
            embed: self.emb_w.nrows(),
        }
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((
                    stringify!($f),
                    self.$f.shape().to_vec(),
                    self.$f.as_slice().expect("standard layout"),
                )),*]
            };
        }
        for_each_tensor!(collect)
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        macro_rules! collect {
            ($($f:ident),*) => {
                vec![$((
                    stringify!($f),
                    self.$f.as_slice_mut().expect("standard layout"),
                )),*]
            };
        }
        for_each_tensor!(collect)
    }

    pub fn zeros(dims: Dims) -> Self {
        let Dims {
            feature: d,
            hidden: h,
            embed: e,
        } = dims;
        Self {
            w_q: Array2::zeros((d, d)),
            w_k: Array2::zeros((d, d)),
            w_v: Array2::zeros((d, d)),
            ff_w: Array2::zeros((d, d)),
            ff_b: Array1::zeros(d),
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            reg_w1: Array2::zeros((h, d)),
            reg_b1: Array1::zeros(h),
            ln2_gamma: Array1::zeros(h),
            ln2_beta: Array1::zeros(h),
            reg_w2: Array1::zeros(h),
            reg_b2: Array1::zeros(1),
            emb_w: Array2::zeros((e, d)),
            emb_b: Array1::zeros(e),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims())
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, v)| v.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, v) in self.tensors_mut() {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    /// Hash of the exact bit patterns of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (_, shape, v) in self.tensors() {
            for s in shape {
                h.write_usize(s);
            }
            for x in v {
                h.write_u64(x.to_bits());
            }
        }
        h.finish()
    }
}

/// Xavier/Glorot uniform `rows x cols` matrix: `U(−a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut dyn RngCore) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

/// Xavier-initialized weights, zero biases, unit layer-norm scales.
pub fn init_params(dims: Dims, rng: &mut dyn RngCore) -> ModelParams {
    let Dims {
        feature: d,
        hidden: h,
        embed: e,
    } = dims;
    let mut p = ModelParams::zeros(dims);
    p.w_q = xavier_uniform(d, d, rng);
    p.w_k = xavier_uniform(d, d, rng);
    p.w_v = xavier_uniform(d, d, rng);
    p.ff_w = xavier_uniform(d, d, rng);
    p.reg_w1 = xavier_uniform(h, d, rng);
    p.reg_w2 = xavier_uniform(1, h, rng).into_shape_with_order(h).expect("1 x h");
    p.emb_w = xavier_uniform(e, d, rng);
    p.ln1_gamma.fill(1.0);
    p.ln2_gamma.fill(1.0);
    p
}

/// `A_ij = (W_Q x_i)ᵀ (W_K x_j) / sqrt(D)`, frames as rows of `x`.
pub fn attention_matrix(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<Array2<f64>> {
    let (q, k) = project_qk(x, params)?;
    attention_from_projections(&q, &k)
}

fn project_qk(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = params.dims().feature;
    if x.ncols() != d {
        return Err(Error::Shape(format!(
            "features have dim {}, model expects {d}",
            x.ncols()
        )));
    }
    Ok((x.dot(&params.w_q.t()), x.dot(&params.w_k.t())))
}

fn attention_from_projections(q: &Array2<f64>, k: &Array2<f64>) -> Result<Array2<f64>> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let a = q.dot(&k.t()) * scale;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "attention matrix overflowed; inputs are too large".into(),
        ));
    }
    Ok(a)
}

/// Softmax over the first index: `α_ij = exp(A_ij) / Σ_r exp(A_rj)`.
pub fn normalize_attention(a: &Array2<f64>) -> Array2<f64> {
    let mut alpha = a.clone();
    for mut col in alpha.axis_iter_mut(Axis(1)) {
        let max = col.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        col.mapv_inplace(|v| (v - max).exp());
        let sum = col.sum();
        col /= sum;
    }
    alpha
}

/// `log d̂_i = Σ_j log(1 − clip(α_ij))`, the unnormalized log dissimilarity.
pub fn log_dissimilarity(alpha: &Array2<f64>, eps: f64) -> Array1<f64> {
    alpha.map_axis(Axis(1), |row| {
        row.iter().map(|&a| (1.0 - a.clamp(eps, 1.0 - eps)).ln()).sum()
    })
}

/// Global diverse attention weights `d = d̂ / ‖d̂‖₁`, evaluated in log space.
/// A single frame gets `d = [1]`.
pub fn diversity_weights(alpha: &Array2<f64>, eps: f64) -> Result<Array1<f64>> {
    if alpha.nrows() == 0 {
        return Err(Error::InvalidArgument(
            "diversity weights need at least one frame".into(),
        ));
    }
    if alpha.nrows() == 1 {
        return Ok(Array1::ones(1));
    }
    Ok(softmax(&log_dissimilarity(alpha, eps)))
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut out = logits.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out /= sum;
    out
}

/// Cached row statistics of a layer normalization.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
}

fn layer_norm(
    input: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
) -> (Array2<f64>, LayerNormCache) {
    let width = input.ncols() as f64;
    let mut normalized = input.clone();
    let mut inv_std = Array1::zeros(input.nrows());
    for (mut row, s) in normalized.axis_iter_mut(Axis(0)).zip(inv_std.iter_mut()) {
        let mean = row.sum() / width;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * is);
        *s = is;
    }
    let out = &normalized * gamma + beta;
    (out, LayerNormCache { normalized, inv_std })
}

/// Inverse-scaled dropout masks: entries are `0` or `1 / keep`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// `N x D`, applied to the feed-forward linear output.
    pub feed_forward: Array2<f64>,
    /// `N x H`, applied inside the score regressor after layer norm.
    pub head: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample(n: usize, dims: Dims, rate: f64, rng: &mut dyn RngCore) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || {
                if rate == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        let feed_forward = draw((n, dims.feature));
        let head = draw((n, dims.hidden));
        Self { feed_forward, head }
    }
}

/// How dropout behaves during a forward pass.
pub enum Dropout<'a> {
    /// Evaluation mode, dropout is the identity.
    Off,
    /// Training mode, masks are drawn from the generator and recorded.
    Sample(&'a mut dyn RngCore),
    /// Replays previously drawn masks, for gradient checking.
    Frozen(&'a DropoutMasks),
}

/// Every intermediate of one forward pass, kept for backpropagation and
/// inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    /// Pairwise attention `A`, `N x N`.
    pub attention: Array2<f64>,
    /// Column-normalized attention `α`.
    pub alpha: Array2<f64>,
    /// Diversity weights `d` on the simplex.
    pub diversity: Array1<f64>,
    /// Value projections `W_V x_i` as rows.
    pub values: Array2<f64>,
    /// Weighted context `c_i = d_i W_V x_i` as rows.
    pub context: Array2<f64>,
    pub ff_norm: LayerNormCache,
    /// Feed-forward output `f_i`, shared by both heads.
    pub features: Array2<f64>,
    pub hidden_pre: Array2<f64>,
    pub hidden_norm: LayerNormCache,
    /// Regressor activations after layer norm and dropout.
    pub hidden_out: Array2<f64>,
    pub logits: Array1<f64>,
    /// Frame scores `y ∈ (0, 1)`.
    pub scores: Array1<f64>,
    /// Embeddings `φ_i` as rows, `N x E`.
    pub embeddings: Array2<f64>,
    pub masks: Option<DropoutMasks>,
    pub(crate) fingerprint: u64,
    pub(crate) alpha_clip: f64,
}

impl ForwardTrace {
    pub fn n_frames(&self) -> usize {
        self.scores.len()
    }
}

pub fn forward(
    x: ArrayView2<'_, f64>,
    params: &ModelParams,
    hyper: &HyperParams,
    dropout: Dropout<'_>,
) -> Result<ForwardTrace> {
    let dims = params.dims();
    let n = x.nrows();
    if n == 0 {
        return Err(Error::Shape("video has no frames".into()));
    }
    if dims.hidden != params.reg_b1.len() || dims.embed != params.emb_b.len() {
        return Err(Error::Shape("inconsistent parameter shapes".into()));
    }

    let (queries, keys) = project_qk(x, params)?;
    let attention = attention_from_projections(&queries, &keys)?;
    let alpha = normalize_attention(&attention);
    let diversity = diversity_weights(&alpha, hyper.alpha_clip)?;

    let values = x.dot(&params.w_v.t());
    let context = &values * &diversity.view().insert_axis(Axis(1));

    let masks = match dropout {
        Dropout::Off => None,
        Dropout::Sample(rng) => Some(DropoutMasks::sample(n, dims, hyper.dropout, rng)),
        Dropout::Frozen(m) => {
            if m.feed_forward.dim() != (n, dims.feature) || m.head.dim() != (n, dims.hidden) {
                return Err(Error::Shape("frozen dropout masks do not fit this video".into()));
            }
            Some(m.clone())
        }
    };

    let mut ff_pre = context.dot(&params.ff_w.t()) + &params.ff_b;
    if let Some(m) = &masks {
        ff_pre *= &m.feed_forward;
    }
    let (features, ff_norm) = layer_norm(&ff_pre, &params.ln1_gamma, &params.ln1_beta);

    let hidden_pre = features.dot(&params.reg_w1.t()) + &params.reg_b1;
    let relu = hidden_pre.mapv(|v| v.max(0.0));
    let (mut hidden_out, hidden_norm) = layer_norm(&relu, &params.ln2_gamma, &params.ln2_beta);
    if let Some(m) = &masks {
        hidden_out *= &m.head;
    }
    let logits = hidden_out.dot(&params.reg_w2) + params.reg_b2[0];
    let scores = logits.mapv(sigmoid);

    let embeddings = features.dot(&params.emb_w.t()) + &params.emb_b;

    Ok(ForwardTrace {
        queries,
        keys,
        attention,
        alpha,
        diversity,
        values,
        context,
        ff_norm,
        features,
        hidden_pre,
        hidden_norm,
        hidden_out,
        logits,
        scores,
        embeddings,
        masks,
        fingerprint: trace_fingerprint(x, params),
        alpha_clip: hyper.alpha_clip,
    })
}

pub(crate) fn trace_fingerprint(x: ArrayView2<'_, f64>, params: &ModelParams) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_u64(params.fingerprint());
    h.write_usize(x.nrows());
    for v in x.iter() {
        h.write_u64(v.to_bits());
    }
    h.finish()
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

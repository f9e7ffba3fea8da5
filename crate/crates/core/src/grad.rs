//! Reverse-mode gradients of [`total_loss`](crate::loss::total_loss) and a
//! central-difference oracle to check them.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::loss::{dpp_kernel, label_subset, total_loss, LossBreakdown, Objective, SCORE_CLIP};
use crate::model::{
    forward, init_params, trace_fingerprint, Dims, Dropout, DropoutMasks, ForwardTrace,
    Gradients, HyperParams, LayerNormCache, ModelParams, WEIGHT_MATRICES,
};

/// Loss value and its exact gradient for the masks recorded in `trace`.
pub fn backward(
    trace: &ForwardTrace,
    x: ArrayView2<'_, f64>,
    params: &ModelParams,
    hyper: &HyperParams,
    objective: Objective<'_>,
) -> Result<(LossBreakdown, Gradients)> {
    if trace.n_frames() != x.nrows() || trace.fingerprint != trace_fingerprint(x, params) {
        return Err(Error::StaleTrace);
    }
    let loss = total_loss(trace, params, hyper, objective)?;
    let w = hyper.loss_weights;
    let n = trace.n_frames();
    let y = &trace.scores;
    let phi = &trace.embeddings;

    let mut d_y = Array1::<f64>::zeros(n);
    let mut d_phi = Array2::<f64>::zeros(phi.dim());

    match objective {
        Objective::Supervised { keyframes } => {
            if w.keyframe != 0.0 {
                for i in 0..n {
                    let p = y[i];
                    if p > SCORE_CLIP && p < 1.0 - SCORE_CLIP {
                        d_y[i] += w.keyframe
                            * if keyframes[i] == 1 {
                                -1.0 / p
                            } else {
                                1.0 / (1.0 - p)
                            };
                    }
                }
            }
            if w.variation != 0.0 {
                dpp_backward(
                    trace,
                    &label_subset(keyframes),
                    hyper.beta,
                    w.variation,
                    &mut d_y,
                    &mut d_phi,
                )?;
            }
        }
        Objective::Unsupervised { sigma } => {
            if w.length != 0.0 {
                let diff = y.mean().unwrap_or(0.0) - sigma;
                let g = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                d_y += w.length * g / n as f64;
            }
            if w.repelling != 0.0 && n >= 2 {
                repelling_backward(phi, w.repelling, &mut d_phi);
            }
        }
    }

    let mut g = params.zeros_like();

    // Score head: y = sigmoid(w2 · dropout(LN(relu(W1 f + b1))) + b2).
    let d_logit = &d_y * &y.mapv(|p| p * (1.0 - p));
    g.reg_w2 = trace.hidden_out.t().dot(&d_logit);
    g.reg_b2[0] = d_logit.sum();
    let mut d_hidden_out = d_logit
        .view()
        .insert_axis(Axis(1))
        .dot(&params.reg_w2.view().insert_axis(Axis(0)));
    if let Some(m) = &trace.masks {
        d_hidden_out *= &m.head;
    }
    let d_relu = layer_norm_backward(
        &d_hidden_out,
        &params.ln2_gamma,
        &trace.hidden_norm,
        &mut g.ln2_gamma,
        &mut g.ln2_beta,
    );
    let d_hidden_pre = &d_relu * &trace.hidden_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    g.reg_w1 = d_hidden_pre.t().dot(&trace.features);
    g.reg_b1 = d_hidden_pre.sum_axis(Axis(0));
    let mut d_features = d_hidden_pre.dot(&params.reg_w1);

    // Embedding head: φ = W_e f + b_e.
    g.emb_w = d_phi.t().dot(&trace.features);
    g.emb_b = d_phi.sum_axis(Axis(0));
    d_features += &d_phi.dot(&params.emb_w);

    // Feed-forward: f = LN(dropout(W_ff c + b_ff)).
    let mut d_ff_pre = layer_norm_backward(
        &d_features,
        &params.ln1_gamma,
        &trace.ff_norm,
        &mut g.ln1_gamma,
        &mut g.ln1_beta,
    );
    if let Some(m) = &trace.masks {
        d_ff_pre *= &m.feed_forward;
    }
    g.ff_w = d_ff_pre.t().dot(&trace.context);
    g.ff_b = d_ff_pre.sum_axis(Axis(0));
    let d_context = d_ff_pre.dot(&params.ff_w);

    // c_i = d_i · v_i
    let d = &trace.diversity;
    let d_values = &d_context * &d.view().insert_axis(Axis(1));
    g.w_v = d_values.t().dot(&x);
    let d_div = (&d_context * &trace.values).sum_axis(Axis(1));

    if n >= 2 {
        // d = softmax(ℓ) with ℓ_i = Σ_j log(1 − clip(α_ij)).
        let inner = d.dot(&d_div);
        let d_log = d * &(&d_div - inner);
        let eps = trace.alpha_clip;
        let alpha = &trace.alpha;
        let mut d_alpha = Array2::<f64>::zeros((n, n));
        for ((i, j), v) in d_alpha.indexed_iter_mut() {
            let a = alpha[[i, j]];
            if a > eps && a < 1.0 - eps {
                *v = -d_log[i] / (1.0 - a);
            }
        }
        // Column softmax backward.
        let col_dot = (&d_alpha * alpha).sum_axis(Axis(0));
        let d_att = alpha * &(&d_alpha - &col_dot.view().insert_axis(Axis(0)));

        let scale = 1.0 / (params.dims().feature as f64).sqrt();
        let d_q = d_att.dot(&trace.keys) * scale;
        let d_k = d_att.t().dot(&trace.queries) * scale;
        g.w_q = d_q.t().dot(&x);
        g.w_k = d_k.t().dot(&x);
    }

    if hyper.weight_decay != 0.0 {
        let wd = hyper.weight_decay;
        let params_t = params.tensors();
        for ((name, grad), (_, _, value)) in g.tensors_mut().into_iter().zip(params_t) {
            if WEIGHT_MATRICES.contains(&name) {
                for (gi, vi) in grad.iter_mut().zip(value) {
                    *gi += 2.0 * wd * vi;
                }
            }
        }
    }

    if !g.is_finite() {
        return Err(Error::Numerical("gradient is not finite".into()));
    }
    Ok((loss, g))
}

fn layer_norm_backward(
    d_out: &Array2<f64>,
    gamma: &Array1<f64>,
    cache: &LayerNormCache,
    d_gamma: &mut Array1<f64>,
    d_beta: &mut Array1<f64>,
) -> Array2<f64> {
    let xhat = &cache.normalized;
    *d_gamma = (d_out * xhat).sum_axis(Axis(0));
    *d_beta = d_out.sum_axis(Axis(0));
    let mut d_xhat = d_out * gamma;
    let width = d_xhat.ncols() as f64;
    for ((mut row, xh), &is) in d_xhat
        .axis_iter_mut(Axis(0))
        .zip(xhat.axis_iter(Axis(0)))
        .zip(cache.inv_std.iter())
    {
        let mean = row.sum() / width;
        let mean_x = row.dot(&xh) / width;
        row.zip_mut_with(&xh, |g, &h| *g = is * (*g - mean - h * mean_x));
    }
    d_xhat
}

/// Accumulates the gradient of `w · (log det(L + I) − log det(L_S))`.
fn dpp_backward(
    trace: &ForwardTrace,
    subset: &[usize],
    beta: f64,
    weight: f64,
    d_y: &mut Array1<f64>,
    d_phi: &mut Array2<f64>,
) -> Result<()> {
    let y = &trace.scores;
    let phi = &trace.embeddings;
    let kernel = dpp_kernel(y.view(), phi.view(), beta);

    // ∂/∂L of the loss: (L + I)⁻¹ − embed(L_S⁻¹).
    let mut shifted = kernel.l.clone();
    shifted.diag_mut().mapv_inplace(|v| v + 1.0);
    let mut g = Cholesky::factor(shifted.view())?.inverse();
    if !subset.is_empty() {
        let sub = Array2::from_shape_fn((subset.len(), subset.len()), |(a, b)| {
            kernel.l[[subset[a], subset[b]]]
        });
        let sub_inv = Cholesky::factor(sub.view())?.inverse();
        for (a, &i) in subset.iter().enumerate() {
            for (b, &j) in subset.iter().enumerate() {
                g[[i, j]] -= sub_inv[[a, b]];
            }
        }
    }
    g *= weight;

    // L_ij = y_i y_j Φ_ij
    let phi_sim = &kernel.similarity;
    let gs = &g * phi_sim;
    *d_y += &(gs.dot(y) * 2.0);

    // Φ_ij = exp(−β‖φ_i − φ_j‖²); W_ij = G_ij y_i y_j Φ_ij
    let mut wt = gs;
    for ((i, j), v) in wt.indexed_iter_mut() {
        *v *= y[i] * y[j];
    }
    let row_sums = wt.sum_axis(Axis(1));
    let pull = wt.dot(phi);
    let push = phi * &row_sums.view().insert_axis(Axis(1));
    *d_phi += &((push - pull) * (-4.0 * beta));
    Ok(())
}

/// Accumulates the gradient of `w · mean_{i≠j} cos(φ_i, φ_j)`.
fn repelling_backward(phi: &Array2<f64>, weight: f64, d_phi: &mut Array2<f64>) {
    let n = phi.nrows();
    let norms = phi.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let units = phi / &norms.view().insert_axis(Axis(1));
    let total = units.sum_axis(Axis(0));
    let coef = 2.0 * weight / (n * (n - 1)) as f64;
    for ((mut out, u), norm) in d_phi
        .axis_iter_mut(Axis(0))
        .zip(units.axis_iter(Axis(0)))
        .zip(norms.iter())
    {
        let proj = u.dot(&total);
        for ((o, &uk), &sk) in out.iter_mut().zip(u.iter()).zip(total.iter()) {
            *o += coef * (sk - proj * uk) / norm;
        }
    }
}

/// `(f(θ + h) − f(θ − h)) / 2h`.
pub fn central_difference(mut f: impl FnMut(f64) -> f64, theta: f64, step: f64) -> f64 {
    (f(theta + step) - f(theta - step)) / (2.0 * step)
}

/// Central-difference gradient of the total loss, one parameter at a time.
/// `masks` replays fixed dropout masks; `None` evaluates without dropout.
pub fn finite_diff_grad(
    x: ArrayView2<'_, f64>,
    params: &ModelParams,
    hyper: &HyperParams,
    objective: Objective<'_>,
    masks: Option<&DropoutMasks>,
    step: f64,
) -> Result<Gradients> {
    let eval = |p: &ModelParams| -> Result<f64> {
        let dropout = masks.map_or(Dropout::Off, Dropout::Frozen);
        let trace = forward(x, p, hyper, dropout)?;
        Ok(total_loss(&trace, p, hyper, objective)?.total)
    };
    let mut grads = params.zeros_like();
    let mut probe = params.clone();
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, _, v)| v.len()).collect();
    for (t, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            let orig = probe.tensors_mut()[t].1[k];
            probe.tensors_mut()[t].1[k] = orig + step;
            let plus = eval(&probe)?;
            probe.tensors_mut()[t].1[k] = orig - step;
            let minus = eval(&probe)?;
            probe.tensors_mut()[t].1[k] = orig;
            grads.tensors_mut()[t].1[k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Denominator floor for relative errors, so exact zeros compare cleanly.
/// Central differences at step 1e-5 resolve about ε·|loss|/h ≈ 1e-10 for
/// losses near 20, well under this floor.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Largest relative error per tensor name.
pub fn compare_gradients(analytic: &Gradients, numeric: &Gradients) -> BTreeMap<String, f64> {
    analytic
        .tensors()
        .into_iter()
        .zip(numeric.tensors())
        .map(|((name, _, a), (_, _, b))| {
            let worst = a
                .iter()
                .zip(b)
                .map(|(&u, &v)| relative_error(u, v))
                .fold(0.0, f64::max);
            (name.to_string(), worst)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradcheckMode {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub n_frames: usize,
    pub dims: Dims,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta: f64,
    pub sigma: f64,
    /// Negates the analytic gradient of the named tensor before comparing;
    /// used to confirm the check can fail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_flip: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            n_frames: 6,
            dims: Dims {
                feature: 5,
                hidden: 8,
                embed: 4,
            },
            step: 1e-5,
            tolerance: 1e-4,
            seed: 0,
            weight_decay: 1e-2,
            beta: 1.0,
            sigma: 0.3,
            sign_flip: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckModeReport {
    pub mode: GradcheckMode,
    pub max_relative_error: f64,
    pub per_parameter: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub config: GradcheckConfig,
    pub modes: Vec<GradcheckModeReport>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// A random parameter point away from initialization: Xavier weights with
/// every tensor (biases and norm parameters included) jittered.
pub fn random_instance(
    n_frames: usize,
    dims: Dims,
    rng: &mut dyn RngCore,
) -> (Array2<f64>, ModelParams) {
    let x = Array2::from_shape_simple_fn((n_frames, dims.feature), || rng.sample(StandardNormal));
    let mut params = init_params(dims, rng);
    for (_, values) in params.tensors_mut() {
        for v in values {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    (x, params)
}

/// Analytic vs. central-difference gradients over seeded random instances in
/// both loss modes. Odd instances replay sampled dropout masks.
pub fn run_gradcheck(config: &GradcheckConfig) -> Result<GradcheckReport> {
    if let Some(name) = &config.sign_flip {
        let known = ModelParams::zeros(config.dims);
        if !known.tensors().iter().any(|(n, _, _)| n == name) {
            return Err(Error::InvalidArgument(format!("no parameter named {name:?}")));
        }
    }
    let mut modes = Vec::new();
    for mode in [GradcheckMode::Supervised, GradcheckMode::Unsupervised] {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut per_parameter: BTreeMap<String, f64> = BTreeMap::new();
        for instance in 0..config.instances {
            let (x, params) = random_instance(config.n_frames, config.dims, &mut rng);
            let mut labels: Vec<u8> = (0..config.n_frames)
                .map(|_| u8::from(rng.random::<f64>() < 0.4))
                .collect();
            if !labels.contains(&1) {
                labels[0] = 1;
            }
            let hyper = HyperParams {
                hidden: config.dims.hidden,
                embed: config.dims.embed,
                dropout: 0.3,
                weight_decay: config.weight_decay,
                beta: config.beta,
                ..HyperParams::default()
            };
            let masks = (instance % 2 == 1).then(|| {
                DropoutMasks::sample(config.n_frames, config.dims, hyper.dropout, &mut rng)
            });
            let objective = match mode {
                GradcheckMode::Supervised => Objective::Supervised { keyframes: &labels },
                GradcheckMode::Unsupervised => Objective::Unsupervised {
                    sigma: config.sigma,
                },
            };
            let dropout = masks.as_ref().map_or(Dropout::Off, Dropout::Frozen);
            let trace = forward(x.view(), &params, &hyper, dropout)?;
            let (_, mut analytic) = backward(&trace, x.view(), &params, &hyper, objective)?;
            if let Some(name) = &config.sign_flip {
                for (n, v) in analytic.tensors_mut() {
                    if n == name {
                        v.iter_mut().for_each(|g| *g = -*g);
                    }
                }
            }
            let numeric = finite_diff_grad(
                x.view(),
                &params,
                &hyper,
                objective,
                masks.as_ref(),
                config.step,
            )?;
            for (name, err) in compare_gradients(&analytic, &numeric) {
                let slot = per_parameter.entry(name).or_insert(0.0);
                *slot = slot.max(err);
            }
        }
        let max_relative_error = per_parameter.values().copied().fold(0.0, f64::max);
        modes.push(GradcheckModeReport {
            mode,
            max_relative_error,
            per_parameter,
        });
    }
    let max_relative_error = modes
        .iter()
        .map(|m| m.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        config: config.clone(),
        passed: max_relative_error <= config.tolerance,
        max_relative_error,
        modes,
    })
}

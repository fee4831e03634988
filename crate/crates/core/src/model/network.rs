//! Feature-extraction (FE) and mixture-density (MD) blocks with a
//! hand-derived backward pass.
//!
//! FE: `lift` FC, then `residual_rounds` blocks of two
//! `FC → BN → dropout → ReLU` layers with an identity skip around each
//! block. MD: three FC heads producing mixture logits, raw scales and
//! raw means.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::activations::{
    batchnorm, derive_seed, dropout_mask, elu, elu_grad, softmax, BatchNormStats, Mode,
};
use super::types::{MixtureParams, Motion3D, Pose2D};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::losses::MixtureGrad;
use crate::tensor::{GradientVector, Layout, ParameterVector};

/// Offset added after ELU so the scale head is strictly positive.
pub const SIGMA_FLOOR: f64 = 1e-6;

const HEAD_INIT: f64 = 1e-2;

/// Frozen affine maps between millimeters and the network's internal
/// units. A single scalar scale keeps isotropic `σ` isotropic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub input_mean: Vec<f64>,
    pub input_scale: f64,
    pub target_mean: Vec<f64>,
    pub target_scale: f64,
}

impl Normalization {
    pub fn identity(cfg: &TrainConfig) -> Self {
        Self {
            input_mean: vec![0.0; cfg.input_dim()],
            input_scale: 1.0,
            target_mean: vec![0.0; cfg.motion_dim()],
            target_scale: 1.0,
        }
    }

    /// Per-coordinate means and one pooled standard deviation for each of
    /// inputs and targets.
    pub fn fit(inputs: &[Vec<f64>], targets: &[&[f64]]) -> Self {
        fn stats<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, f64) {
            let n = rows.clone().count().max(1) as f64;
            let mut mean = vec![0.0; dim];
            for r in rows.clone() {
                mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
            }
            let mut ss = 0.0;
            for r in rows {
                ss += r.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
            }
            let std = (ss / (n * dim.max(1) as f64)).sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        }
        let in_dim = inputs.first().map_or(0, Vec::len);
        let out_dim = targets.first().map_or(0, |t| t.len());
        let (input_mean, input_scale) = stats(inputs.iter().map(Vec::as_slice), in_dim);
        let (target_mean, target_scale) = stats(targets.iter().copied(), out_dim);
        Self {
            input_mean,
            input_scale,
            target_mean,
            target_scale,
        }
    }
}

/// Parameter layout for a configuration.
pub fn layout(cfg: &TrainConfig) -> Layout {
    let h = cfg.hidden_width;
    let m = cfg.components;
    let mut l = Layout::new();
    l.push("lift.weight", &[h, cfg.input_dim()]);
    l.push("lift.bias", &[h]);
    for r in 0..cfg.residual_rounds {
        for k in 0..2 {
            l.push(format!("block{r}.fc{k}.weight"), &[h, h]);
            l.push(format!("block{r}.fc{k}.bias"), &[h]);
            l.push(format!("block{r}.bn{k}.gamma"), &[h]);
            l.push(format!("block{r}.bn{k}.beta"), &[h]);
        }
    }
    l.push("head_alpha.weight", &[m, h]);
    l.push("head_alpha.bias", &[m]);
    l.push("head_sigma.weight", &[m, h]);
    l.push("head_sigma.bias", &[m]);
    l.push("head_mu.weight", &[m * cfg.motion_dim(), h]);
    l.push("head_mu.bias", &[m * cfg.motion_dim()]);
    l
}

fn layer_names(r: usize, k: usize) -> [String; 4] {
    [
        format!("block{r}.fc{k}.weight"),
        format!("block{r}.fc{k}.bias"),
        format!("block{r}.bn{k}.gamma"),
        format!("block{r}.bn{k}.beta"),
    ]
}

/// Network weights plus the non-trainable state needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: TrainConfig,
    pub params: ParameterVector,
    /// Running statistics, one entry per batch-norm layer in forward order.
    pub bn: Vec<BatchNormStats>,
    pub norm: Normalization,
}

impl Model {
    /// Seeded initialization: He-normal hidden layers, small uniform
    /// heads, zero biases, unit batch-norm scale.
    pub fn init(cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut model = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = Uniform::new_inclusive(-HEAD_INIT, HEAD_INIT).expect("valid range");
        let segs = model.params.layout().segments().to_vec();
        for seg in segs {
            let vals = model.params.slice_mut(&seg.name);
            if seg.name.starts_with("head_") && seg.name.ends_with(".weight") {
                vals.iter_mut().for_each(|v| *v = head.sample(&mut rng));
            } else if seg.name.ends_with(".weight") {
                let std = (2.0 / seg.shape[1] as f64).sqrt();
                let he = Normal::new(0.0, std).expect("positive std");
                vals.iter_mut().for_each(|v| *v = he.sample(&mut rng));
            } else if seg.name.ends_with(".gamma") {
                vals.fill(1.0);
            }
        }
        Ok(model)
    }

    /// All-zero weights, identity normalization, fresh running stats.
    pub fn zeros(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            params: ParameterVector::zeros(layout(cfg)),
            bn: vec![BatchNormStats::new(cfg.hidden_width); 2 * cfg.residual_rounds],
            norm: Normalization::identity(cfg),
            cfg: cfg.clone(),
        })
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        if self.params.layout() != &layout(&self.cfg) {
            return Err(Error::Config("parameter layout does not match configuration".into()));
        }
        if self.bn.len() != 2 * self.cfg.residual_rounds
            || self.bn.iter().any(|b| b.mean.len() != self.cfg.hidden_width)
        {
            return Err(Error::Config("batch-norm state does not match configuration".into()));
        }
        if self.norm.input_mean.len() != self.cfg.input_dim()
            || self.norm.target_mean.len() != self.cfg.motion_dim()
        {
            return Err(Error::Config("normalization does not match configuration".into()));
        }
        Ok(())
    }

    /// Stacks poses into a normalized `B × 2C` matrix.
    pub(crate) fn input_matrix(&self, poses: &[&Pose2D]) -> Result<Array2<f64>> {
        let c = self.cfg.joints;
        let mut x = Array2::zeros((poses.len(), 2 * c));
        for (i, p) in poses.iter().enumerate() {
            if p.num_joints() != c {
                return Err(Error::dim("input joints", c, p.num_joints()));
            }
            for (j, v) in p.joints.iter().flatten().enumerate() {
                x[[i, j]] = (v - self.norm.input_mean[j]) / self.norm.input_scale;
            }
        }
        Ok(x)
    }
}

fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: &[f64]) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    out += &ndarray::ArrayView1::from(b);
    out
}

#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    input: Array2<f64>,
    normed: Array2<f64>,
    inv_std: Array1<f64>,
    /// Pre-ReLU activation (after dropout).
    dropped: Array2<f64>,
    pub(crate) mask: Option<Array2<f64>>,
    pub(crate) batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    input: Array2<f64>,
    pub(crate) layers: Vec<LayerTrace>,
    features: Array2<f64>,
    probs: Array2<f64>,
    sigma_raw: Array2<f64>,
    sigma_pre: Array2<f64>,
    pub mixtures: Vec<MixtureParams>,
}

impl ForwardTrace {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    /// Dropout masks in forward order (train mode only).
    pub fn masks(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().filter_map(|l| l.mask.as_ref()).collect()
    }

    /// Batch mean and biased variance of each batch-norm layer (train mode only).
    pub fn batch_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.layers.iter().filter_map(|l| l.batch_stats.clone()).collect()
    }
}

/// FE block over a batch of normalized inputs. Returns features and the
/// per-layer trace.
pub(crate) fn fe_batch(
    model: &Model,
    input: &Array2<f64>,
    mode: Mode,
    seed: u64,
) -> Result<(Array2<f64>, Vec<LayerTrace>)> {
    let p = &model.params;
    let cfg = &model.cfg;
    let mut h = affine(input.view(), p.matrix("lift.weight"), p.slice("lift.bias"));
    let mut layers = Vec::with_capacity(2 * cfg.residual_rounds);
    for r in 0..cfg.residual_rounds {
        let block_in = h.clone();
        let mut z = h;
        for k in 0..2 {
            let idx = 2 * r + k;
            let [w, b, g, be] = layer_names(r, k);
            let pre = affine(z.view(), p.matrix(&w), p.slice(&b));
            let bn = batchnorm(pre.view(), p.vector(&g), p.vector(&be), &model.bn[idx], mode)?;
            let mask = (mode == Mode::Train && cfg.dropout_rate > 0.0).then(|| {
                dropout_mask(
                    pre.nrows(),
                    pre.ncols(),
                    cfg.dropout_rate,
                    derive_seed(seed, idx as u64),
                )
            });
            let dropped = match &mask {
                Some(m) => &bn.out * m,
                None => bn.out,
            };
            let out = dropped.mapv(|v| v.max(0.0));
            layers.push(LayerTrace {
                input: z,
                normed: bn.normed,
                inv_std: bn.inv_std,
                dropped,
                mask,
                batch_stats: bn.batch_stats,
            });
            z = out;
        }
        h = block_in + z;
    }
    Ok((h, layers))
}

/// MD heads over a batch of features.
pub(crate) fn md_batch(
    model: &Model,
    features: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Vec<MixtureParams>)> {
    let p = &model.params;
    let cfg = &model.cfg;
    let logits = affine(features.view(), p.matrix("head_alpha.weight"), p.slice("head_alpha.bias"));
    let sigma_raw = affine(features.view(), p.matrix("head_sigma.weight"), p.slice("head_sigma.bias"));
    let mu_raw = affine(features.view(), p.matrix("head_mu.weight"), p.slice("head_mu.bias"));
    for (arr, name) in [(&logits, "head_alpha"), (&sigma_raw, "head_sigma"), (&mu_raw, "head_mu")] {
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(name));
        }
    }
    let [amin, amax] = cfg.alpha_clip;
    let [smin, smax] = cfg.sigma_clip;
    let scale = model.norm.target_scale;
    let d = cfg.motion_dim();
    let mut probs = Array2::zeros(logits.raw_dim());
    let mut sigma_pre = Array2::zeros(sigma_raw.raw_dim());
    let mut mixtures = Vec::with_capacity(features.nrows());
    for i in 0..features.nrows() {
        let pr = softmax(logits.row(i).as_slice().expect("contiguous"));
        let clipped: Vec<f64> = pr.iter().map(|a| a.clamp(amin, amax)).collect();
        let sum: f64 = clipped.iter().sum();
        let alphas = clipped.iter().map(|c| c / sum).collect();
        probs.row_mut(i).assign(&Array1::from(pr));
        let mut sigmas = Vec::with_capacity(cfg.components);
        for m in 0..cfg.components {
            let pre = scale * (elu(sigma_raw[[i, m]]) + 1.0 + SIGMA_FLOOR);
            sigma_pre[[i, m]] = pre;
            sigmas.push(pre.clamp(smin, smax));
        }
        let row = mu_raw.row(i);
        let mus = row
            .iter()
            .enumerate()
            .map(|(j, v)| model.norm.target_mean[j % d] + scale * v)
            .collect();
        mixtures.push(MixtureParams::new(cfg.frames, cfg.joints, alphas, sigmas, mus)?);
    }
    Ok((probs, sigma_raw, sigma_pre, mixtures))
}

/// Full forward pass over a batch.
pub fn forward(model: &Model, poses: &[&Pose2D], mode: Mode, seed: u64) -> Result<ForwardTrace> {
    model.check_consistent()?;
    let input = model.input_matrix(poses)?;
    let (features, layers) = fe_batch(model, &input, mode, seed)?;
    let (probs, sigma_raw, sigma_pre, mixtures) = md_batch(model, &features)?;
    Ok(ForwardTrace {
        mode,
        input,
        layers,
        features,
        probs,
        sigma_raw,
        sigma_pre,
        mixtures,
    })
}

/// FE block for a single pose. Train mode needs a batch, so a single pose
/// can only be passed through in deterministic mode.
pub fn fe_forward(pose: &Pose2D, model: &Model, mode: Mode, seed: u64) -> Result<Vec<f64>> {
    model.check_consistent()?;
    let input = model.input_matrix(&[pose])?;
    let (features, _) = fe_batch(model, &input, mode, seed)?;
    Ok(features.row(0).to_vec())
}

/// MD block for a single feature vector.
pub fn md_forward(features: &[f64], model: &Model) -> Result<MixtureParams> {
    if features.len() != model.cfg.hidden_width {
        return Err(Error::dim("feature length", model.cfg.hidden_width, features.len()));
    }
    let f = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("row");
    let (_, _, _, mut mix) = md_batch(model, &f)?;
    Ok(mix.remove(0))
}

/// Deterministic prediction: `M` hypotheses and their mixture weights.
pub fn predict(pose: &Pose2D, model: &Model) -> Result<(Vec<Motion3D>, Vec<f64>)> {
    let trace = forward(model, &[pose], Mode::Deterministic, 0)?;
    let mix = trace.mixtures.into_iter().next().expect("one sample");
    Ok((mix.hypotheses(), mix.alphas))
}

/// Backpropagates per-sample mixture gradients to the parameters.
pub fn backward(model: &Model, trace: &ForwardTrace, grads: &[MixtureGrad]) -> GradientVector {
    let p = &model.params;
    let cfg = &model.cfg;
    let n = trace.features.nrows();
    let (m_count, d) = (cfg.components, cfg.motion_dim());
    let [amin, amax] = cfg.alpha_clip;
    let [smin, smax] = cfg.sigma_clip;
    let scale = model.norm.target_scale;

    let mut g_logit = Array2::zeros((n, m_count));
    let mut g_sig = Array2::zeros((n, m_count));
    let mut g_mu = Array2::zeros((n, m_count * d));
    for (i, (g, mix)) in grads.iter().zip(&trace.mixtures).enumerate() {
        let probs = trace.probs.row(i);
        let clipped_sum: f64 = probs.iter().map(|a| a.clamp(amin, amax)).sum();
        let dot: f64 = g.alphas.iter().zip(&mix.alphas).map(|(ga, a)| ga * a).sum();
        let g_prob: Vec<f64> = (0..m_count)
            .map(|m| {
                let inside = probs[m] >= amin && probs[m] <= amax;
                if inside {
                    (g.alphas[m] - dot) / clipped_sum
                } else {
                    0.0
                }
            })
            .collect();
        let pg: f64 = g_prob.iter().zip(probs.iter()).map(|(gp, pr)| gp * pr).sum();
        for m in 0..m_count {
            g_logit[[i, m]] = probs[m] * (g_prob[m] - pg);
            let pre = trace.sigma_pre[[i, m]];
            if pre >= smin && pre <= smax {
                g_sig[[i, m]] = g.sigmas[m] * scale * elu_grad(trace.sigma_raw[[i, m]]);
            }
        }
        g_mu.row_mut(i)
            .iter_mut()
            .zip(&g.mus)
            .for_each(|(o, v)| *o = v * scale);
    }

    let mut grad = GradientVector::zeros(p.layout().clone());
    let feats = &trace.features;
    let head = |name: &str, gout: &Array2<f64>, grad: &mut GradientVector| -> Array2<f64> {
        grad.matrix_mut(&format!("{name}.weight")).assign(&gout.t().dot(feats));
        grad.vector_mut(&format!("{name}.bias")).assign(&gout.sum_axis(Axis(0)));
        gout.dot(&p.matrix(&format!("{name}.weight")))
    };
    let mut g_h = head("head_alpha", &g_logit, &mut grad);
    g_h += &head("head_sigma", &g_sig, &mut grad);
    g_h += &head("head_mu", &g_mu, &mut grad);

    let nf = n as f64;
    for r in (0..cfg.residual_rounds).rev() {
        // identity skip: block input receives the output gradient directly
        let skip = g_h.clone();
        let mut g_z = g_h;
        for k in (0..2).rev() {
            let idx = 2 * r + k;
            let lt = &trace.layers[idx];
            let [w, b, g, be] = layer_names(r, k);
            let mut g_bo = &g_z * &lt.dropped.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            if let Some(mask) = &lt.mask {
                g_bo *= mask;
            }
            grad.vector_mut(&g).assign(&(&g_bo * &lt.normed).sum_axis(Axis(0)));
            grad.vector_mut(&be).assign(&g_bo.sum_axis(Axis(0)));
            let g_n = &g_bo * &p.vector(&g);
            let g_pre = match trace.mode {
                Mode::Deterministic => &g_n * &lt.inv_std,
                Mode::Train => {
                    let sum_gn = g_n.sum_axis(Axis(0));
                    let sum_gnn = (&g_n * &lt.normed).sum_axis(Axis(0));
                    let centered = &g_n * nf - &sum_gn - &lt.normed * &sum_gnn;
                    centered * &(&lt.inv_std / nf)
                }
            };
            grad.matrix_mut(&w).assign(&g_pre.t().dot(&lt.input));
            grad.vector_mut(&b).assign(&g_pre.sum_axis(Axis(0)));
            g_z = g_pre.dot(&p.matrix(&w));
        }
        g_h = skip + g_z;
    }
    grad.matrix_mut("lift.weight").assign(&g_h.t().dot(&trace.input));
    grad.vector_mut("lift.bias").assign(&g_h.sum_axis(Axis(0)));
    grad
}

/// Slices row `i` of a batch trace's input, for tests.
#[cfg(test)]
pub(crate) fn trace_input_row(trace: &ForwardTrace, i: usize) -> Vec<f64> {
    trace.input.slice(ndarray::s![i, ..]).to_vec()
}

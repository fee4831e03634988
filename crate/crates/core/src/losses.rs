//! Training objectives over a single sample's mixture output.
//!
//! Every term has a value-only public function and a gradient-producing
//! internal counterpart that accumulates `∂L/∂(α, σ, μ)` into a
//! [`MixtureGrad`]. Batch reduction (the mean over samples) happens in
//! [`crate::grad`].

use serde::{Deserialize, Serialize};

use crate::config::{LossWeights, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{MixtureParams, Motion3D};

/// `max(q) + ln Σ exp(q - max(q))`.
pub fn log_sum_exp(q: &[f64]) -> Result<f64> {
    if q.is_empty() {
        return Err(Error::Argument("log_sum_exp of an empty vector".into()));
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = q.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Per-term values and their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_md: f64,
    pub l_v: f64,
    pub l_a: f64,
    pub l_d: f64,
    pub l_f: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn compose(l_md: f64, l_v: f64, l_a: f64, l_d: f64, l_f: f64, w: &LossWeights) -> Self {
        let total = w.mixture * l_md
            + w.velocity * l_v
            + w.accuracy * l_a
            + w.dirichlet * l_d
            + w.first_frame * l_f;
        Self {
            l_md,
            l_v,
            l_a,
            l_d,
            l_f,
            total,
        }
    }

    /// Mean of several breakdowns (the batch reduction).
    pub fn mean(items: &[LossBreakdown]) -> Self {
        let n = items.len().max(1) as f64;
        let mut acc = Self::default();
        for b in items {
            acc.l_md += b.l_md;
            acc.l_v += b.l_v;
            acc.l_a += b.l_a;
            acc.l_d += b.l_d;
            acc.l_f += b.l_f;
            acc.total += b.total;
        }
        Self {
            l_md: acc.l_md / n,
            l_v: acc.l_v / n,
            l_a: acc.l_a / n,
            l_d: acc.l_d / n,
            l_f: acc.l_f / n,
            total: acc.total / n,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_md, self.l_v, self.l_a, self.l_d, self.l_f, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Gradient of a scalar loss with respect to one sample's mixture output.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureGrad {
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub mus: Vec<f64>,
}

impl MixtureGrad {
    pub fn zeros(components: usize, dim: usize) -> Self {
        Self {
            alphas: vec![0.0; components],
            sigmas: vec![0.0; components],
            mus: vec![0.0; components * dim],
        }
    }
}

fn check_target(mix: &MixtureParams, y: &Motion3D) -> Result<()> {
    if y.num_frames() != mix.frames {
        return Err(Error::dim("target frames", mix.frames, y.num_frames()));
    }
    if y.num_joints() != mix.joints {
        return Err(Error::dim("target joints", mix.joints, y.num_joints()));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-component log-terms `ln α_m − (d/2) ln 2πσ_m² − ‖y − μ_m‖² / 2σ_m²`.
fn component_log_terms(mix: &MixtureParams, y: &[f64]) -> Vec<f64> {
    let d = mix.dim() as f64;
    (0..mix.components())
        .map(|m| {
            let s2 = mix.sigmas[m] * mix.sigmas[m];
            mix.alphas[m].ln()
                - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln()
                - sq_dist(y, mix.mu(m)) / (2.0 * s2)
        })
        .collect()
}

/// Negative log-likelihood of `y` under the Gaussian mixture.
pub fn mdn_nll(mix: &MixtureParams, y: &Motion3D) -> Result<f64> {
    check_target(mix, y)?;
    Ok(-log_sum_exp(&component_log_terms(mix, y.as_slice()))?)
}

fn mdn_nll_grad(mix: &MixtureParams, y: &[f64], w: f64, g: &mut MixtureGrad) -> f64 {
    let q = component_log_terms(mix, y);
    let lse = log_sum_exp(&q).expect("at least one component");
    if w != 0.0 {
        let d = mix.dim() as f64;
        let dim = mix.dim();
        for (m, qm) in q.iter().enumerate() {
            // ∂L/∂q_m = −responsibility_m
            let r = -(qm - lse).exp() * w;
            let s = mix.sigmas[m];
            let mu = mix.mu(m);
            let dist2 = sq_dist(y, mu);
            g.alphas[m] += r / mix.alphas[m];
            g.sigmas[m] += r * (-d / s + dist2 / (s * s * s));
            let inv_s2 = 1.0 / (s * s);
            for (gm, (yi, mi)) in g.mus[m * dim..(m + 1) * dim].iter_mut().zip(y.iter().zip(mu)) {
                *gm += r * (yi - mi) * inv_s2;
            }
        }
    }
    -lse
}

fn velocity_energy_grad(mix: &MixtureParams, y: &[f64], w: f64, g: &mut MixtureGrad) -> f64 {
    let (t_len, step, dim) = (mix.frames, 3 * mix.joints, mix.dim());
    let m_count = mix.components();
    let norm = 1.0 / (m_count as f64 * (t_len - 1) as f64);
    let mut energy = 0.0;
    for m in 0..m_count {
        let mu = mix.mu(m);
        let gm = &mut g.mus[m * dim..(m + 1) * dim];
        for i in step..dim {
            let diff = (mu[i] - mu[i - step]) - (y[i] - y[i - step]);
            energy += diff * diff;
            if w != 0.0 {
                let c = 2.0 * norm * w * diff;
                gm[i] += c;
                gm[i - step] -= c;
            }
        }
    }
    energy * norm
}

fn accuracy_energy_grad(mix: &MixtureParams, y: &[f64], w: f64, g: &mut MixtureGrad) -> f64 {
    let dim = mix.dim();
    let (best, dist2) = (0..mix.components())
        .map(|m| (m, sq_dist(mix.mu(m), y)))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    if w != 0.0 {
        let mu = mix.mu(best);
        for (gm, (mi, yi)) in g.mus[best * dim..(best + 1) * dim].iter_mut().zip(mu.iter().zip(y)) {
            *gm += 2.0 * w * (mi - yi);
        }
    }
    dist2
}

fn dirichlet_grad(alphas: &[f64], lambdas: &[f64], w: f64, g: &mut MixtureGrad) -> f64 {
    let mut loss = 0.0;
    for (m, (a, l)) in alphas.iter().zip(lambdas).enumerate() {
        loss -= (l - 1.0) * a.ln();
        g.alphas[m] -= w * (l - 1.0) / a;
    }
    loss
}

fn first_frame_grad(mix: &MixtureParams, y: &[f64], w: f64, g: &mut MixtureGrad) -> f64 {
    let (step, dim) = (3 * mix.joints, mix.dim());
    let m_count = mix.components() as f64;
    let mut loss = 0.0;
    for m in 0..mix.components() {
        let mu = mix.mu(m);
        for i in 0..step {
            let diff = mu[i] - y[i];
            loss += diff * diff;
            g.mus[m * dim + i] += 2.0 * w * diff / m_count;
        }
    }
    loss / m_count
}

fn check_hyps(hyps: &[Motion3D], y: &Motion3D) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Argument("at least one hypothesis required".into()));
    }
    hyps.iter().try_for_each(|h| h.same_shape(y))
}

/// Packs hypotheses into a mixture shell so the slice kernels can be shared.
fn as_mixture(hyps: &[Motion3D], y: &Motion3D) -> MixtureParams {
    let m = hyps.len();
    MixtureParams {
        frames: y.num_frames(),
        joints: y.num_joints(),
        alphas: vec![1.0 / m as f64; m],
        sigmas: vec![1.0; m],
        mus: hyps.iter().flat_map(|h| h.as_slice().iter().copied()).collect(),
    }
}

/// Mean squared distance between predicted and true frame-to-frame
/// velocities, normalized by `M(T−1)`.
pub fn velocity_energy(hyps: &[Motion3D], y: &Motion3D) -> Result<f64> {
    check_hyps(hyps, y)?;
    if y.num_frames() < 2 {
        return Err(Error::Argument("velocity energy needs at least 2 frames".into()));
    }
    let mix = as_mixture(hyps, y);
    let mut g = MixtureGrad::zeros(mix.components(), mix.dim());
    Ok(velocity_energy_grad(&mix, y.as_slice(), 0.0, &mut g))
}

/// Squared distance from `y` to its closest hypothesis.
pub fn accuracy_energy(hyps: &[Motion3D], y: &Motion3D) -> Result<f64> {
    check_hyps(hyps, y)?;
    let mix = as_mixture(hyps, y);
    let mut g = MixtureGrad::zeros(mix.components(), mix.dim());
    Ok(accuracy_energy_grad(&mix, y.as_slice(), 0.0, &mut g))
}

/// `−Σ (λ_m − 1) ln α_m`, the Dirichlet log-density without its
/// normalizing constant.
pub fn dirichlet_loss(alphas: &[f64], lambdas: &[f64]) -> Result<f64> {
    if alphas.len() != lambdas.len() {
        return Err(Error::dim("lambda count", alphas.len(), lambdas.len()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(Error::Argument(format!("mixture weight {a} is not positive")));
    }
    let mut g = MixtureGrad::zeros(alphas.len(), 0);
    Ok(dirichlet_grad(alphas, lambdas, 0.0, &mut g))
}

/// Mean squared distance between each hypothesis' first frame and the
/// ground-truth first frame.
pub fn first_frame_loss(hyps: &[Motion3D], y: &Motion3D) -> Result<f64> {
    check_hyps(hyps, y)?;
    let mix = as_mixture(hyps, y);
    let mut g = MixtureGrad::zeros(mix.components(), mix.dim());
    Ok(first_frame_grad(&mix, y.as_slice(), 0.0, &mut g))
}

/// All loss terms for one sample, combined with the configured weights.
pub fn total_loss(mix: &MixtureParams, y: &Motion3D, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let mut g = MixtureGrad::zeros(mix.components(), mix.dim());
    total_loss_grad(mix, y, &cfg.weights, &cfg.lambdas(), &mut g)
}

/// Like [`total_loss`], additionally accumulating the weighted gradient
/// into `grad`.
pub fn total_loss_grad(
    mix: &MixtureParams,
    y: &Motion3D,
    weights: &LossWeights,
    lambdas: &[f64],
    grad: &mut MixtureGrad,
) -> Result<LossBreakdown> {
    check_target(mix, y)?;
    if lambdas.len() != mix.components() {
        return Err(Error::dim("lambda count", mix.components(), lambdas.len()));
    }
    if mix.frames < 2 && weights.velocity != 0.0 {
        return Err(Error::Argument("velocity energy needs at least 2 frames".into()));
    }
    let y = y.as_slice();
    let l_md = mdn_nll_grad(mix, y, weights.mixture, grad);
    let l_v = if mix.frames >= 2 {
        velocity_energy_grad(mix, y, weights.velocity, grad)
    } else {
        0.0
    };
    let l_a = accuracy_energy_grad(mix, y, weights.accuracy, grad);
    let l_d = dirichlet_grad(&mix.alphas, lambdas, weights.dirichlet, grad);
    let l_f = first_frame_grad(mix, y, weights.first_frame, grad);
    Ok(LossBreakdown::compose(l_md, l_v, l_a, l_d, l_f, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn motion(frames: usize, joints: usize, v: &[f64]) -> Motion3D {
        Motion3D::new(frames, joints, v.to_vec()).unwrap()
    }

    #[test]
    fn lse_small_cases() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn nll_single_component_at_mean() {
        let mix = MixtureParams::new(1, 1, vec![1.0], vec![1.0], vec![0.5, -1.0, 2.0]).unwrap();
        let y = motion(1, 1, &[0.5, -1.0, 2.0]);
        let expected = 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((mdn_nll(&mix, &y).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.7568156).abs() < 1e-7);
    }

    #[test]
    fn nll_identical_components() {
        let mu = [0.5, -1.0, 2.0];
        let mus: Vec<f64> = mu.iter().chain(mu.iter()).copied().collect();
        let mix = MixtureParams::new(1, 1, vec![0.5, 0.5], vec![1.0, 1.0], mus).unwrap();
        let y = motion(1, 1, &mu);
        assert!((mdn_nll(&mix, &y).unwrap() - 2.7568156).abs() < 1e-7);
    }

    #[test]
    fn nll_shape_mismatch() {
        let mix = MixtureParams::new(1, 1, vec![1.0], vec![1.0], vec![0.0; 3]).unwrap();
        assert!(mdn_nll(&mix, &Motion3D::zeros(2, 1)).is_err());
    }

    #[test]
    fn velocity_hand_case() {
        let pred = motion(2, 1, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let gt = Motion3D::zeros(2, 1);
        assert_eq!(velocity_energy(&[pred], &gt).unwrap(), 1.0);
        assert_eq!(velocity_energy(std::slice::from_ref(&gt), &gt).unwrap(), 0.0);
        assert!(velocity_energy(&[Motion3D::zeros(1, 1)], &Motion3D::zeros(1, 1)).is_err());
    }

    #[test]
    fn accuracy_hand_case() {
        let y = Motion3D::zeros(1, 1);
        let h1 = motion(1, 1, &[2.0, 0.0, 0.0]);
        let h2 = motion(1, 1, &[0.0, 3.0, 0.0]);
        assert_eq!(accuracy_energy(&[h2.clone(), h1.clone()], &y).unwrap(), 4.0);
        assert_eq!(accuracy_energy(&[h1, h2, y.clone()], &y).unwrap(), 0.0);
    }

    #[test]
    fn dirichlet_cases() {
        assert_eq!(dirichlet_loss(&[0.2, 0.8], &[1.0, 1.0]).unwrap(), 0.0);
        let uniform = vec![0.1; 10];
        let v = dirichlet_loss(&uniform, &[2.0; 10]).unwrap();
        assert!((v - 23.0258509).abs() < 1e-7);
        assert!(dirichlet_loss(&[0.0, 1.0], &[2.0, 2.0]).is_err());
    }

    #[test]
    fn first_frame_hand_case() {
        let y = Motion3D::zeros(2, 1);
        let h1 = motion(2, 1, &[1.0, 0.0, 0.0, 9.0, 9.0, 9.0]);
        let h2 = motion(2, 1, &[0.0, 0.0, 3.0, -4.0, 0.0, 0.0]);
        assert_eq!(first_frame_loss(&[h1, h2], &y).unwrap(), 5.0);
    }

    #[test]
    fn zeroed_weights_leave_nll() {
        let mix = MixtureParams::new(2, 1, vec![0.3, 0.7], vec![1.5, 0.8], (0..12).map(|i| i as f64 * 0.1).collect())
            .unwrap();
        let y = motion(2, 1, &[0.1, 0.2, 0.0, 0.5, 0.4, 0.3]);
        let cfg = TrainConfig {
            joints: 1,
            frames: 2,
            components: 2,
            weights: LossWeights {
                mixture: 1.0,
                velocity: 0.0,
                accuracy: 0.0,
                dirichlet: 1.0,
                first_frame: 0.0,
            },
            dirichlet_lambda: vec![1.0],
            ..Default::default()
        };
        let b = total_loss(&mix, &y, &cfg).unwrap();
        assert_eq!(b.total, b.l_md);
    }
}

//! Accuracy and diversity metrics, in millimeters.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, PredictionRecord};
use crate::error::{Error, Result};
use crate::model::{predict, Model, Motion3D};

/// Mean over frames and joints of the per-joint Euclidean distance.
pub fn mpjpe(hyp: &Motion3D, y: &Motion3D) -> Result<f64> {
    hyp.same_shape(y)?;
    let n = hyp.num_frames() * hyp.num_joints();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = hyp
        .as_slice()
        .chunks_exact(3)
        .zip(y.as_slice().chunks_exact(3))
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
        .sum();
    Ok(sum / n as f64)
}

/// Smallest MPJPE over the hypotheses and its index (lowest on ties).
pub fn mpjpe_best(hyps: &[Motion3D], y: &Motion3D) -> Result<(f64, usize)> {
    if hyps.is_empty() {
        return Err(Error::Argument("no hypotheses".into()));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, h) in hyps.iter().enumerate() {
        let e = mpjpe(h, y)?;
        if e < best.0 {
            best = (e, i);
        }
    }
    Ok(best)
}

/// Average pairwise distance: mean flattened L2 distance over ordered
/// pairs of distinct hypotheses. A single hypothesis has APD 0.
pub fn apd(hyps: &[Motion3D]) -> f64 {
    let m = hyps.len();
    if m < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            let d2: f64 = hyps[a]
                .as_slice()
                .iter()
                .zip(hyps[b].as_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            sum += 2.0 * d2.sqrt();
        }
    }
    sum / (m * (m - 1)) as f64
}

/// Shannon entropy (nats) of a weight vector.
pub fn entropy(alphas: &[f64]) -> f64 {
    -alphas.iter().filter(|a| **a > 0.0).map(|a| a * a.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMetrics {
    pub id: u64,
    pub best_index: usize,
    pub mpjpe: f64,
    pub apd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mpjpe_best: f64,
    pub apd: f64,
    pub per_sample: Vec<SampleMetrics>,
}

impl EvalReport {
    pub fn from_samples(per_sample: Vec<SampleMetrics>) -> Self {
        let n = per_sample.len().max(1) as f64;
        Self {
            mpjpe_best: per_sample.iter().map(|s| s.mpjpe).sum::<f64>() / n,
            apd: per_sample.iter().map(|s| s.apd).sum::<f64>() / n,
            per_sample,
        }
    }

    pub fn summary_line(&self) -> String {
        format!("mpjpe_best={:.4} apd={:.4} n={}", self.mpjpe_best, self.apd, self.per_sample.len())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,best_index,mpjpe,apd\n");
        for s in &self.per_sample {
            out.push_str(&format!("{},{},{},{}\n", s.id, s.best_index, s.mpjpe, s.apd));
        }
        out
    }

    pub fn write(&self, csv: impl AsRef<Path>, json: impl AsRef<Path>) -> Result<()> {
        let (csv, json) = (csv.as_ref(), json.as_ref());
        std::fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))?;
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(json, text).map_err(|e| Error::io(json, e))
    }
}

fn sample_metrics(id: u64, hyps: &[Motion3D], y: &Motion3D) -> Result<SampleMetrics> {
    let (mpjpe, best_index) = mpjpe_best(hyps, y)?;
    Ok(SampleMetrics {
        id,
        best_index,
        mpjpe,
        apd: apd(hyps),
    })
}

/// Runs the model on every sample and aggregates the metrics.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<EvalReport> {
    if ds.joints != model.cfg.joints || ds.frames != model.cfg.frames {
        return Err(Error::Config(format!(
            "checkpoint is C={} T={}, dataset is C={} T={}",
            model.cfg.joints, model.cfg.frames, ds.joints, ds.frames
        )));
    }
    let per = ds
        .samples
        .par_iter()
        .map(|s| {
            let (hyps, _) = predict(&s.input, model)?;
            sample_metrics(s.id, &hyps, &s.target)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_samples(per))
}

/// Scores a prediction file against ground truth, joining on sample id.
pub fn evaluate_predictions(preds: &[PredictionRecord], ds: &Dataset) -> Result<EvalReport> {
    let by_id: HashMap<u64, &PredictionRecord> = preds.iter().map(|p| (p.id, p)).collect();
    if by_id.len() != preds.len() {
        return Err(Error::Argument("duplicate ids in predictions".into()));
    }
    if preds.len() != ds.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} ground-truth samples",
            preds.len(),
            ds.len()
        )));
    }
    let per = ds
        .samples
        .iter()
        .map(|s| {
            let p = by_id
                .get(&s.id)
                .ok_or_else(|| Error::Argument(format!("no prediction for sample id {}", s.id)))?;
            sample_metrics(s.id, &p.hypotheses, &s.target)
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport::from_samples(per))
}

/// Entropy of the dataset-mean mixture weights.
pub fn mean_alpha_entropy(model: &Model, ds: &Dataset) -> Result<f64> {
    let m = model.cfg.components;
    let mut mean = vec![0.0; m];
    for s in &ds.samples {
        let (_, alphas) = predict(&s.input, model)?;
        mean.iter_mut().zip(&alphas).for_each(|(acc, a)| *acc += a / ds.len() as f64);
    }
    Ok(entropy(&mean))
}

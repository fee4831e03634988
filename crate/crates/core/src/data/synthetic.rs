//! Synthetic multimodal motion generator with known mode structure.
//!
//! Each sample draws a jittered base skeleton and one of `n_modes` motion
//! templates. Template `k` drifts every non-root joint along a fixed unit
//! direction that depends on `(k, joint)`, with displacement growing
//! linearly from zero at the first frame to `amplitude` at the last. The
//! 2D input is the orthographic projection of the clean first frame, so
//! the input carries no information about which mode follows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample, ROOT_JOINT};
use crate::error::{Error, Result};
use crate::model::activations::derive_seed;
use crate::model::{Motion3D, Pose2D, Pose3D};

/// Minimum clean-trajectory separation between two modes, in units of
/// `noise_std · √(3TC)`.
pub const SEPARATION_FACTOR: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_modes: usize,
    /// Mode probabilities; empty means uniform.
    pub mode_probs: Vec<f64>,
    /// Per-coordinate Gaussian noise on non-root joints, mm.
    pub noise_std: f64,
    /// Final-frame displacement of every non-root joint, mm.
    pub amplitude: f64,
    /// Per-sample jitter of base joint (x, y) positions, mm.
    pub pose_jitter: f64,
    pub n_samples: usize,
    pub joints: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_modes: 3,
            mode_probs: Vec::new(),
            noise_std: 5.0,
            amplitude: 200.0,
            pose_jitter: 40.0,
            n_samples: 2000,
            joints: 16,
            frames: 15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn probs(&self) -> Vec<f64> {
        if self.mode_probs.is_empty() {
            vec![1.0 / self.n_modes as f64; self.n_modes]
        } else {
            self.mode_probs.clone()
        }
    }

    /// Skeleton shared by all samples before jitter: non-root joints on a
    /// golden-angle spiral around the root.
    pub fn template_pose(&self) -> Pose3D {
        let joints = (0..self.joints)
            .map(|c| {
                if c == ROOT_JOINT {
                    return [0.0; 3];
                }
                let cf = c as f64;
                let radius = 150.0 + 40.0 * cf;
                let angle = 2.399_963_229_728_653 * cf;
                [radius * angle.cos(), radius * angle.sin(), 0.25 * radius * (1.3 * cf).sin()]
            })
            .collect();
        Pose3D::new(joints)
    }

    fn direction(&self, mode: usize, joint: usize) -> [f64; 3] {
        let theta = std::f64::consts::TAU * mode as f64 / self.n_modes as f64 + 0.7 * joint as f64;
        let phi = 0.3 * (joint as f64).sin();
        [theta.cos() * phi.cos(), phi.sin(), theta.sin() * phi.cos()]
    }

    /// Mode displacement of every coordinate, flattened `[T][C][3]`.
    pub fn displacement(&self, mode: usize) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.frames * self.joints];
        for t in 0..self.frames {
            let s = if self.frames > 1 {
                t as f64 / (self.frames - 1) as f64
            } else {
                0.0
            };
            for c in (0..self.joints).filter(|c| *c != ROOT_JOINT) {
                let u = self.direction(mode, c);
                for (a, ua) in u.iter().enumerate() {
                    out[3 * (t * self.joints + c) + a] = self.amplitude * s * ua;
                }
            }
        }
        out
    }

    /// Noise-free trajectory of `mode` starting from `base`.
    pub fn clean_trajectory(&self, base: &Pose3D, mode: usize) -> Motion3D {
        let disp = self.displacement(mode);
        let data = (0..self.frames)
            .flat_map(|_| base.joints.iter().flatten().copied())
            .zip(disp)
            .map(|(b, d)| b + d)
            .collect();
        Motion3D::new(self.frames, self.joints, data).expect("finite template")
    }

    /// Recovers the clean base pose from its projection: depth is an
    /// affine function of the in-plane jitter.
    pub fn base_from_input(&self, input: &Pose2D) -> Result<Pose3D> {
        if input.joints.len() != self.joints {
            return Err(Error::dim("input joints", self.joints, input.joints.len()));
        }
        let template = self.template_pose();
        let joints = template
            .joints
            .iter()
            .zip(&input.joints)
            .map(|(t, p)| {
                let (dx, dy) = (p[0] - t[0], p[1] - t[1]);
                [p[0], p[1], t[2] + 0.5 * dx - 0.3 * dy]
            })
            .collect();
        Ok(Pose3D::new(joints))
    }

    /// Clean trajectory of every mode for a given input pose.
    pub fn mode_trajectories(&self, input: &Pose2D) -> Result<Vec<Motion3D>> {
        let base = self.base_from_input(input)?;
        Ok((0..self.n_modes).map(|k| self.clean_trajectory(&base, k)).collect())
    }

    /// Flattened L2 distance between clean trajectories of every mode pair.
    /// The base pose cancels, so this holds for every sample.
    pub fn mode_separations(&self) -> Vec<((usize, usize), f64)> {
        let disps: Vec<Vec<f64>> = (0..self.n_modes).map(|k| self.displacement(k)).collect();
        let mut out = Vec::new();
        for a in 0..self.n_modes {
            for b in a + 1..self.n_modes {
                let d2: f64 = disps[a].iter().zip(&disps[b]).map(|(x, y)| (x - y).powi(2)).sum();
                out.push(((a, b), d2.sqrt()));
            }
        }
        out
    }

    pub fn mean_mode_separation(&self) -> f64 {
        let seps = self.mode_separations();
        if seps.is_empty() {
            return 0.0;
        }
        seps.iter().map(|(_, d)| d).sum::<f64>() / seps.len() as f64
    }

    pub fn required_separation(&self) -> f64 {
        SEPARATION_FACTOR * self.noise_std * ((3 * self.frames * self.joints) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.n_modes == 0 || self.joints == 0 || self.frames == 0 {
            return arg("n_modes, joints and frames must be positive".into());
        }
        let probs = self.probs();
        if probs.len() != self.n_modes {
            return arg(format!("{} mode probabilities for {} modes", probs.len(), self.n_modes));
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return arg(format!("mode probabilities {probs:?} are not on the simplex"));
        }
        if !(self.noise_std >= 0.0) || !self.amplitude.is_finite() || !(self.pose_jitter >= 0.0) {
            return arg("noise_std, amplitude and pose_jitter must be finite and non-negative".into());
        }
        let required = self.required_separation();
        for ((a, b), d) in self.mode_separations() {
            if d < required {
                return arg(format!(
                    "modes {a} and {b} are separated by {d:.3} mm, below the required {required:.3} mm"
                ));
            }
        }
        Ok(())
    }

    fn sample(&self, index: usize, probs: &[f64]) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, index as u64));
        let template = self.template_pose();
        let jitter = Normal::new(0.0, self.pose_jitter).expect("valid std");
        let base = Pose3D::new(
            template
                .joints
                .iter()
                .enumerate()
                .map(|(c, j)| {
                    if c == ROOT_JOINT {
                        return *j;
                    }
                    let dx = jitter.sample(&mut rng);
                    let dy = jitter.sample(&mut rng);
                    [j[0] + dx, j[1] + dy, j[2] + 0.5 * dx - 0.3 * dy]
                })
                .collect(),
        );
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut mode = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                mode = k;
                break;
            }
        }
        let mut target = self.clean_trajectory(&base, mode);
        if self.noise_std > 0.0 {
            let noise = Normal::new(0.0, self.noise_std).expect("valid std");
            let c_count = self.joints;
            for (i, v) in target.as_mut_slice().iter_mut().enumerate() {
                if (i / 3) % c_count != ROOT_JOINT {
                    *v += noise.sample(&mut rng);
                }
            }
        }
        Sample {
            id: index as u64,
            input: base.project(),
            target,
            mode: Some(mode),
        }
    }
}

/// Generates a dataset; each sample uses its own seed derived from
/// `(spec.seed, index)`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let probs = spec.probs();
    let samples = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| spec.sample(i, &probs))
        .collect();
    Ok(Dataset {
        joints: spec.joints,
        frames: spec.frames,
        samples,
        generator: Some(spec.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RootCenter;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            joints: 4,
            frames: 5,
            n_samples: 50,
            ..Default::default()
        }
    }

    #[test]
    fn single_noiseless_mode_matches_template() {
        let spec = SyntheticSpec {
            n_modes: 1,
            noise_std: 0.0,
            pose_jitter: 0.0,
            ..small()
        };
        let ds = generate(&spec).unwrap();
        let expected = spec.clean_trajectory(&spec.template_pose(), 0);
        assert!(ds.samples.iter().all(|s| s.target == expected));
    }

    #[test]
    fn mode_trajectories_recover_noiseless_targets() {
        let spec = SyntheticSpec {
            noise_std: 0.0,
            ..small()
        };
        for s in generate(&spec).unwrap().samples {
            let clean = spec.mode_trajectories(&s.input).unwrap();
            let want = &clean[s.mode.unwrap()];
            for (a, b) in s.target.as_slice().iter().zip(want.as_slice()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SyntheticSpec { seed: 1, ..small() };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn empirical_mode_frequencies() {
        let spec = SyntheticSpec {
            mode_probs: vec![0.5, 0.3, 0.2],
            n_samples: 10_000,
            ..small()
        };
        let ds = generate(&spec).unwrap();
        let mut counts = [0usize; 3];
        for s in &ds.samples {
            counts[s.mode.unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            assert!((*c as f64 / 10_000.0 - p).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn three_modes_are_equidistant_and_separated() {
        let spec = small();
        let seps = spec.mode_separations();
        assert_eq!(seps.len(), 3);
        for (_, d) in &seps {
            assert!((d - seps[0].1).abs() < 1e-9);
            assert!(*d >= spec.required_separation());
        }
    }

    #[test]
    fn separation_violation_names_pair() {
        let spec = SyntheticSpec {
            amplitude: 5.0,
            ..small()
        };
        let err = generate(&spec).unwrap_err().to_string();
        assert!(err.contains("modes 0 and 1"), "{err}");
    }

    #[test]
    fn non_simplex_probs_rejected() {
        let spec = SyntheticSpec {
            mode_probs: vec![0.5, 0.6, -0.1],
            ..small()
        };
        assert!(generate(&spec).is_err());
        let spec = SyntheticSpec {
            mode_probs: vec![0.5, 0.5],
            ..small()
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn input_is_projection_of_first_frame() {
        let spec = small();
        let ds = generate(&spec).unwrap();
        let tol = 6.0 * spec.noise_std;
        for s in &ds.samples {
            let first = s.target.frame_pose(0).project();
            for (a, b) in s.input.joints.iter().zip(&first.joints) {
                assert!((a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol);
            }
            assert_eq!(s.input.root_center(), s.input);
            assert_eq!(s.target.root_center(), s.target);
        }
    }

    #[test]
    fn clean_trajectories_of_distinct_modes_are_separated() {
        let spec = small();
        let ds = generate(&spec).unwrap();
        let required = spec.required_separation();
        for s in ds.samples.iter().take(10) {
            let base = Pose3D::new(
                s.input
                    .joints
                    .iter()
                    .zip(&spec.template_pose().joints)
                    .map(|(xy, t)| {
                        let (dx, dy) = (xy[0] - t[0], xy[1] - t[1]);
                        [xy[0], xy[1], t[2] + 0.5 * dx - 0.3 * dy]
                    })
                    .collect(),
            );
            for a in 0..3 {
                for b in a + 1..3 {
                    let ta = spec.clean_trajectory(&base, a);
                    let tb = spec.clean_trajectory(&base, b);
                    let d: f64 = ta
                        .as_slice()
                        .iter()
                        .zip(tb.as_slice())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    assert!(d >= required);
                }
            }
        }
    }
}

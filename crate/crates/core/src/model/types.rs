use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A 2D skeleton, `C` joints of `(x, y)` in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose2D {
    pub joints: Vec<[f64; 2]>,
}

impl Pose2D {
    pub fn new(joints: Vec<[f64; 2]>) -> Self {
        Self { joints }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.joints.iter().flatten().copied().collect()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return Err(Error::Argument("2D pose needs an even number of values".into()));
        }
        Ok(Self::new(values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
    }
}

/// A single 3D skeleton, `C` joints of `(x, y, z)` in millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pose3D {
    pub joints: Vec<[f64; 3]>,
}

impl Pose3D {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        Self { joints }
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Orthographic projection: drops z.
    pub fn project(&self) -> Pose2D {
        Pose2D::new(self.joints.iter().map(|j| [j[0], j[1]]).collect())
    }
}

/// `T` frames of `C` joints, stored flat in `[frame][joint][xyz]` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion3D {
    frames: usize,
    joints: usize,
    data: Vec<f64>,
}

impl Motion3D {
    pub fn new(frames: usize, joints: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * frames * joints {
            return Err(Error::dim("motion length", 3 * frames * joints, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("motion"));
        }
        Ok(Self {
            frames,
            joints,
            data,
        })
    }

    pub fn zeros(frames: usize, joints: usize) -> Self {
        Self {
            frames,
            joints,
            data: vec![0.0; 3 * frames * joints],
        }
    }

    pub fn from_frames(frames: &[Pose3D]) -> Result<Self> {
        let joints = frames.first().map_or(0, Pose3D::num_joints);
        if let Some(bad) = frames.iter().find(|f| f.num_joints() != joints) {
            return Err(Error::dim("joints per frame", joints, bad.num_joints()));
        }
        let data = frames.iter().flat_map(|f| f.joints.iter().flatten().copied()).collect();
        Self::new(frames.len(), joints, data)
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_joints(&self) -> usize {
        self.joints
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// The `3C` values of frame `t` (0-based).
    pub fn frame(&self, t: usize) -> &[f64] {
        let w = 3 * self.joints;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn frame_pose(&self, t: usize) -> Pose3D {
        Pose3D::new(self.frame(t).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn point(&self, t: usize, c: usize) -> [f64; 3] {
        let i = 3 * (t * self.joints + c);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn frames(&self) -> Vec<Pose3D> {
        (0..self.frames).map(|t| self.frame_pose(t)).collect()
    }

    /// Nested `[T][C][3]` representation used by the file formats.
    pub fn to_nested(&self) -> Vec<Vec<[f64; 3]>> {
        self.frames().into_iter().map(|p| p.joints).collect()
    }

    pub fn from_nested(nested: &[Vec<[f64; 3]>]) -> Result<Self> {
        let frames: Vec<Pose3D> = nested.iter().map(|f| Pose3D::new(f.clone())).collect();
        Self::from_frames(&frames)
    }

    pub(crate) fn same_shape(&self, other: &Motion3D) -> Result<()> {
        if self.frames != other.frames {
            return Err(Error::dim("frames", self.frames, other.frames));
        }
        if self.joints != other.joints {
            return Err(Error::dim("joints", self.joints, other.joints));
        }
        Ok(())
    }
}

/// Output of the mixture density head for a single input: weights,
/// isotropic scales and flattened means of `M` Gaussian components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub frames: usize,
    pub joints: usize,
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// `M` consecutive blocks of `3TC` values.
    pub mus: Vec<f64>,
}

impl MixtureParams {
    pub fn new(
        frames: usize,
        joints: usize,
        alphas: Vec<f64>,
        sigmas: Vec<f64>,
        mus: Vec<f64>,
    ) -> Result<Self> {
        let m = alphas.len();
        if m == 0 {
            return Err(Error::Argument("mixture needs at least one component".into()));
        }
        if sigmas.len() != m {
            return Err(Error::dim("sigma count", m, sigmas.len()));
        }
        let d = 3 * frames * joints;
        if mus.len() != m * d {
            return Err(Error::dim("mean block length", m * d, mus.len()));
        }
        Ok(Self {
            frames,
            joints,
            alphas,
            sigmas,
            mus,
        })
    }

    pub fn components(&self) -> usize {
        self.alphas.len()
    }

    /// Dimension `d = 3TC` of one component mean.
    pub fn dim(&self) -> usize {
        3 * self.frames * self.joints
    }

    pub fn mu(&self, m: usize) -> &[f64] {
        let d = self.dim();
        &self.mus[m * d..(m + 1) * d]
    }

    pub fn hypotheses(&self) -> Vec<Motion3D> {
        (0..self.components())
            .map(|m| Motion3D {
                frames: self.frames,
                joints: self.joints,
                data: self.mu(m).to_vec(),
            })
            .collect()
    }

    /// Checks the simplex and clip invariants of a forward pass.
    pub fn check_invariants(&self, sigma_clip: [f64; 2], alpha_clip: [f64; 2]) -> Result<()> {
        let sum: f64 = self.alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Argument(format!("alphas sum to {sum}")));
        }
        // renormalizing after the clip divides by at most 1 + (M - 1) * floor
        let m = self.components() as f64;
        let floor = alpha_clip[0] / (1.0 + (m - 1.0) * alpha_clip[0]) * (1.0 - 1e-12);
        if self.alphas.iter().any(|a| !(*a >= floor && *a <= alpha_clip[1] + 1e-12)) {
            return Err(Error::Argument("alpha outside clip range".into()));
        }
        if self.sigmas.iter().any(|s| !(*s >= sigma_clip[0] && *s <= sigma_clip[1])) {
            return Err(Error::Argument("sigma outside clip range".into()));
        }
        if self.mus.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("mus"));
        }
        Ok(())
    }
}

use crate::error::{Error, Result};
use crate::model::{Motion3D, Pose2D, Pose3D};

/// Index of the pelvis joint.
pub const ROOT_JOINT: usize = 0;

/// Translation that puts the root joint at the origin (per frame for motions).
pub trait RootCenter: Sized {
    fn root_center(&self) -> Self;
}

impl RootCenter for Pose2D {
    fn root_center(&self) -> Self {
        let Some(root) = self.joints.get(ROOT_JOINT).copied() else {
            return self.clone();
        };
        Pose2D::new(self.joints.iter().map(|j| [j[0] - root[0], j[1] - root[1]]).collect())
    }
}

impl RootCenter for Pose3D {
    fn root_center(&self) -> Self {
        let Some(root) = self.joints.get(ROOT_JOINT).copied() else {
            return self.clone();
        };
        Pose3D::new(
            self.joints
                .iter()
                .map(|j| [j[0] - root[0], j[1] - root[1], j[2] - root[2]])
                .collect(),
        )
    }
}

impl RootCenter for Motion3D {
    fn root_center(&self) -> Self {
        if self.num_joints() == 0 {
            return self.clone();
        }
        let frames: Vec<Pose3D> = self.frames().iter().map(RootCenter::root_center).collect();
        Motion3D::from_frames(&frames).expect("centering preserves shape")
    }
}

/// Keeps every `src_fps / dst_fps`-th frame, starting with the first.
pub fn downsample<T: Clone>(frames: &[T], src_fps: u32, dst_fps: u32) -> Result<Vec<T>> {
    if src_fps == 0 || dst_fps == 0 || !src_fps.is_multiple_of(dst_fps) {
        return Err(Error::Argument(format!(
            "cannot downsample {src_fps} fps to {dst_fps} fps without interpolation"
        )));
    }
    let stride = (src_fps / dst_fps) as usize;
    Ok(frames.iter().step_by(stride).cloned().collect())
}

pub fn downsample_motion(motion: &Motion3D, src_fps: u32, dst_fps: u32) -> Result<Motion3D> {
    let frames = downsample(&motion.frames(), src_fps, dst_fps)?;
    if frames.is_empty() {
        return Ok(Motion3D::zeros(0, motion.num_joints()));
    }
    Motion3D::from_frames(&frames)
}

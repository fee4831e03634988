//! Datasets: synthetic generation, preprocessing and line-delimited file I/O.

mod io;
mod preprocess;
mod synthetic;

pub use io::{load_dataset, load_predictions, save_dataset, save_predictions, PredictionRecord};
pub use preprocess::{downsample, downsample_motion, RootCenter, ROOT_JOINT};
pub use synthetic::{generate, SyntheticSpec};

use crate::error::{Error, Result};
use crate::model::{Motion3D, Pose2D};

/// One training pair: a 2D pose and the 3D motion that follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub input: Pose2D,
    pub target: Motion3D,
    /// Generator mode, known only for synthetic data.
    pub mode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub joints: usize,
    pub frames: usize,
    pub samples: Vec<Sample>,
    /// Generator settings when the dataset is synthetic.
    pub generator: Option<SyntheticSpec>,
}

impl Dataset {
    pub fn new(joints: usize, frames: usize, samples: Vec<Sample>) -> Result<Self> {
        let ds = Self {
            joints,
            frames,
            samples,
            generator: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.samples {
            if s.input.num_joints() != self.joints {
                return Err(Error::dim("input joints", self.joints, s.input.num_joints()));
            }
            if s.target.num_joints() != self.joints {
                return Err(Error::dim("target joints", self.joints, s.target.num_joints()));
            }
            if s.target.num_frames() != self.frames {
                return Err(Error::dim("target frames", self.frames, s.target.num_frames()));
            }
        }
        Ok(())
    }

    /// Same samples repeated `times` times, ids included.
    pub fn repeated(&self, times: usize) -> Self {
        let mut out = self.clone();
        out.samples = (0..times).flat_map(|_| self.samples.iter().cloned()).collect();
        out
    }
}

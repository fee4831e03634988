//! Flat, named parameter storage.
//!
//! All trainable weights live in one contiguous `Vec<f64>`. A [`Layout`]
//! maps segment names (`"block0.fc1.weight"`, `"head_mu.bias"`, ...) to
//! ranges of that vector, so optimizers work on the flat array while the
//! network reads typed matrix views.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    /// `[rows, cols]` for matrices, `[len]` for vectors.
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segment map. Segments are disjoint and tile `0..len()` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment directly after the previous one.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize]) {
        let offset = self.len();
        self.segments.push(Segment {
            name: name.into(),
            offset,
            shape: shape.to_vec(),
        });
    }

    pub fn len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn get(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Segment containing flat index `i`.
    pub fn segment_of(&self, i: usize) -> Option<&Segment> {
        self.segments.iter().find(|s| s.range().contains(&i))
    }

    /// Checks that segments are disjoint, in order, and tile the array.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.offset != next || s.shape.is_empty() || s.shape.len() > 2 {
                return Err(Error::Config(format!("malformed segment {}", s.name)));
            }
            next += s.len();
        }
        let mut names: Vec<&str> = self.segments.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate segment name".into()));
        }
        Ok(())
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            layout: Layout,
            values: Vec<f64>,
        }

        impl $name {
            pub fn zeros(layout: Layout) -> Self {
                let values = vec![0.0; layout.len()];
                Self { layout, values }
            }

            pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
                layout.validate()?;
                if values.len() != layout.len() {
                    return Err(Error::dim("flat vector length", layout.len(), values.len()));
                }
                Ok(Self { layout, values })
            }

            pub fn layout(&self) -> &Layout {
                &self.layout
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            fn seg(&self, name: &str) -> &Segment {
                self.layout
                    .get(name)
                    .unwrap_or_else(|| panic!("unknown segment {name}"))
            }

            pub fn slice(&self, name: &str) -> &[f64] {
                let r = self.seg(name).range();
                &self.values[r]
            }

            pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
                let r = self.seg(name).range();
                &mut self.values[r]
            }

            pub fn matrix(&self, name: &str) -> ArrayView2<'_, f64> {
                let s = self.seg(name);
                let (r, c) = (s.shape[0], s.shape[1]);
                ArrayView2::from_shape((r, c), &self.values[s.range()]).expect("segment shape")
            }

            pub fn matrix_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
                let s = self.seg(name).clone();
                ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut self.values[s.range()])
                    .expect("segment shape")
            }

            pub fn vector(&self, name: &str) -> ArrayView1<'_, f64> {
                ArrayView1::from(self.slice(name))
            }

            pub fn vector_mut(&mut self, name: &str) -> ArrayViewMut1<'_, f64> {
                ArrayViewMut1::from(self.slice_mut(name))
            }

            /// Name of the first segment holding a non-finite entry.
            pub fn first_non_finite(&self) -> Option<&str> {
                self.layout
                    .segments()
                    .iter()
                    .find(|s| self.values[s.range()].iter().any(|v| !v.is_finite()))
                    .map(|s| s.name.as_str())
            }
        }
    };
}

flat_vector!(ParameterVector);
flat_vector!(GradientVector);

impl GradientVector {
    pub fn same_layout(&self, params: &ParameterVector) -> bool {
        self.layout == params.layout
    }
}

//! Datasets: synthetic Square images, PPM/PGM I/O, manifests and splits.

pub mod manifest;
pub mod pnm;
pub mod resize;
pub mod square;

pub use manifest::{compute_avg_pixels, split, split_samples, DatasetManifest, ManifestEntry, SplitTag};
pub use resize::resize_bilinear;
pub use square::{synth_square, SquareConfig, SquareLayout};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A labelled `[3,H,W]` image with values in `[0,1]`. Label 1 is the
/// positive ("square" / forged) class.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample<T> {
    pub pixels: Tensor<T>,
    pub label: usize,
    pub source_id: String,
}

impl<T: Scalar> ImageSample<T> {
    pub fn new(pixels: Tensor<T>, label: usize, source_id: impl Into<String>) -> Self {
        Self {
            pixels,
            label,
            source_id: source_id.into(),
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }

    /// `(width, height)`
    pub fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    pub fn validate(&self, min_side: usize) -> Result<()> {
        let (c, h, w) = self.pixels.chw()?;
        if c != 3 {
            return Err(Error::InvalidArgument(format!(
                "{}: expected 3 channels, got {c}",
                self.source_id
            )));
        }
        if h < min_side || w < min_side {
            return Err(Error::InputTooSmall {
                op: "image sample",
                height: h,
                width: w,
                min_height: min_side,
                min_width: min_side,
            });
        }
        let (zero, one) = (T::zero(), T::one());
        if self.pixels.data().iter().any(|&v| !(v >= zero && v <= one)) {
            return Err(Error::InvalidArgument(format!(
                "{}: pixel values outside [0,1]",
                self.source_id
            )));
        }
        Ok(())
    }

    /// Copy of this sample stretched to `height × width`.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            pixels: resize_bilinear(&self.pixels, height, width)?,
            label: self.label,
            source_id: self.source_id.clone(),
        })
    }
}

/// Mean pixel count over a set of `(width, height)` pairs.
pub fn mean_pixels(dims: impl IntoIterator<Item = (usize, usize)>) -> Option<f64> {
    let (mut n, mut total) = (0usize, 0f64);
    for (w, h) in dims {
        n += 1;
        total += (w * h) as f64;
    }
    (n > 0).then(|| total / n as f64)
}

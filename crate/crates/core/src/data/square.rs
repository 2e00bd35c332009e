//! Synthetic "Square" dataset: one filled axis-aligned rectangle per image,
//! labelled 1 when the rectangle is a square.
//!
//! Image aspect ratio and rectangle aspect ratio are sampled independently, so
//! stretching an image to a fixed canvas changes the rectangle's aspect and
//! destroys the label.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LABEL_SQUARE: usize = 1;
pub const LABEL_NON_SQUARE: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct SquareConfig {
    pub count: usize,
    pub seed: u64,
    /// Image width/height ratio range.
    pub aspect_range: (f64, f64),
    /// Allowed image side lengths, inclusive.
    pub side_range: (usize, usize),
    pub rect_min_side: usize,
    /// Longest rectangle side as a fraction of the image's shorter side.
    pub rect_max_frac: f64,
    /// Absolute cap on the longest rectangle side.
    pub rect_max_side: usize,
    /// Non-square rectangles never have width/height inside this band.
    pub exclusion_band: (f64, f64),
    /// Largest width/height (or height/width) ratio of a non-square rectangle.
    pub max_rect_aspect: f64,
    /// Minimum mean absolute RGB difference between shape and background.
    pub min_contrast: f64,
    pub max_retries: usize,
}

impl Default for SquareConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            seed: 42,
            aspect_range: (0.6, 1.67),
            side_range: (48, 160),
            rect_min_side: 8,
            rect_max_frac: 0.6,
            rect_max_side: usize::MAX,
            exclusion_band: (0.9, 1.111),
            max_rect_aspect: 1.67,
            min_contrast: 0.2,
            max_retries: 1000,
        }
    }
}

/// Ground-truth geometry of one generated image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SquareLayout {
    pub height: usize,
    pub width: usize,
    /// Top-left corner and size of the rectangle, in pixels.
    pub top: usize,
    pub left: usize,
    pub rect_height: usize,
    pub rect_width: usize,
    pub background: [f64; 3],
    pub foreground: [f64; 3],
}

impl SquareLayout {
    pub fn label(&self) -> usize {
        if self.rect_height == self.rect_width {
            LABEL_SQUARE
        } else {
            LABEL_NON_SQUARE
        }
    }

    pub fn render<T: Scalar>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let inside = |y: usize, x: usize| {
            y >= self.top && y < self.top + self.rect_height && x >= self.left && x < self.left + self.rect_width
        };
        Tensor::from_fn(&[3, h, w], |i| {
            let c = i / (h * w);
            let (y, x) = ((i / w) % h, i % w);
            T::from_f64_lossy(if inside(y, x) {
                self.foreground[c]
            } else {
                self.background[c]
            })
        })
    }
}

impl SquareConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.count == 0 || !self.count.is_multiple_of(2) {
            return bad("square dataset count must be positive and even");
        }
        if !(self.aspect_range.0 > 0.0 && self.aspect_range.0 <= self.aspect_range.1) {
            return bad("invalid aspect range");
        }
        if self.side_range.0 == 0 || self.side_range.0 > self.side_range.1 {
            return bad("invalid side range");
        }
        if !(self.exclusion_band.0 < 1.0 && self.exclusion_band.1 > 1.0) {
            return bad("exclusion band must contain 1");
        }
        if self.max_rect_aspect <= self.exclusion_band.1 {
            return bad("max rectangle aspect must exceed the exclusion band");
        }
        if self.rect_min_side == 0 || self.min_contrast < 0.0 || self.min_contrast > 1.0 {
            return bad("invalid rectangle or contrast settings");
        }
        Ok(())
    }

    fn sample_canvas(&self, rng: &mut impl Rng) -> (usize, usize) {
        let (lo, hi) = (self.side_range.0 as f64, self.side_range.1 as f64);
        loop {
            let aspect = rng.gen_range(self.aspect_range.0..=self.aspect_range.1);
            // Heights for which both sides stay inside the side range.
            let h_lo = lo.max(lo / aspect).ceil();
            let h_hi = hi.min(hi / aspect).floor();
            if h_lo > h_hi {
                continue;
            }
            let h = rng.gen_range(h_lo as usize..=h_hi as usize);
            let w = ((h as f64) * aspect).round() as usize;
            let realized = w as f64 / h as f64;
            if (self.side_range.0..=self.side_range.1).contains(&w)
                && realized >= self.aspect_range.0
                && realized <= self.aspect_range.1
            {
                return (h, w);
            }
        }
    }

    fn sample_colors(&self, rng: &mut impl Rng) -> ([f64; 3], [f64; 3]) {
        loop {
            let bg: [f64; 3] = std::array::from_fn(|_| rng.gen::<f64>());
            let fg: [f64; 3] = std::array::from_fn(|_| rng.gen::<f64>());
            let contrast = bg.iter().zip(&fg).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0;
            if contrast >= self.min_contrast {
                return (bg, fg);
            }
        }
    }

    fn sample_rect(&self, rng: &mut impl Rng, label: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let max_side = (((h.min(w) as f64) * self.rect_max_frac).floor() as usize).min(self.rect_max_side);
        if max_side < self.rect_min_side {
            return None;
        }
        if label == LABEL_SQUARE {
            let s = rng.gen_range(self.rect_min_side..=max_side);
            return Some((s, s));
        }
        for _ in 0..self.max_retries {
            let lo = self.exclusion_band.1.ln();
            let hi = self.max_rect_aspect.ln();
            let mut ratio = rng.gen_range(lo..=hi).exp();
            if rng.gen_bool(0.5) {
                ratio = 1.0 / ratio;
            }
            // ratio = width / height; the longer side bounds the draw.
            let long_max = max_side;
            let long_min = ((self.rect_min_side as f64) * ratio.max(1.0 / ratio)).ceil() as usize;
            if long_min > long_max {
                continue;
            }
            let long = rng.gen_range(long_min..=long_max);
            let short = ((long as f64) / ratio.max(1.0 / ratio)).round() as usize;
            let (rh, rw) = if ratio >= 1.0 { (short, long) } else { (long, short) };
            let realized = rw as f64 / rh as f64;
            let in_band = realized >= self.exclusion_band.0 && realized <= self.exclusion_band.1;
            if rh >= self.rect_min_side && rw >= self.rect_min_side && rh <= max_side && rw <= max_side && !in_band {
                return Some((rh, rw));
            }
        }
        None
    }

    pub fn sample_layout(&self, rng: &mut impl Rng, label: usize) -> Result<SquareLayout> {
        for _ in 0..self.max_retries {
            let (h, w) = self.sample_canvas(rng);
            let Some((rh, rw)) = self.sample_rect(rng, label, h, w) else {
                continue;
            };
            let top = rng.gen_range(0..=h - rh);
            let left = rng.gen_range(0..=w - rw);
            let (background, foreground) = self.sample_colors(rng);
            return Ok(SquareLayout {
                height: h,
                width: w,
                top,
                left,
                rect_height: rh,
                rect_width: rw,
                background,
                foreground,
            });
        }
        Err(Error::InvalidArgument(format!(
            "could not place a rectangle after {} attempts; check the size settings",
            self.max_retries
        )))
    }

    /// Balanced labels in shuffled order plus one layout per label.
    pub fn layouts(&self) -> Result<Vec<SquareLayout>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut labels: Vec<usize> = (0..self.count)
            .map(|i| {
                if i < self.count / 2 {
                    LABEL_SQUARE
                } else {
                    LABEL_NON_SQUARE
                }
            })
            .collect();
        labels.shuffle(&mut rng);
        labels.into_iter().map(|l| self.sample_layout(&mut rng, l)).collect()
    }
}

/// Generates the dataset in memory.
pub fn synth_square<T: Scalar>(cfg: &SquareConfig) -> Result<Vec<(SquareLayout, ImageSample<T>)>> {
    Ok(cfg
        .layouts()?
        .into_iter()
        .enumerate()
        .map(|(i, layout)| {
            let sample = ImageSample::new(layout.render(), layout.label(), format!("square_{i:05}"));
            (layout, sample)
        })
        .collect())
}

//! Learnable noise-residual layer.
//!
//! Three 5×5 high-pass kernels per colour channel, initialised from the
//! steganalysis rich-model (SRM) filters commonly used for tamper detection:
//!
//! * a second-order 3×3 Laplacian-like filter,
//! * the 5×5 "KV" filter,
//! * a first-order horizontal second difference.
//!
//! Each kernel is replicated over the three colour channels and divided by 3,
//! so a grey image produces the single-channel SRM response. Convolution is
//! stride 1 over an input padded by 2 with replicated edge values, so the
//! output keeps the input size and a constant image maps to exactly zero.
//! There is no bias.

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const RESIDUAL_CHANNELS: usize = 3;
pub const COLOR_CHANNELS: usize = 3;
pub const KERNEL_SIZE: usize = 5;
pub const PADDING: usize = 2;

/// The three SRM kernels as 5×5 row-major arrays (already normalised).
pub fn srm_kernels() -> [[f64; 25]; 3] {
    let mut second_order = [0.0; 25];
    let k3 = [[-1.0, 2.0, -1.0], [2.0, -4.0, 2.0], [-1.0, 2.0, -1.0]];
    for (i, row) in k3.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            second_order[(i + 1) * 5 + j + 1] = v / 4.0;
        }
    }

    let kv = [
        [-1.0, 2.0, -2.0, 2.0, -1.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-2.0, 8.0, -12.0, 8.0, -2.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-1.0, 2.0, -2.0, 2.0, -1.0],
    ];
    let mut square5 = [0.0; 25];
    for (i, row) in kv.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            square5[i * 5 + j] = v / 12.0;
        }
    }

    let mut first_order = [0.0; 25];
    first_order[2 * 5 + 1] = 0.5;
    first_order[2 * 5 + 2] = -1.0;
    first_order[2 * 5 + 3] = 0.5;

    [second_order, square5, first_order]
}

/// Weights `[3 residual × 3 colour × 5 × 5]` with an on/off training switch.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualKernelBank<T> {
    pub weight: Param<T>,
}

impl<T: Scalar> ResidualKernelBank<T> {
    pub fn init_srm() -> Self {
        let kernels = srm_kernels();
        let mut data = Vec::with_capacity(RESIDUAL_CHANNELS * COLOR_CHANNELS * 25);
        for k in &kernels {
            for _ in 0..COLOR_CHANNELS {
                data.extend(k.iter().map(|&v| T::from_f64_lossy(v / 3.0)));
            }
        }
        let weight =
            Tensor::new(vec![RESIDUAL_CHANNELS, COLOR_CHANNELS, KERNEL_SIZE, KERNEL_SIZE], data).expect("static shape");
        Self {
            weight: Param::new("residual.weight", weight),
        }
    }

    pub fn from_weight(weight: Tensor<T>) -> Result<Self> {
        let expect = [RESIDUAL_CHANNELS, COLOR_CHANNELS, KERNEL_SIZE, KERNEL_SIZE];
        if weight.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "residual bank",
                left: expect.to_vec(),
                right: weight.shape().to_vec(),
            });
        }
        Ok(Self {
            weight: Param::new("residual.weight", weight),
        })
    }

    pub fn frozen(&self) -> bool {
        self.weight.frozen
    }

    pub fn set_frozen(&mut self, flag: bool) {
        self.weight.frozen = flag;
    }

    /// One 5×5 slice `weight[k][c]` in row-major order.
    pub fn slice(&self, k: usize, c: usize) -> &[T] {
        let start = (k * COLOR_CHANNELS + c) * 25;
        &self.weight.value.data()[start..start + 25]
    }

    /// Records the residual convolution on `tape`.
    pub fn apply(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let (c, h, w) = tape.value(image).chw()?;
        if c != COLOR_CHANNELS {
            return Err(Error::ShapeMismatch {
                op: "apply_residual",
                left: vec![COLOR_CHANNELS],
                right: vec![c],
            });
        }
        if h < KERNEL_SIZE || w < KERNEL_SIZE {
            return Err(Error::InputTooSmall {
                op: "apply_residual",
                height: h,
                width: w,
                min_height: KERNEL_SIZE,
                min_width: KERNEL_SIZE,
            });
        }
        let padded = tape.pad_replicate(image, PADDING)?;
        let weight = self.weight.record(tape);
        tape.conv2d(padded, weight, None, 1, 0)
    }

    /// Residual maps of a `[3,H,W]` image, without gradient tracking.
    pub fn residual_maps(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let mut frozen = self.clone();
        frozen.set_frozen(true);
        let y = frozen.apply(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Functional form of [`ResidualKernelBank::apply`].
pub fn apply_residual<T: Scalar>(tape: &mut Tape<T>, image: Var, bank: &ResidualKernelBank<T>) -> Result<Var> {
    bank.apply(tape, image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_are_zero_sum() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        for k in 0..3 {
            for c in 0..3 {
                let s: f64 = bank.slice(k, c).iter().sum();
                assert!(s.abs() < 1e-15, "slice ({k},{c}) sums to {s}");
            }
        }
    }

    #[test]
    fn kv_center_is_minus_one() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        let summed: f64 = (0..3).map(|c| bank.slice(1, c)[12]).sum();
        assert!((summed + 1.0).abs() < 1e-15);
        assert_eq!(srm_kernels()[1][12], -1.0);
    }

    #[test]
    fn channel_sum_reproduces_srm() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        for (k, srm) in srm_kernels().iter().enumerate() {
            for (i, &v) in srm.iter().enumerate() {
                let s: f64 = (0..3).map(|c| bank.slice(k, c)[i]).sum();
                assert!((s - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_image_gives_zero() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        for value in [0.0, 0.3, 1.0, 17.5] {
            let img = Tensor::full(&[3, 9, 12], value);
            let r = bank.residual_maps(&img).unwrap();
            assert_eq!(r.shape(), &[3, 9, 12]);
            assert!(r.max_abs() <= 1e-12);
        }
    }

    #[test]
    fn impulse_reveals_kernel() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        let (h, w) = (11, 11);
        let mut img = Tensor::<f64>::zeros(&[3, h, w]);
        let amp = 2.5;
        for c in 0..3 {
            img.data_mut()[c * h * w + 5 * w + 5] = amp;
        }
        let r = bank.residual_maps(&img).unwrap();
        for (k, srm) in srm_kernels().iter().enumerate() {
            for dy in 0..5 {
                for dx in 0..5 {
                    // Cross-correlation with a delta yields the kernel flipped.
                    let got = r.at(&[k, 5 + 2 - dy, 5 + 2 - dx]);
                    assert!((got - amp * srm[dy * 5 + dx]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn undersized_image_rejected() {
        let bank = ResidualKernelBank::<f64>::init_srm();
        let img = Tensor::zeros(&[3, 4, 9]);
        assert!(matches!(bank.residual_maps(&img), Err(Error::InputTooSmall { .. })));
    }
}

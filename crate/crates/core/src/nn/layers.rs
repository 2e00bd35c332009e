use rand::Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dParams<T> {
    /// `[out_ch, in_ch, kh, kw]`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dParams<T> {
    /// Fan-in scaled uniform weights (`±sqrt(6 / fan_in)`), zero bias.
    pub fn kaiming(name: &str, (in_ch, out_ch, k): (usize, usize, usize), padding: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        Self {
            weight: Param::uniform(
                format!("{name}.weight"),
                &[out_ch, in_ch, k, k],
                (6.0 / fan_in).sqrt(),
                rng,
            ),
            bias: Some(Param::zeros(format!("{name}.bias"), &[out_ch])),
            stride: 1,
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weight.shape();
        (s[2], s[3])
    }

    /// Output spatial size for an `h × w` input, or `None` if it does not fit.
    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        (hp >= kh && wp >= kw).then(|| ((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams<T> {
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LinearParams<T> {
    pub fn uniform(name: &str, (inputs, outputs): (usize, usize), rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[outputs, inputs], bound, rng),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
        }
    }
}

/// Pyramid levels for spatial pyramid max pooling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SppSpec {
    pub scales: Vec<usize>,
}

impl Default for SppSpec {
    fn default() -> Self {
        Self { scales: vec![1, 2, 4] }
    }
}

impl SppSpec {
    pub fn new(scales: Vec<usize>) -> Result<Self> {
        if scales.is_empty() || scales.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "SPP scales must be positive, got {scales:?}"
            )));
        }
        Ok(Self { scales })
    }

    /// Bins per channel, `Σ s²`.
    pub fn bins(&self) -> usize {
        self.scales.iter().map(|s| s * s).sum()
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.bins()
    }

    pub fn max_scale(&self) -> usize {
        self.scales.iter().copied().max().unwrap_or(1)
    }
}

pub fn conv2d<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &Conv2dParams<T>) -> Result<Var> {
    let w = p.weight.record(tape);
    let b = p.bias.as_ref().map(|b| b.record(tape));
    tape.conv2d(x, w, b, p.stride, p.padding)
}

pub fn relu<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    tape.relu(x)
}

pub fn maxpool2d<T: Scalar>(tape: &mut Tape<T>, x: Var, kernel: usize, stride: usize) -> Result<Var> {
    tape.maxpool2d(x, kernel, stride)
}

pub fn spp<T: Scalar>(tape: &mut Tape<T>, x: Var, spec: &SppSpec) -> Result<Var> {
    tape.spp(x, &spec.scales)
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &LinearParams<T>) -> Result<Var> {
    let w = p.weight.record(tape);
    let b = p.bias.record(tape);
    tape.linear(x, w, Some(b))
}

pub fn softmax_cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, label: usize) -> Result<Var> {
    tape.softmax_cross_entropy(logits, label)
}

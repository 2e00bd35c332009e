use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{self, Conv2dParams, LinearParams, SppSpec};
use crate::nn::Param;
use crate::residual::{ResidualKernelBank, KERNEL_SIZE};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_CLASSES: usize = 2;
pub const INPUT_CHANNELS: usize = 3;

/// conv3×3 → ReLU → optional 2×2 max pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2dParams<T>,
    pub pool: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelConfig {
    pub residual: bool,
    pub spp: SppSpec,
    pub seed: u64,
}

/// Residual layer (optional) → conv backbone → SPP → linear head.
///
/// The backbone is "TinyNet":
/// `conv(3→16)-relu-pool2 → conv(16→32)-relu-pool2 → conv(32→32)-relu`,
/// all 3×3 with padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub residual: Option<ResidualKernelBank<T>>,
    pub backbone: Vec<ConvBlock<T>>,
    pub spp: SppSpec,
    pub head: LinearParams<T>,
}

/// Which part of the model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Residual,
    Backbone,
    Head,
}

impl<T: Scalar> Model<T> {
    pub fn tinynet(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let widths = [(INPUT_CHANNELS, 16, true), (16, 32, true), (32, 32, false)];
        let backbone = widths
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, pool))| ConvBlock {
                conv: Conv2dParams::kaiming(&format!("backbone.{i}"), (cin, cout, 3), 1, &mut rng),
                pool: pool.then_some(2),
            })
            .collect::<Vec<_>>();
        let features = cfg.spp.output_len(widths[widths.len() - 1].1);
        let head = LinearParams::uniform("head", (features, NUM_CLASSES), &mut rng);
        let mut model = Self {
            residual: cfg.residual.then(ResidualKernelBank::init_srm),
            backbone,
            spp: cfg.spp.clone(),
            head,
        };
        model.reindex();
        model
    }

    /// Assigns stable parameter ids in enumeration order.
    pub fn reindex(&mut self) {
        for (i, p) in self.params_mut().into_iter().enumerate() {
            p.value.set_param_id(Some(i));
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        if let Some(r) = &self.residual {
            out.push(&r.weight);
        }
        for b in &self.backbone {
            out.push(&b.conv.weight);
            if let Some(bias) = &b.conv.bias {
                out.push(bias);
            }
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        if let Some(r) = &mut self.residual {
            out.push(&mut r.weight);
        }
        for b in &mut self.backbone {
            out.push(&mut b.conv.weight);
            if let Some(bias) = &mut b.conv.bias {
                out.push(bias);
            }
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("residual.") {
            ParamGroup::Residual
        } else if name.starts_with("head.") {
            ParamGroup::Head
        } else {
            ParamGroup::Backbone
        }
    }

    /// Freezes or relaxes every non-residual parameter.
    pub fn set_backbone_frozen(&mut self, flag: bool) {
        for p in self.params_mut() {
            if Self::group_of(&p.name) != ParamGroup::Residual {
                p.frozen = flag;
            }
        }
    }

    pub fn set_residual_frozen(&mut self, flag: bool) {
        if let Some(r) = &mut self.residual {
            r.set_frozen(flag);
        }
    }

    /// Side length of the feature map after the backbone for an input side.
    fn backbone_side(&self, mut side: usize) -> usize {
        for b in &self.backbone {
            side = match b.conv.output_size(side, side) {
                Some((s, _)) => s,
                None => return 0,
            };
            if let Some(k) = b.pool {
                if side < k {
                    return 0;
                }
                side = (side - k) / k + 1;
            }
        }
        side
    }

    /// Smallest image side for which the whole pipeline is defined.
    pub fn min_input_side(&self) -> usize {
        let floor = if self.residual.is_some() { KERNEL_SIZE } else { 1 };
        (floor..)
            .find(|&s| self.backbone_side(s) >= self.spp.max_scale())
            .expect("some input size fits")
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let min = self.min_input_side();
        if h < min || w < min {
            return Err(Error::InputTooSmall {
                op: "model_forward",
                height: h,
                width: w,
                min_height: min,
                min_width: min,
            });
        }
        Ok(())
    }

    /// Backbone + SPP + head, skipping the residual layer.
    pub fn forward_backbone(&self, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
        for b in &self.backbone {
            x = layers::conv2d(tape, x, &b.conv)?;
            x = layers::relu(tape, x);
            if let Some(k) = b.pool {
                x = layers::maxpool2d(tape, x, k, k)?;
            }
        }
        let feats = layers::spp(tape, x, &self.spp)?;
        layers::linear(tape, feats, &self.head)
    }

    /// Logits for one `[3,H,W]` image already on the tape.
    pub fn forward(&self, tape: &mut Tape<T>, image: Var) -> Result<Var> {
        let (c, h, w) = tape.value(image).chw()?;
        if c != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                left: vec![INPUT_CHANNELS],
                right: vec![c],
            });
        }
        self.check_input(h, w)?;
        let x = match &self.residual {
            Some(bank) => bank.apply(tape, image)?,
            None => image,
        };
        self.forward_backbone(tape, x)
    }

    /// Per-example cross-entropy loss node.
    pub fn loss(&self, tape: &mut Tape<T>, image: &Tensor<T>, label: usize) -> Result<Var> {
        let x = tape.constant(image.clone());
        let logits = self.forward(tape, x)?;
        layers::softmax_cross_entropy(tape, logits, label)
    }

    /// Inference-only logits.
    pub fn logits(&self, image: &Tensor<T>) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    pub fn predict(&self, image: &Tensor<T>) -> Result<usize> {
        let z = self.logits(image)?;
        // First maximum wins on ties.
        Ok(z.iter()
            .enumerate()
            .fold(
                (0, T::neg_infinity()),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0)
    }

    /// Flat copy of every parameter value, in id order.
    pub fn snapshot(&self) -> Vec<Vec<T>> {
        self.params().iter().map(|p| p.value.data().to_vec()).collect()
    }
}

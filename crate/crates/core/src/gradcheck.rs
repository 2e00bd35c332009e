//! Central finite-difference checks of every differentiable op.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::residual::ResidualKernelBank;
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;
/// Lower bound on the relative-error denominator, so entries whose true
/// gradient is ~0 are judged on absolute error.
pub const DENOM_FLOOR: f64 = 1e-3;
/// Elements checked per input tensor when it is larger than this.
const MAX_ENTRIES: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CheckOp {
    Add,
    Sub,
    Mul,
    Scale,
    AddScalar,
    MatMul,
    Sum,
    Relu,
    Reshape,
    PadReplicate,
    Conv2d,
    MaxPool,
    Spp,
    Linear,
    SoftmaxCrossEntropy,
    Residual,
    Model,
}

impl CheckOp {
    pub const ALL: [CheckOp; 17] = [
        CheckOp::Add,
        CheckOp::Sub,
        CheckOp::Mul,
        CheckOp::Scale,
        CheckOp::AddScalar,
        CheckOp::MatMul,
        CheckOp::Sum,
        CheckOp::Relu,
        CheckOp::Reshape,
        CheckOp::PadReplicate,
        CheckOp::Conv2d,
        CheckOp::MaxPool,
        CheckOp::Spp,
        CheckOp::Linear,
        CheckOp::SoftmaxCrossEntropy,
        CheckOp::Residual,
        CheckOp::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckOp::Add => "add",
            CheckOp::Sub => "sub",
            CheckOp::Mul => "mul",
            CheckOp::Scale => "scale",
            CheckOp::AddScalar => "add_scalar",
            CheckOp::MatMul => "matmul",
            CheckOp::Sum => "sum",
            CheckOp::Relu => "relu",
            CheckOp::Reshape => "reshape",
            CheckOp::PadReplicate => "pad_replicate",
            CheckOp::Conv2d => "conv2d",
            CheckOp::MaxPool => "maxpool2d",
            CheckOp::Spp => "spp",
            CheckOp::Linear => "linear",
            CheckOp::SoftmaxCrossEntropy => "softmax_cross_entropy",
            CheckOp::Residual => "residual",
            CheckOp::Model => "model",
        }
    }
}

impl fmt::Display for CheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CheckOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown op `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub op: CheckOp,
    pub shapes: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

type Eval = Box<dyn Fn(&[Tensor<f64>]) -> Result<(f64, Vec<Vec<f64>>)>>;

struct Case {
    shapes: String,
    inputs: Vec<Tensor<f64>>,
    eval: Eval,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

/// Uniform in ±[0.05, 1], keeping relu kinks out of reach of the step.
fn signed(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

/// Distinct values spaced 1e-2 apart, so no max-pool tie is within a step.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    Tensor::from_fn(shape, |i| ranks[i] as f64 * 1e-2 - n as f64 * 5e-3)
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(lo..=hi)).collect()
}

fn describe(shapes: &[&[usize]]) -> String {
    shapes.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" ")
}

/// Graph `sum(build(inputs) ⊙ R)` with a fixed random `R`.
fn tape_case(
    shapes: String,
    inputs: Vec<Tensor<f64>>,
    rng: &mut ChaCha8Rng,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let weight_seed = rng.gen();
    let eval = move |vals: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| {
                tape.leaf(
                    Tensor::new(t.shape().to_vec(), t.data().to_vec())
                        .expect("valid")
                        .with_requires_grad(true),
                )
            })
            .collect();
        let y = build(&mut tape, &vars)?;
        let mut wrng = ChaCha8Rng::seed_from_u64(weight_seed);
        let r = Tensor::from_fn(tape.shape(y), |_| wrng.gen_range(-1.0..1.0));
        let r = tape.constant(r);
        let prod = tape.mul(y, r)?;
        let loss = tape.sum(prod);
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|&v| {
                tape.grad(v)
                    .map_or_else(|| vec![0.0; tape.value(v).len()], <[f64]>::to_vec)
            })
            .collect();
        Ok((tape.value(loss).item(), grads))
    };
    Case {
        shapes,
        inputs,
        eval: Box::new(eval),
    }
}

fn sum_param_grads(tape: &Tape<f64>, lens: &[usize]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = lens.iter().map(|&n| vec![0.0; n]).collect();
    for (id, g) in tape.param_grads() {
        for (a, b) in out[id].iter_mut().zip(g) {
            *a += b;
        }
    }
    out
}

fn make_case(op: CheckOp, rng: &mut ChaCha8Rng) -> Result<Case> {
    let case = match op {
        CheckOp::Add | CheckOp::Sub | CheckOp::Mul => {
            let rank = rng.gen_range(1..=3);
            let s = dims(rng, rank, 1, 5);
            let (a, b) = (signed(rng, &s), signed(rng, &s));
            tape_case(describe(&[&s, &s]), vec![a, b], rng, move |t, v| match op {
                CheckOp::Add => t.add(v[0], v[1]),
                CheckOp::Sub => t.sub(v[0], v[1]),
                _ => t.mul(v[0], v[1]),
            })
        }
        CheckOp::Scale | CheckOp::AddScalar => {
            let s = dims(rng, 2, 1, 6);
            let c = rng.gen_range(-2.0..2.0);
            let a = signed(rng, &s);
            tape_case(format!("{s:?} c={c:.3}"), vec![a], rng, move |t, v| {
                Ok(if op == CheckOp::Scale {
                    t.scale(v[0], c)
                } else {
                    t.add_scalar(v[0], c)
                })
            })
        }
        CheckOp::MatMul => {
            let (m, k, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6));
            let (a, b) = (signed(rng, &[m, k]), signed(rng, &[k, n]));
            tape_case(describe(&[&[m, k], &[k, n]]), vec![a, b], rng, |t, v| {
                t.matmul(v[0], v[1])
            })
        }
        CheckOp::Sum => {
            let s = dims(rng, 3, 1, 4);
            let a = signed(rng, &s);
            tape_case(describe(&[&s]), vec![a], rng, |t, v| Ok(t.sum(v[0])))
        }
        CheckOp::Relu => {
            let s = dims(rng, 2, 2, 7);
            let a = signed(rng, &s);
            tape_case(describe(&[&s]), vec![a], rng, |t, v| Ok(t.relu(v[0])))
        }
        CheckOp::Reshape => {
            let s = dims(rng, 3, 1, 4);
            let n: usize = s.iter().product();
            let a = signed(rng, &s);
            tape_case(format!("{s:?} -> [{n}]"), vec![a], rng, move |t, v| {
                t.reshape(v[0], vec![n])
            })
        }
        CheckOp::PadReplicate => {
            let s = vec![rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=6)];
            let pad = rng.gen_range(1..=2);
            let a = signed(rng, &s);
            tape_case(format!("{s:?} pad={pad}"), vec![a], rng, move |t, v| {
                t.pad_replicate(v[0], pad)
            })
        }
        CheckOp::Conv2d => {
            let (c, o, k) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=1);
            let xs = vec![c, rng.gen_range(k..=8), rng.gen_range(k..=8)];
            let ws = vec![o, c, k, k];
            let inputs = vec![signed(rng, &xs), signed(rng, &ws), signed(rng, &[o])];
            tape_case(
                format!("{} stride={stride} pad={pad}", describe(&[&xs, &ws, &[o]])),
                inputs,
                rng,
                move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad),
            )
        }
        CheckOp::MaxPool => {
            let k = rng.gen_range(2..=3);
            let stride = rng.gen_range(1..=k);
            let s = vec![rng.gen_range(1..=3), rng.gen_range(k..=9), rng.gen_range(k..=9)];
            let a = distinct(rng, &s);
            tape_case(format!("{s:?} k={k} stride={stride}"), vec![a], rng, move |t, v| {
                t.maxpool2d(v[0], k, stride)
            })
        }
        CheckOp::Spp => {
            let s = vec![rng.gen_range(1..=3), rng.gen_range(4..=11), rng.gen_range(4..=11)];
            let a = distinct(rng, &s);
            tape_case(format!("{s:?} scales=[1,2,4]"), vec![a], rng, |t, v| {
                t.spp(v[0], &[1, 2, 4])
            })
        }
        CheckOp::Linear => {
            let (d, k) = (rng.gen_range(1..=10), rng.gen_range(1..=4));
            let inputs = vec![signed(rng, &[d]), signed(rng, &[k, d]), signed(rng, &[k])];
            tape_case(describe(&[&[d], &[k, d], &[k]]), inputs, rng, |t, v| {
                t.linear(v[0], v[1], Some(v[2]))
            })
        }
        CheckOp::SoftmaxCrossEntropy => {
            let k = rng.gen_range(2..=6);
            let label = rng.gen_range(0..k);
            let z = Tensor::from_fn(&[k], |_| rng.gen_range(-3.0..3.0));
            tape_case(format!("[{k}] label={label}"), vec![z], rng, move |t, v| {
                t.softmax_cross_entropy(v[0], label)
            })
        }
        CheckOp::Residual => {
            let (h, w) = (rng.gen_range(5..=9), rng.gen_range(5..=9));
            let image = signed(rng, &[3, h, w]);
            let bank = ResidualKernelBank::<f64>::init_srm();
            let weight = signed(rng, bank.weight.shape());
            let weight_seed: u64 = rng.gen();
            let eval = move |vals: &[Tensor<f64>]| {
                let mut bank = ResidualKernelBank::from_weight(vals[1].clone())?;
                bank.weight.value.set_param_id(Some(0));
                let mut tape = Tape::new();
                let x = tape.leaf(vals[0].clone().with_requires_grad(true));
                let y = bank.apply(&mut tape, x)?;
                let mut wrng = ChaCha8Rng::seed_from_u64(weight_seed);
                let r = tape.constant(Tensor::from_fn(tape.shape(y), |_| wrng.gen_range(-1.0..1.0)));
                let prod = tape.mul(y, r)?;
                let loss = tape.sum(prod);
                tape.backward(loss)?;
                let gx = tape.grad(x).expect("input grad").to_vec();
                let gw = sum_param_grads(&tape, &[vals[1].len()]).remove(0);
                Ok((tape.value(loss).item(), vec![gx, gw]))
            };
            Case {
                shapes: describe(&[&[3, h, w], &[3, 3, 5, 5]]),
                inputs: vec![image, weight],
                eval: Box::new(eval),
            }
        }
        CheckOp::Model => {
            let model = Model::<f64>::tinynet(&ModelConfig {
                residual: true,
                seed: rng.gen(),
                ..ModelConfig::default()
            });
            let side = model.min_input_side();
            let (h, w) = (rng.gen_range(side..=side + 6), rng.gen_range(side..=side + 6));
            let label = rng.gen_range(0..2);
            let mut inputs: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
            inputs.push(Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0)));
            let lens: Vec<usize> = inputs[..inputs.len() - 1].iter().map(Tensor::len).collect();
            let eval = move |vals: &[Tensor<f64>]| {
                let mut m = model.clone();
                for (p, v) in m.params_mut().into_iter().zip(vals) {
                    p.value.data_mut().copy_from_slice(v.data());
                }
                let mut tape = Tape::new();
                let x = tape.leaf(vals[vals.len() - 1].clone().with_requires_grad(true));
                let logits = m.forward(&mut tape, x)?;
                let loss = tape.softmax_cross_entropy(logits, label)?;
                tape.backward(loss)?;
                let mut grads = sum_param_grads(&tape, &lens);
                grads.push(tape.grad(x).expect("input grad").to_vec());
                Ok((tape.value(loss).item(), grads))
            };
            Case {
                shapes: format!("tinynet+residual input [3, {h}, {w}] label={label}"),
                inputs,
                eval: Box::new(eval),
            }
        }
    };
    Ok(case)
}

fn run_case(op: CheckOp, case: Case, rng: &mut ChaCha8Rng) -> Result<CheckRow> {
    let (_, analytic) = (case.eval)(&case.inputs)?;
    let mut vals = case.inputs.clone();
    let mut worst = 0f64;
    let mut checked = 0;
    for i in 0..vals.len() {
        let n = vals[i].len();
        let mut idx: Vec<usize> = (0..n).collect();
        if n > MAX_ENTRIES {
            idx.shuffle(rng);
            idx.truncate(MAX_ENTRIES);
        }
        for k in idx {
            let orig = vals[i].data()[k];
            vals[i].data_mut()[k] = orig + STEP;
            let (plus, _) = (case.eval)(&vals)?;
            vals[i].data_mut()[k] = orig - STEP;
            let (minus, _) = (case.eval)(&vals)?;
            vals[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[i][k], numeric));
            checked += 1;
        }
    }
    Ok(CheckRow {
        op,
        shapes: case.shapes,
        checked,
        max_rel_err: worst,
    })
}

/// One row per op, each on freshly sampled shapes. Deterministic in `seed`.
pub fn grad_check(ops: &[CheckOp], seed: u64) -> Result<Vec<CheckRow>> {
    if ops.is_empty() {
        return Err(Error::InvalidArgument("grad-check needs at least one op".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ops.iter()
        .map(|&op| {
            let case = make_case(op, &mut rng)?;
            run_case(op, case, &mut rng)
        })
        .collect()
}

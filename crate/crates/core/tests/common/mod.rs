//! Reference implementations shared by the integration tests. Each one is
//! written from the definition with plain loops and does not call the
//! library routine it checks.
#![allow(dead_code)]

use std::collections::HashMap;

use pbgdnet::data::ImageSample;
use pbgdnet::nn::Model;
use pbgdnet::residual::ResidualKernelBank;
use pbgdnet::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn bilinear(img: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (c, h, w) = img.chw().unwrap();
    let at = |ch: usize, y: usize, x: usize| img.data()[(ch * h + y) * w + x];
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let sy = ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let (y0, fy) = (sy.floor() as usize, sy - sy.floor());
            let y1 = (y0 + 1).min(h - 1);
            for ox in 0..ow {
                let sx = ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (x0, fx) = (sx.floor() as usize, sx - sx.floor());
                let x1 = (x0 + 1).min(w - 1);
                let top = at(ch, y0, x0) * (1.0 - fx) + at(ch, y0, x1) * fx;
                let bottom = at(ch, y1, x0) * (1.0 - fx) + at(ch, y1, x1) * fx;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).unwrap()
}

/// Direct convolution with zero padding.
pub fn conv2d(x: &Tensor<f64>, weight: &Tensor<f64>, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (c, h, w) = x.chw().unwrap();
    let (k, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; k * oh * ow];
    for o in 0..k {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b[o]);
                for ch in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * stride + dy) as isize - pad as isize;
                            let ix = (xx * stride + dx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += weight.at(&[o, ch, dy, dx]) * x.at(&[ch, iy as usize, ix as usize]);
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Tensor::new(vec![k, oh, ow], out).unwrap()
}

/// 5×5 residual filtering with edge-replicated borders, output size = input size.
pub fn residual(bank: &ResidualKernelBank<f64>, img: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = img.chw().unwrap();
    let mut out = vec![0.0; 3 * h * w];
    for k in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    let kernel = bank.slice(k, ch);
                    for dy in 0..5 {
                        for dx in 0..5 {
                            let iy = (y + dy).saturating_sub(2).min(h - 1);
                            let ix = (x + dx).saturating_sub(2).min(w - 1);
                            acc += kernel[dy * 5 + dx] * img.at(&[ch, iy, ix]);
                        }
                    }
                }
                out[(k * h + y) * w + x] = acc;
            }
        }
    }
    Tensor::new(vec![3, h, w], out).unwrap()
}

/// Spatial pyramid max pooling by explicit bin enumeration.
pub fn spp(x: &Tensor<f64>, scales: &[usize]) -> Vec<f64> {
    let (c, h, w) = x.chw().unwrap();
    let mut out = Vec::new();
    for &s in scales {
        for ch in 0..c {
            for i in 0..s {
                let r0 = (i as f64 * h as f64 / s as f64).floor() as usize;
                let r1 = ((i + 1) as f64 * h as f64 / s as f64).ceil() as usize;
                for j in 0..s {
                    let c0 = (j as f64 * w as f64 / s as f64).floor() as usize;
                    let c1 = ((j + 1) as f64 * w as f64 / s as f64).ceil() as usize;
                    let mut best = f64::NEG_INFINITY;
                    for y in r0..r1 {
                        for xx in c0..c1 {
                            best = best.max(x.at(&[ch, y, xx]));
                        }
                    }
                    out.push(best);
                }
            }
        }
    }
    out
}

/// Least prefix length whose pixel total reaches `n`, recomputing each
/// prefix sum from scratch; the full length when no prefix does.
pub fn adaptive_nu(dims: &[(usize, usize)], n: f64) -> usize {
    (1..=dims.len())
        .find(|&len| dims[..len].iter().map(|&(w, h)| (w * h) as f64).sum::<f64>() >= n)
        .unwrap_or(dims.len())
}

/// Bounding box `(top, left, height, width)` of pixels that differ from
/// `background` in any channel.
pub fn foreground_box(img: &Tensor<f64>, background: [f64; 3], tol: f64) -> Option<(usize, usize, usize, usize)> {
    let (_, h, w) = img.chw().unwrap();
    let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if (0..3).any(|c| (img.at(&[c, y, x]) - background[c]).abs() > tol) {
                y0 = y0.min(y);
                x0 = x0.min(x);
                y1 = y1.max(y + 1);
                x1 = x1.max(x + 1);
            }
        }
    }
    (y0 != usize::MAX).then(|| (y0, x0, y1 - y0, x1 - x0))
}

/// One step of textbook mini-batch descent: the mean loss over the whole
/// batch on a single tape, one backward pass, `θ -= η·∇`.
pub fn minibatch_step(model: &mut Model<f64>, batch: &[&ImageSample<f64>], eta: f64) {
    let mut tape = Tape::new();
    let losses: Vec<_> = batch
        .iter()
        .map(|s| model.loss(&mut tape, &s.pixels, s.label).unwrap())
        .collect();
    let mut total = losses[0];
    for &j in &losses[1..] {
        total = tape.add(total, j).unwrap();
    }
    let mean = tape.scale(total, 1.0 / batch.len() as f64);
    tape.backward(mean).unwrap();
    let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
    for (id, g) in tape.param_grads() {
        let sum = grads.entry(id).or_insert_with(|| vec![0.0; g.len()]);
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    for p in model.params_mut() {
        if p.frozen {
            continue;
        }
        let g = &grads[&p.id().expect("registered parameter")];
        for (v, d) in p.value.data_mut().iter_mut().zip(g) {
            *v -= eta * d;
        }
    }
}

/// Largest per-tensor `‖a−b‖∞ / ‖b‖∞` over all parameters; infinite when
/// either model holds a non-finite value.
pub fn max_relative_gap(a: &Model<f64>, b: &Model<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (pa, pb) in a.params().iter().zip(b.params()) {
        let (x, y) = (pa.value.data(), pb.value.data());
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let diff = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        worst = worst.max(diff / pb.value.max_abs().max(f64::MIN_POSITIVE));
    }
    worst
}

/// Largest absolute parameter difference.
pub fn max_abs_change(a: &Model<f64>, b: &Model<f64>) -> f64 {
    a.params()
        .iter()
        .zip(b.params())
        .flat_map(|(pa, pb)| pa.value.data().iter().zip(pb.value.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

/// `n` random `3×side×side` images with alternating labels.
pub fn random_samples(n: usize, side: usize, seed: u64) -> Vec<ImageSample<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pixels = Tensor::from_fn(&[3, side, side], |_| rng.gen::<f64>());
            ImageSample::new(pixels, i % 2, format!("r{i}"))
        })
        .collect()
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

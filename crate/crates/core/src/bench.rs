//! Wall-clock benchmarks: epoch time against update batch size, and
//! inference time against input resolution.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ImageSample;
use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig};
use crate::optim::{PbgdConfig, UpdateBatch};
use crate::tensor::Tensor;
use crate::train::{train_epoch, TrainOptions, TrainState};

pub const UPDATE_BATCH_SIZES: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
pub const RESOLUTIONS: [usize; 4] = [224, 512, 1024, 1920];

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    /// `n_u` or image side.
    pub setting: usize,
    /// Parameter updates per run (update-batch mode) or 1.
    pub updates: usize,
    /// Best wall time over the repeats.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateBatchBench {
    pub images: usize,
    pub side_range: (usize, usize),
    pub repeats: usize,
    pub seed: u64,
}

impl Default for UpdateBatchBench {
    fn default() -> Self {
        Self {
            images: 512,
            side_range: (16, 16),
            repeats: 5,
            seed: 0,
        }
    }
}

fn best_of(repeats: usize, mut f: impl FnMut() -> Result<Duration>) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        best = best.min(f()?.as_secs_f64());
    }
    Ok(best)
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[3, h, w], |_| rng.gen())
}

/// One training epoch over a fixed set of variable-size images, per `n_u`.
pub fn bench_update_batch(cfg: &UpdateBatchBench, sizes: &[usize]) -> Result<Vec<BenchRow>> {
    if sizes.contains(&0) || cfg.images == 0 || cfg.side_range.0 > cfg.side_range.1 {
        return Err(Error::InvalidArgument("invalid update-batch benchmark settings".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data: Vec<ImageSample<f64>> = (0..cfg.images)
        .map(|i| {
            let h = rng.gen_range(cfg.side_range.0..=cfg.side_range.1);
            let w = rng.gen_range(cfg.side_range.0..=cfg.side_range.1);
            ImageSample::new(random_image(&mut rng, h, w), i % 2, format!("bench_{i}"))
        })
        .collect();
    let model = Model::<f64>::tinynet(&ModelConfig {
        seed: cfg.seed,
        ..ModelConfig::default()
    });
    model.check_input(cfg.side_range.0, cfg.side_range.0)?;
    let mut rows: Vec<BenchRow> = sizes
        .iter()
        .map(|&n_u| BenchRow {
            setting: n_u,
            updates: 0,
            seconds: f64::INFINITY,
        })
        .collect();
    // Sizes are interleaved within each round so slow drift hits all of them.
    for _ in 0..cfg.repeats.max(1) {
        for row in &mut rows {
            let opts = TrainOptions {
                pbgd: PbgdConfig {
                    n_u: UpdateBatch::Fixed(row.setting),
                    ..PbgdConfig::default()
                },
                ..TrainOptions::default()
            };
            let mut state = TrainState::new(model.clone(), opts.pbgd.eta, cfg.seed);
            let start = Instant::now();
            row.updates = train_epoch(&mut state, &data, &opts)?.updates;
            row.seconds = row.seconds.min(start.elapsed().as_secs_f64());
        }
    }
    Ok(rows)
}

/// Forward-pass time of one square image per side length.
pub fn bench_resolution(sides: &[usize], repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let model = Model::<f64>::tinynet(&ModelConfig {
        seed,
        ..ModelConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sides
        .iter()
        .map(|&side| {
            model.check_input(side, side)?;
            let image = random_image(&mut rng, side, side);
            let seconds = best_of(repeats, || {
                let start = Instant::now();
                model.logits(&image)?;
                Ok(start.elapsed())
            })?;
            Ok(BenchRow {
                setting: side,
                updates: 1,
                seconds,
            })
        })
        .collect()
}

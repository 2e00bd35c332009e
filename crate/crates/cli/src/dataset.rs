//! Training and validation sets for a run: a manifest on disk or an
//! in-memory Square dataset, split and optionally resized.

use pbgdnet::config::RunConfig;
use pbgdnet::data::{resize_bilinear, split_samples, synth_square, DatasetManifest, ImageSample};
use pbgdnet::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunData {
    pub train: Vec<ImageSample<f64>>,
    pub val: Vec<ImageSample<f64>>,
}

fn check_labels(samples: &[ImageSample<f64>]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if s.label > 1 {
            return Err(Error::Sample {
                index: i,
                id: s.source_id.clone(),
                source: Box::new(Error::LabelOutOfRange {
                    label: s.label,
                    classes: 2,
                }),
            });
        }
    }
    Ok(())
}

pub fn resize_all(samples: &mut [ImageSample<f64>], (h, w): (usize, usize)) -> Result<()> {
    for s in samples {
        s.pixels = resize_bilinear(&s.pixels, h, w)?;
    }
    Ok(())
}

pub fn load(cfg: &RunConfig) -> Result<RunData> {
    let samples = match &cfg.manifest {
        Some(path) => DatasetManifest::read_csv(path)?.load::<f64>(None)?,
        None => synth_square::<f64>(&cfg.square_config())?
            .into_iter()
            .map(|(_, s)| s)
            .collect(),
    };
    check_labels(&samples)?;
    let [train, val, _] = split_samples(samples, &cfg.split, cfg.seed)?;
    let mut data = RunData { train, val };
    if let Some(hw) = cfg.resize {
        resize_all(&mut data.train, hw)?;
        resize_all(&mut data.val, hw)?;
    }
    Ok(data)
}

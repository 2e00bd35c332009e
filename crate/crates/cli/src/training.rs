//! The `train` command: metrics log, checkpoints and resume.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pbgdnet::checkpoint::Checkpoint;
use pbgdnet::config::RunConfig;
use pbgdnet::nn::Model;
use pbgdnet::train::{alternate_train, train, EpochMetrics, TrainState};
use pbgdnet::Error;
use serde_json::json;

use crate::dataset;
use crate::CliResult;

pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// One metrics record as a single-line JSON object.
pub fn metrics_line(m: &EpochMetrics) -> String {
    json!({
        "epoch": m.epoch,
        "phase": m.phase.map_or("plain", |p| p.as_str()),
        "train_loss": m.train_loss,
        "val_acc": m.val_acc,
        "eta": m.eta,
        "n_u": m.n_u,
    })
    .to_string()
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: TrainState<f64>,
    pub best_val_acc: Option<f64>,
    pub output_dir: PathBuf,
}

pub fn run_from_file(config: &Path, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<RunOutcome> {
    let cfg = RunConfig::from_file(config)?;
    run(&cfg, resume, out)
}

fn initial_state(cfg: &RunConfig, resume: Option<&Path>) -> pbgdnet::Result<TrainState<f64>> {
    let Some(path) = resume else {
        let model = Model::<f64>::tinynet(&cfg.model_config());
        return Ok(TrainState::new(model, cfg.pbgd.eta, cfg.seed));
    };
    let ckpt = Checkpoint::load(path)?;
    if ckpt.residual != cfg.residual_layer || ckpt.spp_scales != cfg.spp_scales {
        return Err(Error::Config(format!(
            "checkpoint {} was trained with residual_layer={} spp_scales={:?}, config asks for {} {:?}",
            path.display(),
            ckpt.residual,
            ckpt.spp_scales,
            cfg.residual_layer,
            cfg.spp_scales
        )));
    }
    ckpt.into_state()
}

fn best_of(history: &[EpochMetrics]) -> Option<f64> {
    history
        .iter()
        .map(|m| m.val_acc)
        .filter(|v| v.is_finite())
        .reduce(f64::max)
}

pub fn run(cfg: &RunConfig, resume: Option<&Path>, out: &mut dyn Write) -> CliResult<RunOutcome> {
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(RESOLVED_CONFIG), cfg.to_text())?;

    let mut state = initial_state(cfg, resume)?;
    let data = dataset::load(cfg)?;
    let opts = cfg.train_options();

    // The log is rebuilt from the checkpoint history so a resumed run ends
    // with the same file as an uninterrupted one.
    let mut log = BufWriter::new(File::create(dir.join(METRICS_LOG))?);
    for m in &state.history {
        writeln!(log, "{}", metrics_line(m))?;
    }
    log.flush()?;

    let mut best = best_of(&state.history);
    let mut on_epoch = |s: &TrainState<f64>, m: &EpochMetrics| -> pbgdnet::Result<()> {
        let line = metrics_line(m);
        writeln!(log, "{line}")?;
        log.flush()?;
        writeln!(out, "{line}")?;
        let ckpt = Checkpoint::from_state(s);
        ckpt.save(dir.join(LAST_CHECKPOINT))?;
        if m.val_acc.is_finite() && best.is_none_or(|b| m.val_acc > b) {
            best = Some(m.val_acc);
            ckpt.save(dir.join(BEST_CHECKPOINT))?;
        }
        Ok(())
    };
    if cfg.residual_layer {
        alternate_train(
            &mut state,
            &data.train,
            &data.val,
            &opts,
            &cfg.schedule(),
            &mut on_epoch,
        )?;
    } else {
        train(&mut state, &data.train, &data.val, &opts, cfg.epochs, &mut on_epoch)?;
    }
    Checkpoint::from_state(&state).save(dir.join(FINAL_CHECKPOINT))?;
    Ok(RunOutcome {
        state,
        best_val_acc: best,
        output_dir: dir,
    })
}

//! Epoch loops, validation and the three-phase alternate training schedule.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Tape;
use crate::data::{mean_pixels, ImageSample};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::optim::{compute_adaptive_nu, GradAccumulator, PbgdConfig, PlateauState, UpdateBatch};
use crate::scalar::Scalar;

/// Label of the positive (forged / square) class.
pub const POSITIVE: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted: usize, label: usize) {
        match (predicted == POSITIVE, label == POSITIVE) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `(TP+TN)/total`; `None` for an empty tally.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }
}

/// Argmax predictions over `samples`.
pub fn validate<T: Scalar>(model: &Model<T>, samples: &[ImageSample<T>]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for (i, s) in samples.iter().enumerate() {
        let pred = model.predict(&s.pixels).map_err(|e| e.at_sample(i, &s.source_id))?;
        counts.record(pred, s.label);
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Residual kernels frozen, everything else trained.
    ResidualFrozen,
    /// Only the residual kernels trained.
    BackboneFrozen,
    AllRelaxed,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::ResidualFrozen => "residual_frozen",
            Phase::BackboneFrozen => "backbone_frozen",
            Phase::AllRelaxed => "all_relaxed",
        }
    }

    pub fn apply<T: Scalar>(self, model: &mut Model<T>) {
        model.set_residual_frozen(self == Phase::ResidualFrozen);
        model.set_backbone_frozen(self == Phase::BackboneFrozen);
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Phase::ResidualFrozen, Phase::BackboneFrozen, Phase::AllRelaxed]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown phase `{s}`")))
    }
}

/// `(ResidualFrozen → BackboneFrozen) × alternations → AllRelaxed`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseSchedule {
    pub alternations: usize,
    pub epochs_per_phase: usize,
    /// Stop alternating early once an alternation changes validation
    /// accuracy by less than this.
    pub convergence_delta: Option<f64>,
}

impl Default for PhaseSchedule {
    fn default() -> Self {
        Self {
            alternations: 3,
            epochs_per_phase: 2,
            convergence_delta: None,
        }
    }
}

impl PhaseSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_per_phase == 0 {
            return Err(Error::Config("schedule has zero epochs per phase".into()));
        }
        Ok(())
    }

    /// The full phase sequence when no early stop happens.
    pub fn phases(&self) -> Vec<Phase> {
        let mut out: Vec<Phase> = (0..self.alternations)
            .flat_map(|_| [Phase::ResidualFrozen, Phase::BackboneFrozen])
            .collect();
        out.push(Phase::AllRelaxed);
        out
    }
}

/// Where a run is inside its schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulePosition {
    pub alternation: usize,
    pub phase: Phase,
    pub epoch_in_phase: usize,
    pub done: bool,
}

impl SchedulePosition {
    pub fn start(schedule: &PhaseSchedule) -> Self {
        Self {
            alternation: 0,
            phase: if schedule.alternations == 0 {
                Phase::AllRelaxed
            } else {
                Phase::ResidualFrozen
            },
            epoch_in_phase: 0,
            done: false,
        }
    }
}

/// Validation accuracy at the end of one phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseRecord {
    pub alternation: usize,
    pub phase: Phase,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub phase: Option<Phase>,
    pub train_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub eta: f64,
    /// Mean update batch size over the epoch.
    pub n_u: f64,
    pub updates: usize,
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub pbgd: PbgdConfig,
    /// Average training pixel count for adaptive `n_u`; computed from the
    /// training samples when absent.
    pub avg_pixels: Option<f64>,
    pub skip_undersized: bool,
    pub shuffle: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            pbgd: PbgdConfig::default(),
            avg_pixels: None,
            skip_undersized: false,
            shuffle: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub model: Model<T>,
    /// Completed epochs.
    pub epoch: usize,
    pub plateau: PlateauState,
    pub rng: ChaCha8Rng,
    pub seed: u64,
    pub history: Vec<EpochMetrics>,
    pub position: Option<SchedulePosition>,
    pub phase_records: Vec<PhaseRecord>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: Model<T>, eta: f64, seed: u64) -> Self {
        Self {
            model,
            epoch: 0,
            plateau: PlateauState::new(eta),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            history: Vec::new(),
            position: None,
            phase_records: Vec::new(),
        }
    }
}

/// Update batch lengths covering `dims` (in visiting order).
pub fn plan_update_batches(dims: &[(usize, usize)], n_u: UpdateBatch, avg_pixels: Option<f64>) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < dims.len() {
        let len = match n_u {
            UpdateBatch::Fixed(n) if n > 0 => n.min(dims.len() - pos),
            UpdateBatch::Fixed(_) => return Err(Error::Config("n_u must be positive".into())),
            UpdateBatch::Adaptive => {
                let n = avg_pixels.ok_or_else(|| Error::Config("adaptive n_u needs the average pixel count".into()))?;
                compute_adaptive_nu(&dims[pos..], n)?
            }
        };
        out.push(len);
        pos += len;
    }
    Ok(out)
}

/// One PBGD update over `batch`: input batches of `n_i` examples each
/// contribute `∇(α·ΣJ)` to the accumulator, then the parameters step once.
/// Returns the unscaled loss sum.
pub fn pbgd_update<T: Scalar>(
    model: &mut Model<T>,
    batch: &[&ImageSample<T>],
    cfg: &PbgdConfig,
    acc: &mut GradAccumulator<T>,
    eta: f64,
) -> Result<f64> {
    let alpha = T::from_f64_lossy(cfg.alpha.for_batch(batch.len()));
    let mut loss_sum = 0.0;
    let n_i = cfg.n_i.max(1);
    for (c, chunk) in batch.chunks(n_i).enumerate() {
        let mut tape = Tape::new();
        let mut total = None;
        for (i, s) in chunk.iter().enumerate() {
            let j = model
                .loss(&mut tape, &s.pixels, s.label)
                .map_err(|e| e.at_sample(c * n_i + i, &s.source_id))?;
            let value = tape.value(j).item().to_f64_lossy();
            if !value.is_finite() {
                return Err(Error::Numeric(format!("loss {value} on {}", s.source_id)));
            }
            loss_sum += value;
            total = Some(match total {
                None => j,
                Some(t) => tape.add(t, j)?,
            });
        }
        let Some(total) = total else { continue };
        let scaled = tape.scale(total, alpha);
        tape.backward(scaled)?;
        acc.accumulate(tape.param_grads(), chunk.len())?;
    }
    let mut params = model.params_mut();
    acc.step(&mut params, T::from_f64_lossy(eta))?;
    Ok(loss_sum)
}

/// One shuffled pass with PBGD updates. Validation accuracy is left at NaN.
pub fn train_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[ImageSample<T>],
    opts: &TrainOptions,
) -> Result<EpochMetrics> {
    let min = state.model.min_input_side();
    let mut usable = Vec::with_capacity(train.len());
    for (i, s) in train.iter().enumerate() {
        match state.model.check_input(s.height(), s.width()) {
            Ok(()) => usable.push(i),
            Err(_) if opts.skip_undersized => {}
            Err(e) => return Err(e.at_sample(i, &s.source_id)),
        }
    }
    if usable.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training images of at least {min}x{min}"
        )));
    }
    let skipped = train.len() - usable.len();
    if opts.shuffle {
        usable.shuffle(&mut state.rng);
    }
    let avg_pixels = match (opts.pbgd.n_u, opts.avg_pixels) {
        (UpdateBatch::Adaptive, None) => mean_pixels(train.iter().map(|s| s.dims())),
        (_, n) => n,
    };
    let dims: Vec<_> = usable.iter().map(|&i| train[i].dims()).collect();
    let plan = plan_update_batches(&dims, opts.pbgd.n_u, avg_pixels)?;

    let eta = state.plateau.eta;
    let mut acc = GradAccumulator::for_params(state.model.params());
    let mut loss_sum = 0.0;
    let mut pos = 0;
    for &len in &plan {
        let batch: Vec<&ImageSample<T>> = usable[pos..pos + len].iter().map(|&i| &train[i]).collect();
        loss_sum += pbgd_update(&mut state.model, &batch, &opts.pbgd, &mut acc, eta).map_err(|e| match e {
            Error::Sample { index, source, .. } => {
                let k = usable[pos + index];
                (*source).at_sample(k, &train[k].source_id)
            }
            other => other,
        })?;
        pos += len;
    }
    state.epoch += 1;
    Ok(EpochMetrics {
        epoch: state.epoch,
        phase: state.position.map(|p| p.phase),
        train_loss: loss_sum / usable.len() as f64,
        val_acc: f64::NAN,
        eta,
        n_u: usable.len() as f64 / plan.len() as f64,
        updates: plan.len(),
        skipped,
    })
}

/// Train, validate, update the plateau schedule and record the epoch.
fn run_epoch<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[ImageSample<T>],
    val: &[ImageSample<T>],
    opts: &TrainOptions,
) -> Result<EpochMetrics> {
    let mut m = train_epoch(state, train, opts)?;
    m.val_acc = validate(&state.model, val)?.accuracy().unwrap_or(f64::NAN);
    if m.val_acc.is_finite() {
        state
            .plateau
            .update(m.val_acc, opts.pbgd.lr_patience, opts.pbgd.lr_factor);
    }
    state.history.push(m.clone());
    Ok(m)
}

/// Plain training with the model's current freeze flags until `epochs`
/// epochs are done.
/// `on_epoch` sees the state after every epoch.
pub fn train<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[ImageSample<T>],
    val: &[ImageSample<T>],
    opts: &TrainOptions,
    epochs: usize,
    mut on_epoch: impl FnMut(&TrainState<T>, &EpochMetrics) -> Result<()>,
) -> Result<()> {
    state.position = None;
    while state.epoch < epochs {
        let m = run_epoch(state, train, val, opts)?;
        on_epoch(state, &m)?;
    }
    Ok(())
}

/// Three-phase alternate training. Resumes from `state.position` when set.
pub fn alternate_train<T: Scalar>(
    state: &mut TrainState<T>,
    train: &[ImageSample<T>],
    val: &[ImageSample<T>],
    opts: &TrainOptions,
    schedule: &PhaseSchedule,
    mut on_epoch: impl FnMut(&TrainState<T>, &EpochMetrics) -> Result<()>,
) -> Result<()> {
    schedule.validate()?;
    if state.model.residual.is_none() {
        return Err(Error::Config("alternate training needs a residual layer".into()));
    }
    let mut pos = *state.position.get_or_insert(SchedulePosition::start(schedule));
    while !pos.done {
        pos.phase.apply(&mut state.model);
        let m = run_epoch(state, train, val, opts)?;
        pos.epoch_in_phase += 1;
        if pos.epoch_in_phase == schedule.epochs_per_phase {
            state.phase_records.push(PhaseRecord {
                alternation: pos.alternation,
                phase: pos.phase,
                val_acc: m.val_acc,
            });
            pos = next_position(pos, schedule, &state.phase_records);
        }
        state.position = Some(pos);
        on_epoch(state, &m)?;
    }
    Phase::AllRelaxed.apply(&mut state.model);
    Ok(())
}

fn next_position(pos: SchedulePosition, schedule: &PhaseSchedule, records: &[PhaseRecord]) -> SchedulePosition {
    let at = |alternation, phase| SchedulePosition {
        alternation,
        phase,
        epoch_in_phase: 0,
        done: false,
    };
    match pos.phase {
        Phase::ResidualFrozen => at(pos.alternation, Phase::BackboneFrozen),
        Phase::BackboneFrozen => {
            let converged = schedule.convergence_delta.is_some_and(|delta| {
                let ends: Vec<f64> = records
                    .iter()
                    .filter(|r| r.phase == Phase::BackboneFrozen)
                    .map(|r| r.val_acc)
                    .collect();
                ends.len() >= 2 && (ends[ends.len() - 1] - ends[ends.len() - 2]).abs() < delta
            });
            if pos.alternation + 1 < schedule.alternations && !converged {
                at(pos.alternation + 1, Phase::ResidualFrozen)
            } else {
                at(pos.alternation + 1, Phase::AllRelaxed)
            }
        }
        Phase::AllRelaxed => SchedulePosition { done: true, ..pos },
    }
}

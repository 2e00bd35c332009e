//! Binary training checkpoints.
//!
//! Layout (little-endian): magic `PBGD`, `u32` version, then the model
//! description, the named parameter table with `f64` payloads, and the
//! optimizer, RNG and schedule state.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Model, ModelConfig, SppSpec};
use crate::optim::PlateauState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{EpochMetrics, Phase, PhaseRecord, SchedulePosition, TrainState};

pub const MAGIC: &[u8; 4] = b"PBGD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub residual: bool,
    pub spp_scales: Vec<usize>,
    pub params: Vec<ParamRecord>,
    pub seed: u64,
    pub epoch: usize,
    pub rng: RngState,
    pub plateau: PlateauState,
    pub position: Option<SchedulePosition>,
    pub phase_records: Vec<PhaseRecord>,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn from_state<T: Scalar>(state: &TrainState<T>) -> Self {
        let model = &state.model;
        Self {
            residual: model.residual.is_some(),
            spp_scales: model.spp.scales.clone(),
            params: model
                .params()
                .iter()
                .map(|p| ParamRecord {
                    name: p.name.clone(),
                    shape: p.shape().to_vec(),
                    frozen: p.frozen,
                    data: p.value.data().iter().map(|v| v.to_f64_lossy()).collect(),
                })
                .collect(),
            seed: state.seed,
            epoch: state.epoch,
            rng: RngState::capture(&state.rng),
            plateau: state.plateau.clone(),
            position: state.position,
            phase_records: state.phase_records.clone(),
            history: state.history.clone(),
        }
    }

    /// Rebuilds the model, checking every parameter's name and shape.
    pub fn model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::<T>::tinynet(&ModelConfig {
            residual: self.residual,
            spp: SppSpec::new(self.spp_scales.clone())?,
            seed: 0,
        });
        let mut params = model.params_mut();
        if params.len() != self.params.len() {
            return Err(Error::ParamMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                params.len()
            )));
        }
        for (p, rec) in params.iter_mut().zip(&self.params) {
            if p.name != rec.name || p.shape() != rec.shape.as_slice() {
                return Err(Error::ParamMismatch(format!(
                    "checkpoint parameter {} {:?} vs model {} {:?}",
                    rec.name,
                    rec.shape,
                    p.name,
                    p.shape()
                )));
            }
            let id = p.value.param_id();
            p.value = Tensor::new(
                rec.shape.clone(),
                rec.data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
            )?;
            p.value.set_param_id(id);
            p.frozen = rec.frozen;
        }
        Ok(model)
    }

    pub fn into_state<T: Scalar>(self) -> Result<TrainState<T>> {
        Ok(TrainState {
            model: self.model()?,
            epoch: self.epoch,
            plateau: self.plateau,
            rng: self.rng.restore(),
            seed: self.seed,
            history: self.history,
            position: self.position,
            phase_records: self.phase_records,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bool(self.residual);
        w.usizes(&self.spp_scales);
        w.usize(self.params.len());
        for p in &self.params {
            w.str(&p.name);
            w.usizes(&p.shape);
            w.bool(p.frozen);
            w.usize(p.data.len());
            for &v in &p.data {
                w.f64(v);
            }
        }
        w.u64(self.seed);
        w.usize(self.epoch);
        w.0.extend_from_slice(&self.rng.seed);
        w.u64(self.rng.stream);
        w.0.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        w.opt_f64(self.plateau.best);
        w.usize(self.plateau.since_improve);
        w.f64(self.plateau.eta);
        w.usize(self.plateau.reductions);
        match &self.position {
            None => w.bool(false),
            Some(p) => {
                w.bool(true);
                w.usize(p.alternation);
                w.phase(Some(p.phase));
                w.usize(p.epoch_in_phase);
                w.bool(p.done);
            }
        }
        w.usize(self.phase_records.len());
        for r in &self.phase_records {
            w.usize(r.alternation);
            w.phase(Some(r.phase));
            w.f64(r.val_acc);
        }
        w.usize(self.history.len());
        for m in &self.history {
            w.usize(m.epoch);
            w.phase(m.phase);
            w.f64(m.train_loss);
            w.f64(m.val_acc);
            w.f64(m.eta);
            w.f64(m.n_u);
            w.usize(m.updates);
            w.usize(m.skipped);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.bad("missing PBGD magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(&format!("unsupported version {version} (expected {VERSION})")));
        }
        let residual = r.bool()?;
        let spp_scales = r.usizes()?;
        let n = r.usize()?;
        let mut params = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = r.str()?;
            let shape = r.usizes()?;
            let frozen = r.bool()?;
            let len = r.usize()?;
            if len != shape.iter().product::<usize>() {
                return Err(r.bad(&format!("parameter {name}: payload length {len} vs shape {shape:?}")));
            }
            let data = (0..len).map(|_| r.f64()).collect::<Result<_>>()?;
            params.push(ParamRecord {
                name,
                shape,
                frozen,
                data,
            });
        }
        let seed = r.u64()?;
        let epoch = r.usize()?;
        let rng = RngState {
            seed: r.take(32)?.try_into().expect("32 bytes"),
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes")),
        };
        let plateau = PlateauState {
            best: r.opt_f64()?,
            since_improve: r.usize()?,
            eta: r.f64()?,
            reductions: r.usize()?,
        };
        let position = if r.bool()? {
            Some(SchedulePosition {
                alternation: r.usize()?,
                phase: r.phase()?.ok_or_else(|| r.bad("schedule position without phase"))?,
                epoch_in_phase: r.usize()?,
                done: r.bool()?,
            })
        } else {
            None
        };
        let n = r.usize()?;
        let mut phase_records = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            phase_records.push(PhaseRecord {
                alternation: r.usize()?,
                phase: r.phase()?.ok_or_else(|| r.bad("phase record without phase"))?,
                val_acc: r.f64()?,
            });
        }
        let n = r.usize()?;
        let mut history = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            history.push(EpochMetrics {
                epoch: r.usize()?,
                phase: r.phase()?,
                train_loss: r.f64()?,
                val_acc: r.f64()?,
                eta: r.f64()?,
                n_u: r.f64()?,
                updates: r.usize()?,
                skipped: r.usize()?,
            });
        }
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes"));
        }
        Ok(Self {
            residual,
            spp_scales,
            params,
            seed,
            epoch,
            rng,
            plateau,
            position,
            phase_records,
            history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path)?, path)
    }
}

const NO_PHASE: u8 = 0xff;

fn phase_code(p: Option<Phase>) -> u8 {
    match p {
        Some(Phase::ResidualFrozen) => 0,
        Some(Phase::BackboneFrozen) => 1,
        Some(Phase::AllRelaxed) => 2,
        None => NO_PHASE,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.0.push(u8::from(v));
    }
    fn opt_f64(&mut self, v: Option<f64>) {
        self.bool(v.is_some());
        self.f64(v.unwrap_or(0.0));
    }
    fn phase(&mut self, p: Option<Phase>) {
        self.0.push(phase_code(p));
    }
    fn str(&mut self, s: &str) {
        self.usize(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }
    fn usizes(&mut self, v: &[usize]) {
        self.usize(v.len());
        for &x in v {
            self.usize(x);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::format("checkpoint", self.path, format!("{reason} (at byte {})", self.pos))
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.bad("truncated"));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.bad("length overflows usize"))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self) -> Result<bool> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(self.bad(&format!("invalid flag byte {b}"))),
        }
    }
    fn opt_f64(&mut self) -> Result<Option<f64>> {
        let some = self.bool()?;
        let v = self.f64()?;
        Ok(some.then_some(v))
    }
    fn phase(&mut self) -> Result<Option<Phase>> {
        match self.take(1)?[0] {
            0 => Ok(Some(Phase::ResidualFrozen)),
            1 => Ok(Some(Phase::BackboneFrozen)),
            2 => Ok(Some(Phase::AllRelaxed)),
            NO_PHASE => Ok(None),
            b => Err(self.bad(&format!("invalid phase code {b}"))),
        }
    }
    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| self.bad("parameter name is not UTF-8"))
    }
    fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.usize()?;
        if n > self.bytes.len() {
            return Err(self.bad("implausible list length"));
        }
        (0..n).map(|_| self.usize()).collect()
    }
}

//! Pseudo-batch gradient descent.
//!
//! Gradients of `α·ΣJ` over small input batches (`n_i` examples) are summed
//! until an update batch of `n_u` examples has been seen, then the parameters
//! move once: `θ ← θ − η·Σ∇J`. Plain descent only; no momentum.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Param;
use crate::scalar::Scalar;

/// Loss scaling coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    /// `1 / (size of the current update batch)`.
    Mean,
    Fixed(f64),
}

impl Alpha {
    pub fn for_batch(self, batch_len: usize) -> f64 {
        match self {
            Alpha::Mean => 1.0 / batch_len as f64,
            Alpha::Fixed(a) => a,
        }
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Mean => f.write_str("mean"),
            Alpha::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for Alpha {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" => Ok(Alpha::Mean),
            v => v
                .parse()
                .map(Alpha::Fixed)
                .map_err(|_| Error::Config(format!("alpha must be `mean` or a number, got `{v}`"))),
        }
    }
}

/// Update batch size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateBatch {
    Fixed(usize),
    /// Least number of upcoming images whose pixel total reaches the
    /// training set's average pixel count.
    Adaptive,
}

impl fmt::Display for UpdateBatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateBatch::Fixed(n) => write!(f, "{n}"),
            UpdateBatch::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl FromStr for UpdateBatch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adaptive" => Ok(UpdateBatch::Adaptive),
            v => v
                .parse()
                .map(UpdateBatch::Fixed)
                .map_err(|_| Error::Config(format!("n_u must be a positive integer or `adaptive`, got `{v}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PbgdConfig {
    pub eta: f64,
    pub alpha: Alpha,
    pub n_i: usize,
    pub n_u: UpdateBatch,
    pub lr_patience: usize,
    pub lr_factor: f64,
}

impl Default for PbgdConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            alpha: Alpha::Mean,
            n_i: 1,
            n_u: UpdateBatch::Fixed(8),
            lr_patience: 5,
            lr_factor: 0.1,
        }
    }
}

impl PbgdConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if let Alpha::Fixed(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("alpha must be positive, got {a}"));
            }
        }
        if self.n_i == 0 {
            return bad("n_i must be at least 1".into());
        }
        if let UpdateBatch::Fixed(n_u) = self.n_u {
            if n_u < self.n_i {
                return bad(format!("n_u ({n_u}) must be at least n_i ({})", self.n_i));
            }
        }
        if self.lr_patience == 0 || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return bad(format!(
                "lr_patience must be positive and lr_factor in (0,1], got {} and {}",
                self.lr_patience, self.lr_factor
            ));
        }
        Ok(())
    }
}

/// Running per-parameter gradient sums, indexed by parameter id.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAccumulator<T> {
    sums: Vec<Vec<T>>,
    count: usize,
}

impl<T: Scalar> GradAccumulator<T> {
    pub fn new(lens: impl IntoIterator<Item = usize>) -> Self {
        Self {
            sums: lens.into_iter().map(|n| vec![T::zero(); n]).collect(),
            count: 0,
        }
    }

    /// Sized for `params`, whose ids must be `0..params.len()` in order.
    pub fn for_params<'a>(params: impl IntoIterator<Item = &'a Param<T>>) -> Self {
        Self::new(params.into_iter().map(|p| p.value.len()))
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn sums(&self) -> &[Vec<T>] {
        &self.sums
    }

    /// Adds the gradients of one input batch of `examples` examples.
    /// A parameter id may appear more than once.
    pub fn accumulate<'g>(&mut self, grads: impl IntoIterator<Item = (usize, &'g [T])>, examples: usize) -> Result<()>
    where
        T: 'g,
    {
        for (id, g) in grads {
            let sum = self
                .sums
                .get_mut(id)
                .ok_or_else(|| Error::ParamMismatch(format!("unknown parameter id {id}")))?;
            if sum.len() != g.len() {
                return Err(Error::ParamMismatch(format!(
                    "parameter {id}: gradient length {} vs {}",
                    g.len(),
                    sum.len()
                )));
            }
            for (s, &v) in sum.iter_mut().zip(g) {
                *s += v;
            }
        }
        self.count += examples;
        Ok(())
    }

    /// `θ ← θ − η·sum` for every unfrozen parameter, then clears.
    pub fn step(&mut self, params: &mut [&mut Param<T>], eta: T) -> Result<()> {
        if self.count == 0 {
            return Err(Error::EmptyAccumulator);
        }
        if params.len() != self.sums.len() {
            return Err(Error::ParamMismatch(format!(
                "{} parameters vs {} accumulated",
                params.len(),
                self.sums.len()
            )));
        }
        for (p, sum) in params.iter_mut().zip(&self.sums) {
            if p.value.len() != sum.len() {
                return Err(Error::ParamMismatch(format!(
                    "{}: size changed since accumulation",
                    p.name
                )));
            }
            if p.frozen {
                continue;
            }
            for (w, &g) in p.value.data_mut().iter_mut().zip(sum) {
                *w -= eta * g;
            }
        }
        self.clear();
        Ok(())
    }

    pub fn clear(&mut self) {
        for s in &mut self.sums {
            s.fill(T::zero());
        }
        self.count = 0;
    }
}

/// Least `n` with `Σ_{i<n} w_i·h_i ≥ avg_pixels`, or `dims.len()` when the
/// whole list falls short.
pub fn compute_adaptive_nu(dims: &[(usize, usize)], avg_pixels: f64) -> Result<usize> {
    if !(avg_pixels > 0.0 && avg_pixels.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "average pixel count must be positive, got {avg_pixels}"
        )));
    }
    if dims.is_empty() {
        return Err(Error::InvalidArgument("no images left for the update batch".into()));
    }
    let mut total = 0f64;
    for (i, &(w, h)) in dims.iter().enumerate() {
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "image {i} has nonpositive size {w}x{h}"
            )));
        }
        total += (w * h) as f64;
        if total >= avg_pixels {
            return Ok(i + 1);
        }
    }
    Ok(dims.len())
}

/// Divides the learning rate when validation accuracy stops improving.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauState {
    pub best: Option<f64>,
    pub since_improve: usize,
    pub eta: f64,
    pub reductions: usize,
}

impl PlateauState {
    pub fn new(eta: f64) -> Self {
        Self {
            best: None,
            since_improve: 0,
            eta,
            reductions: 0,
        }
    }

    /// Records one epoch's validation accuracy and returns the new rate.
    pub fn update(&mut self, val_acc: f64, patience: usize, factor: f64) -> f64 {
        if self.best.is_none_or(|b| val_acc > b) {
            self.best = Some(val_acc);
            self.since_improve = 0;
        } else {
            self.since_improve += 1;
            if self.since_improve >= patience {
                self.eta *= factor;
                self.reductions += 1;
                self.since_improve = 0;
            }
        }
        self.eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_param(v: f64) -> Param<f64> {
        Param::new("w", Tensor::scalar(v))
    }

    #[test]
    fn sums_and_counts() {
        let mut acc = GradAccumulator::<f64>::new([1]);
        acc.accumulate([(0, &[0.5][..])], 1).unwrap();
        acc.accumulate([(0, &[0.3][..])], 1).unwrap();
        assert!((acc.sums()[0][0] - 0.8).abs() < 1e-15);
        assert_eq!(acc.count(), 2);
        let before = acc.sums().to_vec();
        acc.accumulate([(0, &[0.0][..])], 0).unwrap();
        assert_eq!(acc.sums(), &before[..]);
    }

    #[test]
    fn step_arithmetic() {
        let mut p = scalar_param(1.0);
        let mut acc = GradAccumulator::<f64>::new([1]);
        acc.accumulate([(0, &[0.8][..])], 2).unwrap();
        acc.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value.item() - 0.92).abs() < 1e-15);
        assert!(acc.is_empty() && acc.sums()[0][0] == 0.0);

        acc.accumulate([(0, &[0.8][..])], 1).unwrap();
        acc.step(&mut [&mut p], 0.0).unwrap();
        assert!((p.value.item() - 0.92).abs() < 1e-15);
    }

    #[test]
    fn step_errors() {
        let mut p = scalar_param(1.0);
        let mut acc = GradAccumulator::<f64>::new([1]);
        assert!(matches!(acc.step(&mut [&mut p], 0.1), Err(Error::EmptyAccumulator)));
        assert!(matches!(
            acc.accumulate([(3, &[1.0][..])], 1),
            Err(Error::ParamMismatch(_))
        ));
        assert!(matches!(
            acc.accumulate([(0, &[1.0, 2.0][..])], 1),
            Err(Error::ParamMismatch(_))
        ));
    }

    #[test]
    fn frozen_params_untouched() {
        let mut p = scalar_param(1.0);
        p.frozen = true;
        let mut acc = GradAccumulator::<f64>::new([1]);
        acc.accumulate([(0, &[5.0][..])], 1).unwrap();
        acc.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value.item(), 1.0);
    }

    #[test]
    fn permutation_invariant_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grads: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let total = |order: &[usize]| {
            let mut acc = GradAccumulator::<f64>::new([7]);
            for &i in order {
                acc.accumulate([(0, grads[i].as_slice())], 1).unwrap();
            }
            acc.sums()[0].clone()
        };
        let mut order: Vec<usize> = (0..16).collect();
        let base = total(&order);
        for _ in 0..10 {
            order.shuffle(&mut rng);
            for (a, b) in total(&order).iter().zip(&base) {
                assert!((a - b).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn adaptive_examples() {
        assert_eq!(compute_adaptive_nu(&[(6, 6), (8, 8), (10, 10)], 100.0).unwrap(), 2);
        assert_eq!(compute_adaptive_nu(&[(10, 10), (3, 3)], 50.0).unwrap(), 1);
        assert_eq!(compute_adaptive_nu(&[(2, 2), (3, 3)], 1000.0).unwrap(), 2);
        assert!(compute_adaptive_nu(&[(0, 4)], 10.0).is_err());
        assert!(compute_adaptive_nu(&[(4, 4)], 0.0).is_err());
        assert!(compute_adaptive_nu(&[], 10.0).is_err());
    }

    #[test]
    fn plateau_from_known_best() {
        let mut s = PlateauState::new(1.0);
        s.update(0.5, 5, 0.1);
        let etas: Vec<f64> = (0..5).map(|_| s.update(0.5, 5, 0.1)).collect();
        assert_eq!(&etas[..4], &[1.0; 4]);
        assert!((etas[4] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn plateau_improving_and_repeated() {
        let mut s = PlateauState::new(1e-4);
        for i in 0..20 {
            assert_eq!(s.update(i as f64 / 20.0, 5, 0.1), 1e-4);
        }
        let mut s = PlateauState::new(1.0);
        for _ in 0..11 {
            s.update(0.3, 5, 0.1);
        }
        assert!((s.eta - 0.01).abs() < 1e-15);
        assert_eq!(s.reductions, 2);
    }

    #[test]
    fn config_parsing_and_validation() {
        assert_eq!("adaptive".parse::<UpdateBatch>().unwrap(), UpdateBatch::Adaptive);
        assert_eq!("8".parse::<UpdateBatch>().unwrap(), UpdateBatch::Fixed(8));
        assert_eq!("mean".parse::<Alpha>().unwrap(), Alpha::Mean);
        assert_eq!("0.25".parse::<Alpha>().unwrap(), Alpha::Fixed(0.25));
        assert!("x".parse::<UpdateBatch>().is_err());
        assert!(PbgdConfig::default().validate().is_ok());
        let bad = PbgdConfig {
            n_i: 4,
            n_u: UpdateBatch::Fixed(2),
            ..PbgdConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PbgdConfig {
            eta: 0.0,
            ..PbgdConfig::default()
        }
        .validate()
        .is_err());
    }
}

//! Cosine-annealed learning rate, SGD with momentum, Adam and stochastic
//! weight averaging over named parameter maps.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use thiserror::Error;

use crate::diffcore::{Real, Tensor};

/// Named parameter tensors, iterated in name order.
pub type ParamMap<F> = BTreeMap<String, Tensor<F>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("epoch {t} outside schedule range 0..={total}")]
    EpochOutOfRange { t: usize, total: usize },
    #[error("invalid schedule: {0}")]
    BadSchedule(String),
    #[error("no gradient supplied for parameter `{0}`")]
    MissingGradient(String),
    #[error("parameter `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("parameter set changed: `{0}` not present in earlier snapshots")]
    UnknownParameter(String),
    #[error("no snapshots have been averaged")]
    EmptyAverage,
}

/// Learning-rate schedule bounds over `total_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub l_init: f64,
    pub l_min: f64,
    pub total_epochs: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            l_init: 1e-4,
            l_min: 1e-7,
            total_epochs: 40,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.l_min > 0.0 && self.l_init >= self.l_min && self.l_init.is_finite()) {
            return Err(OptimError::BadSchedule(format!(
                "need l_init ≥ l_min > 0, got l_init={} l_min={}",
                self.l_init, self.l_min
            )));
        }
        if self.total_epochs == 0 {
            return Err(OptimError::BadSchedule("total epochs must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// `l_min + ½(l_init − l_min)(1 + cos(π·t/T))`, no restarts.
///
/// Evaluated as `c·l_init + (1 − c)·l_min` with `c = ½(1 + cos(π·t/T))`,
/// which returns both endpoints exactly.
pub fn cosine_lr(t: usize, config: &ScheduleConfig) -> Result<f64, OptimError> {
    config.validate()?;
    if t > config.total_epochs {
        return Err(OptimError::EpochOutOfRange {
            t,
            total: config.total_epochs,
        });
    }
    let c = 0.5 * (1.0 + (PI * t as f64 / config.total_epochs as f64).cos());
    Ok(c * config.l_init + (1.0 - c) * config.l_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" | "sgd_momentum" => Ok(Self::SgdMomentum),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SgdMomentum => "sgd",
            Self::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            momentum: 0.9,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moment buffers plus hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState<F: Real> {
    pub config: OptimizerConfig,
    first: BTreeMap<String, Vec<F>>,
    second: BTreeMap<String, Vec<F>>,
    steps: u64,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Velocity (SGD) or first moment (Adam) buffer of a parameter.
    pub fn moment(&self, name: &str) -> Option<&[F]> {
        self.first.get(name).map(Vec::as_slice)
    }

    pub fn step(&mut self, params: &mut ParamMap<F>, grads: &ParamMap<F>, lr: f64) -> Result<(), OptimError> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| OptimError::MissingGradient(name.clone()))?;
            if g.shape() != p.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    got: g.shape().to_vec(),
                });
            }
        }
        match self.config.kind {
            OptimizerKind::SgdMomentum => self.sgd_momentum_step(params, grads, lr),
            OptimizerKind::Adam => self.adam_step(params, grads, lr),
        }
        Ok(())
    }

    /// `v ← μ·v + g + wd·w`, `w ← w − lr·v`.
    fn sgd_momentum_step(&mut self, params: &mut ParamMap<F>, grads: &ParamMap<F>, lr: f64) {
        let mu = F::from_f64_lossy(self.config.momentum);
        let wd = F::from_f64_lossy(self.config.weight_decay);
        let lr = F::from_f64_lossy(lr);
        self.steps += 1;
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let v = self
                .first
                .entry(name.clone())
                .or_insert_with(|| vec![F::zero(); p.numel()]);
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = mu * *vi + gi + wd * *w;
                *w -= lr * *vi;
            }
        }
    }

    /// Bias-corrected Adam with weight decay folded into the gradient.
    fn adam_step(&mut self, params: &mut ParamMap<F>, grads: &ParamMap<F>, lr: f64) {
        let c = self.config;
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (F::from_f64_lossy(c.beta1), F::from_f64_lossy(c.beta2));
        let wd = F::from_f64_lossy(c.weight_decay);
        let eps = F::from_f64_lossy(c.epsilon);
        let corr1 = F::from_f64_lossy(1.0 - c.beta1.powi(t));
        let corr2 = F::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = F::from_f64_lossy(lr);
        let one = F::one();
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            let n = p.numel();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![F::zero(); n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![F::zero(); n]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi + wd * *w;
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Running arithmetic mean of parameter snapshots.
#[derive(Debug, Clone)]
pub struct SwaState<F: Real> {
    average: ParamMap<F>,
    count: u64,
}

impl<F: Real> Default for SwaState<F> {
    fn default() -> Self {
        Self {
            average: ParamMap::new(),
            count: 0,
        }
    }
}

impl<F: Real> SwaState<F> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot_count(&self) -> u64 {
        self.count
    }

    /// `avg ← (avg·k + params)/(k + 1)`.
    pub fn update(&mut self, params: &ParamMap<F>) -> Result<(), OptimError> {
        if self.count == 0 {
            self.average = params.clone();
            self.count = 1;
            return Ok(());
        }
        if params.len() != self.average.len() {
            let missing = self
                .average
                .keys()
                .find(|k| !params.contains_key(*k))
                .or_else(|| params.keys().find(|k| !self.average.contains_key(*k)))
                .cloned()
                .unwrap_or_default();
            return Err(OptimError::UnknownParameter(missing));
        }
        for (name, p) in params {
            let avg = self
                .average
                .get(name)
                .ok_or_else(|| OptimError::UnknownParameter(name.clone()))?;
            if avg.shape() != p.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.clone(),
                    expected: avg.shape().to_vec(),
                    got: p.shape().to_vec(),
                });
            }
        }
        let k = F::from_f64_lossy(self.count as f64);
        let k1 = F::from_f64_lossy((self.count + 1) as f64);
        for (name, p) in params {
            let avg = self.average.get_mut(name).expect("checked above");
            for (a, &v) in avg.data_mut().iter_mut().zip(p.data()) {
                *a = (*a * k + v) / k1;
            }
        }
        self.count += 1;
        Ok(())
    }

    pub fn finalize(&self) -> Result<ParamMap<F>, OptimError> {
        if self.count == 0 {
            return Err(OptimError::EmptyAverage);
        }
        Ok(self.average.clone())
    }
}

/// First epoch at which SWA snapshots are taken: the last quarter of training.
pub fn swa_start_epoch(total_epochs: usize) -> usize {
    total_epochs - (total_epochs / 4).max(1).min(total_epochs)
}

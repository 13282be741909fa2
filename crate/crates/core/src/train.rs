//! Objectives and the minibatch training loop.
//!
//! The real-valued objective is the batch mean of `(F - M)^2` plus
//! `gamma * sum ||W||^2` over all weight matrices. The discrete objective
//! passes `F` through the soft quantizer first and adds
//! `gamma2 * ||b - b_ref||^2`; its sharpness follows a geometric schedule
//! across epochs.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{AreaSplit, Features, Rating, RatingMatrix, SplitSets};
use crate::error::{Error, Result};
use crate::eval::{self, original_levels};
use crate::model::DmfModel;
use crate::optim::Adam;
use crate::quantizer::{LambdaSchedule, Quantizer};
use crate::rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, SparseRows};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Real-valued predictions.
    Dmf,
    /// Predictions passed through the annealed quantizer.
    DmfD,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dmf => "dmf",
            Mode::DmfD => "dmf-d",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight decay on branch weights (`gamma`, or `gamma1` in discrete mode).
    pub gamma: f64,
    /// Pull of the boundaries towards the uniform reference.
    pub gamma2: f64,
    pub learning_rate: f64,
    pub boundary_learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Shuffle seed.
    pub seed: u64,
    pub lambda_start: f64,
    pub lambda_end: f64,
    /// Quantize the residual `G(F - M)` instead of the prediction.
    pub residual_quantization: bool,
    /// Gap between neighbouring ratings in the original domain.
    pub level_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Dmf,
            gamma: 1e-5,
            gamma2: 1e-2,
            learning_rate: 1e-3,
            boundary_learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            lambda_start: 5.0,
            lambda_end: 1e3,
            residual_quantization: false,
            level_step: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("boundary_learning_rate", self.boundary_learning_rate),
            ("level_step", self.level_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be positive, got {}", name, v)));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gamma2", self.gamma2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be non-negative, got {}", name, v)));
            }
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be at least 1".to_string()));
        }
        if self.mode == Mode::DmfD {
            self.schedule()?;
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<LambdaSchedule> {
        LambdaSchedule::new(self.lambda_start, self.lambda_end, self.max_epochs.saturating_sub(1))
    }
}

/// Training and validation entries (scaled) plus the inputs they read.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub features: &'a Features,
    pub train: Vec<Rating>,
    pub validation: Vec<Rating>,
}

impl<'a> TrainData<'a> {
    /// Training and validation entries restricted to area I.
    pub fn new(matrix: &RatingMatrix, splits: &SplitSets, areas: &AreaSplit, features: &'a Features) -> Result<Self> {
        if !matrix.is_scaled() {
            return Err(Error::State("training data must be scaled".into()));
        }
        let pick = |idx: &[usize]| -> Vec<Rating> {
            let area1 = areas.restrict(idx);
            area1.area(crate::data::Area::I).iter().map(|&k| matrix.entries()[k]).collect()
        };
        let train = pick(&splits.train);
        if train.is_empty() {
            return Err(Error::NoEntries);
        }
        Ok(TrainData { features, train, validation: pick(&splits.validation) })
    }
}

/// Loss terms that do not depend on the training loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub mode: Mode,
    pub gamma: f64,
    pub gamma2: f64,
    pub residual_quantization: bool,
}

impl From<&TrainConfig> for Objective {
    fn from(c: &TrainConfig) -> Self {
        Objective { mode: c.mode, gamma: c.gamma, gamma2: c.gamma2, residual_quantization: c.residual_quantization }
    }
}

/// Value and gradients of an objective at the current parameters.
#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    pub loss: f64,
    /// In [`DmfModel::parameters`] order.
    pub model_grads: Vec<Tensor>,
    /// Gradient with respect to the interior boundaries (discrete mode).
    pub boundary_grads: Option<Vec<f64>>,
}

fn batch_inputs(features: &Features, batch: &[Rating]) -> Result<(SparseRows, SparseRows, Tensor)> {
    let rows: Vec<usize> = batch.iter().map(|e| e.row).collect();
    let cols: Vec<usize> = batch.iter().map(|e| e.col).collect();
    let targets = Tensor::vector(batch.iter().map(|e| e.value).collect())?;
    Ok((features.row_batch(&rows)?, features.col_batch(&cols)?, targets))
}

fn record_objective(
    tape: &mut Tape,
    model: &DmfModel,
    quantizer: Option<&Quantizer>,
    features: &Features,
    batch: &[Rating],
    objective: &Objective,
) -> Result<(Var, Vec<Var>, Option<Var>)> {
    if batch.is_empty() {
        return Err(Error::Contract("objective over an empty batch".into()));
    }
    let (rows, cols, targets) = batch_inputs(features, batch)?;
    let bound = model.bind(tape, true);
    let pred = bound.predict(tape, rows, cols)?;
    let target = tape.constant(targets);

    let (data, centers) = match objective.mode {
        Mode::Dmf => {
            let r = tape.sub(pred, target)?;
            let sq = tape.square(r)?;
            (tape.mean(sq)?, None)
        }
        Mode::DmfD => {
            let q = quantizer.ok_or_else(|| Error::State("discrete objective needs a quantizer".into()))?;
            let centers = tape.param(Tensor::vector(q.interior().to_vec())?);
            let segs = q.segments();
            let r = if objective.residual_quantization {
                let diff = tape.sub(pred, target)?;
                tape.sigmoid_segments(diff, centers, &segs)?
            } else {
                let g = tape.sigmoid_segments(pred, centers, &segs)?;
                tape.sub(g, target)?
            };
            let sq = tape.square(r)?;
            (tape.mean(sq)?, Some((centers, q)))
        }
    };

    let mut total = data;
    if objective.gamma > 0.0 {
        let mut reg: Option<Var> = None;
        for w in bound.weights() {
            let sq = tape.square(w)?;
            let s = tape.sum(sq)?;
            reg = Some(match reg {
                None => s,
                Some(acc) => tape.add(acc, s)?,
            });
        }
        if let Some(reg) = reg {
            let reg = tape.scale(reg, objective.gamma)?;
            total = tape.add(total, reg)?;
        }
    }
    if let Some((c, q)) = centers {
        if objective.gamma2 > 0.0 {
            let reference = tape.constant(Tensor::vector(q.interior_reference().to_vec())?);
            let d = tape.sub(c, reference)?;
            let sq = tape.square(d)?;
            let s = tape.sum(sq)?;
            let pen = tape.scale(s, objective.gamma2)?;
            total = tape.add(total, pen)?;
        }
    }
    Ok((total, bound.params(), centers.map(|(c, _)| c)))
}

/// Objective value and gradients on one batch of scaled entries.
pub fn evaluate_objective(
    model: &DmfModel,
    quantizer: Option<&Quantizer>,
    features: &Features,
    batch: &[Rating],
    objective: &Objective,
) -> Result<ObjectiveValue> {
    let mut tape = Tape::new();
    let (loss, params, centers) = record_objective(&mut tape, model, quantizer, features, batch, objective)?;
    let grads = tape.backward(loss)?;
    let model_grads = params
        .iter()
        .map(|&p| grads.get(p).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(p).shape().to_vec())))
        .collect();
    let boundary_grads = centers.map(|c| {
        grads.get(c).map(|g| g.values().to_vec()).unwrap_or_else(|| vec![0.0; tape.value(c).len()])
    });
    Ok(ObjectiveValue { loss: tape.value(loss).values()[0], model_grads, boundary_grads })
}

/// Real-valued objective on a batch.
pub fn loss_dmf(model: &DmfModel, features: &Features, batch: &[Rating], gamma: f64) -> Result<f64> {
    let objective = Objective { mode: Mode::Dmf, gamma, gamma2: 0.0, residual_quantization: false };
    Ok(evaluate_objective(model, None, features, batch, &objective)?.loss)
}

/// Discrete objective on a batch.
pub fn loss_dmfd(
    model: &DmfModel,
    quantizer: &Quantizer,
    features: &Features,
    batch: &[Rating],
    gamma1: f64,
    gamma2: f64,
) -> Result<f64> {
    let objective = Objective { mode: Mode::DmfD, gamma: gamma1, gamma2, residual_quantization: false };
    Ok(evaluate_objective(model, Some(quantizer), features, batch, &objective)?.loss)
}

/// Hard-quantized prediction in the original rating domain.
pub fn predict_discrete(model: &DmfModel, quantizer: &Quantizer, x: &Tensor, y: &Tensor) -> Result<f64> {
    let f = model.predict(x, y)?;
    discrete_value(model, quantizer, f)
}

/// Maps a scaled prediction to its original-domain level.
pub fn discrete_value(model: &DmfModel, quantizer: &Quantizer, f: f64) -> Result<f64> {
    let levels = original_levels(model, quantizer)?;
    Ok(levels[quantizer.hard_index(f)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_rmse: Option<f64>,
    pub val_mae: Option<f64>,
    pub lambda: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Source of wall-clock seconds for the report.
pub trait Clock {
    fn now(&mut self) -> f64;
}

/// Reports zero elapsed time; used for reproducible reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&mut self) -> f64 {
        0.0
    }
}

/// Weights and quantizer at one point of training.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub model: DmfModel,
    pub quantizer: Option<Quantizer>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub current: Snapshot,
    pub best: Option<Snapshot>,
    pub weight_opt: Adam,
    pub boundary_opt: Adam,
    pub epochs_done: usize,
    pub best_epoch: Option<usize>,
    pub best_val: Option<f64>,
    pub since_best: usize,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    state: TrainerState,
}

impl Trainer {
    pub fn new(model: DmfModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let quantizer = match config.mode {
            Mode::Dmf => None,
            Mode::DmfD => Some(Quantizer::for_ratings(&model.scaling(), config.level_step, config.lambda_start)?),
        };
        let state = TrainerState {
            current: Snapshot { model, quantizer },
            best: None,
            weight_opt: Adam::new(config.learning_rate),
            boundary_opt: Adam::new(config.boundary_learning_rate),
            epochs_done: 0,
            best_epoch: None,
            best_val: None,
            since_best: 0,
        };
        Ok(Trainer { config, state })
    }

    /// Continues from a saved state; `config.max_epochs` is the total epoch
    /// budget including the epochs already run.
    pub fn resume(mut state: TrainerState, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if (config.mode == Mode::DmfD) != state.current.quantizer.is_some() {
            return Err(Error::Config(format!("checkpoint does not match training mode {}", config.mode.name())));
        }
        state.weight_opt.lr = config.learning_rate;
        state.boundary_opt.lr = config.boundary_learning_rate;
        Ok(Trainer { config, state })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    pub fn current(&self) -> &Snapshot {
        &self.state.current
    }

    /// Best-validation snapshot, or the current one if none was recorded.
    pub fn best(&self) -> &Snapshot {
        self.state.best.as_ref().unwrap_or(&self.state.current)
    }

    /// Runs epochs until the budget or the patience is exhausted.
    pub fn run(&mut self, data: &TrainData<'_>, clock: &mut dyn Clock) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while self.state.epochs_done < self.config.max_epochs {
            let start = clock.now();
            let mut record = self.run_epoch(data)?;
            record.seconds = clock.now() - start;
            report.epochs.push(record);
            if self.should_stop() {
                report.stopped_early = self.state.epochs_done < self.config.max_epochs;
                break;
            }
        }
        report.best_epoch = self.state.best_epoch;
        Ok(report)
    }

    fn should_stop(&self) -> bool {
        if self.state.since_best < self.config.patience {
            return false;
        }
        match self.config.mode {
            Mode::Dmf => true,
            // no stopping while the quantizer is still being sharpened
            Mode::DmfD => self.state.epochs_done > self.config.max_epochs.saturating_sub(1),
        }
    }

    /// One pass over the shuffled training entries followed by validation.
    pub fn run_epoch(&mut self, data: &TrainData<'_>) -> Result<EpochRecord> {
        let epoch = self.state.epochs_done;
        self.state.current.model.check_features(data.features)?;
        let lambda = match self.state.current.quantizer.as_mut() {
            Some(q) => {
                let l = self.config.schedule()?.at(epoch);
                q.set_lambda(l)?;
                Some(l)
            }
            None => None,
        };

        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::named_rng(self.config.seed, &format!("shuffle-{}", epoch)));
        let objective = Objective::from(&self.config);
        let mut weighted = 0.0;
        let mut batch = Vec::with_capacity(self.config.batch_size);
        for chunk in order.chunks(self.config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| data.train[k]));
            let loss = self.step(data.features, &batch, &objective, epoch)?;
            weighted += loss * batch.len() as f64;
        }
        let train_loss = weighted / data.train.len() as f64;

        let (val_rmse, val_mae) = self.validate(data)?;
        self.state.epochs_done += 1;
        match val_rmse {
            Some(v) if self.state.best_val.is_some_and(|b| v >= b) => self.state.since_best += 1,
            _ => {
                self.state.best_val = val_rmse;
                self.state.best_epoch = Some(epoch);
                self.state.best = Some(self.state.current.clone());
                self.state.since_best = 0;
            }
        }
        Ok(EpochRecord { epoch, train_loss, val_rmse, val_mae, lambda, seconds: 0.0 })
    }

    fn step(&mut self, features: &Features, batch: &[Rating], objective: &Objective, epoch: usize) -> Result<f64> {
        let current = &mut self.state.current;
        let value = match evaluate_objective(&current.model, current.quantizer.as_ref(), features, batch, objective) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !value.loss.is_finite() || value.loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence { epoch, loss: value.loss });
        }

        let grads: Vec<&[f64]> = value.model_grads.iter().map(|g| g.values()).collect();
        let mut params = current.model.parameters_mut();
        let mut slices: Vec<&mut [f64]> = params.iter_mut().map(|p| p.values_mut()).collect();
        self.state.weight_opt.step(&mut slices, &grads)?;
        if slices.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence { epoch, loss: value.loss });
        }

        if let (Some(q), Some(bg)) = (current.quantizer.as_mut(), value.boundary_grads.as_ref()) {
            let mut b = q.interior().to_vec();
            self.state.boundary_opt.step(&mut [&mut b[..]], &[bg])?;
            q.set_interior(&b).map_err(|_| Error::Divergence { epoch, loss: value.loss })?;
        }
        Ok(value.loss)
    }

    /// Validation error of the deployed predictor: hard-quantized in discrete
    /// mode, real-valued otherwise.
    fn validate(&self, data: &TrainData<'_>) -> Result<(Option<f64>, Option<f64>)> {
        if data.validation.is_empty() {
            return Ok((None, None));
        }
        let model = &self.state.current.model;
        let s = model.scaling();
        let pairs: Vec<(usize, usize)> = data.validation.iter().map(|e| (e.row, e.col)).collect();
        let raw = model.predict_pairs(data.features, &pairs)?;
        let preds: Vec<f64> = match &self.state.current.quantizer {
            Some(q) => {
                let levels = original_levels(model, q)?;
                raw.iter().map(|&f| levels[q.hard_index(f)]).collect()
            }
            None => raw.iter().map(|&f| s.unscale(f)).collect(),
        };
        let pairs: Vec<(f64, f64)> =
            preds.into_iter().zip(&data.validation).map(|(p, e)| (p, s.unscale(e.value))).collect();
        Ok((Some(eval::rmse(&pairs)?), Some(eval::mae(&pairs)?)))
    }
}

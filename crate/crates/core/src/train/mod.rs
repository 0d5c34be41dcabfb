//! Loss, optimizers, and the epoch loop with early stopping.

mod log;
mod optim;

pub use log::{EpochRecord, TrainLog};
pub use optim::{optimizer_step, OptimizerKind, OptimizerState};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Mode, ParamStore};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Pixel-wise binary cross-entropy, averaged over every pixel.
pub fn bce_loss<T: Real>(graph: &mut Graph<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
    graph.bce(pred, target)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// A validation loss counts as improved only when it drops by more than
    /// this much below the best so far.
    pub min_delta: f64,
    pub optimizer: OptimizerKind,
    /// Seed of the shuffling stream. Independent of the model's init seed.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 4,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-4,
            optimizer: OptimizerKind::adam(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::usage(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.patience == 0 {
            return Err(Error::usage("patience must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::usage(
                "batch size must be at least 2 (train-mode batch norm)",
            ));
        }
        if self.max_epochs == 0 {
            return Err(Error::usage("max_epochs must be at least 1"));
        }
        Ok(())
    }
}

/// One input/target pair ready for the network.
#[derive(Clone, Debug)]
pub struct Example<T: Real> {
    /// Identifier of the source image; validation/train disjointness is
    /// checked on it.
    pub source: String,
    /// `[C, H, W]`
    pub input: Tensor<T>,
    /// `[1, H, W]` with values in {0, 1}
    pub target: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// Splits `order` into batches of `size`; a trailing singleton joins the
/// previous batch because train-mode batch norm needs two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

fn stack_batch<T: Real>(data: &[Example<T>], idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let inputs: Vec<_> = idx.iter().map(|&i| data[i].input.clone()).collect();
    let targets: Vec<_> = idx.iter().map(|&i| data[i].target.clone()).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}

fn correct_pixels<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> usize {
    let half = T::from_f64_lossy(0.5);
    pred.data()
        .iter()
        .zip(target.data())
        .filter(|(&p, &y)| (p >= half) == (y >= half))
        .count()
}

/// Mean loss and pixel accuracy in inference mode.
pub fn evaluate<T: Real>(model: &Model<T>, data: &[Example<T>], batch_size: usize) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::usage("cannot evaluate an empty dataset"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut pixels = 0usize;
    for idx in order.chunks(batch_size.max(1)) {
        let (x, y) = stack_batch(data, idx)?;
        let mut s = model.session(Mode::Infer);
        let xv = s.input(x);
        let out = model.forward(&mut s, xv)?;
        let l = bce_loss(&mut s.graph, out, &y)?;
        loss += s.graph.value(l).item()?.as_f64() * idx.len() as f64;
        correct += correct_pixels(s.graph.value(out), &y);
        pixels += y.numel();
    }
    Ok(EpochStats {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / pixels as f64,
    })
}

/// Owns the optimizer state and the shuffling stream across epochs.
pub struct Trainer<T: Real> {
    config: TrainConfig,
    state: OptimizerState<T>,
    rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, model: &Model<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            state: OptimizerState::new(model.store()),
            config,
            rng,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over `data` in shuffled mini-batches. `epoch` only labels
    /// diagnostics.
    pub fn train_epoch(&mut self, model: &mut Model<T>, data: &[Example<T>], epoch: usize) -> Result<EpochStats> {
        if data.len() < 2 {
            return Err(Error::usage(
                "training needs at least 2 examples (train-mode batch norm)",
            ));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut pixels = 0usize;
        for (b, idx) in batches(&order, self.config.batch_size).into_iter().enumerate() {
            let (x, y) = stack_batch(data, idx)?;
            let (grads, updates, loss) = {
                let mut s = model.session(Mode::Train);
                let xv = s.input(x);
                let out = model.forward(&mut s, xv)?;
                let l = bce_loss(&mut s.graph, out, &y)?;
                let loss = s.graph.value(l).item()?.as_f64();
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "loss became {loss} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                correct += correct_pixels(s.graph.value(out), &y);
                pixels += y.numel();
                s.graph.backward(l)?;
                (s.grads(), s.into_stat_updates(), loss)
            };
            optimizer_step(model.store_mut(), &grads, &mut self.state, &self.config)?;
            model.apply_stat_updates(&updates);
            loss_sum += loss * idx.len() as f64;
        }
        Ok(EpochStats {
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / pixels as f64,
        })
    }
}

/// Tracks the best validation loss and decides when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        let improved = self.best.is_infinite() || val_loss < self.best - self.min_delta;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision {
            improved,
            stop: self.stale >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Trains until validation loss stalls for `patience` epochs or
/// `max_epochs` is reached, then restores the best-validation parameters.
pub fn fit<T: Real>(
    model: &mut Model<T>,
    train: &[Example<T>],
    val: &[Example<T>],
    config: &TrainConfig,
) -> Result<TrainLog> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::usage("training and validation sets must be non-empty"));
    }
    if let Some(shared) = val
        .iter()
        .find(|v| train.iter().any(|t| t.source == v.source))
    {
        return Err(Error::usage(format!(
            "source {} appears in both training and validation sets",
            shared.source
        )));
    }
    let started = Instant::now();
    let mut trainer = Trainer::new(config.clone(), model)?;
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best: ParamStore<T> = model.store().clone();
    let mut log = TrainLog::new(config, model.count_params());
    for epoch in 1..=config.max_epochs {
        let tr = trainer.train_epoch(model, train, epoch)?;
        let va = evaluate(model, val, config.batch_size)?;
        if !va.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "validation loss became {} at epoch {epoch}",
                va.loss
            )));
        }
        log.records.push(EpochRecord {
            epoch,
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            val_loss: va.loss,
            val_accuracy: va.accuracy,
        });
        let decision = stopper.observe(epoch, va.loss);
        if decision.improved {
            best = model.store().clone();
        }
        log.stopping_epoch = epoch;
        if decision.stop {
            break;
        }
    }
    model.store_mut().copy_from(&best)?;
    log.best_epoch = stopper.best_epoch();
    log.best_val_loss = stopper.best();
    log.wall_time = started.elapsed();
    Ok(log)
}

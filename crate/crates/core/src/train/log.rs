use std::fmt::Write as _;
use std::time::Duration;

use super::{OptimizerKind, TrainConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Per-epoch history of a [`fit`](super::fit) run.
///
/// The text form holds everything except the wall time so that two runs with
/// equal seeds serialize to identical bytes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub seed: u64,
    pub param_count: usize,
    pub records: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub wall_time: Duration,
}

impl TrainLog {
    pub fn new(config: &TrainConfig, param_count: usize) -> Self {
        Self {
            optimizer: config.optimizer,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            patience: config.patience,
            seed: config.seed,
            param_count,
            records: Vec::new(),
            stopping_epoch: 0,
            best_epoch: 0,
            best_val_loss: f64::INFINITY,
            wall_time: Duration::ZERO,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# optimizer={}", self.optimizer);
        let _ = writeln!(
            s,
            "# learning_rate={} batch_size={} patience={} seed={} params={}",
            self.learning_rate, self.batch_size, self.patience, self.seed, self.param_count
        );
        let _ = writeln!(s, "# epoch train_loss train_acc val_loss val_acc");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            );
        }
        let _ = writeln!(
            s,
            "# stopping_epoch={} best_epoch={} best_val_loss={}",
            self.stopping_epoch, self.best_epoch, self.best_val_loss
        );
        s
    }

    /// Reads back the epoch records of a serialized log. Comment lines are
    /// skipped.
    pub fn parse_records(text: &str) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for line in text.lines() {
            let here = offset;
            offset += line.len() + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::parse(here, format!("malformed log record {line:?}"));
            if f.len() != 5 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            out.push(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_loss: num(1)?,
                train_accuracy: num(2)?,
                val_loss: num(3)?,
                val_accuracy: num(4)?,
            });
        }
        Ok(out)
    }
}

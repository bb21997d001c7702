use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::data::DataError;
use crate::network::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn from_val_losses(losses: &[f64]) -> Self {
        TrainHistory {
            epochs: losses
                .iter()
                .enumerate()
                .map(|(i, &v)| EpochRecord { epoch: i + 1, train_loss: f64::NAN, val_loss: v })
                .collect(),
        }
    }

    /// 1-based epoch of least validation loss; the earliest wins ties.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.epochs {
            if best.is_none_or(|b| r.val_loss < b.val_loss) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }

    /// Writes `epoch,train_loss,val_loss,is_best`.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let best = self.best_epoch();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epoch", "train_loss", "val_loss", "is_best"]).map_err(DataError::from)?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.train_loss),
                format!("{:?}", r.val_loss),
                (best == Some(r.epoch)).to_string(),
            ])
            .map_err(DataError::from)?;
        }
        w.flush().map_err(|e| DataError::Io { path: "<history>".into(), source: e })?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut epochs = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row.map_err(DataError::from)?;
            let field = |c: usize, name: &str| {
                row.get(c).ok_or_else(|| DataError::BadValue { row: i + 1, column: name.into(), value: String::new() })
            };
            let num = |c: usize, name: &str| -> Result<f64> {
                let s = field(c, name)?;
                s.trim()
                    .parse()
                    .map_err(|_| DataError::BadValue { row: i + 1, column: name.into(), value: s.to_string() }.into())
            };
            let epoch = num(0, "epoch")? as usize;
            epochs.push(EpochRecord { epoch, train_loss: num(1, "train_loss")?, val_loss: num(2, "val_loss")? });
        }
        Ok(TrainHistory { epochs })
    }
}

/// The saved checkpoint of the least-validation-loss epoch (earliest on ties).
/// `saved[i]` must hold epoch `i + 1`.
pub fn select_checkpoint<'c>(history: &TrainHistory, saved: &'c [Checkpoint]) -> Result<&'c Checkpoint> {
    let best = history.best_epoch().ok_or(TrainError::EmptyHistory)?;
    if saved.len() != history.epochs.len() {
        return Err(TrainError::CheckpointCount { saved: saved.len(), epochs: history.epochs.len() });
    }
    Ok(&saved[best - 1])
}

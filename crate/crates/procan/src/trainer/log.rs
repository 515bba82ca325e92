//! The training log: one row per epoch plus one row per growth event,
//! serialized as a single CSV so whole runs can be byte-compared.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const TRAIN_LOG_HEADER: &str =
    "kind,epoch,phase,block,p,strategy,train_loss,val_loss,val_acc,lr,augmented";
pub const CURVES_HEADER: &str = "epoch,train_loss,val_loss,val_acc,lr";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogRow {
    Epoch {
        epoch: usize,
        phase: String,
        /// Blend probability of the block in transition this epoch.
        p: Option<f64>,
        train_loss: f64,
        val_loss: f64,
        val_acc: f64,
        lr: f64,
        augmented: bool,
    },
    Growth {
        epoch: usize,
        block: usize,
        p: f64,
        strategy: String,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push_epoch(
        &mut self,
        epoch: usize,
        phase: &str,
        p: Option<f64>,
        train_loss: f64,
        val_loss: f64,
        val_acc: f64,
        lr: f64,
        augmented: bool,
    ) {
        self.rows.push(LogRow::Epoch {
            epoch,
            phase: phase.to_string(),
            p,
            train_loss,
            val_loss,
            val_acc,
            lr,
            augmented,
        });
    }

    pub fn push_growth(&mut self, epoch: usize, block: usize, p: f64, strategy: &str) {
        self.rows.push(LogRow::Growth {
            epoch,
            block,
            p,
            strategy: strategy.to_string(),
        });
    }

    pub fn epochs(&self) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(|r| matches!(r, LogRow::Epoch { .. }))
    }

    pub fn epoch_count(&self) -> usize {
        self.epochs().count()
    }

    pub fn phase_sequence(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| match r {
                LogRow::Epoch { phase, .. } => phase.clone(),
                LogRow::Growth { .. } => "grow".to_string(),
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(TRAIN_LOG_HEADER);
        s.push('\n');
        for row in &self.rows {
            match row {
                LogRow::Epoch {
                    epoch,
                    phase,
                    p,
                    train_loss,
                    val_loss,
                    val_acc,
                    lr,
                    augmented,
                } => {
                    let p_str = p.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "epoch,{epoch},{phase},,{p_str},,{train_loss:.6},{val_loss:.6},{val_acc:.6},{lr},{augmented}"
                    );
                }
                LogRow::Growth {
                    epoch,
                    block,
                    p,
                    strategy,
                } => {
                    let _ = writeln!(s, "growth,{epoch},grow,{block},{p},{strategy},,,,,");
                }
            }
        }
        s
    }

    /// Plot-ready per-epoch curves.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from(CURVES_HEADER);
        s.push('\n');
        for row in &self.rows {
            if let LogRow::Epoch {
                epoch,
                train_loss,
                val_loss,
                val_acc,
                lr,
                ..
            } = row
            {
                let _ = writeln!(s, "{epoch},{train_loss:.6},{val_loss:.6},{val_acc:.6},{lr}");
            }
        }
        s
    }

    /// Validation-loss jump at each block insertion: the first epoch that
    /// runs with the new block active, minus the epoch just before the
    /// grow event. One entry per grown block.
    pub fn insertion_jumps(&self) -> Vec<f64> {
        let mut jumps = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            let LogRow::Growth { p, .. } = row else {
                continue;
            };
            // Anchor on the p = 0 rows that mark a fresh block.
            if *p != 0.0 {
                continue;
            }
            let before = self.rows[..i].iter().rev().find_map(|r| match r {
                LogRow::Epoch { val_loss, .. } => Some(*val_loss),
                _ => None,
            });
            let after = self.rows[i..].iter().find_map(|r| match r {
                LogRow::Epoch { val_loss, .. } => Some(*val_loss),
                _ => None,
            });
            if let (Some(b), Some(a)) = (before, after) {
                jumps.push(a - b);
            }
        }
        jumps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_shape_and_jump_extraction() {
        let mut log = TrainLog::new();
        log.push_epoch(1, "easy", None, 0.7, 0.69, 0.55, 1e-3, true);
        log.push_epoch(2, "full", None, 0.6, 0.50, 0.70, 1e-3, true);
        log.push_growth(2, 1, 0.0, "bernoulli");
        log.push_growth(3, 1, 0.25, "bernoulli");
        log.push_epoch(3, "transition", Some(0.25), 0.55, 0.80, 0.60, 1e-3, true);
        log.push_epoch(4, "settle", None, 0.5, 0.45, 0.75, 1e-3, false);

        let csv = log.to_csv();
        assert!(csv.starts_with(TRAIN_LOG_HEADER));
        assert_eq!(csv.lines().count(), 7);
        assert_eq!(log.epoch_count(), 4);

        let jumps = log.insertion_jumps();
        assert_eq!(jumps.len(), 1);
        assert!((jumps[0] - 0.30).abs() < 1e-12);

        let curves = log.curves_csv();
        assert_eq!(curves.lines().count(), 5);
        assert!(curves.contains("2,0.600000,0.500000,0.700000,0.001"));
    }
}

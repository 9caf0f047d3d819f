use std::fmt;
use std::str::FromStr;

use crate::data::Task;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision '{s}' (expected f32 or f64)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Initial learning rate.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub precision: Precision,
}

impl TrainingConfig {
    pub fn for_task(task: Task) -> Self {
        TrainingConfig {
            lr: task.default_lr(),
            epochs: 100,
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            precision: Precision::F32,
        }
    }

    /// A zero learning rate is accepted and leaves trainable weights fixed.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!(
                "learning rate must be finite and non-negative, got {}",
                self.lr
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        assert_eq!(TrainingConfig::for_task(Task::Presence).lr, 1e-3);
        assert_eq!(TrainingConfig::for_task(Task::Source).lr, 1e-4);
        let cfg = TrainingConfig::for_task(Task::Presence);
        assert_eq!((cfg.epochs, cfg.batch_size), (100, 16));
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_invalid() {
        let base = TrainingConfig::for_task(Task::Presence);
        assert!(TrainingConfig {
            epochs: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            batch_size: 0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig {
            lr: -1.0,
            ..base.clone()
        }
        .validate()
        .is_err());
        assert!(TrainingConfig { lr: 0.0, ..base }.validate().is_ok());
    }
}

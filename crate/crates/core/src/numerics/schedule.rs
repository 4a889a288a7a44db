use serde::{Deserialize, Serialize};

/// Drops the learning rate tenfold when the validation loss has not strictly
/// improved for more than `patience` epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    lr: f64,
    floor: f64,
    patience: usize,
    best: f64,
    stale_epochs: usize,
}

impl PlateauScheduler {
    pub const FACTOR: f64 = 10.0;

    pub fn new(lr: f64, floor: f64, patience: usize) -> Self {
        Self { lr: lr.max(floor), floor, patience, best: f64::INFINITY, stale_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale_epochs(&self) -> usize {
        self.stale_epochs
    }

    /// Call once per epoch; returns the learning rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale_epochs = 0;
        } else {
            self.stale_epochs += 1;
            if self.stale_epochs > self.patience {
                self.lr = (self.lr / Self::FACTOR).max(self.floor);
                self.stale_epochs = 0;
            }
        }
        self.lr
    }
}

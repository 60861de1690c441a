//! Reduce-on-plateau learning-rate schedule combined with early stopping.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    pub plateau_patience: usize,
    pub factor: f64,
    pub early_patience: usize,
    /// An epoch improves only if `loss < best - min_delta`.
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleDecision {
    Continue { lr: f64 },
    Reduce { lr: f64 },
    Stop,
}

/// Incremental form of the schedule, one observation per epoch.
///
/// The plateau counter resets on improvement and after each reduction; the
/// early-stopping counter resets only on improvement. When both fire in the
/// same epoch, stopping wins.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    policy: SchedulePolicy,
    lr: f64,
    best: f64,
    best_epoch: Option<usize>,
    epochs: usize,
    plateau_wait: usize,
    early_wait: usize,
}

impl PlateauTracker {
    pub fn new(policy: SchedulePolicy, initial_lr: f64) -> Self {
        Self {
            policy,
            lr: initial_lr,
            best: f64::INFINITY,
            best_epoch: None,
            epochs: 0,
            plateau_wait: 0,
            early_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Zero-based index of the best epoch so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    /// True when the most recent observation was a new best.
    pub fn improved_last(&self) -> bool {
        self.best_epoch.is_some_and(|b| b + 1 == self.epochs)
    }

    pub fn observe(&mut self, loss: f64) -> ScheduleDecision {
        self.epochs += 1;
        if loss < self.best - self.policy.min_delta {
            self.best = loss;
            self.best_epoch = Some(self.epochs - 1);
            self.plateau_wait = 0;
            self.early_wait = 0;
            return ScheduleDecision::Continue { lr: self.lr };
        }
        self.plateau_wait += 1;
        self.early_wait += 1;
        if self.early_wait >= self.policy.early_patience {
            return ScheduleDecision::Stop;
        }
        if self.plateau_wait >= self.policy.plateau_patience {
            self.plateau_wait = 0;
            self.lr *= self.policy.factor;
            return ScheduleDecision::Reduce { lr: self.lr };
        }
        ScheduleDecision::Continue { lr: self.lr }
    }
}

/// Decision after the last entry of `losses`, replaying the whole history.
///
/// # Panics
/// If `losses` is empty.
pub fn scheduler_step(losses: &[f64], policy: SchedulePolicy, initial_lr: f64) -> ScheduleDecision {
    assert!(!losses.is_empty(), "scheduler_step needs at least one loss");
    let mut tracker = PlateauTracker::new(policy, initial_lr);
    let mut decision = ScheduleDecision::Continue { lr: initial_lr };
    for &loss in losses {
        decision = tracker.observe(loss);
    }
    decision
}

#[cfg(test)]
mod tests {
    use super::*;

    const POLICY: SchedulePolicy = SchedulePolicy { plateau_patience: 5, factor: 0.1, early_patience: 7, min_delta: 0.0 };

    fn decisions(losses: &[f64]) -> Vec<ScheduleDecision> {
        (1..=losses.len()).map(|n| scheduler_step(&losses[..n], POLICY, 1e-3)).collect()
    }

    #[test]
    fn reduce_fires_after_five_flat_epochs() {
        let losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9];
        let d = decisions(&losses);
        assert!(d[..6].iter().all(|x| matches!(x, ScheduleDecision::Continue { .. })));
        match d[6] {
            ScheduleDecision::Reduce { lr } => assert!((lr - 1e-4).abs() < 1e-18),
            other => panic!("expected reduce, got {other:?}"),
        }
    }

    #[test]
    fn stop_fires_at_eighth_entry() {
        let losses = [1.0; 8];
        let d = decisions(&losses);
        assert!(matches!(d[5], ScheduleDecision::Reduce { .. }));
        assert!(matches!(d[6], ScheduleDecision::Continue { .. }));
        assert_eq!(d[7], ScheduleDecision::Stop);
    }

    #[test]
    fn decreasing_losses_always_continue() {
        let losses: Vec<f64> = (0..30).map(|i| 1.0 / (i + 1) as f64).collect();
        assert!(decisions(&losses).iter().all(|d| *d == ScheduleDecision::Continue { lr: 1e-3 }));
    }

    #[test]
    fn min_delta_demands_real_progress() {
        let policy = SchedulePolicy { min_delta: 0.01, early_patience: 2, ..POLICY };
        assert_eq!(scheduler_step(&[1.0, 0.995, 0.999], policy, 0.1), ScheduleDecision::Stop);
        assert_eq!(scheduler_step(&[1.0, 0.98, 0.97], policy, 0.1), ScheduleDecision::Continue { lr: 0.1 });
    }
}

use std::collections::BTreeMap;

use cascade_core::dataset::{Task, PAD};
use serde::{Deserialize, Serialize};

use crate::forward::CascadeOutput;

/// Per-task losses and their sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    /// Cascade order.
    pub per_task: Vec<(Task, f64)>,
    pub global: f64,
}

impl LossBundle {
    /// `global` is accumulated left to right over `per_task`.
    pub fn from_parts(per_task: Vec<(Task, f64)>) -> Self {
        let global = per_task.iter().fold(0.0, |acc, (_, l)| acc + l);
        Self { per_task, global }
    }

    pub fn get(&self, task: Task) -> Option<f64> {
        self.per_task
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, l)| *l)
    }
}

/// Mean cross-entropy of each task over its non-PAD target positions.
///
/// Step `t` of a task output predicts `targets[task][t + 1]`. A task with no
/// non-PAD position, or no target at all, contributes exactly zero.
pub fn compute_global_loss(
    output: &CascadeOutput,
    targets: &BTreeMap<Task, Vec<usize>>,
) -> LossBundle {
    let per_task = output
        .tasks
        .iter()
        .map(|out| {
            let Some(y) = targets.get(&out.task) else {
                return (out.task, 0.0);
            };
            let mut total = 0.0;
            let mut count = 0usize;
            for t in 0..out.distributions.rows() {
                match y.get(t + 1) {
                    Some(&sym) if sym != PAD => {
                        total -= out.distributions.get(t, sym).ln();
                        count += 1;
                    }
                    _ => {}
                }
            }
            (
                out.task,
                if count == 0 {
                    0.0
                } else {
                    total / count as f64
                },
            )
        })
        .collect();
    LossBundle::from_parts(per_task)
}

use cascade_core::dataset::Task;
use cascade_core::CellStatus;
use serde::{Deserialize, Serialize};

use crate::plan::{StepPlan, StepRecord, Strategy};
use crate::step::{run_annotation_step_with, StepProgress};
use crate::store::{BlockState, Store};
use crate::HarnessError;

/// Task columns of the accounting table, in presentation order.
const COLUMNS: [(Task, &str); 5] = [
    (Task::Cl, "Cl"),
    (Task::Ar, "Ar"),
    (Task::Tk, "Tk"),
    (Task::Pos, "POS"),
    (Task::Lm, "Lm"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignOutcome {
    pub records: Vec<StepRecord>,
    /// Block whose corrections must be imported before the next step.
    pub awaiting: Option<usize>,
    pub complete: bool,
}

/// One row per step: training tokens with the primary share in
/// parentheses, then per-task accuracy.
pub fn accounting_table(records: &[StepRecord]) -> String {
    let mut out = String::from("Step\tTrain. tokens");
    for (_, name) in COLUMNS {
        out.push('\t');
        out.push_str(name);
    }
    out.push_str("\tTokens\tALIGN_ERR\n");
    for r in records {
        out.push_str(&format!("Step{}", r.step));
        if r.strategy == Strategy::Reloaded {
            out.push_str("_reloaded");
        }
        out.push_str(&format!("\t{}", r.train_tokens));
        for (task, _) in COLUMNS {
            let cell = r
                .eval
                .as_ref()
                .map_or_else(|| "-".to_string(), |e| e.display(task));
            out.push_str(&format!("\t{cell}"));
        }
        match &r.eval {
            Some(e) => out.push_str(&format!("\t{}\t{}\n", e.tokens, e.align_err)),
            None => out.push_str("\t-\t-\n"),
        }
    }
    out
}

fn check_continuity(plans: &[StepPlan]) -> Result<(), HarnessError> {
    for p in plans {
        p.validate()?;
    }
    for w in plans.windows(2) {
        if w[1].step <= w[0].step {
            return Err(HarnessError::PlanDiscontinuity(format!(
                "step {} follows step {}",
                w[1].step, w[0].step
            )));
        }
        if !w[1].annotated.contains(&w[0].target) {
            return Err(HarnessError::PlanDiscontinuity(format!(
                "step {} does not train on block {} annotated by step {}",
                w[1].step, w[0].target, w[0].step
            )));
        }
    }
    Ok(())
}

pub fn run_campaign(plans: &[StepPlan], store: &Store) -> Result<CampaignOutcome, HarnessError> {
    run_campaign_with(plans, store, |_| {})
}

/// Runs the plans in order, skipping steps already in the journal.
///
/// Stops after a step whose target still holds predicted cells and has not
/// been corrected; calling again once corrections are imported resumes with
/// the next step. A journaled step whose plan differs from the one given is
/// a discontinuity.
pub fn run_campaign_with(
    plans: &[StepPlan],
    store: &Store,
    mut progress: impl FnMut(&StepProgress),
) -> Result<CampaignOutcome, HarnessError> {
    check_continuity(plans)?;
    let mut records = Vec::new();
    let mut awaiting = None;
    for plan in plans {
        match store.step(plan.step)? {
            Some((journaled, _)) if journaled != *plan => {
                return Err(HarnessError::PlanDiscontinuity(format!(
                    "step {} was run with a different plan",
                    plan.step
                )))
            }
            Some(_) => {}
            None => {
                run_annotation_step_with(plan, store, &mut progress)?;
            }
        }
        let (_, record) = store.step(plan.step)?.expect("step is journaled");
        records.push(record);
        let pending = matches!(
            store.block_state(plan.target)?,
            BlockState::AwaitingCorrections { .. }
        ) && store
            .block(plan.target)?
            .sentences
            .iter()
            .flat_map(|s| &s.tokens)
            .any(|t| t.cells().any(|(_, c)| c.status() == CellStatus::Predicted));
        if pending {
            awaiting = Some(plan.target);
            break;
        }
    }
    store.write_campaign_report(&accounting_table(&records))?;
    let complete = awaiting.is_none();
    Ok(CampaignOutcome {
        records,
        awaiting,
        complete,
    })
}

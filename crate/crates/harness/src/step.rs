use std::collections::BTreeMap;

use cascade_core::corpus::{parse_corpus, validate_corpus};
use cascade_core::dataset::{concat_corpora, encode_sentence, VocabSet};
use cascade_core::{AnnotatedToken, Cell, CellStatus, Corpus, CorpusBlock, Genre, Level, Sentence};
use cascade_nn::{checkpoint, predict_sentences, train, Cascade, Control, SentencePrediction};

use crate::campaign::accounting_table;
use crate::eval::evaluate;
use crate::plan::{checkpoint_id, StepPlan, StepRecord, Strategy, TrainTokens};
use crate::store::{JournalEntry, Store};
use crate::HarnessError;

/// Reported after every training epoch of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProgress {
    pub step: usize,
    pub epoch: usize,
    pub epochs: usize,
    pub train_loss: f64,
}

pub fn run_annotation_step(plan: &StepPlan, store: &Store) -> Result<StepRecord, HarnessError> {
    run_annotation_step_with(plan, store, |_| {})
}

/// Trains the step's model, annotates the target block and journals the
/// outcome. Gold cells of the target are never touched; the raw model output
/// is kept next to the block.
pub fn run_annotation_step_with(
    plan: &StepPlan,
    store: &Store,
    progress: impl FnMut(&StepProgress),
) -> Result<StepRecord, HarnessError> {
    train_step(plan, store, progress)?.commit(store)
}

/// A step whose model is trained but whose results are not yet in the store.
pub struct TrainedStep {
    plan: StepPlan,
    model: Cascade,
    train_tokens: TrainTokens,
    best_epoch: usize,
    epochs: usize,
}

/// First half of a step: assembles the training data and trains. Only reads
/// the store.
pub fn train_step(
    plan: &StepPlan,
    store: &Store,
    mut progress: impl FnMut(&StepProgress),
) -> Result<TrainedStep, HarnessError> {
    plan.validate()?;
    store.block(plan.target)?;
    let mut primary = Vec::new();
    for &i in &plan.annotated {
        let block = store.block(i)?;
        require_gold(&block)?;
        primary.extend(block.sentences);
    }
    let primary = Corpus::new(primary);
    let aux = match &plan.aux {
        Some(path) => parse_corpus(&std::fs::read_to_string(path)?)?,
        None => Corpus::default(),
    };
    let train_tokens = TrainTokens {
        total: aux.token_count() + primary.token_count(),
        primary: primary.token_count(),
    };

    let (mut model, corpus) = match plan.strategy {
        Strategy::Concat => {
            let corpus = concat_corpora(&aux, &primary)?;
            let config = plan.model_config();
            let vocabs = VocabSet::build(&corpus, config.input_mode, &config.order);
            (Cascade::new(config, vocabs)?, corpus)
        }
        Strategy::Reloaded => {
            let (model, _) = checkpoint::load(&store.checkpoint_path(&plan.pretrained_id()))?;
            if model.config.input_mode != plan.input_mode {
                return Err(HarnessError::InvalidPlan(format!(
                    "step {}: pretrained model reads {:?} input",
                    plan.step, model.config.input_mode
                )));
            }
            (model, primary)
        }
    };
    let mode = model.config.input_mode;
    let examples = corpus
        .sentences
        .iter()
        .map(|s| encode_sentence(s, &model.vocabs, mode))
        .collect::<Result<Vec<_>, _>>()?;
    let epochs = plan.schedule.epochs;
    let log = train(&mut model, &examples, &[], &plan.schedule, |r, _| {
        progress(&StepProgress {
            step: plan.step,
            epoch: r.epoch,
            epochs,
            train_loss: r.train.global,
        });
        Control::Continue
    })?;
    Ok(TrainedStep {
        plan: plan.clone(),
        model,
        train_tokens,
        best_epoch: log.best_epoch,
        epochs: log.epochs.len().saturating_sub(1),
    })
}

impl TrainedStep {
    pub fn model(&self) -> &Cascade {
        &self.model
    }

    /// Second half of a step: saves the checkpoint, annotates the target as
    /// it is now in the store and journals the record.
    pub fn commit(self, store: &Store) -> Result<StepRecord, HarnessError> {
        let plan = &self.plan;
        let checkpoint = checkpoint_id(plan.step);
        let meta = BTreeMap::from([
            ("step".to_string(), plan.step.to_string()),
            ("strategy".to_string(), plan.strategy.to_string()),
        ]);
        checkpoint::save(&self.model, &meta, &store.checkpoint_path(&checkpoint))?;

        let mut target = store.block(plan.target)?;
        let predictions =
            predict_sentences(&self.model, &target.sentences, plan.schedule.batch_size)?;
        let reference = gold_only(&target);
        let has_reference = reference
            .sentences
            .iter()
            .flat_map(|s| &s.tokens)
            .any(|t| t.cells().any(|(_, c)| c.is_gold()));
        let snapshot = prediction_block(&target, &predictions);
        write_predictions(&mut target, &predictions);
        store.write_predictions(&snapshot)?;
        store.write_block(&target)?;

        let record = StepRecord {
            step: plan.step,
            target: plan.target,
            strategy: plan.strategy,
            train_tokens: self.train_tokens,
            checkpoint,
            best_epoch: self.best_epoch,
            epochs: self.epochs,
            eval: if has_reference {
                Some(evaluate(&snapshot, &reference)?)
            } else {
                None
            },
        };
        store.append(&JournalEntry::Annotated {
            plan: plan.clone(),
            record: record.clone(),
        })?;
        store.write_report(
            record.step,
            &accounting_table(std::slice::from_ref(&record)),
        )?;
        Ok(record)
    }
}

/// Every training cell must be gold: predicted cells mean the block still
/// awaits review, and a block with no gold at all has nothing to teach.
fn require_gold(block: &CorpusBlock) -> Result<(), HarnessError> {
    let mut any_gold = false;
    for s in &block.sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            for (level, cell) in t.cells() {
                match cell.status() {
                    CellStatus::Predicted => {
                        return Err(HarnessError::MissingGold {
                            block: block.index,
                            sentence: s.id.clone(),
                            token: i,
                            level,
                        })
                    }
                    CellStatus::Gold => any_gold = true,
                    CellStatus::Empty => {}
                }
            }
        }
    }
    match block.sentences.first() {
        Some(s) if !any_gold => Err(HarnessError::MissingGold {
            block: block.index,
            sentence: s.id.clone(),
            token: 0,
            level: Level::Class,
        }),
        _ => Ok(()),
    }
}

fn gold_only(block: &CorpusBlock) -> CorpusBlock {
    let mut out = block.clone();
    for t in out.sentences.iter_mut().flat_map(|s| &mut s.tokens) {
        for level in Level::ALL {
            if !t.cell(level).is_gold() {
                t.set(level, Cell::Empty)
                    .expect("empty cells are always valid");
            }
        }
    }
    out
}

fn set_predicted(token: &mut AnnotatedToken, level: Level, value: Option<&str>) {
    let cell = value.map_or(Cell::Empty, Cell::predicted);
    if token.set(level, cell).is_err() {
        token
            .set(level, Cell::Empty)
            .expect("empty cells are always valid");
    }
}

/// The block as the model alone would annotate it: predicted cells for every
/// task, other cells copied.
fn prediction_block(block: &CorpusBlock, predictions: &[SentencePrediction]) -> CorpusBlock {
    let mut out = block.clone();
    for (s, p) in out.sentences.iter_mut().zip(predictions) {
        s.align_err = p.align_err;
        for (task, values) in &p.values {
            for (t, v) in s.tokens.iter_mut().zip(values) {
                set_predicted(t, task.level(), v.as_deref());
            }
        }
    }
    repair_predictions(&mut out);
    out
}

fn write_predictions(block: &mut CorpusBlock, predictions: &[SentencePrediction]) {
    for (s, p) in block.sentences.iter_mut().zip(predictions) {
        // the flag only matters where predictions land
        s.align_err = p.align_err
            && s.tokens
                .iter()
                .any(|t| t.cells().any(|(_, c)| !c.is_gold()));
        for (task, values) in &p.values {
            for (t, v) in s.tokens.iter_mut().zip(values) {
                if !t.cell(task.level()).is_gold() {
                    set_predicted(t, task.level(), v.as_deref());
                }
            }
        }
    }
    repair_predictions(block);
}

/// Makes predicted cells respect the corpus invariants.
///
/// A foreign or emotag class puts the sentinel on every non-gold downstream
/// cell. After that, a predicted cell involved in a violation is emptied; if
/// the violation only involves gold cells, a predicted class is emptied
/// instead. Gold cells are never changed.
pub fn repair_predictions(block: &mut CorpusBlock) {
    for t in block.sentences.iter_mut().flat_map(|s| &mut s.tokens) {
        if let Some(sentinel) = t.class().and_then(|c| c.sentinel()) {
            for level in Level::DOWNSTREAM {
                if !t.cell(level).is_gold() {
                    t.set(level, Cell::predicted(sentinel))
                        .expect("sentinels are valid values");
                }
            }
        }
        loop {
            let probe = Corpus::new(vec![Sentence::new("t", Genre::Forum, vec![t.clone()])]);
            let violations = validate_corpus(&probe).violations;
            if violations.is_empty() {
                break;
            }
            let mut changed = false;
            for v in &violations {
                if let Some(level) = v.level {
                    if t.cell(level).status() == CellStatus::Predicted {
                        t.set(level, Cell::Empty)
                            .expect("empty cells are always valid");
                        changed = true;
                    }
                }
            }
            if !changed && t.cell(Level::Class).status() == CellStatus::Predicted {
                t.set(Level::Class, Cell::Empty)
                    .expect("empty cells are always valid");
                changed = true;
            }
            if !changed {
                break;
            }
        }
    }
}

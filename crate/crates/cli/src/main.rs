use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cascade_cli::service::{self, AppState, TOKEN_VAR};
use cascade_cli::{Config, ConfigError};
use cascade_core::corpus::{
    compute_stats, parse_corpus, serialize_corpus, validate_corpus, CorpusError, Violation,
};
use cascade_core::dataset::{
    encode_sentence, make_splits, split_blocks, write_manifest, BlockError, EncodeError,
    SplitError, SplitMode, SplitSpec, Task, VocabSet,
};
use cascade_core::{Corpus, CorpusBlock};
use cascade_harness::{
    accounting_table, apply_edits, evaluate, import_corrections, run_annotation_step_with,
    run_campaign_with, BlockDocument, CellEdit, HarnessError, MergeSummary, StepProgress, Store,
};
use cascade_nn::{checkpoint, train, Cascade, CheckpointError, Control, ModelError, TrainError};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "cascade",
    version,
    about = "Multi-level annotation of Arabizi text with a cascaded seq2seq model"
)]
struct Cli {
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Annotation store directory.
    #[arg(long, global = true, value_name = "DIR")]
    store: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum StatsFormat {
    #[default]
    Table,
    Tsv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Global,
    Genre,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sentence and word counts, total and per genre.
    Stats {
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: StatsFormat,
    },
    /// Checks a corpus file; exits 1 on the first violation.
    Validate { corpus: PathBuf },
    /// Splits a corpus into train/dev/test and writes the manifests.
    Split {
        corpus: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, num_args = 3, value_names = ["TRAIN", "DEV", "TEST"])]
        ratios: Option<Vec<f64>>,
        /// Directory for `{train,dev,test}.ids` and `.tsv`; manifests go to
        /// stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cuts a corpus into annotation blocks and creates the store, or lists
    /// the store's blocks when no corpus is given.
    Blocks {
        corpus: Option<PathBuf>,
        /// Tokens per block.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Trains a model on a gold corpus and writes a checkpoint.
    Train {
        /// Gold training corpus.
        corpus: PathBuf,
        /// Corpus used for model selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Runs one configured annotation step on the store.
    Annotate {
        #[arg(long)]
        step: usize,
    },
    /// Per-task accuracy of a predicted corpus against a reference.
    Evaluate {
        predictions: PathBuf,
        reference: PathBuf,
    },
    /// Drives the configured sequence of annotation steps.
    Campaign {
        #[command(subcommand)]
        action: CampaignAction,
    },
    /// Serves the store over HTTP for the correction interface.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Subcommand)]
enum CampaignAction {
    /// Runs pending steps until one waits for corrections.
    Run,
    /// Merges a corrected block (TSV corpus or JSON document) into the store.
    Import { block: usize, file: PathBuf },
    /// Block states and the accounting table so far.
    Status,
}

struct Env {
    config: Config,
    store: Option<PathBuf>,
}

impl Env {
    fn store(&self) -> Result<Store> {
        let dir = self.store.as_ref().context("--store is required")?;
        Ok(Store::open(dir)?)
    }
}

fn read_corpus(path: &Path) -> Result<Corpus> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(parse_corpus(&text)?)
}

fn progress(p: &StepProgress) {
    eprintln!(
        "step {} epoch {}/{} loss {:.4}",
        p.step, p.epoch, p.epochs, p.train_loss
    );
}

fn run(cli: Cli, out: &mut String) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    let ctx = Env {
        config,
        store: cli.store,
    };
    match cli.command {
        Command::Stats { corpus, format } => {
            let stats = compute_stats(&read_corpus(&corpus)?);
            match format {
                StatsFormat::Table => write!(out, "{stats}")?,
                StatsFormat::Tsv => out.push_str(&stats.to_tsv()),
                StatsFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&stats)?)?,
            }
        }
        Command::Validate { corpus } => {
            let corpus = read_corpus(&corpus)?;
            let report = validate_corpus(&corpus);
            writeln!(
                out,
                "ok\t{}\t{}",
                corpus.sentences.len(),
                corpus.token_count()
            )?;
            for w in &report.warnings {
                writeln!(out, "warning\t{}", violation_row(w))?;
            }
        }
        Command::Split {
            corpus,
            mode,
            ratios,
            out: dir,
        } => {
            let corpus = read_corpus(&corpus)?;
            let mut spec: SplitSpec = ctx.config.split;
            if let Some(m) = mode {
                spec.mode = match m {
                    ModeArg::Global => SplitMode::Global,
                    ModeArg::Genre => SplitMode::Genre,
                };
            }
            if let Some(r) = ratios {
                spec.ratios = [r[0], r[1], r[2]];
            }
            let splits = make_splits(&corpus, &spec)?;
            match dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    writeln!(out, "part\tsentences\ttokens")?;
                    for (name, part) in splits.parts() {
                        std::fs::write(dir.join(format!("{name}.ids")), write_manifest(part))?;
                        std::fs::write(dir.join(format!("{name}.tsv")), serialize_corpus(part))?;
                        writeln!(
                            out,
                            "{name}\t{}\t{}",
                            part.sentences.len(),
                            part.token_count()
                        )?;
                    }
                }
                None => {
                    for (name, part) in splits.parts() {
                        for id in write_manifest(part).lines() {
                            writeln!(out, "{name}\t{id}")?;
                        }
                    }
                }
            }
        }
        Command::Blocks {
            corpus: Some(corpus),
            target,
        } => {
            let corpus = read_corpus(&corpus)?;
            let blocks = split_blocks(&corpus, target.unwrap_or(ctx.config.block_tokens))?;
            if let Some(dir) = &ctx.store {
                Store::create(dir, &blocks)?;
            }
            writeln!(out, "block\tsentences\ttokens\tfirst\tlast")?;
            for b in &blocks {
                let id = |s: Option<&cascade_core::Sentence>| {
                    s.map_or("-", |s| s.id.as_str()).to_string()
                };
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    b.index,
                    b.sentences.len(),
                    b.token_count(),
                    id(b.sentences.first()),
                    id(b.sentences.last())
                )?;
            }
        }
        Command::Blocks { corpus: None, .. } => {
            let store = ctx.store()?;
            out.push_str(&block_table(&store)?);
        }
        Command::Train {
            corpus,
            dev,
            out: path,
            epochs,
        } => {
            let corpus = read_corpus(&corpus)?;
            let dev = dev
                .as_deref()
                .map(read_corpus)
                .transpose()?
                .unwrap_or_default();
            let mut schedule = ctx.config.train.clone();
            if let Some(e) = epochs {
                schedule.epochs = e;
            }
            let model_config = ctx.config.model.clone();
            let vocabs = VocabSet::build(&corpus, model_config.input_mode, &model_config.order);
            let mut model = Cascade::new(model_config, vocabs)?;
            let mode = model.config.input_mode;
            let encode = |c: &Corpus| {
                c.sentences
                    .iter()
                    .map(|s| encode_sentence(s, &model.vocabs, mode))
                    .collect::<Result<Vec<_>, _>>()
            };
            let (train_set, dev_set) = (encode(&corpus)?, encode(&dev)?);
            eprintln!("{} parameters", model.params.count());
            let log = train(&mut model, &train_set, &dev_set, &schedule, |r, _| {
                eprintln!("epoch {} train {:.4}", r.epoch, r.train.global);
                Control::Continue
            })?;
            checkpoint::save(&model, &Default::default(), &path)?;
            out.push_str(&log.to_tsv(model.tasks()));
        }
        Command::Annotate { step } => {
            let plan = ctx
                .config
                .plan(step)
                .with_context(|| format!("no plan for step {step} in the config"))?;
            let store = ctx.store()?;
            let record = run_annotation_step_with(plan, &store, progress)?;
            out.push_str(&accounting_table(&[record]));
        }
        Command::Evaluate {
            predictions,
            reference,
        } => {
            let p = CorpusBlock {
                index: 0,
                sentences: read_corpus(&predictions)?.sentences,
            };
            let r = CorpusBlock {
                index: 0,
                sentences: read_corpus(&reference)?.sentences,
            };
            let report = evaluate(&p, &r)?;
            writeln!(out, "task\tcorrect\tevaluated\taccuracy")?;
            for task in Task::ALL {
                let s = report.tasks.get(&task).copied().unwrap_or_default();
                writeln!(
                    out,
                    "{task}\t{}\t{}\t{}",
                    s.correct,
                    s.evaluated,
                    report.display(task)
                )?;
            }
            writeln!(out, "tokens\t{}", report.tokens)?;
            writeln!(out, "align_err\t{}", report.align_err)?;
        }
        Command::Campaign { action } => {
            let store = ctx.store()?;
            match action {
                CampaignAction::Run => {
                    if ctx.config.plans.is_empty() {
                        bail!("the config has no [[plan]] entries");
                    }
                    let outcome = run_campaign_with(&ctx.config.plans, &store, progress)?;
                    out.push_str(&accounting_table(&outcome.records));
                    match outcome.awaiting {
                        Some(b) => eprintln!("waiting for corrections to block {b}"),
                        None => eprintln!("campaign complete"),
                    }
                }
                CampaignAction::Import { block, file } => {
                    let corrected = read_correction(&store, block, &file)?;
                    let summary = import_corrections(block, &corrected, &store)?;
                    out.push_str(&summary_table(&summary));
                }
                CampaignAction::Status => {
                    out.push_str(&block_table(&store)?);
                    out.push('\n');
                    out.push_str(&accounting_table(&store.records()?));
                }
            }
        }
        Command::Serve { addr } => {
            let store = ctx.store()?;
            let token = std::env::var(TOKEN_VAR).ok().filter(|t| !t.is_empty());
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                service::serve(listener, AppState::new(store, ctx.config, token)).await
            })?;
        }
    }
    Ok(())
}

fn violation_row(v: &Violation) -> String {
    let token = v.token.map_or("-".to_string(), |t| t.to_string());
    let level = v.level.map_or("-".to_string(), |l| l.to_string());
    format!(
        "{}\t{}\t{token}\t{level}\t{}",
        v.rule.name(),
        v.sentence,
        v.detail
    )
}

fn block_table(store: &Store) -> Result<String> {
    let mut out = String::from("block\tsentences\ttokens\tstate\tgold\tpredicted\tempty\n");
    for i in store.block_indices()? {
        let block = store.block(i)?;
        let state = serde_json::to_value(store.block_state(i)?)?;
        let (mut gold, mut predicted, mut empty) = (0, 0, 0);
        for (_, s) in block.status_summary() {
            gold += s.gold;
            predicted += s.predicted;
            empty += s.empty;
        }
        writeln!(
            out,
            "{i}\t{}\t{}\t{}\t{gold}\t{predicted}\t{empty}",
            block.sentences.len(),
            block.token_count(),
            state["state"].as_str().unwrap_or("-")
        )?;
    }
    Ok(out)
}

fn summary_table(summary: &MergeSummary) -> String {
    let mut out = String::from("task\tchanged\n");
    for (task, n) in &summary.changed {
        let _ = writeln!(out, "{task}\t{n}");
    }
    let _ = writeln!(out, "total\t{}", summary.total);
    out
}

/// A `.json` file holds a block document or `{"edits": [...]}`; anything
/// else is read as a TSV corpus.
fn read_correction(store: &Store, block: usize, path: &Path) -> Result<CorpusBlock> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text)?;
        if value.get("edits").is_some() {
            #[derive(Deserialize)]
            struct Edits {
                edits: Vec<CellEdit>,
            }
            let edits: Edits = serde_json::from_value(value)?;
            return Ok(apply_edits(&store.block(block)?, &edits.edits)?);
        }
        let doc: BlockDocument = serde_json::from_value(value)?;
        return Ok(doc.to_block()?);
    }
    Ok(CorpusBlock {
        index: block,
        sentences: parse_corpus(&text)?.sentences,
    })
}

/// Error code of the first recognized error in the chain.
fn error_code(err: &anyhow::Error) -> Option<&'static str> {
    err.chain().find_map(|e| {
        if let Some(e) = e.downcast_ref::<HarnessError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<CorpusError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<ConfigError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<BlockError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<TrainError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<CheckpointError>() {
            Some(e.code())
        } else if let Some(e) = e.downcast_ref::<EncodeError>() {
            Some(e.code())
        } else if e.is::<SplitError>() {
            Some("INVALID_SPLIT")
        } else if e.is::<ModelError>() {
            Some("INVALID_CONFIG")
        } else {
            None
        }
    })
}

/// Prints the clap error, then the full help of the subcommand it concerns.
fn usage_error(err: clap::Error) -> ExitCode {
    use clap::error::ErrorKind;
    if matches!(
        err.kind(),
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
    ) {
        let _ = err.print();
        return ExitCode::SUCCESS;
    }
    let _ = err.print();
    let mut cmd = Cli::command();
    cmd.build();
    let names: Vec<String> = cmd
        .get_subcommands()
        .map(|c| c.get_name().to_string())
        .collect();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let help = match args.iter().position(|a| names.contains(a)) {
        Some(i) => {
            let sub = cmd.find_subcommand_mut(&args[i]).expect("known subcommand");
            match args
                .get(i + 1)
                .and_then(|a| sub.find_subcommand(a).map(|_| a.clone()))
            {
                Some(nested) => sub
                    .find_subcommand_mut(&nested)
                    .expect("known subcommand")
                    .render_help(),
                None => sub.render_help(),
            }
        }
        None => cmd.render_help(),
    };
    eprintln!("\n{help}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let mut out = String::new();
    match run(cli, &mut out) {
        Ok(()) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            print!("{out}");
            match error_code(&err) {
                Some(code) => eprintln!("error: {code}: {err:#}"),
                None => eprintln!("error: {err:#}"),
            }
            if let Some(loc) = err
                .chain()
                .find_map(|e| e.downcast_ref::<HarnessError>())
                .and_then(HarnessError::loc)
            {
                eprintln!("at {}", serde_json::to_string(loc).unwrap_or_default());
            }
            ExitCode::from(1)
        }
    }
}

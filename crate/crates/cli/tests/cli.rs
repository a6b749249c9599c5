use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cascade_core::corpus::serialize_corpus;
use cascade_core::synthetic::{corpus_with_token_count, excerpt_sentence, table1_fixture};
use cascade_core::{AnnotatedToken, Corpus};

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .env_remove("CASCADE_TOKEN")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, corpus: &Corpus) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serialize_corpus(corpus)).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_reports_table_one_totals() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "tarc.tsv", &table1_fixture());
    let o = cascade(&["stats", &corpus]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let total = out.lines().find(|l| l.starts_with("Total")).unwrap();
    let fields: Vec<&str> = total.split_whitespace().collect();
    assert_eq!(fields, ["Total", "4,797", "43,327", "9.0"]);
    assert!(out
        .lines()
        .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["forum", "755", "11,909", "15.8"]));

    let tsv = stdout(&cascade(&["stats", &corpus, "--format", "tsv"]));
    assert_eq!(tsv.lines().nth(1), Some("total\t4797\t43327\t9.0"));
    let json: serde_json::Value =
        serde_json::from_str(&stdout(&cascade(&["stats", &corpus, "--format", "json"]))).unwrap();
    assert_eq!(json["total"]["words"], 43_327);
}

#[test]
fn split_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.tsv", &corpus_with_token_count(2_000, 4));
    let args = [
        "split",
        corpus.as_str(),
        "--mode",
        "genre",
        "--ratios",
        "0.7",
        "0.15",
        "0.15",
        "--seed",
        "1",
    ];
    let a = cascade(&args);
    let b = cascade(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert!(out.lines().all(|l| ["train\t", "dev\t", "test\t"]
        .iter()
        .any(|p| l.starts_with(p))));

    let other = cascade(&["split", &corpus, "--seed", "2"]);
    assert_ne!(a.stdout, other.stdout);

    let (d1, d2) = (dir.path().join("s1"), dir.path().join("s2"));
    for d in [&d1, &d2] {
        let o = cascade(&["split", &corpus, "--seed", "1", "--out", s(d)]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in [
        "train.ids",
        "dev.ids",
        "test.ids",
        "train.tsv",
        "dev.tsv",
        "test.tsv",
    ] {
        assert_eq!(
            std::fs::read(d1.join(f)).unwrap(),
            std::fs::read(d2.join(f)).unwrap(),
            "{f}"
        );
    }
    let ids: usize = ["train.ids", "dev.ids", "test.ids"]
        .iter()
        .map(|f| std::fs::read_to_string(d1.join(f)).unwrap().lines().count())
        .sum();
    assert_eq!(
        ids,
        cascade_core::corpus::parse_corpus(&std::fs::read_to_string(&corpus).unwrap())
            .unwrap()
            .sentences
            .len()
    );
}

#[test]
fn bad_ratios_are_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.tsv", &corpus_with_token_count(200, 4));
    let o = cascade(&["split", &corpus, "--ratios", "0.5", "0.5", "0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("INVALID_SPLIT"));
}

#[test]
fn usage_errors_exit_two_with_help() {
    let o = cascade(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("Usage: cascade train"), "{err}");
    assert!(err.contains("Gold training corpus"), "{err}");
    assert!(o.stdout.is_empty());

    let o = cascade(&["campaign", "import"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage: cascade campaign import"));

    assert_eq!(cascade(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(cascade(&["--help"]).status.code(), Some(0));
}

#[test]
fn validate_reports_the_first_violation() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(
        dir.path(),
        "good.tsv",
        &Corpus::new(vec![excerpt_sentence("e1")]),
    );
    let o = cascade(&["validate", &good]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().next(), Some("ok\t1\t11"));

    // "ma" is foreign; give its POS cell a real tag.
    let text = std::fs::read_to_string(&good).unwrap();
    let line = text.lines().find(|l| l.starts_with("ma\t")).unwrap();
    let mut fields: Vec<&str> = line.split('\t').collect();
    fields[4] = "NOUN";
    let bad = text.replace(line, &fields.join("\t"));
    let path = dir.path().join("bad.tsv");
    std::fs::write(&path, bad).unwrap();
    let o = cascade(&["validate", s(&path)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SENTINEL_VIOLATION"), "{}", stderr(&o));

    let o = cascade(&["validate", s(&dir.path().join("missing.tsv"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn evaluate_prints_per_task_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let reference = Corpus::new(vec![excerpt_sentence("e1")]);
    let mut predicted = reference.clone();
    // Replace "ena" by a token whose values all differ.
    predicted.sentences[0].tokens[0] = {
        let mut t = AnnotatedToken::sentinel("ena", cascade_core::TokenClass::Emotag).unwrap();
        t = t
            .with(
                cascade_core::Level::Class,
                cascade_core::Cell::predicted("emotag"),
            )
            .unwrap();
        t
    };
    let r = write(dir.path(), "ref.tsv", &reference);
    let p = write(dir.path(), "pred.tsv", &predicted);
    let o = cascade(&["evaluate", &p, &r]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(
        out.lines().next(),
        Some("task\tcorrect\tevaluated\taccuracy")
    );
    assert!(out.contains("\ncl\t10\t11\t90.91\n"), "{out}");
    assert!(out.contains("tokens\t11"));

    let mut renamed = reference.clone();
    renamed.sentences[0].id = "x".into();
    let other = write(dir.path(), "other.tsv", &renamed);
    let o = cascade(&["evaluate", &other, &r]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("BLOCK_SHAPE_MISMATCH"));
}

#[test]
fn train_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write(dir.path(), "c.tsv", &corpus_with_token_count(120, 3));
    let config = dir.path().join("c.toml");
    std::fs::write(
        &config,
        "[model]\nembedding = 8\nhidden = 8\nencoder_layers = 1\n[train]\nepochs = 2\n",
    )
    .unwrap();
    let run = |name: &str| {
        let ckpt = dir.path().join(name);
        let o = cascade(&[
            "train",
            &corpus,
            "--config",
            s(&config),
            "--seed",
            "5",
            "--out",
            s(&ckpt),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (stdout(&o), std::fs::read(ckpt).unwrap())
    };
    let (log_a, ckpt_a) = run("a.ckpt");
    let (log_b, ckpt_b) = run("b.ckpt");
    assert_eq!(log_a, log_b);
    assert_eq!(ckpt_a, ckpt_b);
    assert!(log_a.starts_with("epoch\ttrain_cl"));
    assert_eq!(log_a.lines().count(), 4);
    assert!(ckpt_a.starts_with(b"CASCADE\0"));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, "[model]\nhiden = 8\n").unwrap();
    let corpus = write(dir.path(), "c.tsv", &corpus_with_token_count(50, 3));
    let o = cascade(&["stats", &corpus, "--config", s(&config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("INVALID_CONFIG"));
}

fn strip(corpus: &Corpus) -> Corpus {
    let mut out = corpus.clone();
    for s in &mut out.sentences {
        for t in &mut s.tokens {
            *t = AnnotatedToken::new(t.surface()).unwrap();
        }
    }
    out
}

struct Campaign {
    _dir: tempfile::TempDir,
    store: PathBuf,
    config: PathBuf,
    gold: PathBuf,
}

fn campaign() -> Campaign {
    let dir = tempfile::tempdir().unwrap();
    let aux = write(dir.path(), "aux.tsv", &corpus_with_token_count(150, 1));
    let gold = corpus_with_token_count(120, 2);
    let gold_path = write(dir.path(), "gold.tsv", &gold);
    let raw = write(dir.path(), "raw.tsv", &strip(&gold));
    let store = dir.path().join("store");
    let o = cascade(&["blocks", &raw, "--target", "40", "--store", s(&store)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("block\tsentences\ttokens\tfirst\tlast\n0\t"));
    let config = dir.path().join("campaign.toml");
    std::fs::write(
        &config,
        format!(
            r#"
[model]
embedding = 8
hidden = 8
encoder_layers = 1
dropout = 0.0
[train]
epochs = 1
batch_size = 8
[[plan]]
step = 0
aux = "{aux}"
target = 0
[[plan]]
step = 1
aux = "{aux}"
annotated = [0]
target = 1
"#
        ),
    )
    .unwrap();
    Campaign {
        _dir: dir,
        store,
        config,
        gold: PathBuf::from(gold_path),
    }
}

#[test]
fn campaign_runs_pauses_and_resumes() {
    let c = campaign();
    let args = |extra: &[&str]| {
        let mut v = vec!["--config", s(&c.config), "--store", s(&c.store)];
        v.extend_from_slice(extra);
        v.into_iter().map(str::to_string).collect::<Vec<_>>()
    };
    let run = |extra: &[&str]| {
        let a = args(extra);
        cascade(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let o = run(&["campaign", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("waiting for corrections to block 0"));
    let table = stdout(&o);
    assert!(table.starts_with(
        "Step\tTrain. tokens\tCl\tAr\tTk\tPOS\tLm\tTokens\tALIGN_ERR\nStep0\t150 (0)\t-"
    ));
    assert_eq!(table.lines().count(), 2);

    // Running again changes nothing while corrections are pending.
    assert_eq!(run(&["campaign", "run"]).stdout, o.stdout);

    let status = stdout(&run(&["campaign", "status"]));
    assert!(
        status
            .lines()
            .nth(1)
            .unwrap()
            .contains("\tawaiting_corrections\t"),
        "{status}"
    );

    // Import the gold sentences of block 0.
    let block0 = cascade_harness::Store::open(&c.store)
        .unwrap()
        .block(0)
        .unwrap();
    let gold =
        cascade_core::corpus::parse_corpus(&std::fs::read_to_string(&c.gold).unwrap()).unwrap();
    let corrected = Corpus::new(gold.sentences[..block0.sentences.len()].to_vec());
    let file = c.store.parent().unwrap().join("block0.tsv");
    std::fs::write(&file, serialize_corpus(&corrected)).unwrap();
    let o = run(&["campaign", "import", "0", s(&file)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.starts_with("task\tchanged\n"));
    assert!(summary.lines().last().unwrap().starts_with("total\t"));

    let o = run(&["campaign", "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 3);
    let primary = block0.token_count();
    let step1 = table.lines().nth(2).unwrap();
    assert!(
        step1.starts_with(&format!("Step1\t{} ({primary})", 150 + primary)),
        "{step1}"
    );
    let blocks = stdout(&run(&["blocks"]));
    assert!(
        blocks.lines().nth(1).unwrap().contains("\tcorrected\t"),
        "{blocks}"
    );
}

#[test]
fn campaign_output_is_reproducible() {
    let a = campaign();
    let b = campaign();
    let run = |c: &Campaign| {
        let o = cascade(&[
            "campaign",
            "run",
            "--config",
            s(&c.config),
            "--store",
            s(&c.store),
            "--seed",
            "3",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run(&a), run(&b));
    let block = |c: &Campaign| std::fs::read(c.store.join("blocks/block_000.tsv")).unwrap();
    assert_eq!(block(&a), block(&b));
}

#[test]
fn annotate_runs_one_step() {
    let c = campaign();
    let o = cascade(&[
        "annotate",
        "--step",
        "0",
        "--config",
        s(&c.config),
        "--store",
        s(&c.store),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("Step0\t150 (0)"));
    assert!(c.store.join("checkpoints/step_000.ckpt").exists());

    // Step 1 trains on block 0, which still holds predictions.
    let o = cascade(&[
        "annotate",
        "--step",
        "1",
        "--config",
        s(&c.config),
        "--store",
        s(&c.store),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("MISSING_GOLD"), "{}", stderr(&o));

    let o = cascade(&[
        "annotate",
        "--step",
        "7",
        "--config",
        s(&c.config),
        "--store",
        s(&c.store),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = cascade(&["annotate", "--step", "0", "--config", s(&c.config)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--store is required"));
}

#[test]
fn import_rejects_sentinel_violation_and_keeps_store() {
    let c = campaign();
    let o = cascade(&[
        "annotate",
        "--step",
        "0",
        "--config",
        s(&c.config),
        "--store",
        s(&c.store),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let before = std::fs::read(c.store.join("blocks/block_000.tsv")).unwrap();
    let block = cascade_harness::Store::open(&c.store)
        .unwrap()
        .block(0)
        .unwrap();
    let id = &block.sentences[0].id;
    let edits = serde_json::json!({"edits": [
        {"sentence": id, "token": 0, "level": "class", "value": "foreign"},
        {"sentence": id, "token": 0, "level": "pos", "value": "NOUN"}
    ]});
    let file = c.store.parent().unwrap().join("edits.json");
    std::fs::write(&file, edits.to_string()).unwrap();
    let o = cascade(&["campaign", "import", "0", s(&file), "--store", s(&c.store)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("SENTINEL_VIOLATION"), "{err}");
    assert!(err.contains("\"token\":0"), "{err}");
    assert_eq!(
        std::fs::read(c.store.join("blocks/block_000.tsv")).unwrap(),
        before
    );
}

use std::time::Duration;

use cascade_cli::service::{self, AppState, JobStatus};
use cascade_cli::Config;
use cascade_core::corpus::serialize_corpus;
use cascade_core::synthetic::{corpus_with_token_count, excerpt_sentence};
use cascade_core::{AnnotatedToken, Corpus, CorpusBlock};
use cascade_harness::Store;
use cascade_nn::{ModelConfig, TrainSchedule};
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    client: reqwest::Client,
    _dir: tempfile::TempDir,
    aux: String,
}

fn strip(b: &CorpusBlock) -> CorpusBlock {
    let mut out = b.clone();
    for s in &mut out.sentences {
        for t in &mut s.tokens {
            *t = AnnotatedToken::new(t.surface()).unwrap();
        }
    }
    out
}

fn tiny() -> Config {
    Config {
        model: ModelConfig {
            embedding: 8,
            hidden: 8,
            encoder_layers: 1,
            dropout: 0.0,
            ..ModelConfig::default()
        },
        train: TrainSchedule {
            epochs: 1,
            batch_size: 8,
            ..TrainSchedule::default()
        },
        ..Config::default()
    }
}

/// Block 0 is unannotated, block 1 gold, block 2 holds the excerpt sentence
/// and two more gold sentences.
async fn start(token: Option<&str>) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let aux = dir.path().join("aux.tsv");
    std::fs::write(&aux, serialize_corpus(&corpus_with_token_count(400, 1))).unwrap();
    let gold = corpus_with_token_count(80, 2);
    let excerpt = Corpus::new(
        [
            vec![excerpt_sentence("e1")],
            corpus_with_token_count(30, 3).sentences[..2].to_vec(),
        ]
        .concat(),
    );
    let blocks = [
        strip(&CorpusBlock {
            index: 0,
            sentences: gold.sentences.clone(),
        }),
        CorpusBlock {
            index: 1,
            sentences: gold.sentences,
        },
        CorpusBlock {
            index: 2,
            sentences: excerpt.sentences,
        },
    ];
    let store = Store::create(dir.path().join("store"), &blocks).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let state = AppState::new(store, tiny(), token.map(str::to_string));
    tokio::spawn(service::serve(listener, state));
    Server {
        base,
        client: reqwest::Client::new(),
        aux: aux.to_str().unwrap().to_string(),
        _dir: dir,
    }
}

impl Server {
    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn send(&self, method: reqwest::Method, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self
            .client
            .request(method, format!("{}{path}", self.base))
            .json(body)
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn put(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        self.send(reqwest::Method::PUT, path, body).await
    }

    async fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        self.send(reqwest::Method::POST, path, body).await
    }

    async fn wait(&self, id: u64) -> JobStatus {
        let mut seen = Vec::new();
        for _ in 0..6000 {
            let (status, body) = self.get(&format!("/api/jobs/{id}")).await;
            assert_eq!(status, StatusCode::OK);
            let job: JobStatus = serde_json::from_value(body).unwrap();
            if seen.last() != Some(&job.state) {
                seen.push(job.state);
            }
            if matches!(
                job.state,
                service::JobState::Done | service::JobState::Failed
            ) {
                // States only move forward.
                let order = |s: &service::JobState| *s as u8;
                assert!(
                    seen.windows(2).all(|w| order(&w[0]) < order(&w[1])),
                    "{seen:?}"
                );
                return job;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("job {id} did not finish");
    }
}

fn cell<'a>(block: &'a Value, sentence: usize, token: usize, level: &str) -> &'a Value {
    &block["sentences"][sentence]["tokens"][token]["cells"][level]
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn unknown_block_is_not_found() {
    let s = start(None).await;
    let (status, body) = s.get("/api/blocks/99").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NOT_FOUND");
    assert!(body["detail"].as_str().unwrap().contains("99"));
    let (status, body) = s.get("/api/jobs/5").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NOT_FOUND");
    let (status, _) = s.get("/api/reports/0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, body) = s.get("/api/nowhere").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "NOT_FOUND");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn listing_and_stats() {
    let s = start(None).await;
    let (status, blocks) = s.get("/api/blocks").await;
    assert_eq!(status, StatusCode::OK);
    let blocks = blocks.as_array().unwrap();
    assert_eq!(blocks.len(), 3);
    assert_eq!(blocks[0]["state"], "fresh");
    assert_eq!(blocks[0]["tokens"], 80);
    assert_eq!(blocks[0]["levels"]["pos"]["gold"], 0);
    assert_eq!(blocks[1]["levels"]["pos"]["gold"], 80);

    let (status, stats) = s.get("/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stats["blocks"], 3);
    assert_eq!(stats["corpus"]["total"]["words"], stats["tokens"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn excerpt_block_shows_sentinels() {
    let s = start(None).await;
    let (status, block) = s.get("/api/blocks/2").await;
    assert_eq!(status, StatusCode::OK);
    let ma = &block["sentences"][0]["tokens"][2];
    assert_eq!(ma["surface"], "ma");
    assert_eq!(
        ma["cells"]["class"],
        json!({"value": "foreign", "status": "gold"})
    );
    let sentinels = ["coda", "tokenization", "pos", "lemma"]
        .iter()
        .filter(|l| ma["cells"][**l]["value"] == "foreign")
        .count();
    assert_eq!(sentinels, 4);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn resubmitting_a_block_changes_nothing() {
    let s = start(None).await;
    let (_, block) = s.get("/api/blocks/2").await;
    assert_eq!(block["sentences"].as_array().unwrap().len(), 3);
    let (status, summary) = s.put("/api/blocks/2/corrections", &block).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    assert_eq!(summary["total"], 0);
    let (status, summary) = s
        .put("/api/blocks/2/corrections", &json!({"edits": []}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["total"], 0);
    let (_, after) = s.get("/api/blocks/2").await;
    assert_eq!(after["sentences"], block["sentences"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn corrections_after_a_training_job() {
    let s = start(None).await;
    let plan = json!({"step": 0, "aux": s.aux, "target": 0});
    let (status, job) = s.post("/api/train", &plan).await;
    assert_eq!(status, StatusCode::ACCEPTED, "{job}");
    assert_eq!(job["state"], "QUEUED");
    assert_eq!(job["kind"], "TRAIN");
    let done = s.wait(job["id"].as_u64().unwrap()).await;
    assert_eq!(done.state, service::JobState::Done, "{:?}", done.error);
    let result = done.result.unwrap();
    assert_eq!(result.checkpoint, "step_000");

    // The checkpoint reference resolves through the report endpoint.
    let (status, report) = s.get(&result.report).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["record"]["checkpoint"], "step_000");
    assert!(report["table"]
        .as_str()
        .unwrap()
        .starts_with("Step\tTrain. tokens"));

    let (_, block) = s.get("/api/blocks/0").await;
    assert_eq!(block["state"], "awaiting_corrections");
    assert_eq!(block["step"], 0);
    // An untrained model may leave misaligned cells empty, never gold.
    let tokens: Vec<&Value> = block["sentences"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| s["tokens"].as_array().unwrap())
        .collect();
    let statuses: Vec<&Value> = tokens
        .iter()
        .flat_map(|t| {
            ["class", "coda", "tokenization", "pos", "lemma"].map(|l| &t["cells"][l]["status"])
        })
        .collect();
    assert!(statuses.iter().all(|s| *s != "gold"));
    assert!(statuses.iter().any(|s| *s == "predicted"));

    // One POS edit.
    let id = block["sentences"][0]["id"].clone();
    let before = cell(&block, 0, 0, "pos")["value"]
        .as_str()
        .unwrap_or("")
        .to_string();
    let value = if before == "NOUN" { "VERB" } else { "NOUN" };
    let edit = json!({"edits": [{"sentence": id, "token": 0, "level": "pos", "value": value}]});
    let (status, summary) = s.put("/api/blocks/0/corrections", &edit).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    assert_eq!(summary["total"], 1);
    assert_eq!(summary["changed"]["pos"], 1);
    let (_, after) = s.get("/api/blocks/0").await;
    assert_eq!(
        cell(&after, 0, 0, "pos"),
        &json!({"value": value, "status": "gold"})
    );
    assert_eq!(after["state"], "corrected");

    // A sentinel violation is rejected with its coordinates and changes nothing.
    let bad = json!({"edits": [
        {"sentence": id, "token": 1, "level": "class", "value": "foreign"},
        {"sentence": id, "token": 1, "level": "pos", "value": "NOUN"},
    ]});
    let (status, err) = s.put("/api/blocks/0/corrections", &bad).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "SENTINEL_VIOLATION");
    assert_eq!(err["loc"]["block"], 0);
    assert_eq!(err["loc"]["sentence"], id);
    assert_eq!(err["loc"]["token"], 1);
    let (_, unchanged) = s.get("/api/blocks/0").await;
    assert_eq!(unchanged, after);

    // Shape mismatches are reported the same way.
    let mut doc = after.clone();
    doc["sentences"][0]["tokens"].as_array_mut().unwrap().pop();
    let (status, err) = s.put("/api/blocks/0/corrections", &doc).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "BLOCK_SHAPE_MISMATCH");
    let (status, err) = s.put("/api/blocks/1/corrections", &after).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "BLOCK_SHAPE_MISMATCH");
    let (_, unchanged) = s.get("/api/blocks/0").await;
    assert_eq!(unchanged, after);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn one_training_job_at_a_time() {
    let s = start(None).await;
    let long =
        json!({"step": 0, "aux": s.aux, "target": 0, "schedule": {"epochs": 40, "batch_size": 4}});
    let (status, first) = s.post("/api/train", &long).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let (status, err) = s.post("/api/train", &long).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], "BUSY");

    // Reads and corrections are served while the job trains.
    let (status, job) = s.get(&format!("/api/jobs/{}", first["id"])).await;
    assert_eq!(status, StatusCode::OK);
    assert_ne!(job["state"], "DONE");
    let (status, _) = s
        .put("/api/blocks/2/corrections", &json!({"edits": []}))
        .await;
    assert_eq!(status, StatusCode::OK);

    let done = s.wait(first["id"].as_u64().unwrap()).await;
    assert_eq!(done.state, service::JobState::Done);
    assert_eq!(done.progress.epochs, 40);

    // A failing job ends FAILED and frees the trainer.
    let (status, job) = s
        .post(
            "/api/train",
            &json!({"step": 1, "annotated": [0], "target": 1}),
        )
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let failed = s.wait(job["id"].as_u64().unwrap()).await;
    assert_eq!(failed.state, service::JobState::Failed);
    assert_eq!(failed.error.unwrap().error, "MISSING_GOLD");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn malformed_requests() {
    let s = start(None).await;
    let (status, err) = s
        .post("/api/train", &json!({"step": 0, "target": 0, "bogus": 1}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["error"], "BAD_REQUEST");
    let (status, err) = s.post("/api/train", &json!({"step": 0, "target": 0})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["error"], "INVALID_PLAN");
    let r = s
        .client
        .put(format!("{}/api/blocks/0/corrections", s.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let (status, _) = s.get("/api/blocks/abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn bearer_token_is_enforced() {
    let s = start(Some("sesame")).await;
    let (status, err) = s.get("/api/blocks").await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(err["error"], "UNAUTHORIZED");
    let r = s
        .client
        .get(format!("{}/api/blocks", s.base))
        .bearer_auth("sesame")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let r = s
        .client
        .get(format!("{}/api/blocks", s.base))
        .bearer_auth("wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
}

use std::collections::BTreeMap;

use cascade_core::dataset::{encode_sentence, EncodedExample, InputMode, Task, VocabSet, EOS, PAD};
use cascade_core::synthetic::{excerpt_sentence, overfit_corpus};
use cascade_core::Corpus;
use cascade_nn::checkpoint;
use cascade_nn::graph::Graph;
use cascade_nn::*;

fn data(n: usize, seed: u64, mode: InputMode) -> (Corpus, VocabSet, Vec<EncodedExample>) {
    let corpus = overfit_corpus(n, seed);
    let tasks: Vec<Task> = Task::ALL
        .into_iter()
        .filter(|t| !(mode == InputMode::Ar && *t == Task::Ar))
        .collect();
    let vocabs = VocabSet::build(&corpus, mode, &tasks);
    let ex = corpus
        .sentences
        .iter()
        .map(|s| encode_sentence(s, &vocabs, mode).unwrap())
        .collect();
    (corpus, vocabs, ex)
}

fn tiny(backbone: Backbone) -> (Cascade, Vec<EncodedExample>) {
    let (_, vocabs, ex) = data(4, 3, InputMode::Arabizi);
    (
        Cascade::new(ModelConfig::tiny(backbone), vocabs).unwrap(),
        ex,
    )
}

#[test]
fn distributions_and_lengths() {
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let (m, ex) = tiny(backbone);
        for mode in [DecodeMode::TeacherForced, DecodeMode::Free] {
            for out in m.forward_batch(&ex.iter().collect::<Vec<_>>(), mode) {
                assert_eq!(out.tasks.len(), 5);
                for t in &out.tasks {
                    assert_eq!(t.hidden.rows(), t.distributions.rows());
                    assert_eq!(t.predicted.len(), t.distributions.rows());
                    for r in 0..t.distributions.rows() {
                        let row = t.distributions.row(r);
                        assert!(row.iter().all(|p| *p >= 0.0));
                        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    }
                }
            }
        }
    }
}

#[test]
fn batching_matches_single_examples() {
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let (m, ex) = tiny(backbone);
        let batched = m.forward_batch(&ex.iter().collect::<Vec<_>>(), DecodeMode::TeacherForced);
        for (e, b) in ex.iter().zip(&batched) {
            let single = m.forward_cascade(e, DecodeMode::TeacherForced);
            for (x, y) in single.tasks.iter().zip(&b.tasks) {
                assert_eq!(x.predicted, y.predicted);
                for (p, q) in x.distributions.data().iter().zip(y.distributions.data()) {
                    assert!((p - q).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn single_token_class_output() {
    let (corpus, vocabs, _) = data(6, 1, InputMode::Arabizi);
    let mut s = corpus.sentences[0].clone();
    s.tokens.truncate(1);
    let ex = encode_sentence(&s, &vocabs, InputMode::Arabizi).unwrap();
    let m = Cascade::new(ModelConfig::tiny(Backbone::Recurrent), vocabs).unwrap();
    let out = m.forward_cascade(&ex, DecodeMode::TeacherForced);
    // one tag unit, then the EOS position
    assert_eq!(out.task(Task::Cl).unwrap().distributions.rows(), 2);
    assert_eq!(ex.targets[&Task::Cl][2], EOS);
}

#[test]
fn ar_input_drops_ar_output() {
    let (_, vocabs, ex) = data(4, 2, InputMode::Ar);
    let m = Cascade::new(
        ModelConfig {
            dropout: 0.0,
            ..ModelConfig::for_input(InputMode::Ar)
        },
        vocabs,
    )
    .unwrap();
    let out = m.forward_cascade(&ex[0], DecodeMode::TeacherForced);
    assert_eq!(out.tasks.len(), 4);
    assert!(out.task(Task::Ar).is_none());
}

#[test]
fn free_decoding_respects_length_cap() {
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let (m, ex) = tiny(backbone);
        for e in &ex {
            let out = m.forward_cascade(e, DecodeMode::Free);
            for t in &out.tasks {
                assert!(t.predicted.len() <= 3 * e.input.len());
                assert_eq!(t.length_cap_hit, t.predicted.last() != Some(&EOS));
                if t.length_cap_hit {
                    assert_eq!(t.predicted.len(), 3 * e.input.len());
                }
            }
        }
    }
}

#[test]
fn appending_pad_changes_no_loss() {
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let (m, ex) = tiny(backbone);
        for e in &ex {
            let base =
                compute_global_loss(&m.forward_cascade(e, DecodeMode::TeacherForced), &e.targets);
            let mut padded = e.clone();
            for (i, seq) in padded.targets.values_mut().enumerate() {
                seq.extend(std::iter::repeat_n(PAD, i + 1));
            }
            let out = m.forward_cascade(&padded, DecodeMode::TeacherForced);
            let after = compute_global_loss(&out, &padded.targets);
            assert_eq!(base, after);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let (mut m, ex) = tiny(backbone);
        assert!(m.parameter_count() <= 5000, "{}", m.parameter_count());
        let r = check_gradients(&mut m, &ex[..2], 1e-4, 200, 5);
        assert!(r.coordinates >= 200);
        assert_eq!(r.groups_covered, m.params.len());
        assert!(r.max_relative_error < 1e-3, "{backbone:?}: {}", r.worst);
    }
}

#[test]
fn linear_layer_closed_form_gradient() {
    let mut store = ParamStore::default();
    let w = store.add(
        "w",
        Tensor::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()),
        ParamKind::Weight,
    );
    let x = Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]);
    let targets = vec![2, 0];
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let wv = g.param(w);
    let logits = g.matmul(xv, wv);
    let loss = g.cross_entropy(logits, targets.clone(), vec![true, true]);
    let grads = g.backward(loss);
    let got = grads.0[w.index()].as_ref().unwrap();

    let z = x.matmul(store.tensor(w));
    let mut want = Tensor::zeros(3, 4);
    for (r, &target) in targets.iter().enumerate().take(2) {
        let m = z.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.row(r).iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (c, ec) in e.iter().enumerate() {
            let d = ec / s - if c == target { 1.0 } else { 0.0 };
            for i in 0..3 {
                want.data_mut()[i * 4 + c] += x.get(r, i) * d / 2.0;
            }
        }
    }
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn balanced_targets_give_zero_gradient() {
    let mut store = ParamStore::default();
    let w = store.add(
        "w",
        Tensor::from_vec(2, 2, vec![0.3, 0.3, -0.8, -0.8]),
        ParamKind::Weight,
    );
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::from_vec(2, 2, vec![1.0, 2.0, 1.0, 2.0]));
    let wv = g.param(w);
    let logits = g.matmul(x, wv);
    let loss = g.cross_entropy(logits, vec![0, 1], vec![true, true]);
    let grads = g.backward(loss);
    assert!(grads.0[w.index()].as_ref().unwrap().sum_sq().sqrt() < 1e-12);
}

#[test]
fn token_positions_count_separators() {
    use cascade_core::dataset::{BOS, TOKSEP};
    use cascade_nn::forward::{positions, token_positions};
    // BOS a TOKSEP b b EOS, then a padded row without separators
    let ids = [BOS, 7, TOKSEP, 8, 8, EOS, BOS, 7, EOS, PAD, PAD, PAD];
    let t = token_positions(&ids, 2, 6, 4);
    let p = positions(1, 3, 4);
    let index = [0, 0, 0, 1, 1, 1, 0, 0, 0, 0, 0, 0];
    for (row, k) in index.iter().enumerate() {
        assert_eq!(t.row(row), p.row(*k), "row {row}");
    }
}

#[test]
fn argmax_ties_pick_lowest_index() {
    assert_eq!(argmax(&[0.1, 0.7, 0.7, 0.2]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

#[test]
fn parameter_counts() {
    let (_, vocabs, _) = data(10, 1, InputMode::Arabizi);
    let count = |c: ModelConfig| Cascade::new(c, vocabs.clone()).unwrap().parameter_count();
    for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
        let with = count(ModelConfig {
            backbone,
            ..ModelConfig::default()
        });
        let without = count(ModelConfig {
            backbone,
            order: vec![Task::Cl, Task::Ar, Task::Tk, Task::Pos],
            ..ModelConfig::default()
        });
        assert!(with > without);
    }
    for (enc, dec) in [(1, 1), (2, 1), (2, 2), (3, 2)] {
        let c = |backbone| ModelConfig {
            backbone,
            encoder_layers: enc,
            decoder_layers: dec,
            ..ModelConfig::default()
        };
        assert!(count(c(Backbone::SelfAttention)) > count(c(Backbone::Recurrent)));
    }
}

#[test]
fn training_lowers_loss_and_is_deterministic() {
    let (_, vocabs, ex) = data(20, 9, InputMode::Arabizi);
    let config = ModelConfig {
        embedding: 16,
        hidden: 32,
        ..ModelConfig::default()
    };
    let schedule = TrainSchedule {
        epochs: 10,
        batch_size: 5,
        patience: None,
        ..TrainSchedule::default()
    };
    let run = || {
        let mut m = Cascade::new(config.clone(), vocabs.clone()).unwrap();
        let log = train(&mut m, &ex[..15], &ex[15..], &schedule, |_, _| {
            Control::Continue
        })
        .unwrap();
        (m, log)
    };
    let (m1, log1) = run();
    let (m2, log2) = run();
    assert_eq!(log1, log2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(log1.epochs.len(), 11);
    assert!(log1.epochs[10].train.global < log1.epochs[0].train.global);
    let tsv = log1.to_tsv(m1.tasks());
    assert_eq!(tsv.lines().count(), 12);
    assert!(tsv.starts_with("epoch\ttrain_cl\t"));
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (_, vocabs, ex) = data(6, 9, InputMode::Arabizi);
    let mut m = Cascade::new(ModelConfig::tiny(Backbone::Recurrent), vocabs).unwrap();
    let before = m.params.clone();
    let schedule = TrainSchedule {
        epochs: 3,
        batch_size: 2,
        learning_rate: 0.0,
        ..TrainSchedule::default()
    };
    train(&mut m, &ex, &[], &schedule, |_, _| Control::Continue).unwrap();
    assert_eq!(m.params, before);
}

#[test]
fn scheduled_sampling_is_deterministic() {
    let (_, vocabs, ex) = data(8, 9, InputMode::Arabizi);
    let schedule = TrainSchedule {
        epochs: 2,
        batch_size: 4,
        teacher_forcing: 0.5,
        ..TrainSchedule::default()
    };
    let run = || {
        let mut m =
            Cascade::new(ModelConfig::tiny(Backbone::SelfAttention), vocabs.clone()).unwrap();
        train(&mut m, &ex, &[], &schedule, |_, _| Control::Continue).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn divergence_is_reported() {
    let (_, vocabs, ex) = data(4, 9, InputMode::Arabizi);
    let mut m = Cascade::new(ModelConfig::tiny(Backbone::Recurrent), vocabs).unwrap();
    let id = m.params.get("dec.cl.out.b").unwrap();
    m.params.tensor_mut(id).data_mut()[5] = f64::NAN;
    let schedule = TrainSchedule {
        epochs: 1,
        ..TrainSchedule::default()
    };
    let err = train(&mut m, &ex, &[], &schedule, |_, _| Control::Continue).unwrap_err();
    assert_eq!(err.code(), "DIVERGED");
    let err = train(&mut m, &[], &[], &schedule, |_, _| Control::Continue).unwrap_err();
    assert_eq!(err.code(), "EMPTY_TRAIN_SET");
}

#[test]
fn early_stopping_and_callback_stop() {
    let (_, vocabs, ex) = data(6, 9, InputMode::Arabizi);
    let mut m = Cascade::new(ModelConfig::tiny(Backbone::Recurrent), vocabs).unwrap();
    let schedule = TrainSchedule {
        epochs: 50,
        batch_size: 3,
        ..TrainSchedule::default()
    };
    let log = train(&mut m, &ex, &ex, &schedule, |r, _| {
        if r.epoch == 2 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .unwrap();
    assert!(log.stopped_early);
    assert_eq!(log.epochs.len(), 3);
}

#[test]
fn overfit_excerpt_sentence_predicts_sentinels() {
    let sentence = excerpt_sentence("x");
    let corpus = Corpus::new(vec![sentence.clone()]);
    let vocabs = VocabSet::build(&corpus, InputMode::Arabizi, &Task::ALL);
    let ex = vec![encode_sentence(&sentence, &vocabs, InputMode::Arabizi).unwrap()];
    let config = ModelConfig {
        embedding: 32,
        hidden: 64,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let mut m = Cascade::new(config, vocabs).unwrap();
    let schedule = TrainSchedule {
        epochs: 400,
        batch_size: 1,
        learning_rate: 3e-3,
        patience: None,
        ..Default::default()
    };
    let gold: BTreeMap<Task, Vec<Option<String>>> = Task::ALL
        .iter()
        .map(|&t| {
            (
                t,
                sentence
                    .tokens
                    .iter()
                    .map(|tok| tok.value(t.level()).map(str::to_string))
                    .collect(),
            )
        })
        .collect();
    train(&mut m, &ex, &[], &schedule, |r, m| {
        if r.epoch % 20 == 0 && predict_sentence(m, &sentence).unwrap().values == gold {
            return Control::Stop;
        }
        Control::Continue
    })
    .unwrap();
    let p = predict_sentence(&m, &sentence).unwrap();
    assert_eq!(sentence.tokens[2].surface(), "ma");
    assert!(!p.align_err);
    for task in Task::ALL {
        assert_eq!(p.values[&task][2].as_deref(), Some("foreign"), "{task}");
    }
}

#[test]
fn checkpoint_round_trip_and_validation() {
    let (m, _) = tiny(Backbone::SelfAttention);
    let meta = BTreeMap::from([("step".to_string(), "3".to_string())]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck/model.ckpt");
    checkpoint::save(&m, &meta, &path).unwrap();
    let (back, meta2) = checkpoint::load(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.config, m.config);
    assert_eq!(back.vocabs, m.vocabs);
    assert_eq!(meta2, meta);

    let bytes = checkpoint::to_bytes(&m, &meta);
    assert_eq!(&bytes[..8], checkpoint::MAGIC);
    assert!(matches!(
        checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
        Err(CheckpointError::Truncated)
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        checkpoint::from_bytes(&bad),
        Err(CheckpointError::BadMagic)
    ));

    // a manifest whose hidden size disagrees with the stored tensors
    let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let manifest = std::str::from_utf8(&bytes[20..20 + len]).unwrap();
    let tampered = manifest.replace("\"hidden\":6", "\"hidden\":8");
    assert_ne!(tampered, manifest);
    let mut forged = bytes[..12].to_vec();
    forged.extend_from_slice(&(tampered.len() as u64).to_le_bytes());
    forged.extend_from_slice(tampered.as_bytes());
    forged.extend_from_slice(&bytes[20 + len..]);
    let err = checkpoint::from_bytes(&forged).unwrap_err();
    assert!(matches!(err, CheckpointError::Shape { .. }), "{err}");
    assert_eq!(err.code(), "CHECKPOINT_CORRUPT");

    let missing = checkpoint::load(&dir.path().join("nope.ckpt")).unwrap_err();
    assert_eq!(missing.code(), "CHECKPOINT_NOT_FOUND");
}

#[test]
fn prediction_shapes_follow_tokens() {
    let (corpus, vocabs, _) = data(5, 4, InputMode::Arabizi);
    let m = Cascade::new(ModelConfig::tiny(Backbone::Recurrent), vocabs).unwrap();
    let preds = predict_sentences(&m, &corpus.sentences, 2).unwrap();
    for (p, s) in preds.iter().zip(&corpus.sentences) {
        assert_eq!(p.values.len(), 5);
        for v in p.values.values() {
            assert_eq!(v.len(), s.len());
        }
    }
}

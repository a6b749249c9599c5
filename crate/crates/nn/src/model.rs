//! Parameter layout of the cascade and structural introspection.

use std::collections::BTreeMap;

use cascade_core::dataset::{Task, VocabSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Backbone, ConfigError, ModelConfig};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no target vocabulary for enabled task {0}")]
    MissingVocabulary(Task),
    #[error("vocabulary input mode {vocab:?} differs from config input mode {config:?}")]
    InputMode {
        vocab: cascade_core::dataset::InputMode,
        config: cascade_core::dataset::InputMode,
    },
}

/// What an attention mechanism reads from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Encoder,
    Decoder(Task),
}

#[derive(Debug, Clone)]
pub(crate) struct Lstm {
    /// `(input + hidden) x 4*hidden`, gate order i, f, g, o.
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct SelfAttn {
    pub norm: Norm,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForward {
    pub norm: Norm,
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct TfLayer {
    pub attn: SelfAttn,
    pub ffn: FeedForward,
}

/// One query projection per source; contexts are concatenated and fused.
#[derive(Debug, Clone)]
pub(crate) struct Bank {
    pub sources: Vec<Source>,
    pub queries: Vec<ParamId>,
    pub fuse: Linear,
    /// Pre-norm applied to the query stream (self-attention backbone).
    pub norm: Option<Norm>,
    /// Maps the output token index into the encoder query (recurrent backbone).
    pub position: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub(crate) enum EncoderBody {
    Recurrent {
        layers: Vec<(Lstm, Lstm)>,
    },
    SelfAttention {
        proj: ParamId,
        layers: Vec<TfLayer>,
        norm: Norm,
    },
}

#[derive(Debug, Clone)]
pub(crate) enum DecoderBody {
    /// LSTM stack; `combine` maps `[fused context; h]` to the attentional state.
    Recurrent { layers: Vec<Lstm>, combine: Linear },
    /// Causal layers; the bank sits between the last layer's self-attention
    /// and its feed-forward block.
    SelfAttention {
        proj: ParamId,
        layers: Vec<TfLayer>,
        norm: Norm,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub task: Task,
    pub vocab: usize,
    pub embed: ParamId,
    pub body: DecoderBody,
    pub bank: Bank,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub embed: ParamId,
    pub encoder: EncoderBody,
    pub decoders: Vec<Decoder>,
}

/// A cascade: configuration, vocabularies and parameters.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub config: ModelConfig,
    pub vocabs: VocabSet,
    pub params: ParamStore,
    pub(crate) layout: Layout,
}

struct Builder<'a> {
    store: ParamStore,
    config: &'a ModelConfig,
}

impl Builder<'_> {
    fn add(&mut self, name: String, rows: usize, cols: usize, kind: ParamKind) -> ParamId {
        self.store.add(name, Tensor::zeros(rows, cols), kind)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let w = self.add(format!("{name}.w"), fan_in, fan_out, ParamKind::Weight);
        let b = bias.then(|| self.add(format!("{name}.b"), 1, fan_out, ParamKind::Bias));
        Linear { w, b }
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Lstm {
        let w = self.add(
            format!("{name}.w"),
            input + hidden,
            4 * hidden,
            ParamKind::Weight,
        );
        let b = self.add(format!("{name}.b"), 1, 4 * hidden, ParamKind::Bias);
        Lstm { w, b, hidden }
    }

    fn norm(&mut self, name: &str) -> Norm {
        let h = self.config.hidden;
        Norm {
            gain: self.add(format!("{name}.gain"), 1, h, ParamKind::Gain),
            bias: self.add(format!("{name}.bias"), 1, h, ParamKind::Bias),
        }
    }

    fn tf_layer(&mut self, name: &str) -> TfLayer {
        let h = self.config.hidden;
        let f = h * self.config.ffn_multiplier;
        TfLayer {
            attn: SelfAttn {
                norm: self.norm(&format!("{name}.attn.norm")),
                wq: self.add(format!("{name}.attn.wq"), h, h, ParamKind::Weight),
                wk: self.add(format!("{name}.attn.wk"), h, h, ParamKind::Weight),
                wv: self.add(format!("{name}.attn.wv"), h, h, ParamKind::Weight),
                wo: self.add(format!("{name}.attn.wo"), h, h, ParamKind::Weight),
            },
            ffn: FeedForward {
                norm: self.norm(&format!("{name}.ffn.norm")),
                up: self.linear(&format!("{name}.ffn.up"), h, f, true),
                down: self.linear(&format!("{name}.ffn.down"), f, h, true),
            },
        }
    }
}

impl Cascade {
    /// Builds the layout for `config` and draws initial parameters from its seed.
    pub fn new(config: ModelConfig, vocabs: VocabSet) -> Result<Self, ModelError> {
        let mut model = Self::layout_only(config, vocabs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        model.params.initialize(model.config.init, &mut rng);
        Ok(model)
    }

    /// Builds the layout with all tensors zero.
    pub(crate) fn layout_only(config: ModelConfig, vocabs: VocabSet) -> Result<Self, ModelError> {
        config.validate()?;
        if vocabs.input_mode != config.input_mode {
            return Err(ModelError::InputMode {
                vocab: vocabs.input_mode,
                config: config.input_mode,
            });
        }
        let (e, h) = (config.embedding, config.hidden);
        let mut b = Builder {
            store: ParamStore::default(),
            config: &config,
        };
        let embed = b.add(
            "enc.embed".into(),
            vocabs.input.len(),
            e,
            ParamKind::Embedding,
        );
        let encoder = match config.backbone {
            Backbone::Recurrent => {
                let half = h / 2;
                let layers = (0..config.encoder_layers)
                    .map(|l| {
                        let input = if l == 0 { e } else { h };
                        (
                            b.lstm(&format!("enc.l{l}.fwd"), input, half),
                            b.lstm(&format!("enc.l{l}.bwd"), input, half),
                        )
                    })
                    .collect();
                EncoderBody::Recurrent { layers }
            }
            Backbone::SelfAttention => EncoderBody::SelfAttention {
                proj: b.add("enc.proj".into(), e, h, ParamKind::Weight),
                layers: (0..config.encoder_layers)
                    .map(|l| b.tf_layer(&format!("enc.l{l}")))
                    .collect(),
                norm: b.norm("enc.norm"),
            },
        };

        let mut decoders = Vec::new();
        let mut sources = vec![Source::Encoder];
        for &task in &config.order {
            let vocab = vocabs
                .targets
                .get(&task)
                .map(|v| v.len())
                .ok_or(ModelError::MissingVocabulary(task))?;
            let p = format!("dec.{task}");
            let dembed = b.add(format!("{p}.embed"), vocab, e, ParamKind::Embedding);
            let body = match config.backbone {
                Backbone::Recurrent => DecoderBody::Recurrent {
                    layers: (0..config.decoder_layers)
                        .map(|l| b.lstm(&format!("{p}.l{l}"), if l == 0 { e + h } else { h }, h))
                        .collect(),
                    combine: b.linear(&format!("{p}.combine"), 2 * h, h, true),
                },
                Backbone::SelfAttention => DecoderBody::SelfAttention {
                    proj: b.add(format!("{p}.proj"), e, h, ParamKind::Weight),
                    layers: (0..config.decoder_layers)
                        .map(|l| b.tf_layer(&format!("{p}.l{l}")))
                        .collect(),
                    norm: b.norm(&format!("{p}.norm")),
                },
            };
            let queries = (0..sources.len())
                .map(|j| b.add(format!("{p}.bank.q{j}"), h, h, ParamKind::Weight))
                .collect();
            let bank = Bank {
                sources: sources.clone(),
                queries,
                fuse: b.linear(&format!("{p}.bank.fuse"), sources.len() * h, h, true),
                norm: (config.backbone == Backbone::SelfAttention)
                    .then(|| b.norm(&format!("{p}.bank.norm"))),
                position: (config.backbone == Backbone::Recurrent)
                    .then(|| b.add(format!("{p}.bank.tok"), h, h, ParamKind::Weight)),
            };
            let out = b.linear(&format!("{p}.out"), h, vocab, true);
            decoders.push(Decoder {
                task,
                vocab,
                embed: dembed,
                body,
                bank,
                out,
            });
            sources.push(Source::Decoder(task));
        }
        let params = b.store;
        Ok(Self {
            config,
            vocabs,
            params,
            layout: Layout {
                embed,
                encoder,
                decoders,
            },
        })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.config.order
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Number of attention mechanisms owned by the decoder of `task`.
    pub fn attention_count(&self, task: Task) -> Option<usize> {
        self.decoder(task).map(|d| d.bank.queries.len())
    }

    /// Sources attended by the decoder of `task`, in bank order.
    pub fn attention_sources(&self, task: Task) -> Option<&[Source]> {
        self.decoder(task).map(|d| d.bank.sources.as_slice())
    }

    pub(crate) fn decoder(&self, task: Task) -> Option<&Decoder> {
        self.layout.decoders.iter().find(|d| d.task == task)
    }

    /// Per-task output vocabulary sizes.
    pub fn output_sizes(&self) -> BTreeMap<Task, usize> {
        self.layout
            .decoders
            .iter()
            .map(|d| (d.task, d.vocab))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cascade_core::dataset::InputMode;
    use cascade_core::synthetic::overfit_corpus;

    fn vocabs(mode: InputMode) -> VocabSet {
        let tasks: Vec<Task> = Task::ALL
            .into_iter()
            .filter(|t| !(mode == InputMode::Ar && *t == Task::Ar))
            .collect();
        VocabSet::build(&overfit_corpus(10, 4), mode, &tasks)
    }

    #[test]
    fn bank_sizes_follow_positions() {
        for backbone in [Backbone::Recurrent, Backbone::SelfAttention] {
            let m = Cascade::new(
                ModelConfig {
                    backbone,
                    ..ModelConfig::tiny(backbone)
                },
                vocabs(InputMode::Arabizi),
            )
            .unwrap();
            for (i, t) in Task::ALL.iter().enumerate() {
                assert_eq!(m.attention_count(*t), Some(i + 1));
            }
            assert_eq!(
                m.attention_sources(Task::Ar).unwrap(),
                &[
                    Source::Encoder,
                    Source::Decoder(Task::Cl),
                    Source::Decoder(Task::Lm)
                ]
            );
        }
    }

    #[test]
    fn ar_input_has_four_decoders() {
        let m = Cascade::new(ModelConfig::for_input(InputMode::Ar), vocabs(InputMode::Ar)).unwrap();
        assert_eq!(m.tasks().len(), 4);
        assert!(m.attention_count(Task::Ar).is_none());
        assert_eq!(m.attention_count(Task::Pos), Some(4));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = Cascade::new(ModelConfig::default(), vocabs(InputMode::Arabizi)).unwrap();
        let b = Cascade::new(ModelConfig::default(), vocabs(InputMode::Arabizi)).unwrap();
        assert_eq!(a.params, b.params);
        let c = Cascade::new(
            ModelConfig {
                seed: 2,
                ..ModelConfig::default()
            },
            vocabs(InputMode::Arabizi),
        )
        .unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn lemma_decoder_adds_parameters() {
        let without = ModelConfig {
            order: vec![Task::Cl, Task::Ar, Task::Tk, Task::Pos],
            ..ModelConfig::default()
        };
        let small = Cascade::new(without, vocabs(InputMode::Arabizi)).unwrap();
        let full = Cascade::new(ModelConfig::default(), vocabs(InputMode::Arabizi)).unwrap();
        assert!(full.parameter_count() > small.parameter_count());
    }

    #[test]
    fn vocab_mode_must_match() {
        let err = Cascade::new(ModelConfig::default(), vocabs(InputMode::Ar)).unwrap_err();
        assert!(matches!(err, ModelError::InputMode { .. }));
    }
}

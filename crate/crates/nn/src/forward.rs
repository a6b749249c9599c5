//! Cascade forward pass, teacher-forced and free-running.

use std::collections::BTreeMap;

use cascade_core::dataset::{EncodedExample, Task, BOS, EOS, PAD, TOKSEP};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::Backbone;
use crate::graph::{softmax_rows, AttnSpec, Graph, Var};
use crate::model::{Bank, Cascade, Decoder, DecoderBody, EncoderBody, Linear, Lstm, Norm, TfLayer};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecodeMode {
    /// Each step is conditioned on the gold previous symbol.
    TeacherForced,
    /// Each step is conditioned on the model's own previous argmax.
    Free,
}

/// Decoder-side tensors of one task for a padded batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    /// Decoder steps `T`, the longest target minus one.
    pub steps: usize,
    /// `B*T` decoder inputs, row `b*T + t`.
    pub dec_in: Vec<usize>,
    /// `B*T` symbols to predict, PAD where absent.
    pub gold: Vec<usize>,
}

/// Examples padded to common lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    /// `B*S` input symbols, row `b*S + s`.
    pub input: Vec<usize>,
    pub input_len: Vec<usize>,
    pub targets: BTreeMap<Task, TargetBatch>,
}

impl Batch {
    pub fn from_inputs(inputs: &[&[usize]]) -> Self {
        let size = inputs.len();
        let src_len = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut input = vec![PAD; size * src_len];
        for (b, seq) in inputs.iter().enumerate() {
            input[b * src_len..b * src_len + seq.len()].copy_from_slice(seq);
        }
        let input_len = inputs.iter().map(|s| s.len()).collect();
        Self {
            size,
            src_len,
            input,
            input_len,
            targets: BTreeMap::new(),
        }
    }

    pub fn new(examples: &[&EncodedExample]) -> Self {
        let inputs: Vec<&[usize]> = examples.iter().map(|e| e.input.as_slice()).collect();
        let mut batch = Self::from_inputs(&inputs);
        let tasks: Vec<Task> = examples
            .first()
            .map(|e| e.targets.keys().copied().collect())
            .unwrap_or_default();
        for task in tasks {
            let seqs: Vec<&[usize]> = examples
                .iter()
                .map(|e| e.targets[&task].as_slice())
                .collect();
            batch.targets.insert(task, TargetBatch::new(&seqs));
        }
        batch
    }
}

impl TargetBatch {
    pub fn new(seqs: &[&[usize]]) -> Self {
        let steps = seqs
            .iter()
            .map(|s| s.len().saturating_sub(1))
            .max()
            .unwrap_or(0);
        let mut dec_in = vec![PAD; seqs.len() * steps];
        let mut gold = vec![PAD; seqs.len() * steps];
        for (b, seq) in seqs.iter().enumerate() {
            for t in 0..seq.len().saturating_sub(1) {
                dec_in[b * steps + t] = seq[t];
                gold[b * steps + t] = seq[t + 1];
            }
        }
        Self {
            steps,
            dec_in,
            gold,
        }
    }
}

/// Everything the cascade produced for one task of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub task: Task,
    /// Argmax symbol per step; in free mode the generated sequence,
    /// ending with EOS unless the length cap was hit.
    pub predicted: Vec<usize>,
    /// `steps x vocab` probabilities.
    pub distributions: Tensor,
    /// `steps x hidden` decoder states handed to later decoders.
    pub hidden: Tensor,
    pub length_cap_hit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeOutput {
    /// `input length x hidden` encoder states.
    pub encoder: Tensor,
    /// One entry per decoder, in cascade order.
    pub tasks: Vec<TaskOutput>,
}

impl CascadeOutput {
    pub fn task(&self, task: Task) -> Option<&TaskOutput> {
        self.tasks.iter().find(|t| t.task == task)
    }

    pub fn length_cap_hit(&self) -> bool {
        self.tasks.iter().any(|t| t.length_cap_hit)
    }
}

/// Dropout state for one forward pass.
pub(crate) struct Noise<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Noise<'_> {
    pub fn off() -> Self {
        Noise {
            rate: 0.0,
            rng: None,
        }
    }

    fn apply(&mut self, g: &mut Graph, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else {
            return x;
        };
        if self.rate <= 0.0 {
            return x;
        }
        let (rows, cols) = g.value(x).shape();
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..rows * cols)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        g.mul_const(x, Tensor::from_vec(rows, cols, mask))
    }
}

pub(crate) struct TaskRun {
    pub task: Task,
    pub steps: usize,
    pub hidden: Var,
    pub logits: Var,
    /// Valid rows of `hidden`, used as the key mask by later decoders.
    pub key_mask: Vec<bool>,
    /// Free mode only: generated symbols per batch row.
    pub generated: Option<Vec<Vec<usize>>>,
}

pub(crate) struct Run {
    pub encoder: Var,
    pub tasks: Vec<TaskRun>,
}

struct SourceState {
    states: Var,
    /// Attention keys; the states plus token indices for the recurrent encoder.
    keys: Var,
    len: usize,
    mask: Vec<bool>,
}

fn linear(g: &mut Graph, l: &Linear, x: Var) -> Var {
    let w = g.param(l.w);
    let y = g.matmul(x, w);
    match l.b {
        Some(b) => {
            let b = g.param(b);
            g.add_row(y, b)
        }
        None => y,
    }
}

fn norm(g: &mut Graph, n: &Norm, x: Var) -> Var {
    let (gain, bias) = (g.param(n.gain), g.param(n.bias));
    g.layer_norm(x, gain, bias)
}

fn lstm_cell(g: &mut Graph, l: &Lstm, x: Var, h: Var, c: Var) -> (Var, Var) {
    let hd = l.hidden;
    let (w, b) = (g.param(l.w), g.param(l.b));
    let xin = g.concat_cols(&[x, h]);
    let z = g.matmul(xin, w);
    let z = g.add_row(z, b);
    let i = g.slice_cols(z, 0, hd);
    let i = g.sigmoid(i);
    let f = g.slice_cols(z, hd, hd);
    let f = g.sigmoid(f);
    let u = g.slice_cols(z, 2 * hd, hd);
    let u = g.tanh(u);
    let o = g.slice_cols(z, 3 * hd, hd);
    let o = g.sigmoid(o);
    let fc = g.mul(f, c);
    let iu = g.mul(i, u);
    let c2 = g.add(fc, iu);
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc);
    (h2, c2)
}

/// Runs one LSTM direction over per-step inputs. In reverse, rows whose
/// sequence is shorter keep a zero state until their last real position.
fn run_lstm(g: &mut Graph, l: &Lstm, xs: &[Var], lens: &[usize], reverse: bool) -> Vec<Var> {
    let b = lens.len();
    let mut h = g.constant(Tensor::zeros(b, l.hidden));
    let mut c = g.constant(Tensor::zeros(b, l.hidden));
    let mut out = vec![h; xs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..xs.len()).rev())
    } else {
        Box::new(0..xs.len())
    };
    for t in order {
        let (mut h2, mut c2) = lstm_cell(g, l, xs[t], h, c);
        if reverse && lens.iter().any(|&n| t >= n) {
            let mask: Vec<f64> = lens
                .iter()
                .map(|&n| if t < n { 1.0 } else { 0.0 })
                .collect();
            h2 = g.blend(h2, h, mask.clone());
            c2 = g.blend(c2, c, mask);
        }
        h = h2;
        c = c2;
        out[t] = h;
    }
    out
}

fn sinusoid(row: &mut [f64], p: usize) {
    let dim = row.len();
    for (i, x) in row.iter_mut().enumerate() {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let a = p as f64 / rate;
        *x = if i % 2 == 0 { a.sin() } else { a.cos() };
    }
}

/// Sinusoidal position table for `rows` sequences of `len` positions.
pub fn positions(rows: usize, len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(rows * len, dim);
    for r in 0..rows {
        for p in 0..len {
            sinusoid(t.row_mut(r * len + p), p);
        }
    }
    t
}

/// Sinusoidal table of token indices for `rows` padded sequences of `len`
/// symbols: a symbol's index is the number of TOKSEP before it in its row.
pub fn token_positions(ids: &[usize], rows: usize, len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(rows * len, dim);
    for r in 0..rows {
        let mut k = 0;
        for p in 0..len {
            sinusoid(t.row_mut(r * len + p), k);
            k += usize::from(ids[r * len + p] == TOKSEP);
        }
    }
    t
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

impl Cascade {
    fn heads(&self) -> usize {
        match self.config.backbone {
            Backbone::Recurrent => 1,
            Backbone::SelfAttention => self.config.heads,
        }
    }

    fn tf_block(
        &self,
        g: &mut Graph,
        layer: &TfLayer,
        x: Var,
        spec: AttnSpec,
        bank: Option<(&Bank, &[SourceState])>,
        noise: &mut Noise,
    ) -> Var {
        let a = &layer.attn;
        let n = norm(g, &a.norm, x);
        let (wq, wk, wv, wo) = (g.param(a.wq), g.param(a.wk), g.param(a.wv), g.param(a.wo));
        let q = g.matmul(n, wq);
        let k = g.matmul(n, wk);
        let v = g.matmul(n, wv);
        let (batch, q_len) = (spec.batch, spec.q_len);
        let att = g.attention(q, k, v, spec);
        let att = g.matmul(att, wo);
        let att = noise.apply(g, att);
        let mut x = g.add(x, att);
        if let Some((bank, sources)) = bank {
            let n = norm(g, bank.norm.as_ref().expect("self-attention bank norm"), x);
            let ctx = self.bank_context(g, bank, n, batch, q_len, sources, None);
            let ctx = noise.apply(g, ctx);
            x = g.add(x, ctx);
        }
        let f = &layer.ffn;
        let n = norm(g, &f.norm, x);
        let up = linear(g, &f.up, n);
        let up = g.relu(up);
        let down = linear(g, &f.down, up);
        let down = noise.apply(g, down);
        g.add(x, down)
    }

    /// Attends from `query` over every source and fuses the contexts.
    /// `tokens` holds the output token index encoding used by `bank.position`.
    #[allow(clippy::too_many_arguments)]
    fn bank_context(
        &self,
        g: &mut Graph,
        bank: &Bank,
        query: Var,
        batch: usize,
        q_len: usize,
        sources: &[SourceState],
        tokens: Option<Var>,
    ) -> Var {
        debug_assert_eq!(bank.queries.len(), sources.len());
        let mut ctxs = Vec::with_capacity(sources.len());
        for (j, (wq, src)) in bank.queries.iter().zip(sources).enumerate() {
            let wq = g.param(*wq);
            let mut q = g.matmul(query, wq);
            if let (0, Some(wp), Some(pe)) = (j, bank.position, tokens) {
                let wp = g.param(wp);
                let qp = g.matmul(pe, wp);
                q = g.add(q, qp);
            }
            let spec = AttnSpec {
                batch,
                q_len,
                k_len: src.len,
                heads: self.heads(),
                key_mask: src.mask.clone(),
                causal: false,
            };
            ctxs.push(g.attention(q, src.keys, src.states, spec));
        }
        let cat = if ctxs.len() == 1 {
            ctxs[0]
        } else {
            g.concat_cols(&ctxs)
        };
        linear(g, &bank.fuse, cat)
    }

    fn encode(&self, g: &mut Graph, batch: &Batch, noise: &mut Noise) -> SourceState {
        let (b, s) = (batch.size, batch.src_len);
        let emb = g.param(self.layout.embed);
        let mask: Vec<bool> = (0..b * s)
            .map(|i| i % s.max(1) < batch.input_len[i / s.max(1)])
            .collect();
        let states = match &self.layout.encoder {
            EncoderBody::Recurrent { layers } => {
                let mut xs: Vec<Var> = (0..s)
                    .map(|t| {
                        let ids = (0..b).map(|r| batch.input[r * s + t]).collect();
                        let x = g.gather(emb, ids);
                        noise.apply(g, x)
                    })
                    .collect();
                for (l, (fwd, bwd)) in layers.iter().enumerate() {
                    let f = run_lstm(g, fwd, &xs, &batch.input_len, false);
                    let r = run_lstm(g, bwd, &xs, &batch.input_len, true);
                    xs = (0..s).map(|t| g.concat_cols(&[f[t], r[t]])).collect();
                    if l + 1 < layers.len() {
                        xs = xs.into_iter().map(|x| noise.apply(g, x)).collect();
                    }
                }
                g.interleave(&xs)
            }
            EncoderBody::SelfAttention {
                proj,
                layers,
                norm: final_norm,
            } => {
                let x = g.gather(emb, batch.input.clone());
                let p = g.param(*proj);
                let x = g.matmul(x, p);
                let pe = g.constant(positions(b, s, self.config.hidden));
                let x = g.add(x, pe);
                let mut x = noise.apply(g, x);
                for layer in layers {
                    let spec = AttnSpec {
                        batch: b,
                        q_len: s,
                        k_len: s,
                        heads: self.heads(),
                        key_mask: mask.clone(),
                        causal: false,
                    };
                    x = self.tf_block(g, layer, x, spec, None, noise);
                }
                norm(g, final_norm, x)
            }
        };
        let keys = match &self.layout.encoder {
            // Recurrent states carry no usable position, so the keys also get
            // the token index for the decoders to align on.
            EncoderBody::Recurrent { .. } => {
                let pe = g.constant(token_positions(&batch.input, b, s, self.config.hidden));
                g.add(states, pe)
            }
            EncoderBody::SelfAttention { .. } => states,
        };
        SourceState {
            states,
            keys,
            len: s,
            mask,
        }
    }

    /// Teacher-forced pass of one recurrent decoder over `dec_in` (`B*T`).
    #[allow(clippy::too_many_arguments)]
    fn recurrent_steps(
        &self,
        g: &mut Graph,
        dec: &Decoder,
        layers: &[Lstm],
        combine: &Linear,
        sources: &[SourceState],
        batch: usize,
        mut next_input: impl FnMut(&mut Graph, usize, Option<Var>) -> Option<Vec<usize>>,
        noise: &mut Noise,
    ) -> (Vec<Var>, Vec<Var>) {
        let h = self.config.hidden;
        let embed = g.param(dec.embed);
        let mut state: Vec<(Var, Var)> = layers
            .iter()
            .map(|_| {
                (
                    g.constant(Tensor::zeros(batch, h)),
                    g.constant(Tensor::zeros(batch, h)),
                )
            })
            .collect();
        let mut feed = g.constant(Tensor::zeros(batch, h));
        let mut outs = Vec::new();
        let mut logits = Vec::new();
        let mut t = 0;
        let mut last_logits = None;
        // Index of the output token each row is producing.
        let mut token = vec![0usize; batch];
        while let Some(ids) = next_input(g, t, last_logits) {
            let mut pe = Tensor::zeros(batch, h);
            for (r, &id) in ids.iter().enumerate() {
                token[r] += usize::from(id == TOKSEP);
                sinusoid(pe.row_mut(r), token[r]);
            }
            let pe = g.constant(pe);
            let e = g.gather(embed, ids);
            let e = noise.apply(g, e);
            let mut x = g.concat_cols(&[e, feed]);
            for (l, layer) in layers.iter().enumerate() {
                let (hh, cc) = lstm_cell(g, layer, x, state[l].0, state[l].1);
                state[l] = (hh, cc);
                x = if l + 1 < layers.len() {
                    noise.apply(g, hh)
                } else {
                    hh
                };
            }
            let ctx = self.bank_context(g, &dec.bank, x, batch, 1, sources, Some(pe));
            let cat = g.concat_cols(&[ctx, x]);
            let z = linear(g, combine, cat);
            let ht = g.tanh(z);
            feed = ht;
            outs.push(ht);
            let d = noise.apply(g, ht);
            let lg = linear(g, &dec.out, d);
            logits.push(lg);
            last_logits = Some(lg);
            t += 1;
        }
        (outs, logits)
    }

    /// Self-attention decoder over a full `B*T` input; returns hidden and logits.
    #[allow(clippy::too_many_arguments)]
    fn attention_decoder(
        &self,
        g: &mut Graph,
        dec: &Decoder,
        dec_in: &[usize],
        steps: usize,
        sources: &[SourceState],
        batch: usize,
        noise: &mut Noise,
    ) -> (Var, Var) {
        let DecoderBody::SelfAttention {
            proj,
            layers,
            norm: final_norm,
        } = &dec.body
        else {
            unreachable!()
        };
        let embed = g.param(dec.embed);
        let x = g.gather(embed, dec_in.to_vec());
        let p = g.param(*proj);
        let x = g.matmul(x, p);
        let pe = g.constant(positions(batch, steps, self.config.hidden));
        let x = g.add(x, pe);
        let mut x = noise.apply(g, x);
        for (l, layer) in layers.iter().enumerate() {
            let spec = AttnSpec {
                batch,
                q_len: steps,
                k_len: steps,
                heads: self.heads(),
                key_mask: vec![true; batch * steps],
                causal: true,
            };
            let bank = (l + 1 == layers.len()).then_some((&dec.bank, sources));
            x = self.tf_block(g, layer, x, spec, bank, noise);
        }
        let hidden = norm(g, final_norm, x);
        let d = noise.apply(g, hidden);
        let logits = linear(g, &dec.out, d);
        (hidden, logits)
    }

    /// Builds the whole cascade for `batch` on `g`.
    pub(crate) fn run(
        &self,
        g: &mut Graph,
        batch: &Batch,
        mode: DecodeMode,
        noise: &mut Noise,
    ) -> Run {
        let b = batch.size;
        let enc = self.encode(g, batch, noise);
        let encoder = enc.states;
        let mut sources = vec![enc];
        let mut tasks = Vec::new();
        for dec in &self.layout.decoders {
            let srcs = &sources[..dec.bank.queries.len()];
            let run = match mode {
                DecodeMode::TeacherForced => {
                    let tb = batch
                        .targets
                        .get(&dec.task)
                        .unwrap_or_else(|| panic!("batch lacks {} targets", dec.task));
                    let steps = tb.steps;
                    let (hidden, logits) = match &dec.body {
                        DecoderBody::Recurrent { layers, combine } => {
                            let (outs, lg) = self.recurrent_steps(
                                g,
                                dec,
                                layers,
                                combine,
                                srcs,
                                b,
                                |_, t, _| {
                                    (t < steps)
                                        .then(|| (0..b).map(|r| tb.dec_in[r * steps + t]).collect())
                                },
                                noise,
                            );
                            if outs.is_empty() {
                                empty_run(g, b, self.config.hidden, dec.vocab)
                            } else {
                                (g.interleave(&outs), g.interleave(&lg))
                            }
                        }
                        DecoderBody::SelfAttention { .. } => {
                            self.attention_decoder(g, dec, &tb.dec_in, steps, srcs, b, noise)
                        }
                    };
                    let key_mask = tb.gold.iter().map(|&s| s != PAD).collect();
                    TaskRun {
                        task: dec.task,
                        steps,
                        hidden,
                        logits,
                        key_mask,
                        generated: None,
                    }
                }
                DecodeMode::Free => self.free_decoder(g, dec, srcs, batch),
            };
            sources.push(SourceState {
                states: run.hidden,
                keys: run.hidden,
                len: run.steps,
                mask: run.key_mask.clone(),
            });
            tasks.push(run);
        }
        Run { encoder, tasks }
    }

    fn free_decoder(
        &self,
        g: &mut Graph,
        dec: &Decoder,
        sources: &[SourceState],
        batch: &Batch,
    ) -> TaskRun {
        let b = batch.size;
        let caps: Vec<usize> = batch.input_len.iter().map(|n| 3 * n).collect();
        let max_steps = caps.iter().copied().max().unwrap_or(0);
        let mut generated: Vec<Vec<usize>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        // Records the argmax of the step just produced; false once every row is done.
        let mut record =
            |logits: &Tensor, row_of: &dyn Fn(usize) -> usize, generated: &mut Vec<Vec<usize>>| {
                for r in 0..b {
                    if done[r] {
                        continue;
                    }
                    let sym = argmax(logits.row(row_of(r)));
                    generated[r].push(sym);
                    if sym == EOS || generated[r].len() >= caps[r] {
                        done[r] = true;
                    }
                }
                !done.iter().all(|d| *d)
            };
        let (hidden, logits, steps) = match &dec.body {
            DecoderBody::Recurrent { layers, combine } => {
                let mut prev = vec![BOS; b];
                let (outs, lg) = self.recurrent_steps(
                    g,
                    dec,
                    layers,
                    combine,
                    sources,
                    b,
                    |g, t, last| {
                        if let Some(last) = last {
                            if !record(g.value(last), &|r| r, &mut generated) {
                                return None;
                            }
                            for (p, gen) in prev.iter_mut().zip(&generated) {
                                *p = gen.get(t - 1).copied().unwrap_or(PAD);
                            }
                        }
                        (t < max_steps).then(|| prev.clone())
                    },
                    &mut Noise::off(),
                );
                let steps = outs.len();
                if steps == 0 {
                    let (h, l) = empty_run(g, b, self.config.hidden, dec.vocab);
                    (h, l, 0)
                } else {
                    (g.interleave(&outs), g.interleave(&lg), steps)
                }
            }
            DecoderBody::SelfAttention { .. } => {
                let mut result = None;
                for n in 1..=max_steps {
                    let mut dec_in = vec![PAD; b * n];
                    for r in 0..b {
                        dec_in[r * n] = BOS;
                        for (t, &s) in generated[r].iter().take(n - 1).enumerate() {
                            dec_in[r * n + t + 1] = s;
                        }
                    }
                    let (h, l) =
                        self.attention_decoder(g, dec, &dec_in, n, sources, b, &mut Noise::off());
                    result = Some((h, l, n));
                    let lv = g.value(l).clone();
                    if !record(&lv, &|r| r * n + n - 1, &mut generated) {
                        break;
                    }
                }
                match result {
                    Some(r) => r,
                    None => {
                        let (h, l) = empty_run(g, b, self.config.hidden, dec.vocab);
                        (h, l, 0)
                    }
                }
            }
        };
        let key_mask = (0..b * steps)
            .map(|i| i % steps < generated[i / steps].len())
            .collect();
        TaskRun {
            task: dec.task,
            steps,
            hidden,
            logits,
            key_mask,
            generated: Some(generated),
        }
    }

    /// Runs the cascade and copies out per-example results.
    pub fn forward_batch(
        &self,
        examples: &[&EncodedExample],
        mode: DecodeMode,
    ) -> Vec<CascadeOutput> {
        let batch = Batch::new(examples);
        let lens: Vec<BTreeMap<Task, usize>> = examples
            .iter()
            .map(|e| {
                e.targets
                    .iter()
                    .map(|(t, s)| (*t, s.len().saturating_sub(1)))
                    .collect()
            })
            .collect();
        self.outputs(&batch, mode, |r, task| lens[r].get(&task).copied())
    }

    /// Free-running decoding from input sequences alone.
    pub fn decode_inputs(&self, inputs: &[&[usize]]) -> Vec<CascadeOutput> {
        let batch = Batch::from_inputs(inputs);
        self.outputs(&batch, DecodeMode::Free, |_, _| None)
    }

    pub fn forward_cascade(&self, example: &EncodedExample, mode: DecodeMode) -> CascadeOutput {
        self.forward_batch(&[example], mode)
            .pop()
            .expect("one output")
    }

    fn outputs(
        &self,
        batch: &Batch,
        mode: DecodeMode,
        target_len: impl Fn(usize, Task) -> Option<usize>,
    ) -> Vec<CascadeOutput> {
        let mut g = Graph::new(&self.params);
        let run = self.run(&mut g, batch, mode, &mut Noise::off());
        let s = batch.src_len;
        (0..batch.size)
            .map(|r| {
                let enc = g.value(run.encoder);
                let encoder = rows(enc, r * s, batch.input_len[r]);
                let tasks = run
                    .tasks
                    .iter()
                    .map(|tr| {
                        let (len, predicted, cap) = match &tr.generated {
                            Some(gen) => {
                                let seq = gen[r].clone();
                                let cap = seq.last() != Some(&EOS);
                                (seq.len(), seq, cap)
                            }
                            None => {
                                let len = target_len(r, tr.task).unwrap_or(tr.steps);
                                let lg = g.value(tr.logits);
                                let pred =
                                    (0..len).map(|t| argmax(lg.row(r * tr.steps + t))).collect();
                                (len, pred, false)
                            }
                        };
                        let logits = rows(g.value(tr.logits), r * tr.steps, len);
                        TaskOutput {
                            task: tr.task,
                            predicted,
                            distributions: softmax_rows(&logits),
                            hidden: rows(g.value(tr.hidden), r * tr.steps, len),
                            length_cap_hit: cap,
                        }
                    })
                    .collect();
                CascadeOutput { encoder, tasks }
            })
            .collect()
    }
}

fn empty_run(g: &mut Graph, b: usize, hidden: usize, vocab: usize) -> (Var, Var) {
    let _ = b;
    (
        g.constant(Tensor::zeros(0, hidden)),
        g.constant(Tensor::zeros(0, vocab)),
    )
}

fn rows(t: &Tensor, start: usize, len: usize) -> Tensor {
    Tensor::from_vec(
        len,
        t.cols(),
        t.data()[start * t.cols()..(start + len) * t.cols()].to_vec(),
    )
}

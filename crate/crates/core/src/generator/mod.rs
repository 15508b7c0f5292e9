//! Plan-conditioned sequence generator.
//!
//! A pre-norm transformer encoder-decoder reads the linearized data followed
//! by `<sep>` and the plan tokens, and produces the text. Input embeddings
//! are tied to the output projection, and every source token also gets an
//! embedding of its record's position in the plan. Training runs on the
//! tape; decoding uses a cached forward pass in [`decode`].

pub mod decode;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{linearize, ContentPlan, StructuredData, TrainingExample};
use crate::error::{Error, Result};
use crate::tensor::{Adam, AttnSegment, Graph, NodeId, ParamId, ParamStore};
use crate::vocab::{Vocab, BOS_ID, EOS_ID, SEP};

pub use decode::{decode, sample, DecodeConfig, DecodeStrategy, Sampled};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Plan ranks at or above this share one embedding row.
pub const MAX_RANK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_source: usize,
    /// Decoder positions, counting the end-of-sequence step.
    pub max_target: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { d_model: 128, enc_layers: 2, dec_layers: 2, heads: 4, ffn: 256, max_source: 128, max_target: 64 }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads)));
        }
        if self.ffn == 0 || self.max_source < 2 || self.max_target < 2 {
            return Err(Error::Config("ffn, max_source and max_target must be usable sizes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ln {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Attn {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayer {
    pub ln1: Ln,
    pub attn: Attn,
    pub ln2: Ln,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayer {
    pub ln1: Ln,
    pub self_attn: Attn,
    pub ln2: Ln,
    pub cross: Attn,
    pub ln3: Ln,
    pub ffn: Ffn,
}

#[derive(Debug, Clone)]
pub(crate) struct Ids {
    pub embed: ParamId,
    pub pos_src: ParamId,
    pub rank_src: ParamId,
    pub pos_tgt: ParamId,
    pub out_b: ParamId,
    pub enc: Vec<EncLayer>,
    pub enc_ln: Ln,
    pub dec: Vec<DecLayer>,
    pub dec_ln: Ln,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    config: GeneratorConfig,
    vocab: Vocab,
    params: ParamStore,
    pub(crate) ids: Ids,
}

/// Encoder input: token ids and, per token, the 1-based plan position of the
/// record it belongs to. Plan tokens after `<sep>` carry their own position;
/// unplanned records and `<sep>` carry 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Source {
    pub ids: Vec<usize>,
    pub ranks: Vec<usize>,
}

impl Source {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One teacher-forced sequence: encoder input and decoder targets. Decoder
/// inputs are `<bos>` followed by all targets but the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqPair {
    pub source: Source,
    pub targets: Vec<usize>,
}

impl SeqPair {
    fn inputs(&self) -> Vec<usize> {
        core::iter::once(BOS_ID).chain(self.targets[..self.targets.len() - 1].iter().copied()).collect()
    }
}

/// `linearize(data) ++ <sep> ++ plan tokens`. When the whole sequence would
/// exceed `max_source`, the linearized part is truncated; an error is
/// returned only if `<sep>` and the plan alone do not fit.
pub fn build_input(data: &StructuredData, plan: &ContentPlan, max_source: usize) -> Result<Vec<String>> {
    Ok(ranked_input(data, plan, max_source)?.0)
}

/// [`build_input`] with the plan rank of every token, as in [`Source`].
pub fn ranked_input(data: &StructuredData, plan: &ContentPlan, max_source: usize) -> Result<(Vec<String>, Vec<usize>)> {
    plan.validate(data)?;
    let lin = linearize(data)?;
    let plan_tokens = plan.tokens(data);
    let tail = 1 + plan_tokens.len();
    if tail > max_source {
        return Err(Error::SourceOverflow { len: tail, max: max_source });
    }
    let mut record_rank = vec![0; data.len()];
    for (j, &i) in plan.entries().iter().enumerate() {
        record_rank[i] = (j + 1).min(MAX_RANK);
    }
    let mut ranks = vec![0; lin.tokens.len()];
    for (&(s, e), &r) in lin.record_spans.iter().zip(&record_rank) {
        ranks[s..e].fill(r);
    }
    let mut tokens = lin.tokens;
    tokens.truncate(max_source - tail);
    ranks.truncate(tokens.len());
    tokens.push(SEP.to_string());
    ranks.push(0);
    ranks.extend((1..=plan_tokens.len()).map(|j| j.min(MAX_RANK)));
    tokens.extend(plan_tokens);
    Ok((tokens, ranks))
}

impl GeneratorModel {
    pub fn new(config: GeneratorConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, v) = (config.d_model, config.ffn, vocab.len());
        let sd = 1.0 / crate::math::sqrt(d as f64);
        let sf = 1.0 / crate::math::sqrt(f as f64);
        let mut p = ParamStore::new();
        p.normal("embed", &[v, d], sd, &mut rng);
        p.normal("pos_src", &[config.max_source, d], 0.1, &mut rng);
        p.normal("rank_src", &[MAX_RANK + 1, d], 0.1, &mut rng);
        p.normal("pos_tgt", &[config.max_target, d], 0.1, &mut rng);
        p.zeros("out.b", &[1, v]);
        let ln = |p: &mut ParamStore, name: &str| {
            p.filled(&format!("{name}.g"), &[1, d], 1.0);
            p.zeros(&format!("{name}.b"), &[1, d]);
        };
        let attn = |p: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            for w in ["wq", "wk", "wv", "wo"] {
                p.normal(&format!("{name}.{w}"), &[d, d], sd, rng);
            }
        };
        let ffn = |p: &mut ParamStore, name: &str, rng: &mut ChaCha8Rng| {
            p.normal(&format!("{name}.w1"), &[d, f], sd, rng);
            p.zeros(&format!("{name}.b1"), &[1, f]);
            p.normal(&format!("{name}.w2"), &[f, d], sf, rng);
            p.zeros(&format!("{name}.b2"), &[1, d]);
        };
        for l in 0..config.enc_layers {
            ln(&mut p, &format!("enc.{l}.ln1"));
            attn(&mut p, &format!("enc.{l}.attn"), &mut rng);
            ln(&mut p, &format!("enc.{l}.ln2"));
            ffn(&mut p, &format!("enc.{l}.ffn"), &mut rng);
        }
        ln(&mut p, "enc.ln");
        for l in 0..config.dec_layers {
            ln(&mut p, &format!("dec.{l}.ln1"));
            attn(&mut p, &format!("dec.{l}.self"), &mut rng);
            ln(&mut p, &format!("dec.{l}.ln2"));
            attn(&mut p, &format!("dec.{l}.cross"), &mut rng);
            ln(&mut p, &format!("dec.{l}.ln3"));
            ffn(&mut p, &format!("dec.{l}.ffn"), &mut rng);
        }
        ln(&mut p, "dec.ln");
        Self::from_parts(config, vocab, p)
    }

    /// Reassembles a model from stored parts, checking every parameter's
    /// presence and shape.
    pub fn from_parts(config: GeneratorConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let (d, f, v) = (config.d_model, config.ffn, vocab.len());
        let ln = |name: &str| -> Result<Ln> {
            Ok(Ln { g: params.lookup(&format!("{name}.g"), &[1, d])?, b: params.lookup(&format!("{name}.b"), &[1, d])? })
        };
        let attn = |name: &str| -> Result<Attn> {
            Ok(Attn {
                wq: params.lookup(&format!("{name}.wq"), &[d, d])?,
                wk: params.lookup(&format!("{name}.wk"), &[d, d])?,
                wv: params.lookup(&format!("{name}.wv"), &[d, d])?,
                wo: params.lookup(&format!("{name}.wo"), &[d, d])?,
            })
        };
        let ffn = |name: &str| -> Result<Ffn> {
            Ok(Ffn {
                w1: params.lookup(&format!("{name}.w1"), &[d, f])?,
                b1: params.lookup(&format!("{name}.b1"), &[1, f])?,
                w2: params.lookup(&format!("{name}.w2"), &[f, d])?,
                b2: params.lookup(&format!("{name}.b2"), &[1, d])?,
            })
        };
        let enc = (0..config.enc_layers)
            .map(|l| {
                Ok(EncLayer {
                    ln1: ln(&format!("enc.{l}.ln1"))?,
                    attn: attn(&format!("enc.{l}.attn"))?,
                    ln2: ln(&format!("enc.{l}.ln2"))?,
                    ffn: ffn(&format!("enc.{l}.ffn"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let dec = (0..config.dec_layers)
            .map(|l| {
                Ok(DecLayer {
                    ln1: ln(&format!("dec.{l}.ln1"))?,
                    self_attn: attn(&format!("dec.{l}.self"))?,
                    ln2: ln(&format!("dec.{l}.ln2"))?,
                    cross: attn(&format!("dec.{l}.cross"))?,
                    ln3: ln(&format!("dec.{l}.ln3"))?,
                    ffn: ffn(&format!("dec.{l}.ffn"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ids = Ids {
            embed: params.lookup("embed", &[v, d])?,
            pos_src: params.lookup("pos_src", &[config.max_source, d])?,
            rank_src: params.lookup("rank_src", &[MAX_RANK + 1, d])?,
            pos_tgt: params.lookup("pos_tgt", &[config.max_target, d])?,
            out_b: params.lookup("out.b", &[1, v])?,
            enc,
            enc_ln: ln("enc.ln")?,
            dec,
            dec_ln: ln("dec.ln")?,
        };
        Ok(Self { config, vocab, params, ids })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Encoder input for `(data, plan)`.
    pub fn source(&self, data: &StructuredData, plan: &ContentPlan) -> Result<Source> {
        let (tokens, ranks) = ranked_input(data, plan, self.config.max_source)?;
        Ok(Source { ids: self.vocab.encode(&tokens), ranks })
    }

    /// Teacher-forcing pair for a reference text: text ids (cut to fit) then
    /// `<eos>`.
    pub fn pair(&self, data: &StructuredData, plan: &ContentPlan, text: &[String]) -> Result<SeqPair> {
        let mut targets = self.vocab.encode(text);
        targets.truncate(self.config.max_target - 1);
        targets.push(EOS_ID);
        Ok(SeqPair { source: self.source(data, plan)?, targets })
    }

    fn layer_norm(&self, g: &mut Graph, store: &ParamStore, x: NodeId, ln: Ln) -> Result<NodeId> {
        let gamma = g.param(store, ln.g);
        let beta = g.param(store, ln.b);
        g.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    fn project(g: &mut Graph, store: &ParamStore, x: NodeId, w: ParamId) -> Result<NodeId> {
        let w = g.param(store, w);
        g.matmul(x, w)
    }

    fn ffn(&self, g: &mut Graph, store: &ParamStore, x: NodeId, p: Ffn) -> Result<NodeId> {
        let h = Self::project(g, store, x, p.w1)?;
        let b1 = g.param(store, p.b1);
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let h = Self::project(g, store, h, p.w2)?;
        let b2 = g.param(store, p.b2);
        g.add_row(h, b2)
    }

    #[allow(clippy::too_many_arguments)]
    fn attend(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query_in: NodeId,
        kv_in: NodeId,
        p: Attn,
        segments: &[AttnSegment],
        causal: bool,
    ) -> Result<NodeId> {
        let q = Self::project(g, store, query_in, p.wq)?;
        let k = Self::project(g, store, kv_in, p.wk)?;
        let v = Self::project(g, store, kv_in, p.wv)?;
        let a = g.attention(q, k, v, self.config.heads, segments, causal)?;
        Self::project(g, store, a, p.wo)
    }

    /// Embedded tokens scaled by `sqrt(d)` plus learned positions.
    fn embed(&self, g: &mut Graph, embed: NodeId, pos: NodeId, seqs: &[&[usize]]) -> Result<NodeId> {
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().copied()).collect();
        let positions: Vec<usize> = seqs.iter().flat_map(|s| 0..s.len()).collect();
        let e = g.gather(embed, &ids)?;
        let e = g.scale(e, crate::math::sqrt(self.config.d_model as f64));
        let p = g.gather(pos, &positions)?;
        g.add(e, p)
    }

    /// Encoder output rows for a batch of sources, stacked.
    pub(crate) fn encode_graph(&self, g: &mut Graph, store: &ParamStore, sources: &[&Source]) -> Result<NodeId> {
        for s in sources {
            if s.is_empty() || s.len() > self.config.max_source || s.ranks.len() != s.len() {
                return Err(Error::SourceOverflow { len: s.len(), max: self.config.max_source });
            }
        }
        let segs = segments(sources.iter().map(|s| s.len()), sources.iter().map(|s| s.len()));
        let embed = g.param(store, self.ids.embed);
        let pos = g.param(store, self.ids.pos_src);
        let ids: Vec<&[usize]> = sources.iter().map(|s| s.ids.as_slice()).collect();
        let x = self.embed(g, embed, pos, &ids)?;
        let rank = g.param(store, self.ids.rank_src);
        let ranks: Vec<usize> = sources.iter().flat_map(|s| s.ranks.iter().map(|&r| r.min(MAX_RANK))).collect();
        let r = g.gather(rank, &ranks)?;
        let mut x = g.add(x, r)?;
        for layer in &self.ids.enc {
            let h = self.layer_norm(g, store, x, layer.ln1)?;
            let a = self.attend(g, store, h, h, layer.attn, &segs, false)?;
            x = g.add(x, a)?;
            let h = self.layer_norm(g, store, x, layer.ln2)?;
            let f = self.ffn(g, store, h, layer.ffn)?;
            x = g.add(x, f)?;
        }
        self.layer_norm(g, store, x, self.ids.enc_ln)
    }

    /// Output logits (one row per target, stacked over the batch).
    pub fn logits_graph(&self, g: &mut Graph, store: &ParamStore, batch: &[SeqPair]) -> Result<NodeId> {
        let sources: Vec<&Source> = batch.iter().map(|p| &p.source).collect();
        let enc = self.encode_graph(g, store, &sources)?;
        let inputs: Vec<Vec<usize>> = batch.iter().map(SeqPair::inputs).collect();
        for i in &inputs {
            if i.len() > self.config.max_target {
                return Err(Error::Config(format!("target of {} exceeds max_target {}", i.len(), self.config.max_target)));
            }
        }
        let input_refs: Vec<&[usize]> = inputs.iter().map(Vec::as_slice).collect();
        let self_segs = segments(inputs.iter().map(Vec::len), inputs.iter().map(Vec::len));
        let cross_segs = segments(inputs.iter().map(Vec::len), sources.iter().map(|s| s.len()));
        let embed = g.param(store, self.ids.embed);
        let pos = g.param(store, self.ids.pos_tgt);
        let mut y = self.embed(g, embed, pos, &input_refs)?;
        for layer in &self.ids.dec {
            let h = self.layer_norm(g, store, y, layer.ln1)?;
            let a = self.attend(g, store, h, h, layer.self_attn, &self_segs, true)?;
            y = g.add(y, a)?;
            let h = self.layer_norm(g, store, y, layer.ln2)?;
            let a = self.attend(g, store, h, enc, layer.cross, &cross_segs, false)?;
            y = g.add(y, a)?;
            let h = self.layer_norm(g, store, y, layer.ln3)?;
            let f = self.ffn(g, store, h, layer.ffn)?;
            y = g.add(y, f)?;
        }
        let y = self.layer_norm(g, store, y, self.ids.dec_ln)?;
        let logits = g.matmul_nt(y, embed)?;
        let out_b = g.param(store, self.ids.out_b);
        g.add_row(logits, out_b)
    }

    /// Mean per-token negative log-likelihood over every target in the batch.
    pub fn batch_loss(&self, g: &mut Graph, store: &ParamStore, batch: &[SeqPair]) -> Result<NodeId> {
        let logits = self.logits_graph(g, store, batch)?;
        let targets: Vec<usize> = batch.iter().flat_map(|p| p.targets.iter().copied()).collect();
        g.cross_entropy(logits, &targets)
    }

    /// `Σ_batch Σ_t -log p(target)`, each sequence's sum scaled by its weight.
    pub fn weighted_nll(&self, g: &mut Graph, store: &ParamStore, batch: &[SeqPair], weights: &[f64]) -> Result<NodeId> {
        if weights.len() != batch.len() {
            return Err(Error::LengthMismatch(weights.len(), batch.len()));
        }
        let logits = self.logits_graph(g, store, batch)?;
        let mut total: Option<NodeId> = None;
        let mut row = 0;
        for (p, &w) in batch.iter().zip(weights) {
            let rows: Vec<usize> = (row..row + p.targets.len()).collect();
            row += p.targets.len();
            let part = g.gather(logits, &rows)?;
            let nll = g.cross_entropy_scaled(part, &p.targets, w)?;
            total = Some(match total {
                Some(t) => g.add(t, nll)?,
                None => nll,
            });
        }
        total.ok_or(Error::EmptyDataset)
    }

    /// Teacher-forced negative log-likelihood of `text`, averaged over its
    /// targets including `<eos>`.
    pub fn lm_loss(&self, data: &StructuredData, plan: &ContentPlan, text: &[String]) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::Config("lm_loss needs a non-empty text".into()));
        }
        let pair = self.pair(data, plan, text)?;
        let mut g = Graph::new();
        let loss = self.batch_loss(&mut g, &self.params, &[pair])?;
        Ok(g.value(loss).item())
    }

    /// Teacher-forced log-probability of each target id.
    pub fn target_log_probs(&self, pair: &SeqPair) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let logits = self.logits_graph(&mut g, &self.params, core::slice::from_ref(pair))?;
        let lp = g.log_softmax(logits);
        let v = g.value(lp);
        Ok(pair.targets.iter().enumerate().map(|(i, &t)| v.at(i, t)).collect())
    }

    /// Mean per-token loss over `examples`, conditioning on their stored
    /// plans.
    pub fn mean_loss(&self, examples: &[TrainingExample]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in examples.chunks(32) {
            let batch = chunk.iter().map(|e| self.pair(&e.data, &e.plan, &e.text)).collect::<Result<Vec<_>>>()?;
            let n: usize = batch.iter().map(|p| p.targets.len()).sum();
            let mut g = Graph::new();
            let loss = self.batch_loss(&mut g, &self.params, &batch)?;
            total += g.value(loss).item() * n as f64;
            count += n;
        }
        Ok(total / count as f64)
    }
}

/// Block-diagonal attention segments for stacked sequences.
fn segments(q_lens: impl Iterator<Item = usize>, k_lens: impl Iterator<Item = usize>) -> Vec<AttnSegment> {
    let (mut q0, mut k0) = (0, 0);
    q_lens
        .zip(k_lens)
        .map(|(ql, kl)| {
            let s = AttnSegment { q_start: q0, q_len: ql, k_start: k0, k_len: kl };
            q0 += ql;
            k0 += kl;
            s
        })
        .collect()
}

/// Vocabulary over generator inputs and texts of `examples`.
pub fn generator_vocab(examples: &[TrainingExample]) -> Result<Vocab> {
    let mut seqs: Vec<Vec<String>> = Vec::with_capacity(2 * examples.len());
    for e in examples {
        seqs.push(linearize(&e.data)?.tokens);
        seqs.push(e.text.clone());
    }
    Ok(Vocab::build(seqs.iter().map(Vec::as_slice)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for GeneratorTrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 16, learning_rate: 1e-3, clip_norm: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEpoch {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
}

/// MLE training on reference plans and texts. Deterministic in `seed`.
/// `on_epoch` receives the model after each epoch, for checkpointing.
pub fn train_generator(
    train: &[TrainingExample],
    dev: &[TrainingExample],
    config: GeneratorConfig,
    tc: &GeneratorTrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&GeneratorEpoch, &GeneratorModel),
) -> Result<(GeneratorModel, Vec<GeneratorEpoch>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = GeneratorModel::new(config, generator_vocab(train)?, seed)?;
    continue_training(model, train, dev, tc, seed, on_epoch)
}

/// MLE training from an existing model.
pub fn continue_training(
    mut model: GeneratorModel,
    train: &[TrainingExample],
    dev: &[TrainingExample],
    tc: &GeneratorTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&GeneratorEpoch, &GeneratorModel),
) -> Result<(GeneratorModel, Vec<GeneratorEpoch>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pairs = train.iter().map(|e| model.pair(&e.data, &e.plan, &e.text)).collect::<Result<Vec<_>>>()?;
    let mut opt = Adam::new(tc.learning_rate)?.with_clip(tc.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut steps = 0;
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(tc.batch_size.max(1)) {
            let batch: Vec<SeqPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let n: usize = batch.iter().map(|p| p.targets.len()).sum();
            let mut g = Graph::new();
            let loss = model.batch_loss(&mut g, &model.params, &batch)?;
            loss_sum += g.value(loss).item() * n as f64;
            tokens += n;
            g.backward(loss, &mut model.params)?;
            opt.step(&mut model.params);
            steps += 1;
        }
        let dev_loss = if dev.is_empty() { None } else { Some(model.mean_loss(dev)?) };
        let rec = GeneratorEpoch { epoch, steps, train_loss: loss_sum / tokens as f64, dev_loss };
        on_epoch(&rec, &model);
        history.push(rec);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use crate::tokenize::tokenize;

    fn film() -> StructuredData {
        StructuredData::table(&[
            ("Year", "2016"),
            ("Name", "Alma Jodorowsky"),
            ("Role", "Evelyn"),
            ("Notes", "Main role"),
            ("Title", "Kids in Love"),
        ])
        .unwrap()
    }

    pub(crate) fn tiny() -> GeneratorConfig {
        GeneratorConfig { d_model: 8, enc_layers: 1, dec_layers: 1, heads: 2, ffn: 12, max_source: 40, max_target: 16 }
    }

    pub(crate) fn tiny_example() -> TrainingExample {
        let data = film();
        let plan = ContentPlan::resolve(&["Name", "Role", "Title"], &data).unwrap();
        TrainingExample::new(data, plan, tokenize("Alma Jodorowsky played Evelyn in Kids in Love .")).unwrap()
    }

    #[test]
    fn build_input_layout() {
        let data = film();
        let lin = linearize(&data).unwrap().tokens;
        let empty = build_input(&data, &ContentPlan::empty(), 128).unwrap();
        assert_eq!(empty.len(), lin.len() + 1);
        assert_eq!(empty.last().unwrap(), SEP);
        let plan = ContentPlan::resolve(&["Name", "Role", "Title"], &data).unwrap();
        let full = build_input(&data, &plan, 128).unwrap();
        assert_eq!(full.len(), lin.len() + 1 + 3);
        assert_eq!(&full[full.len() - 4..], &["<sep>", "Name", "Role", "Title"]);
    }

    #[test]
    fn build_input_truncates_table_but_never_the_plan() {
        let data = film();
        let plan = ContentPlan::resolve(&["Name", "Role", "Title"], &data).unwrap();
        let cut = build_input(&data, &plan, 10).unwrap();
        assert_eq!(cut.len(), 10);
        assert_eq!(&cut[6..], &["<sep>", "Name", "Role", "Title"]);
        assert!(matches!(build_input(&data, &plan, 3), Err(Error::SourceOverflow { len: 4, max: 3 })));
    }

    #[test]
    fn ranks_follow_plan_positions() {
        let data = film();
        let plan = ContentPlan::resolve(&["Name", "Role", "Title"], &data).unwrap();
        let (tokens, ranks) = ranked_input(&data, &plan, 128).unwrap();
        let mut want = vec![0; 4];
        want.extend([1; 5]);
        want.extend([2; 4]);
        want.extend([0; 5]);
        want.extend([3; 6]);
        want.extend([0, 1, 2, 3]);
        assert_eq!(ranks, want);
        assert_eq!(tokens.len(), ranks.len());
        let (cut, cut_ranks) = ranked_input(&data, &plan, 10).unwrap();
        assert_eq!(cut_ranks, [0, 0, 0, 0, 1, 1, 0, 1, 2, 3]);
        assert_eq!(cut.len(), 10);
    }

    #[test]
    fn uniform_logits_give_log_vocab_loss() {
        let ex = tiny_example();
        let vocab = generator_vocab(core::slice::from_ref(&ex)).unwrap();
        let mut m = GeneratorModel::new(tiny(), vocab, 1).unwrap();
        // zero embeddings and output bias make every logit zero
        let e = m.ids.embed;
        m.params_mut().get_mut(e).tensor.data_mut().fill(0.0);
        let loss = m.lm_loss(&ex.data, &ex.plan, &ex.text).unwrap();
        assert!((loss - crate::math::ln(m.vocab().len() as f64)).abs() < 1e-12);
    }

    #[test]
    fn lm_loss_gradient_matches_finite_differences() {
        let ex = tiny_example();
        let vocab = generator_vocab(core::slice::from_ref(&ex)).unwrap();
        let mut m = GeneratorModel::new(tiny(), vocab, 2).unwrap();
        let other = {
            let plan = ContentPlan::resolve(&["Year"], &ex.data).unwrap();
            m.pair(&ex.data, &plan, &tokenize("in 2016 .")).unwrap()
        };
        let batch = [m.pair(&ex.data, &ex.plan, &ex.text).unwrap(), other];
        let model = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let err = grad_check(m.params_mut(), |s, g| model.batch_loss(g, s, &batch), 1e-5, &mut rng).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn overfits_one_example() {
        let ex = tiny_example();
        let cfg = GeneratorConfig { d_model: 16, heads: 2, ffn: 32, ..tiny() };
        let tc = GeneratorTrainConfig { epochs: 150, batch_size: 1, learning_rate: 1e-2, clip_norm: 1.0 };
        let (m, _) = train_generator(core::slice::from_ref(&ex), &[], cfg, &tc, 3, |_, _| {}).unwrap();
        let loss = m.lm_loss(&ex.data, &ex.plan, &ex.text).unwrap();
        assert!(loss < 0.01, "loss {loss}");
    }
}

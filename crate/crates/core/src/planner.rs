//! Content planner: scores a position label (or the empty label) for every
//! record with a linear-chain CRF and reads the plan off the Viterbi
//! labelling.
//!
//! Candidates are encoded by embedding the linearized input, optionally
//! mixing context with a bidirectional GRU, and mean-pooling each record's
//! key (or predicate) span. A linear layer maps each candidate vector to
//! `P_max + 1` label scores; labels beyond the candidate count are masked.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf;
use crate::data::{
    linearize, ordering_to_plan, plan_to_ordering, ContentPlan, OrderingSequence, StructuredData, TrainingExample, DEFAULT_MAX_POSITIONS,
};
use crate::error::{Error, Result};
use crate::tensor::{Adam, Graph, NodeId, ParamId, ParamStore, Tensor};
use crate::vocab::{Vocab, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Hidden size `n`.
    pub hidden: usize,
    /// Largest position label `P_max`.
    pub max_positions: usize,
    /// Bidirectional GRU context mixer; off means embeddings only.
    pub mixer: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { hidden: 64, max_positions: DEFAULT_MAX_POSITIONS, mixer: true }
    }
}

impl PlannerConfig {
    /// Label count `P_max + 1`.
    pub fn labels(&self) -> usize {
        self.max_positions + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Gru {
    w: ParamId,
    u_zr: ParamId,
    u_h: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Mixer {
    fwd: Gru,
    bwd: Gru,
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    embed: ParamId,
    mixer: Option<Mixer>,
    phi_w: ParamId,
    phi_b: ParamId,
    transitions: ParamId,
}

#[derive(Debug, Clone)]
pub struct PlannerModel {
    config: PlannerConfig,
    vocab: Vocab,
    params: ParamStore,
    ids: Ids,
}

impl PlannerModel {
    /// Randomly initialized model.
    pub fn new(config: PlannerConfig, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, l, v) = (config.hidden, config.labels(), vocab.len());
        let s = 1.0 / libm::sqrt(n as f64);
        let mut p = ParamStore::new();
        p.normal("embed", &[v, n], 0.3, &mut rng);
        if config.mixer {
            for dir in ["gru_f", "gru_b"] {
                p.normal(&format!("{dir}.w"), &[n, 3 * n], s, &mut rng);
                p.normal(&format!("{dir}.u_zr"), &[n, 2 * n], s, &mut rng);
                p.normal(&format!("{dir}.u_h"), &[n, n], s, &mut rng);
                p.zeros(&format!("{dir}.b"), &[1, 3 * n]);
            }
            p.normal("mix.w", &[2 * n, n], 1.0 / libm::sqrt(2.0 * n as f64), &mut rng);
            p.zeros("mix.b", &[1, n]);
        }
        p.normal("phi.w", &[n, l], s, &mut rng);
        p.zeros("phi.b", &[1, l]);
        p.zeros("transitions", &[l, l]);
        Self::from_parts(config, vocab, p).expect("freshly built parameters match the config")
    }

    /// Reassembles a model from stored parts, checking every parameter's
    /// presence and shape.
    pub fn from_parts(config: PlannerConfig, vocab: Vocab, params: ParamStore) -> Result<Self> {
        let (n, l, v) = (config.hidden, config.labels(), vocab.len());
        if n == 0 || config.max_positions == 0 {
            return Err(Error::Config("hidden size and max positions must be positive".into()));
        }
        let gru = |dir: &str| -> Result<Gru> {
            Ok(Gru {
                w: params.lookup(&format!("{dir}.w"), &[n, 3 * n])?,
                u_zr: params.lookup(&format!("{dir}.u_zr"), &[n, 2 * n])?,
                u_h: params.lookup(&format!("{dir}.u_h"), &[n, n])?,
                b: params.lookup(&format!("{dir}.b"), &[1, 3 * n])?,
            })
        };
        let mixer = if config.mixer {
            Some(Mixer {
                fwd: gru("gru_f")?,
                bwd: gru("gru_b")?,
                w: params.lookup("mix.w", &[2 * n, n])?,
                b: params.lookup("mix.b", &[1, n])?,
            })
        } else {
            None
        };
        let ids = Ids {
            embed: params.lookup("embed", &[v, n])?,
            mixer,
            phi_w: params.lookup("phi.w", &[n, l])?,
            phi_b: params.lookup("phi.b", &[1, l])?,
            transitions: params.lookup("transitions", &[l, l])?,
        };
        Ok(Self { config, vocab, params, ids })
    }

    pub fn config(&self) -> &PlannerConfig {
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

    pub fn transitions(&self) -> &Tensor {
        self.params.value(self.ids.transitions)
    }

    /// Candidate states, one `1 × n` row per record, for a batch.
    fn encode_nodes(&self, g: &mut Graph, store: &ParamStore, batch: &[&StructuredData]) -> Result<NodeId> {
        let n = self.config.hidden;
        let mut seqs: Vec<Vec<usize>> = Vec::with_capacity(batch.len());
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut offset = 0;
        for d in batch {
            let lin = linearize(d)?;
            for (i, &(s, e)) in lin.key_spans.iter().enumerate() {
                if s >= e {
                    return Err(Error::EmptyKeySpan(i));
                }
                spans.push((offset + s, offset + e));
            }
            offset += lin.tokens.len();
            seqs.push(self.vocab.encode(&lin.tokens));
        }
        let flat: Vec<usize> = seqs.iter().flatten().copied().collect();
        let embed = g.param(store, self.ids.embed);
        let mut h = g.gather(embed, &flat)?;

        if let Some(mx) = self.ids.mixer {
            let b = seqs.len();
            let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
            let mut ids_f = vec![PAD_ID; t_max * b];
            let mut ids_b = vec![PAD_ID; t_max * b];
            let mut mask = vec![vec![0.0; b * n]; t_max];
            for (j, s) in seqs.iter().enumerate() {
                for (t, &tok) in s.iter().enumerate() {
                    ids_f[t * b + j] = tok;
                    ids_b[t * b + j] = s[s.len() - 1 - t];
                    mask[t][j * n..(j + 1) * n].fill(1.0);
                }
            }
            let fwd = run_gru(g, store, mx.fwd, embed, &ids_f, &mask, b, n)?;
            let bwd = run_gru(g, store, mx.bwd, embed, &ids_b, &mask, b, n)?;
            let mut rows_f = Vec::with_capacity(flat.len());
            let mut rows_b = Vec::with_capacity(flat.len());
            for (j, s) in seqs.iter().enumerate() {
                for t in 0..s.len() {
                    rows_f.push(t * b + j);
                    rows_b.push((s.len() - 1 - t) * b + j);
                }
            }
            let f = g.gather(fwd, &rows_f)?;
            let bk = g.gather(bwd, &rows_b)?;
            let both = g.concat_cols(f, bk)?;
            let w = g.param(store, mx.w);
            let bias = g.param(store, mx.b);
            let mixed = g.matmul(both, w)?;
            let mixed = g.add_row(mixed, bias)?;
            let mixed = g.tanh(mixed);
            h = g.add(h, mixed)?;
        }
        g.segment_mean(h, &spans)
    }

    /// Masked `K × (P_max + 1)` emission nodes, one per batch item.
    fn emission_nodes(&self, g: &mut Graph, store: &ParamStore, batch: &[&StructuredData]) -> Result<Vec<NodeId>> {
        let l = self.config.labels();
        let pooled = self.encode_nodes(g, store, batch)?;
        let w = g.param(store, self.ids.phi_w);
        let bias = g.param(store, self.ids.phi_b);
        let em = g.matmul(pooled, w)?;
        let em = g.add_row(em, bias)?;
        let mut out = Vec::with_capacity(batch.len());
        let mut row = 0;
        for d in batch {
            let k = d.len();
            let rows: Vec<usize> = (row..row + k).collect();
            row += k;
            let e = g.gather(em, &rows)?;
            out.push(g.masked_fill(e, &label_mask(k, l), f64::NEG_INFINITY)?);
        }
        Ok(out)
    }

    /// Candidate states `H_C` (`K × n`).
    pub fn encode(&self, data: &StructuredData) -> Result<Tensor> {
        let mut g = Graph::new();
        let node = self.encode_nodes(&mut g, &self.params, &[data])?;
        Ok(g.value(node).clone())
    }

    /// Masked emission scores (`K × (P_max + 1)`).
    pub fn emissions(&self, data: &StructuredData) -> Result<Tensor> {
        let mut g = Graph::new();
        let nodes = self.emission_nodes(&mut g, &self.params, &[data])?;
        Ok(g.value(nodes[0]).clone())
    }

    /// Viterbi ordering and the plan it induces.
    pub fn predict(&self, data: &StructuredData) -> Result<(OrderingSequence, ContentPlan)> {
        Ok(self.predict_batch(&[data])?.remove(0))
    }

    pub fn predict_plan(&self, data: &StructuredData) -> Result<ContentPlan> {
        Ok(self.predict(data)?.1)
    }

    pub fn predict_batch(&self, batch: &[&StructuredData]) -> Result<Vec<(OrderingSequence, ContentPlan)>> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(64) {
            let mut g = Graph::new();
            let nodes = self.emission_nodes(&mut g, &self.params, chunk)?;
            for (d, node) in chunk.iter().zip(nodes) {
                let (labels, _) = crf::viterbi(g.value(node), self.transitions());
                let ordering = OrderingSequence::new(labels);
                let plan = ordering_to_plan(d, &ordering)?;
                out.push((ordering, plan));
            }
        }
        Ok(out)
    }

    /// Mean CRF negative log-likelihood of the reference orderings, recorded
    /// on `g` against `store`.
    pub fn batch_nll(&self, g: &mut Graph, store: &ParamStore, batch: &[(&StructuredData, &OrderingSequence)]) -> Result<NodeId> {
        let datas: Vec<&StructuredData> = batch.iter().map(|(d, _)| *d).collect();
        let ems = self.emission_nodes(g, store, &datas)?;
        let trans = g.param(store, self.ids.transitions);
        let mut total: Option<NodeId> = None;
        for (em, (_, y)) in ems.into_iter().zip(batch) {
            let nll = g.crf_nll(em, trans, &y.labels)?;
            total = Some(match total {
                Some(t) => g.add(t, nll)?,
                None => nll,
            });
        }
        let total = total.ok_or(Error::EmptyDataset)?;
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }
}

/// `true` for labels beyond the candidate count.
fn label_mask(k: usize, labels: usize) -> Vec<bool> {
    (0..k).flat_map(|_| (0..labels).map(move |y| y > k)).collect()
}

/// Runs a GRU over time-major token ids (`t * batch + j`), leaving the state
/// unchanged where `mask` is zero. Returns all states stacked time-major.
#[allow(clippy::too_many_arguments)]
fn run_gru(
    g: &mut Graph,
    store: &ParamStore,
    p: Gru,
    embed: NodeId,
    ids: &[usize],
    mask: &[Vec<f64>],
    batch: usize,
    n: usize,
) -> Result<NodeId> {
    let x = g.gather(embed, ids)?;
    let w = g.param(store, p.w);
    let bias = g.param(store, p.b);
    let xw = g.matmul(x, w)?;
    let xw = g.add_row(xw, bias)?;
    let u_zr = g.param(store, p.u_zr);
    let u_h = g.param(store, p.u_h);
    let mut h = g.constant_matrix(batch, n, vec![0.0; batch * n])?;
    let mut states = Vec::with_capacity(mask.len());
    for (t, m) in mask.iter().enumerate() {
        let rows: Vec<usize> = (t * batch..(t + 1) * batch).collect();
        let xt = g.gather(xw, &rows)?;
        let x_zr = g.slice_cols(xt, 0, 2 * n)?;
        let x_h = g.slice_cols(xt, 2 * n, 3 * n)?;
        let h_zr = g.matmul(h, u_zr)?;
        let zr = g.add(x_zr, h_zr)?;
        let zr = g.sigmoid(zr);
        let z = g.slice_cols(zr, 0, n)?;
        let r = g.slice_cols(zr, n, 2 * n)?;
        let rh = g.mul(r, h)?;
        let rh_u = g.matmul(rh, u_h)?;
        let cand = g.add(x_h, rh_u)?;
        let cand = g.tanh(cand);
        let delta = g.sub(cand, h)?;
        let delta = g.mul(z, delta)?;
        let m = g.constant_matrix(batch, n, m.clone())?;
        let delta = g.mul(m, delta)?;
        h = g.add(h, delta)?;
        states.push(h);
    }
    g.concat_rows(&states)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for PlannerTrainConfig {
    fn default() -> Self {
        Self { epochs: 12, batch_size: 16, learning_rate: 2e-3, clip_norm: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

/// Fraction of examples whose predicted plan equals the stored plan.
pub fn plan_accuracy_on(model: &PlannerModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let datas: Vec<&StructuredData> = examples.iter().map(|e| &e.data).collect();
    let preds = model.predict_batch(&datas)?;
    let hits = preds.iter().zip(examples).filter(|((_, p), e)| *p == e.plan).count();
    Ok(hits as f64 / examples.len() as f64)
}

/// Vocabulary over the linearized inputs of `examples`.
pub fn planner_vocab(examples: &[TrainingExample]) -> Result<Vocab> {
    let lins: Vec<Vec<String>> = examples.iter().map(|e| linearize(&e.data).map(|l| l.tokens)).collect::<Result<_>>()?;
    Ok(Vocab::build(lins.iter().map(Vec::as_slice)))
}

/// Trains a planner on the stored plans by minimizing mean CRF negative
/// log-likelihood with Adam. Deterministic in `seed`. `on_epoch` sees each
/// epoch's mean training loss and, when `dev` is non-empty, dev accuracy.
pub fn train_planner(
    train: &[TrainingExample],
    dev: &[TrainingExample],
    config: PlannerConfig,
    tc: &PlannerTrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&PlannerEpoch),
) -> Result<(PlannerModel, Vec<PlannerEpoch>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut targets = Vec::with_capacity(train.len());
    for e in train {
        if e.plan.len() > config.max_positions {
            return Err(Error::PlanTooLong { len: e.plan.len(), max: config.max_positions });
        }
        targets.push(plan_to_ordering(&e.data, &e.plan)?);
    }
    let mut model = PlannerModel::new(config, planner_vocab(train)?, seed);
    let mut opt = Adam::new(tc.learning_rate)?.with_clip(tc.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(tc.batch_size.max(1)) {
            let batch: Vec<(&StructuredData, &OrderingSequence)> = chunk.iter().map(|&i| (&train[i].data, &targets[i])).collect();
            let mut g = Graph::new();
            let loss = model.batch_nll(&mut g, &model.params, &batch)?;
            loss_sum += g.value(loss).item() * chunk.len() as f64;
            g.backward(loss, &mut model.params)?;
            opt.step(&mut model.params);
        }
        let dev_accuracy = if dev.is_empty() { None } else { Some(plan_accuracy_on(&model, dev)?) };
        let rec = PlannerEpoch { epoch, train_loss: loss_sum / train.len() as f64, dev_accuracy };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((model, history))
}

//! Incremental decoding: greedy, beam search, top-k and nucleus sampling.
//!
//! The encoder runs once on the tape; decoder steps reuse cached self- and
//! cross-attention keys and values, computed with the same kernels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Attn, Ffn, GeneratorModel, Ln, SeqPair, Source, LAYER_NORM_EPS};
use crate::data::{ContentPlan, StructuredData};
use crate::error::{Error, Result};
use crate::math::{argmax, logsumexp, sqrt};
use crate::tensor::kernels::{axpy, dot, layer_norm, matmul, matmul_nt};
use crate::tensor::Graph;
use crate::vocab::{BOS_ID, EOS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    Beam { width: usize },
    TopK { k: usize },
    Nucleus { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    pub seed: u64,
    /// Generated tokens, counting `<eos>`; capped by the model's target
    /// positions.
    pub max_length: usize,
    pub num_outputs: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { strategy: DecodeStrategy::Greedy, seed: 0, max_length: 64, num_outputs: 1 }
    }
}

impl DecodeConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.num_outputs == 0 {
            return Err(Error::Config("num_outputs must be at least 1".into()));
        }
        if self.max_length == 0 {
            return Err(Error::Config("max_length must be at least 1".into()));
        }
        match self.strategy {
            DecodeStrategy::Greedy => Ok(()),
            DecodeStrategy::Beam { width: 0 } => Err(Error::Config("beam width must be at least 1".into())),
            DecodeStrategy::Beam { width } if self.num_outputs > width => {
                Err(Error::Config(format!("beam width {width} cannot return {} outputs", self.num_outputs)))
            }
            DecodeStrategy::Beam { .. } => Ok(()),
            DecodeStrategy::TopK { k } if k == 0 || k > vocab_size => {
                Err(Error::Config(format!("top-k needs 1 <= k <= {vocab_size}, got {k}")))
            }
            DecodeStrategy::TopK { .. } => Ok(()),
            DecodeStrategy::Nucleus { p } if !(p > 0.0 && p <= 1.0) => Err(Error::Config(format!("nucleus needs 0 < p <= 1, got {p}"))),
            DecodeStrategy::Nucleus { .. } => Ok(()),
        }
    }
}

/// A sampled continuation with the log-probability of every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub source: Source,
    /// Generated ids, ending with `<eos>` unless the length cap was hit.
    pub ids: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub tokens: Vec<String>,
}

impl Sampled {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    /// Teacher-forcing pair reproducing exactly the sampled steps.
    pub fn pair(&self) -> Option<SeqPair> {
        (!self.ids.is_empty()).then(|| SeqPair { source: self.source.clone(), targets: self.ids.clone() })
    }
}

/// Encoder output plus per-layer cross-attention keys and values.
pub struct Encoded {
    cross: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

/// Self-attention cache of one hypothesis.
#[derive(Clone)]
pub struct DecoderState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pos: usize,
}

fn vec_mat(x: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    matmul(x, w, 1, x.len(), n, &mut out);
    out
}

impl GeneratorModel {
    fn max_steps(&self, max_length: usize) -> usize {
        max_length.min(self.config.max_target)
    }

    pub fn encode_source(&self, source: &Source) -> Result<Encoded> {
        let mut g = Graph::new();
        let enc = self.encode_graph(&mut g, &self.params, &[source])?;
        let e = g.value(enc).data();
        let d = self.config.d_model;
        let cross = self
            .ids
            .dec
            .iter()
            .map(|l| {
                let (wk, wv) = (self.params.value(l.cross.wk).data(), self.params.value(l.cross.wv).data());
                let mut k = vec![0.0; source.len() * d];
                let mut v = vec![0.0; source.len() * d];
                matmul(e, wk, source.len(), d, d, &mut k);
                matmul(e, wv, source.len(), d, d, &mut v);
                (k, v)
            })
            .collect();
        Ok(Encoded { cross, len: source.len() })
    }

    pub fn start_state(&self) -> DecoderState {
        let n = self.ids.dec.len();
        DecoderState { keys: vec![Vec::new(); n], values: vec![Vec::new(); n], pos: 0 }
    }

    fn ln(&self, x: &[f64], p: Ln) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let (g, b) = (self.params.value(p.g).data(), self.params.value(p.b).data());
        layer_norm(x, g, b, x.len(), LAYER_NORM_EPS, &mut out, &mut xhat);
        out
    }

    /// One query row against `len` cached key/value rows.
    fn attend_row(&self, q: &[f64], keys: &[f64], values: &[f64], len: usize, wo: &[f64]) -> Vec<f64> {
        let d = self.config.d_model;
        let dh = d / self.config.heads;
        let scale = 1.0 / sqrt(dh as f64);
        let mut mixed = vec![0.0; d];
        let mut scores = vec![0.0; len];
        for h in 0..self.config.heads {
            let c = h * dh;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(&q[c..c + dh], &keys[j * d + c..j * d + c + dh]) * scale;
            }
            crate::math::softmax_in_place(&mut scores);
            for (j, &p) in scores.iter().enumerate() {
                axpy(&mut mixed[c..c + dh], p, &values[j * d + c..j * d + c + dh]);
            }
        }
        vec_mat(&mixed, wo, d)
    }

    fn ffn_row(&self, x: &[f64], p: Ffn) -> Vec<f64> {
        let (d, f) = (self.config.d_model, self.config.ffn);
        let mut h = vec_mat(x, self.params.value(p.w1).data(), f);
        for (v, b) in h.iter_mut().zip(self.params.value(p.b1).data()) {
            *v = (*v + b).max(0.0);
        }
        let mut o = vec_mat(&h, self.params.value(p.w2).data(), d);
        for (v, b) in o.iter_mut().zip(self.params.value(p.b2).data()) {
            *v += b;
        }
        o
    }

    fn proj(&self, x: &[f64], a: Attn) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.d_model;
        let w = |id| self.params.value(id).data();
        (vec_mat(x, w(a.wq), d), vec_mat(x, w(a.wk), d), vec_mat(x, w(a.wv), d))
    }

    /// Feeds `token` at the state's next position and returns next-token
    /// log-probabilities.
    pub fn step(&self, enc: &Encoded, state: &mut DecoderState, token: usize) -> Result<Vec<f64>> {
        let d = self.config.d_model;
        if state.pos >= self.config.max_target {
            return Err(Error::Config(format!("decoder position {} exceeds max_target", state.pos)));
        }
        if token >= self.vocab.len() {
            return Err(Error::Config(format!("token id {token} outside vocabulary")));
        }
        let embed = self.params.value(self.ids.embed).data();
        let pos = self.params.value(self.ids.pos_tgt).data();
        let s = sqrt(d as f64);
        let mut x: Vec<f64> = (0..d).map(|c| embed[token * d + c] * s + pos[state.pos * d + c]).collect();
        for (l, layer) in self.ids.dec.iter().enumerate() {
            let h = self.ln(&x, layer.ln1);
            let (q, k, v) = self.proj(&h, layer.self_attn);
            state.keys[l].extend_from_slice(&k);
            state.values[l].extend_from_slice(&v);
            let wo = self.params.value(layer.self_attn.wo).data();
            let a = self.attend_row(&q, &state.keys[l], &state.values[l], state.pos + 1, wo);
            axpy(&mut x, 1.0, &a);
            let h = self.ln(&x, layer.ln2);
            let q = vec_mat(&h, self.params.value(layer.cross.wq).data(), d);
            let (ck, cv) = &enc.cross[l];
            let a = self.attend_row(&q, ck, cv, enc.len, self.params.value(layer.cross.wo).data());
            axpy(&mut x, 1.0, &a);
            let h = self.ln(&x, layer.ln3);
            let f = self.ffn_row(&h, layer.ffn);
            axpy(&mut x, 1.0, &f);
        }
        state.pos += 1;
        let y = self.ln(&x, self.ids.dec_ln);
        let mut logits = self.params.value(self.ids.out_b).data().to_vec();
        matmul_nt(&y, embed, 1, d, self.vocab.len(), &mut logits);
        let lse = logsumexp(&logits);
        logits.iter_mut().for_each(|v| *v -= lse);
        Ok(logits)
    }

    fn greedy_ids(&self, enc: &Encoded, steps: usize) -> Result<Vec<usize>> {
        let mut state = self.start_state();
        let mut ids = Vec::new();
        let mut tok = BOS_ID;
        while ids.len() < steps {
            let lp = self.step(enc, &mut state, tok)?;
            tok = argmax(&lp);
            ids.push(tok);
            if tok == EOS_ID {
                break;
            }
        }
        Ok(ids)
    }

    /// Finished hypotheses ranked by log-probability divided by length.
    fn beam_ids(&self, enc: &Encoded, steps: usize, width: usize) -> Result<Vec<Vec<usize>>> {
        struct Hyp {
            ids: Vec<usize>,
            score: f64,
            state: DecoderState,
        }
        let mut live = vec![Hyp { ids: Vec::new(), score: 0.0, state: self.start_state() }];
        let mut done: Vec<(Vec<usize>, f64)> = Vec::new();
        for _ in 0..steps {
            let mut cands: Vec<(f64, usize, usize)> = Vec::new();
            let mut dists = Vec::with_capacity(live.len());
            for (b, h) in live.iter_mut().enumerate() {
                let last = h.ids.last().copied().unwrap_or(BOS_ID);
                let lp = self.step(enc, &mut h.state, last)?;
                cands.extend(lp.iter().enumerate().map(|(t, &l)| (h.score + l, b, t)));
                dists.push(lp);
            }
            cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for &(score, b, t) in cands.iter().take(width) {
                let mut ids = live[b].ids.clone();
                ids.push(t);
                if t == EOS_ID {
                    done.push((ids, score));
                } else {
                    next.push(Hyp { ids, score, state: live[b].state.clone() });
                }
            }
            live = next;
            if live.is_empty() {
                break;
            }
        }
        done.extend(live.into_iter().map(|h| (h.ids, h.score)));
        let mut ranked: Vec<(f64, usize)> = done.iter().enumerate().map(|(i, (ids, s))| (s / ids.len() as f64, i)).collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(ranked.into_iter().map(|(_, i)| done[i].0.clone()).collect())
    }

    fn sample_ids<R: Rng>(&self, enc: &Encoded, steps: usize, strategy: DecodeStrategy, rng: &mut R) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut state = self.start_state();
        let (mut ids, mut lps) = (Vec::new(), Vec::new());
        let mut tok = BOS_ID;
        while ids.len() < steps {
            let lp = self.step(enc, &mut state, tok)?;
            let probs = restrict(&lp, strategy);
            tok = draw(&probs, rng.random::<f64>());
            ids.push(tok);
            lps.push(lp[tok]);
            if tok == EOS_ID {
                break;
            }
        }
        Ok((ids, lps))
    }

    fn strip(&self, ids: &[usize]) -> Vec<String> {
        let end = if ids.last() == Some(&EOS_ID) { ids.len() - 1 } else { ids.len() };
        self.vocab.decode(&ids[..end])
    }
}

/// Sampling weights after top-k or nucleus restriction, in vocabulary
/// order. Greedy and beam leave the distribution untouched.
fn restrict(log_probs: &[f64], strategy: DecodeStrategy) -> Vec<f64> {
    let probs: Vec<f64> = log_probs.iter().map(|&l| crate::math::exp(l)).collect();
    let keep = match strategy {
        DecodeStrategy::TopK { k } if k < probs.len() => k,
        DecodeStrategy::Nucleus { p } if p < 1.0 => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            let mut cum = 0.0;
            let mut n = 0;
            for &i in &order {
                cum += probs[i];
                n += 1;
                if cum >= p {
                    break;
                }
            }
            n
        }
        _ => return probs,
    };
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut kept = vec![0.0; probs.len()];
    for &i in &order[..keep] {
        kept[i] = probs[i];
    }
    kept
}

/// Inverse-CDF draw over unnormalized weights, walking in index order.
fn draw(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last = i;
            if target < cum {
                return i;
            }
        }
    }
    last
}

/// Decodes `num_outputs` texts for `(data, plan)`.
///
/// Greedy repeats its single output; beam returns the best finished
/// hypotheses; sampling draws every output from one stream seeded by
/// `cfg.seed`.
pub fn decode(model: &GeneratorModel, data: &StructuredData, plan: &ContentPlan, cfg: &DecodeConfig) -> Result<Vec<Vec<String>>> {
    cfg.validate(model.vocab.len())?;
    let source = model.source(data, plan)?;
    let enc = model.encode_source(&source)?;
    let steps = model.max_steps(cfg.max_length);
    match cfg.strategy {
        DecodeStrategy::Greedy => {
            let out = model.strip(&model.greedy_ids(&enc, steps)?);
            Ok(vec![out; cfg.num_outputs])
        }
        DecodeStrategy::Beam { width } => {
            let ranked = model.beam_ids(&enc, steps, width)?;
            Ok(ranked.iter().take(cfg.num_outputs).map(|ids| model.strip(ids)).collect())
        }
        s => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            (0..cfg.num_outputs).map(|_| Ok(model.strip(&model.sample_ids(&enc, steps, s, &mut rng)?.0))).collect()
        }
    }
}

/// Unrestricted multinomial sample at temperature 1 with per-step
/// log-probabilities.
pub fn sample(model: &GeneratorModel, data: &StructuredData, plan: &ContentPlan, seed: u64, max_length: usize) -> Result<Sampled> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(model, data, plan, &mut rng, max_length)
}

/// [`sample`] drawing from a caller-owned generator.
pub fn sample_with<R: Rng>(
    model: &GeneratorModel,
    data: &StructuredData,
    plan: &ContentPlan,
    rng: &mut R,
    max_length: usize,
) -> Result<Sampled> {
    let source = model.source(data, plan)?;
    let enc = model.encode_source(&source)?;
    let steps = model.max_steps(max_length.max(1));
    let (ids, log_probs) = model.sample_ids(&enc, steps, DecodeStrategy::Nucleus { p: 1.0 }, rng)?;
    let tokens = model.strip(&ids);
    Ok(Sampled { source, ids, log_probs, tokens })
}

//! Structure-aware REINFORCE fine-tuning of the generator.
//!
//! A sampled text is rewarded for matching the reference wording and for
//! realizing the reference plan, with the realized plan recovered by the
//! delexicalizer. The reward is a constant during differentiation.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{StructuredData, TrainingExample};
use crate::delex::delexicalize;
use crate::error::{Error, Result};
use crate::generator::decode::sample_with;
use crate::generator::{GeneratorModel, SeqPair};
use crate::metrics::sentence_bleu;
use crate::tensor::{Adam, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// Exponential moving average of batch-mean rewards.
    MovingAverage {
        decay: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RLConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub sample_max_length: usize,
    pub baseline: Baseline,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for RLConfig {
    fn default() -> Self {
        Self { steps: 1000, batch_size: 16, sample_max_length: 64, baseline: Baseline::None, learning_rate: 1e-4, clip_norm: 1.0, seed: 0 }
    }
}

/// `B(S, S′) + B(C, F(T, S′))` with smoothed sentence BLEU in `[0, 1]`:
/// order 4 on text and `min(4, |C|)` on plans.
pub fn reward<S: AsRef<str>>(reference: &[String], sampled: &[S], data: &StructuredData, plan: &[String]) -> f64 {
    let sampled: Vec<String> = sampled.iter().map(|t| t.as_ref().into()).collect();
    let realized = delexicalize(data, &sampled);
    sentence_bleu(&sampled, reference, 4) + sentence_bleu(&realized, plan, plan.len().min(4))
}

/// `-(R - baseline) · Σ log p`.
pub fn rl_loss(reward: f64, baseline: f64, step_log_probs: &[f64]) -> f64 {
    -(reward - baseline) * step_log_probs.iter().sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RLStep {
    pub step: usize,
    pub lm_loss: f64,
    pub mean_reward: f64,
    pub baseline: f64,
}

/// Joint fine-tuning: each step minimizes the batch's mean per-token MLE loss
/// plus the mean REINFORCE loss of one sample per example.
pub fn rl_finetune(
    mut model: GeneratorModel,
    train: &[TrainingExample],
    cfg: &RLConfig,
    mut on_step: impl FnMut(&RLStep),
) -> Result<(GeneratorModel, Vec<RLStep>)> {
    if cfg.steps == 0 {
        return Ok((model, Vec::new()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.sample_max_length == 0 {
        return Err(Error::Config("batch_size and sample_max_length must be positive".into()));
    }
    let pairs = train.iter().map(|e| model.pair(&e.data, &e.plan, &e.text)).collect::<Result<Vec<_>>>()?;
    let plans: Vec<_> = train.iter().map(|e| e.plan.tokens(&e.data)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.learning_rate)?.with_clip(cfg.clip_norm);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let mut baseline = 0.0;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let mut samples: Vec<SeqPair> = Vec::with_capacity(batch.len());
        let mut rewards = Vec::with_capacity(batch.len());
        for &i in &batch {
            let e = &train[i];
            let s = sample_with(&model, &e.data, &e.plan, &mut rng, cfg.sample_max_length)?;
            rewards.push(reward(&e.text, &s.tokens, &e.data, &plans[i]));
            samples.extend(s.pair());
        }
        let b = match cfg.baseline {
            Baseline::None => 0.0,
            Baseline::MovingAverage { .. } => baseline,
        };
        let n = batch.len() as f64;
        let weights: Vec<f64> = rewards.iter().map(|r| (r - b) / n).collect();
        let lm_batch: Vec<SeqPair> = batch.iter().map(|&i| pairs[i].clone()).collect();
        let mut g = Graph::new();
        let lm = model.batch_loss(&mut g, model.params(), &lm_batch)?;
        let rl = model.weighted_nll(&mut g, model.params(), &samples, &weights)?;
        let total = g.add(lm, rl)?;
        g.backward(total, model.params_mut())?;
        opt.step(model.params_mut());
        let mean_reward = rewards.iter().sum::<f64>() / n;
        if let Baseline::MovingAverage { decay } = cfg.baseline {
            baseline = if step == 1 { mean_reward } else { decay * baseline + (1.0 - decay) * mean_reward };
        }
        let rec = RLStep { step, lm_loss: g.value(lm).item(), mean_reward, baseline: b };
        on_step(&rec);
        history.push(rec);
    }
    Ok((model, history))
}

/// Mean reward of one seeded sample per example.
pub fn mean_reward(model: &GeneratorModel, examples: &[TrainingExample], seed: u64, max_length: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for e in examples {
        let s = sample_with(model, &e.data, &e.plan, &mut rng, max_length)?;
        total += reward(&e.text, &s.tokens, &e.data, &e.plan.tokens(&e.data));
    }
    Ok(total / examples.len() as f64)
}

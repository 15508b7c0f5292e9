//! Evaluation metrics: corpus and sentence BLEU, S-BLEU, Self-BLEU, iBLEU,
//! plan accuracy, plan BLEU-2 and a word-overlap PARENT variant.
//!
//! Corpus-level scores are on a 0–100 scale; [`sentence_bleu`] returns 0–1
//! for use as a reward.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::StructuredData;
use crate::delex::{delexicalize, Normalization};
use crate::error::{Error, Result};
use crate::math::{exp, ln};

pub const DEFAULT_IBLEU_ALPHA: f64 = 0.8;
pub const SENTENCE_BLEU_EPSILON: f64 = 0.1;
pub const PARENT_LAMBDA: f64 = 0.5;

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram match count of `hyp` against the per-n-gram maximum over
/// `refs`, and the number of hypothesis n-grams.
fn clipped_matches(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
    for r in refs {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = h.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

/// Reference length closest to `hyp_len`, shorter winning ties.
fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter().map(Vec::len).min_by_key(|&r| (r.abs_diff(hyp_len), r)).unwrap_or(0)
}

fn brevity_penalty(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        exp(1.0 - ref_len as f64 / hyp_len as f64)
    }
}

/// Corpus BLEU with clipped counts pooled over the corpus and a brevity
/// penalty against the closest reference length.
///
/// Orders beyond the longest hypothesis in the corpus (no n-grams at all)
/// are dropped from the geometric mean, so `corpus_bleu(x, x) = 100` holds
/// for short sentences too. A zero precision at any remaining order gives 0.
pub fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>], max_order: usize) -> Result<f64> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch(hyps.len(), refs.len()));
    }
    let mut matches = alloc::vec![0usize; max_order];
    let mut totals = alloc::vec![0usize; max_order];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += closest_ref_len(h.len(), r);
        for n in 1..=max_order {
            let (m, t) = clipped_matches(h, r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    let order = totals.iter().take_while(|&&t| t > 0).count();
    if order == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..order {
        if matches[n] == 0 {
            return Ok(0.0);
        }
        log_sum += ln(matches[n] as f64 / totals[n] as f64);
    }
    Ok(100.0 * brevity_penalty(hyp_len, ref_len) * exp(log_sum / order as f64))
}

/// Smoothed sentence BLEU in `[0, 1]` against a single reference.
///
/// The order is `min(max_order, |hyp|, |ref|)`; an order of zero (either side
/// empty) scores 0. Orders with no clipped matches contribute
/// [`SENTENCE_BLEU_EPSILON`] in place of the zero numerator, which leaves
/// identical sequences at exactly 1.
pub fn sentence_bleu(hyp: &[String], reference: &[String], max_order: usize) -> f64 {
    let order = max_order.min(hyp.len()).min(reference.len());
    if order == 0 {
        return 0.0;
    }
    let refs = [reference.to_vec()];
    let mut log_sum = 0.0;
    for n in 1..=order {
        let (m, t) = clipped_matches(hyp, &refs, n);
        let num = if m == 0 { SENTENCE_BLEU_EPSILON } else { m as f64 };
        log_sum += ln(num / t as f64);
    }
    brevity_penalty(hyp.len(), reference.len()) * exp(log_sum / order as f64)
}

/// Plan adherence of one output: BLEU between the reference plan and the plan
/// the delexicalizer recovers from `text`, at order `min(4, |plan|)`.
///
/// An empty reference plan scores 100 when the output mentions no values and
/// 0 otherwise.
pub fn s_bleu<S: AsRef<str>>(data: &StructuredData, ref_plan: &[String], text: &[S]) -> f64 {
    let realized = delexicalize(data, text);
    if ref_plan.is_empty() {
        return if realized.is_empty() { 100.0 } else { 0.0 };
    }
    corpus_bleu(&[realized], &[alloc::vec![ref_plan.to_vec()]], ref_plan.len().min(4)).unwrap_or(0.0)
}

/// Corpus S-BLEU over realized plans against reference plans. The order is
/// `min(4, shortest non-empty reference plan)`.
pub fn corpus_s_bleu(realized: &[Vec<String>], ref_plans: &[Vec<String>]) -> Result<f64> {
    let order = ref_plans.iter().map(Vec::len).filter(|&l| l > 0).min().unwrap_or(1).min(4);
    let refs: Vec<Vec<Vec<String>>> = ref_plans.iter().map(|p| alloc::vec![p.clone()]).collect();
    corpus_bleu(realized, &refs, order)
}

/// Mean BLEU-4 of each output against all the others as references.
pub fn self_bleu(outputs: &[Vec<String>]) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::TooFewOutputs(outputs.len()));
    }
    let mut total = 0.0;
    for (i, o) in outputs.iter().enumerate() {
        let others: Vec<Vec<String>> = outputs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x.clone()).collect();
        total += corpus_bleu(core::slice::from_ref(o), &[others], 4)?;
    }
    Ok(total / outputs.len() as f64)
}

/// Mean Self-BLEU over examples, each with its own output set.
pub fn mean_self_bleu(outputs: &[Vec<Vec<String>>]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0.0;
    for o in outputs {
        total += self_bleu(o)?;
    }
    Ok(total / outputs.len() as f64)
}

pub fn ibleu(bleu: f64, self_bleu: f64, alpha: f64) -> f64 {
    alpha * bleu - (1.0 - alpha) * self_bleu
}

/// BLEU-4 for strategies that return several outputs per input: the corpus
/// BLEU of the `j`-th outputs, averaged over `j`.
pub fn multi_output_bleu(outputs: &[Vec<Vec<String>>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    let n = outputs.first().map(Vec::len).ok_or(Error::EmptyCorpus)?;
    if n == 0 {
        return Err(Error::TooFewOutputs(0));
    }
    if let Some(bad) = outputs.iter().find(|o| o.len() != n) {
        return Err(Error::LengthMismatch(n, bad.len()));
    }
    let mut total = 0.0;
    for j in 0..n {
        let hyps: Vec<Vec<String>> = outputs.iter().map(|o| o[j].clone()).collect();
        total += corpus_bleu(&hyps, refs, 4)?;
    }
    Ok(total / n as f64)
}

pub fn plan_accuracy(pred: &[Vec<String>], reference: &[Vec<String>]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch(pred.len(), reference.len()));
    }
    let hits = pred.iter().zip(reference).filter(|(p, r)| p == r).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn plan_bleu2(pred: &[Vec<String>], reference: &[Vec<String>]) -> Result<f64> {
    let refs: Vec<Vec<Vec<String>>> = reference.iter().map(|r| alloc::vec![r.clone()]).collect();
    corpus_bleu(pred, &refs, 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ParentScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// PARENT-W for one example, on a 0–1 scale.
///
/// All tokens are normalized as in the delexicalizer. With `w(g)` the share
/// of n-gram `g`'s tokens found among the table's key and value tokens and
/// `ρ(g) = min(1, c_ref(g) / c_hyp(g))`:
///
/// ```text
/// P_n = Σ_g c_hyp(g)·(ρ(g) + (1 − ρ(g))·w(g)) / Σ_g c_hyp(g)
/// P   = geometric mean of P_1..P_N,   N = min(4, |hyp|)
/// R_ref = geometric mean over n ≤ min(4, |ref|) of clipped n-gram recall
/// R_tab = mean over records of the share of value tokens present in hyp
/// R   = R_ref^(1−λ) · R_tab^λ
/// ```
pub fn parent_w_example(hyp: &[String], reference: &[String], data: &StructuredData) -> ParentScore {
    let norm = Normalization::default();
    let nv = |s: &[String]| -> Vec<String> { s.iter().map(|t| norm.apply(t)).collect() };
    let (hyp, reference) = (nv(hyp), nv(reference));
    let mut table: BTreeSet<String> = BTreeSet::new();
    for r in data.records() {
        table.extend(r.key_tokens().iter().map(|t| norm.apply(t)));
        for v in r.matchable_values.iter().chain(&r.auxiliary_values) {
            table.extend(v.iter().map(|t| norm.apply(t)));
        }
    }

    let geo = |ps: &[f64]| -> f64 {
        if ps.is_empty() || ps.contains(&0.0) {
            0.0
        } else {
            exp(ps.iter().map(|&p| ln(p)).sum::<f64>() / ps.len() as f64)
        }
    };

    let mut precisions = Vec::new();
    for n in 1..=hyp.len().min(4) {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&reference, n);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, &c) in &h {
            let rho = (r.get(g).copied().unwrap_or(0) as f64 / c as f64).min(1.0);
            let w = g.iter().filter(|t| table.contains(*t)).count() as f64 / n as f64;
            num += c as f64 * (rho + (1.0 - rho) * w);
            den += c as f64;
        }
        precisions.push(num / den);
    }
    let precision = geo(&precisions);

    let mut recalls = Vec::new();
    for n in 1..=reference.len().min(4) {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&reference, n);
        let matched: usize = r.iter().map(|(g, &c)| c.min(h.get(g).copied().unwrap_or(0))).sum();
        recalls.push(matched as f64 / (reference.len() + 1 - n) as f64);
    }
    let ref_recall = geo(&recalls);

    let hyp_set: BTreeSet<&String> = hyp.iter().collect();
    let mut tab_total = 0.0;
    for r in data.records() {
        let vals: Vec<String> = r.matchable_values.iter().flatten().map(|t| norm.apply(t)).collect();
        let present = vals.iter().filter(|t| hyp_set.contains(t)).count();
        tab_total += if vals.is_empty() { 0.0 } else { present as f64 / vals.len() as f64 };
    }
    let tab_recall = tab_total / data.len() as f64;
    let recall = if ref_recall == 0.0 || tab_recall == 0.0 {
        0.0
    } else {
        exp((1.0 - PARENT_LAMBDA) * ln(ref_recall) + PARENT_LAMBDA * ln(tab_recall))
    };
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    ParentScore { precision, recall, f1 }
}

/// PARENT-W averaged over examples, on a 0–100 scale.
pub fn parent_w(hyps: &[Vec<String>], refs: &[Vec<String>], data: &[StructuredData]) -> Result<ParentScore> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch(hyps.len(), refs.len()));
    }
    if hyps.len() != data.len() {
        return Err(Error::LengthMismatch(hyps.len(), data.len()));
    }
    let mut acc = ParentScore::default();
    for ((h, r), d) in hyps.iter().zip(refs).zip(data) {
        let s = parent_w_example(h, r, d);
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    let k = 100.0 / hyps.len() as f64;
    Ok(ParentScore { precision: acc.precision * k, recall: acc.recall * k, f1: acc.f1 * k })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub examples: usize,
    pub outputs_per_example: usize,
}

/// Metric bundle for one evaluated corpus. Diversity and planning scores are
/// present only when the inputs allow them.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub parent_w: ParentScore,
    pub s_bleu: f64,
    pub self_bleu: Option<f64>,
    pub ibleu: Option<f64>,
    pub plan_accuracy: Option<f64>,
    pub plan_bleu2: Option<f64>,
    pub counts: EvalCounts,
}

/// One example's evaluation inputs: the data, its reference text, the plan
/// the outputs were conditioned on, and one or more outputs.
pub struct EvalItem<'a> {
    pub data: &'a StructuredData,
    pub reference: &'a [String],
    pub plan: &'a [String],
    pub outputs: &'a [Vec<String>],
}

/// (predicted, reference) plan token lists.
pub type PlanPairs<'a> = (&'a [Vec<String>], &'a [Vec<String>]);

/// Builds a report from per-example items. `plans` optionally carries
/// (predicted, reference) plan pairs for the planning scores.
pub fn evaluate(items: &[EvalItem<'_>], plans: Option<PlanPairs<'_>>) -> Result<EvalReport> {
    let first = items.first().ok_or(Error::EmptyCorpus)?;
    let n_out = first.outputs.len();
    if n_out == 0 {
        return Err(Error::TooFewOutputs(0));
    }
    let outputs: Vec<Vec<Vec<String>>> = items.iter().map(|i| i.outputs.to_vec()).collect();
    let refs: Vec<Vec<Vec<String>>> = items.iter().map(|i| alloc::vec![i.reference.to_vec()]).collect();
    let bleu4 = multi_output_bleu(&outputs, &refs)?;

    let mut parent = ParentScore::default();
    let mut s_total = 0.0;
    for j in 0..n_out {
        let hyps: Vec<Vec<String>> = outputs.iter().map(|o| o[j].clone()).collect();
        let plain_refs: Vec<Vec<String>> = items.iter().map(|i| i.reference.to_vec()).collect();
        let data: Vec<StructuredData> = items.iter().map(|i| i.data.clone()).collect();
        let p = parent_w(&hyps, &plain_refs, &data)?;
        parent.precision += p.precision / n_out as f64;
        parent.recall += p.recall / n_out as f64;
        parent.f1 += p.f1 / n_out as f64;
        let realized: Vec<Vec<String>> = items.iter().map(|i| delexicalize(i.data, &i.outputs[j])).collect();
        let ref_plans: Vec<Vec<String>> = items.iter().map(|i| i.plan.to_vec()).collect();
        s_total += corpus_s_bleu(&realized, &ref_plans)?;
    }

    let (self_b, ib) = if n_out >= 2 {
        let sb = mean_self_bleu(&outputs)?;
        (Some(sb), Some(ibleu(bleu4, sb, DEFAULT_IBLEU_ALPHA)))
    } else {
        (None, None)
    };
    let (plan_acc, plan_b2) = match plans {
        Some((p, r)) => (Some(plan_accuracy(p, r)?), Some(plan_bleu2(p, r)?)),
        None => (None, None),
    };
    Ok(EvalReport {
        bleu4,
        parent_w: parent,
        s_bleu: s_total / n_out as f64,
        self_bleu: self_b,
        ibleu: ib,
        plan_accuracy: plan_acc,
        plan_bleu2: plan_b2,
        counts: EvalCounts { examples: items.len(), outputs_per_example: n_out },
    })
}

//! Linear-chain CRF over position labels.
//!
//! Emissions are a `K × L` matrix (one row per candidate record, one column
//! per label with the empty label at column 0) and transitions an `L × L`
//! matrix indexed `[previous, current]`. A labelling `y` scores
//!
//! ```text
//! f(y) = Σ_i emissions[i][y_i] + Σ_{i≥2} transitions[y_{i-1}][y_i]
//! ```
//!
//! with no start or stop terms. Masked entries are `-inf`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, logsumexp};
use crate::tensor::Tensor;

pub fn sequence_score(emissions: &Tensor, transitions: &Tensor, labels: &[usize]) -> f64 {
    let mut s = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        s += emissions.at(i, y);
        if i > 0 {
            s += transitions.at(labels[i - 1], y);
        }
    }
    s
}

/// Forward-recursion log-scores `alpha[i][y]`.
fn forward(emissions: &Tensor, transitions: &Tensor) -> Vec<f64> {
    let (k, l) = (emissions.rows(), emissions.cols());
    let mut alpha = vec![f64::NEG_INFINITY; k * l];
    if k == 0 {
        return alpha;
    }
    alpha[..l].copy_from_slice(emissions.row(0));
    let mut buf = vec![0.0; l];
    for i in 1..k {
        for y in 0..l {
            for (yp, b) in buf.iter_mut().enumerate() {
                *b = alpha[(i - 1) * l + yp] + transitions.at(yp, y);
            }
            alpha[i * l + y] = logsumexp(&buf) + emissions.at(i, y);
        }
    }
    alpha
}

/// Backward-recursion log-scores `beta[i][y]`: log-sum over every suffix
/// after step `i` given label `y` at step `i`.
fn backward(emissions: &Tensor, transitions: &Tensor) -> Vec<f64> {
    let (k, l) = (emissions.rows(), emissions.cols());
    let mut beta = vec![0.0; k * l];
    let mut buf = vec![0.0; l];
    for i in (0..k.saturating_sub(1)).rev() {
        for yp in 0..l {
            for (y, b) in buf.iter_mut().enumerate() {
                *b = transitions.at(yp, y) + emissions.at(i + 1, y) + beta[(i + 1) * l + y];
            }
            beta[i * l + yp] = logsumexp(&buf);
        }
    }
    beta
}

/// `ln Z`: log-sum-exp of the score over every labelling.
pub fn log_partition(emissions: &Tensor, transitions: &Tensor) -> f64 {
    let (k, l) = (emissions.rows(), emissions.cols());
    if k == 0 {
        return 0.0;
    }
    let alpha = forward(emissions, transitions);
    logsumexp(&alpha[(k - 1) * l..])
}

/// Posterior marginals: per-step label probabilities (`K × L`, row-major)
/// and expected transition counts summed over steps (`L × L`).
pub fn marginals(emissions: &Tensor, transitions: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (k, l) = (emissions.rows(), emissions.cols());
    let alpha = forward(emissions, transitions);
    let beta = backward(emissions, transitions);
    let log_z = if k == 0 { 0.0 } else { logsumexp(&alpha[(k - 1) * l..]) };
    let mut unary = vec![0.0; k * l];
    for (u, (a, b)) in unary.iter_mut().zip(alpha.iter().zip(&beta)) {
        let s = a + b;
        if s != f64::NEG_INFINITY {
            *u = exp(s - log_z);
        }
    }
    let mut pairwise = vec![0.0; l * l];
    for i in 1..k {
        for yp in 0..l {
            let a = alpha[(i - 1) * l + yp];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for y in 0..l {
                let s = a + transitions.at(yp, y) + emissions.at(i, y) + beta[i * l + y];
                if s != f64::NEG_INFINITY {
                    pairwise[yp * l + y] += exp(s - log_z);
                }
            }
        }
    }
    (unary, pairwise)
}

/// Highest-scoring labelling and its score. Ties go to the lower label,
/// resolved from the last step backwards (final label first, then each
/// backpointer).
pub fn viterbi(emissions: &Tensor, transitions: &Tensor) -> (Vec<usize>, f64) {
    let (k, l) = (emissions.rows(), emissions.cols());
    if k == 0 {
        return (Vec::new(), 0.0);
    }
    let mut delta = emissions.row(0).to_vec();
    let mut back = vec![0usize; k * l];
    let mut next = vec![0.0; l];
    for i in 1..k {
        for y in 0..l {
            let mut best = 0;
            let mut best_s = delta[0] + transitions.at(0, y);
            for (yp, &d) in delta.iter().enumerate().skip(1) {
                let s = d + transitions.at(yp, y);
                if s > best_s {
                    best = yp;
                    best_s = s;
                }
            }
            back[i * l + y] = best;
            next[y] = best_s + emissions.at(i, y);
        }
        core::mem::swap(&mut delta, &mut next);
    }
    let last = crate::math::argmax(&delta);
    let score = delta[last];
    let mut labels = vec![0; k];
    labels[k - 1] = last;
    for i in (1..k).rev() {
        labels[i - 1] = back[i * l + labels[i]];
    }
    (labels, score)
}

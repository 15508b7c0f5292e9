//! The forward, backward and Viterbi recursions checked against brute-force
//! enumeration of every labelling.

use plangen_core::crf::{log_partition, marginals, sequence_score, viterbi};
use plangen_core::tensor::{grad_check, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// All labellings of length `k` over `l` labels, ordered so that earlier
/// items win ties under the documented rule: compare the last label first,
/// then walk backwards.
fn labellings(k: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let total = l.pow(k as u32);
    for mut code in 0..total {
        let mut y = vec![0; k];
        for i in (0..k).rev() {
            y[i] = code % l;
            code /= l;
        }
        out.push(y);
    }
    out.sort_by(|a, b| a.iter().rev().cmp(b.iter().rev()));
    out
}

fn brute(em: &Tensor, tr: &Tensor) -> (f64, Vec<usize>, f64) {
    let all = labellings(em.rows(), em.cols());
    let scores: Vec<f64> = all.iter().map(|y| sequence_score(em, tr, y)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let best = scores.iter().position(|&s| s == max).unwrap();
    (z, all[best].clone(), max)
}

fn random_instance(rng: &mut ChaCha8Rng, integer: bool) -> (Tensor, Tensor) {
    let k = rng.random_range(1..=5);
    let l = rng.random_range(2..=6);
    let mut draw = |n: usize| -> Vec<f64> {
        (0..n).map(|_| if integer { rng.random_range(-2..=2) as f64 } else { rng.random_range(-3.0..3.0) }).collect()
    };
    let em = Tensor::from_vec(&[k, l], draw(k * l)).unwrap();
    let tr = Tensor::from_vec(&[l, l], draw(l * l)).unwrap();
    (em, tr)
}

#[test]
fn thousand_random_instances_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..1000 {
        // every fourth instance uses small integers so exact ties occur
        let (em, tr) = random_instance(&mut rng, case % 4 == 0);
        let (z, best, max) = brute(&em, &tr);
        assert!((log_partition(&em, &tr) - z).abs() < 1e-9, "case {case}");
        let (path, score) = viterbi(&em, &tr);
        assert_eq!(path, best, "case {case}");
        assert!((score - max).abs() < 1e-12);
    }
}

#[test]
fn marginals_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (em, tr) = random_instance(&mut rng, false);
        let (k, l) = (em.rows(), em.cols());
        let z = log_partition(&em, &tr);
        let mut unary = vec![0.0; k * l];
        for y in labellings(k, l) {
            let p = (sequence_score(&em, &tr, &y) - z).exp();
            for (i, &yi) in y.iter().enumerate() {
                unary[i * l + yi] += p;
            }
        }
        let (got, _) = marginals(&em, &tr);
        for (a, b) in got.iter().zip(&unary) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn masked_labels_are_never_decoded() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let (mut em, tr) = random_instance(&mut rng, false);
        let (k, l) = (em.rows(), em.cols());
        // labels above the record count are masked, as in the planner
        for i in 0..k {
            for y in (k + 1)..l {
                em.data_mut()[i * l + y] = f64::NEG_INFINITY;
            }
        }
        let (path, _) = viterbi(&em, &tr);
        assert!(path.iter().all(|&y| y <= k));
        let (z, best, _) = brute(&em, &tr);
        assert_eq!(path, best);
        assert!((log_partition(&em, &tr) - z).abs() < 1e-9);
    }
}

#[test]
fn nll_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let (em, tr) = random_instance(&mut rng, false);
        let labels: Vec<usize> = (0..em.rows()).map(|_| rng.random_range(0..em.cols())).collect();
        let mut store = ParamStore::new();
        let e = store.add("em", em);
        let t = store.add("tr", tr);
        let err = grad_check(
            &mut store,
            |s, g: &mut Graph| {
                let (en, tn) = (g.param(s, e), g.param(s, t));
                g.crf_nll(en, tn, &labels)
            },
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}

proptest! {
    #[test]
    fn partition_bounds_every_labelling(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (em, tr) = random_instance(&mut rng, false);
        let z = log_partition(&em, &tr);
        let (path, score) = viterbi(&em, &tr);
        prop_assert!(score <= z + 1e-12);
        prop_assert!((sequence_score(&em, &tr, &path) - score).abs() < 1e-12);
        // the best path carries at least 1 / L^K of the mass
        let bound = z - (em.cols() as f64).ln() * em.rows() as f64;
        prop_assert!(score >= bound - 1e-9);
    }
}

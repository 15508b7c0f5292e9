use std::collections::HashMap;

use plangen_core::data::StructuredData;
use plangen_core::metrics::{corpus_bleu, ibleu, parent_w_example, plan_bleu2, self_bleu, sentence_bleu, DEFAULT_IBLEU_ALPHA};
use proptest::prelude::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

/// Straightforward corpus BLEU with hash maps, written independently of the
/// library version.
fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>], max_order: usize) -> f64 {
    let count = |s: &[String], n: usize| {
        let mut m: HashMap<Vec<String>, usize> = HashMap::new();
        for i in 0..(s.len() + 1).saturating_sub(n) {
            *m.entry(s[i..i + n].to_vec()).or_default() += 1;
        }
        m
    };
    let mut precisions = Vec::new();
    for n in 1..=max_order {
        let (mut hit, mut total) = (0usize, 0usize);
        for (h, rs) in hyps.iter().zip(refs) {
            let mut best: HashMap<Vec<String>, usize> = HashMap::new();
            for r in rs {
                for (g, c) in count(r, n) {
                    let e = best.entry(g).or_default();
                    *e = (*e).max(c);
                }
            }
            for (g, c) in count(h, n) {
                hit += c.min(*best.get(&g).unwrap_or(&0));
                total += c;
            }
        }
        if total == 0 {
            break;
        }
        precisions.push(hit as f64 / total as f64);
    }
    if precisions.is_empty() || precisions.contains(&0.0) {
        return 0.0;
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = hyps
        .iter()
        .zip(refs)
        .map(|(h, rs)| {
            let mut lens: Vec<usize> = rs.iter().map(Vec::len).collect();
            lens.sort_by_key(|&l| ((l as i64 - h.len() as i64).abs(), l));
            lens[0]
        })
        .sum();
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / precisions.len() as f64;
    100.0 * bp * mean.exp()
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "the", "on"]), 1..12)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

proptest! {
    #[test]
    fn corpus_bleu_matches_counting_oracle(
        pairs in prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..3)), 1..6),
        order in 1usize..=4,
    ) {
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let got = corpus_bleu(&hyps, &refs, order).unwrap();
        let want = oracle_bleu(&hyps, &refs, order);
        prop_assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn identical_corpus_scores_100(hyps in prop::collection::vec(sentence(), 1..6)) {
        let refs: Vec<Vec<Vec<String>>> = hyps.iter().map(|h| vec![h.clone()]).collect();
        prop_assert!((corpus_bleu(&hyps, &refs, 4).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn self_bleu_ignores_output_order(outputs in prop::collection::vec(sentence(), 2..6), rot in 0usize..6) {
        let mut rotated = outputs.clone();
        rotated.rotate_left(rot % outputs.len());
        rotated.reverse();
        let (a, b) = (self_bleu(&outputs).unwrap(), self_bleu(&rotated).unwrap());
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&a));
    }

    #[test]
    fn sentence_bleu_is_bounded_and_reflexive(h in sentence(), r in sentence()) {
        let s = sentence_bleu(&h, &r, 4);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!((sentence_bleu(&h, &h, 4) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn self_bleu_of_identical_outputs_is_100() {
    let out = vec![toks("Alma Jodorowsky played Evelyn in Kids in Love ."); 5];
    assert!((self_bleu(&out).unwrap() - 100.0).abs() < 1e-9);
}

#[test]
fn ibleu_matches_reference_rows() {
    let rows = [
        (44.15, 100.0, 15.32),
        (41.58, 75.04, 18.26),
        (42.47, 82.20, 17.54),
        (42.92, 84.26, 17.48),
        (48.43, 100.0, 18.74),
        (45.12, 83.68, 19.36),
        (46.31, 88.86, 19.28),
        (46.53, 90.11, 19.20),
        (49.10, 100.0, 19.28),
        (40.75, 25.91, 27.42),
        (54.43, 100.0, 23.54),
        (42.99, 26.90, 29.01),
    ];
    for (bleu, selfb, want) in rows {
        let got = ibleu(bleu, selfb, DEFAULT_IBLEU_ALPHA);
        assert!((got - want).abs() <= 0.01, "{bleu}/{selfb}: {got} vs {want}");
    }
}

#[test]
fn parent_w_hand_expansion() {
    let data = StructuredData::table(&[("Name", "Bean")]).unwrap();
    let s = parent_w_example(&toks("Bean walked far"), &toks("Bean walked"), &data);
    // P_1 = 2/3, P_2 = 1/2, P_3 = 1/3 ("bean" is the only table token)
    let precision = (1.0f64 / 9.0).cbrt();
    assert!((s.precision - precision).abs() < 1e-12, "{}", s.precision);
    // reference and table recall are both 1
    assert!((s.recall - 1.0).abs() < 1e-12);
    assert!((s.f1 - 2.0 * precision / (1.0 + precision)).abs() < 1e-12);

    // a wrong word that is a table token still earns precision credit
    let s = parent_w_example(&toks("Name walked"), &toks("Bean walked"), &data);
    assert!((s.precision - 0.5f64.sqrt()).abs() < 1e-12, "{}", s.precision);
}

#[test]
fn plan_bleu2_on_a_swapped_plan() {
    let got = plan_bleu2(&[toks("A B C D")], &[toks("A B D C")]).unwrap();
    // unigrams 4/4, bigrams 1/3
    assert!((got - 100.0 * (1.0f64 / 3.0).sqrt()).abs() < 1e-9);
    assert_eq!(plan_bleu2(&[toks("A B")], &[toks("A B")]).unwrap(), 100.0);
}

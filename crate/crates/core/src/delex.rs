//! Heuristic delexicalizer: recovers the content plan realized by a text by
//! locating record values in it.
//!
//! Matching is exact on token boundaries after normalization (case folding
//! and comma stripping inside digit strings). The scan runs left to right;
//! at each position the longest matching value wins, ties going to the lowest
//! record index, and claimed tokens are skipped. A record may match several
//! times.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{ContentPlan, StructuredData};

/// Token normalization applied to both values and text before matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub case_insensitive: bool,
    /// Drop `,` from tokens made only of digits, commas and periods, so
    /// `2,900` matches `2900`.
    pub strip_digit_commas: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { case_insensitive: true, strip_digit_commas: true }
    }
}

impl Normalization {
    pub fn apply(&self, token: &str) -> String {
        let mut t: String = if self.case_insensitive { token.to_lowercase() } else { token.into() };
        if self.strip_digit_commas
            && t.contains(|c: char| c.is_ascii_digit())
            && t.chars().all(|c| c.is_ascii_digit() || c == ',' || c == '.')
        {
            t.retain(|c| c != ',');
        }
        t
    }
}

/// A claimed half-open token range `start..end` of the text attributed to a
/// record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueSpan {
    pub record_index: usize,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Delexicalizer {
    pub normalization: Normalization,
}

impl Delexicalizer {
    pub fn new(normalization: Normalization) -> Self {
        Self { normalization }
    }

    pub fn find_value_spans<S: AsRef<str>>(&self, data: &StructuredData, text: &[S]) -> Vec<ValueSpan> {
        let norm = |t: &str| self.normalization.apply(t);
        let text: Vec<String> = text.iter().map(|t| norm(t.as_ref())).collect();
        let values: Vec<(usize, Vec<String>)> = data
            .records()
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.matchable_values.iter().filter(|v| !v.is_empty()).map(move |v| (i, v.iter().map(|t| norm(t)).collect())))
            .collect();
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let mut best: Option<(usize, usize)> = None; // (len, record)
            for (rec, v) in &values {
                let n = v.len();
                if pos + n <= text.len() && text[pos..pos + n] == v[..] {
                    let better = match best {
                        None => true,
                        Some((bl, br)) => n > bl || (n == bl && *rec < br),
                    };
                    if better {
                        best = Some((n, *rec));
                    }
                }
            }
            match best {
                Some((n, rec)) => {
                    spans.push(ValueSpan { record_index: rec, start: pos, end: pos + n });
                    pos += n;
                }
                None => pos += 1,
            }
        }
        spans
    }

    /// Plan tokens of matched records in textual order; repeated mentions
    /// give repeated tokens.
    pub fn delexicalize<S: AsRef<str>>(&self, data: &StructuredData, text: &[S]) -> Vec<String> {
        self.find_value_spans(data, text).into_iter().map(|s| data.records()[s.record_index].plan_token.clone()).collect()
    }

    /// Reference plan for planner training: matched records in textual order,
    /// each kept at its first mention only.
    pub fn reference_plan<S: AsRef<str>>(&self, data: &StructuredData, text: &[S]) -> ContentPlan {
        let mut seen = alloc::vec![false; data.len()];
        let mut entries = Vec::new();
        for s in self.find_value_spans(data, text) {
            if !seen[s.record_index] {
                seen[s.record_index] = true;
                entries.push(s.record_index);
            }
        }
        ContentPlan::new(entries, data).expect("distinct in-range indices")
    }
}

pub fn find_value_spans<S: AsRef<str>>(data: &StructuredData, text: &[S]) -> Vec<ValueSpan> {
    Delexicalizer::default().find_value_spans(data, text)
}

pub fn delexicalize<S: AsRef<str>>(data: &StructuredData, text: &[S]) -> Vec<String> {
    Delexicalizer::default().delexicalize(data, text)
}

pub fn reference_plan<S: AsRef<str>>(data: &StructuredData, text: &[S]) -> ContentPlan {
    Delexicalizer::default().reference_plan(data, text)
}

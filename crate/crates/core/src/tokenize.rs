//! Whitespace-plus-punctuation tokenization.
//!
//! Text is split on whitespace; leading and trailing punctuation of every
//! chunk becomes separate single-character tokens while punctuation inside a
//! chunk is kept, so `4:03.63`, `13–0` and `2,900` survive intact. Case is
//! preserved.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’' | '…' | '–' | '—')
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<(usize, char)> = chunk.char_indices().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        while lo < hi && is_punct(chars[lo].1) {
            lo += 1;
        }
        while hi > lo && is_punct(chars[hi - 1].1) {
            hi -= 1;
        }
        for &(_, c) in &chars[..lo] {
            out.push(c.to_string());
        }
        if lo < hi {
            let start = chars[lo].0;
            let end = if hi == chars.len() { chunk.len() } else { chars[hi].0 };
            out.push(chunk[start..end].to_string());
        }
        for &(_, c) in &chars[hi..] {
            out.push(c.to_string());
        }
    }
    out
}

/// Joins tokens back into display text, attaching closing punctuation to the
/// preceding token.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        let attach = matches!(t, "." | "," | ";" | ":" | "!" | "?" | ")" | "'s");
        if i > 0 && !attach && !out.ends_with('(') {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

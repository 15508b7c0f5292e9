//! Structured inputs, content plans and ordering sequences.
//!
//! A [`StructuredData`] instance is an ordered list of [`Record`]s, either
//! table slots (key/value) or RDF triples (subject/predicate/object). A
//! [`ContentPlan`] selects records by index and orders them; the equivalent
//! per-record view is an [`OrderingSequence`] where each record carries its
//! 1-based plan position or [`EMPTY_LABEL`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tokenize::tokenize;
use crate::{Error, Result};

/// Label for a record left out of the plan (the empty label).
pub const EMPTY_LABEL: usize = 0;

/// Default largest position label.
pub const DEFAULT_MAX_POSITIONS: usize = 20;

pub const KEY_MARKER: &str = "<key>";
pub const VAL_MARKER: &str = "<val>";
pub const SUBJ_MARKER: &str = "<subj>";
pub const PRED_MARKER: &str = "<pred>";
pub const OBJ_MARKER: &str = "<obj>";

pub const MARKERS: [&str; 5] = [KEY_MARKER, VAL_MARKER, SUBJ_MARKER, PRED_MARKER, OBJ_MARKER];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Tabular,
    Rdf,
}

/// One slot of a table or one RDF triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    /// Slot key (tabular) or predicate (RDF).
    pub plan_token: String,
    /// Slot value (tabular) or object (RDF), tokenized.
    pub matchable_values: Vec<Vec<String>>,
    /// Subject for RDF; empty for tabular.
    pub auxiliary_values: Vec<Vec<String>>,
}

impl Record {
    pub fn slot(key: &str, value: &str) -> Self {
        Self { plan_token: key.to_string(), matchable_values: alloc::vec![tokenize(value)], auxiliary_values: Vec::new() }
    }

    pub fn triple(subject: &str, predicate: &str, object: &str) -> Self {
        Self {
            plan_token: predicate.to_string(),
            matchable_values: alloc::vec![tokenize(object)],
            auxiliary_values: alloc::vec![tokenize(subject)],
        }
    }

    pub fn key_tokens(&self) -> Vec<String> {
        tokenize(&self.plan_token)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let invalid = |reason: &str| Error::InvalidRecord { index, reason: reason.to_string() };
        if self.plan_token.trim().is_empty() {
            return Err(invalid("plan token is empty"));
        }
        if !self.matchable_values.iter().any(|v| !v.is_empty()) {
            return Err(invalid("no non-empty matchable value"));
        }
        let all = self
            .key_tokens()
            .into_iter()
            .chain(self.matchable_values.iter().flatten().cloned())
            .chain(self.auxiliary_values.iter().flatten().cloned());
        for tok in all {
            if MARKERS.contains(&tok.as_str()) {
                return Err(invalid("contains a reserved marker token"));
            }
        }
        Ok(())
    }
}

/// The linearized structured input: an ordered list of records of one kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredData {
    kind: DataKind,
    records: Vec<Record>,
}

impl StructuredData {
    pub fn new(kind: DataKind, records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyRecords);
        }
        for (i, r) in records.iter().enumerate() {
            r.validate(i)?;
            if kind == DataKind::Tabular && !r.auxiliary_values.is_empty() {
                return Err(Error::InvalidRecord { index: i, reason: "tabular records carry no auxiliary values".to_string() });
            }
        }
        Ok(Self { kind, records })
    }

    pub fn table(slots: &[(&str, &str)]) -> Result<Self> {
        Self::new(DataKind::Tabular, slots.iter().map(|(k, v)| Record::slot(k, v)).collect())
    }

    pub fn triples(triples: &[(&str, &str, &str)]) -> Result<Self> {
        Self::new(DataKind::Rdf, triples.iter().map(|(s, p, o)| Record::triple(s, p, o)).collect())
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Same data with records reordered so that new record `i` is old record
    /// `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self { kind: self.kind, records: order.iter().map(|&i| self.records[i].clone()).collect() }
    }

    /// Plan tokens of every record, in record order.
    pub fn plan_tokens(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.plan_token.as_str()).collect()
    }
}

/// An ordered selection of record indices; each record is planned at most once.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContentPlan {
    entries: Vec<usize>,
}

impl ContentPlan {
    pub fn new(entries: Vec<usize>, data: &StructuredData) -> Result<Self> {
        let plan = Self { entries };
        plan.validate(data)?;
        Ok(plan)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self, data: &StructuredData) -> Result<()> {
        let mut seen = alloc::vec![false; data.len()];
        for &index in &self.entries {
            if index >= data.len() {
                return Err(Error::PlanIndexOutOfRange { index, len: data.len() });
            }
            if seen[index] {
                return Err(Error::DuplicatePlanIndex { index });
            }
            seen[index] = true;
        }
        Ok(())
    }

    /// Resolves plan tokens to records: each token binds to the first record
    /// with that plan token not already bound.
    pub fn resolve<S: AsRef<str>>(tokens: &[S], data: &StructuredData) -> Result<Self> {
        let mut used = alloc::vec![false; data.len()];
        let mut entries = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let tok = tok.as_ref();
            let hit = data
                .records()
                .iter()
                .enumerate()
                .position(|(i, r)| !used[i] && r.plan_token == tok)
                .ok_or_else(|| Error::UnresolvedPlanToken { token: tok.to_string() })?;
            used[hit] = true;
            entries.push(hit);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tokens(&self, data: &StructuredData) -> Vec<String> {
        self.entries.iter().map(|&i| data.records()[i].plan_token.clone()).collect()
    }
}

/// Per-record position labels; [`EMPTY_LABEL`] marks an omitted record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingSequence {
    pub labels: Vec<usize>,
}

impl OrderingSequence {
    pub fn new(labels: Vec<usize>) -> Self {
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A `(T, C, S)` training triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub data: StructuredData,
    pub plan: ContentPlan,
    pub text: Vec<String>,
}

impl TrainingExample {
    pub fn new(data: StructuredData, plan: ContentPlan, text: Vec<String>) -> Result<Self> {
        plan.validate(&data)?;
        Ok(Self { data, plan, text })
    }
}

/// Token sequence for a [`StructuredData`] plus per-record bookkeeping.
/// Spans are half-open `(start, end)` token ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedInput {
    pub tokens: Vec<String>,
    pub record_spans: Vec<(usize, usize)>,
    pub key_spans: Vec<(usize, usize)>,
}

/// Flattens records into `<key> k <val> v` (tabular) or
/// `<subj> s <pred> p <obj> o` (RDF) token runs.
pub fn linearize(data: &StructuredData) -> Result<LinearizedInput> {
    if data.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut tokens = Vec::new();
    let mut record_spans = Vec::with_capacity(data.len());
    let mut key_spans = Vec::with_capacity(data.len());
    for r in data.records() {
        let start = tokens.len();
        let key_span;
        match data.kind() {
            DataKind::Tabular => {
                tokens.push(KEY_MARKER.to_string());
                let k0 = tokens.len();
                tokens.extend(r.key_tokens());
                key_span = (k0, tokens.len());
                for v in &r.matchable_values {
                    tokens.push(VAL_MARKER.to_string());
                    tokens.extend(v.iter().cloned());
                }
            }
            DataKind::Rdf => {
                for s in &r.auxiliary_values {
                    tokens.push(SUBJ_MARKER.to_string());
                    tokens.extend(s.iter().cloned());
                }
                tokens.push(PRED_MARKER.to_string());
                let k0 = tokens.len();
                tokens.extend(r.key_tokens());
                key_span = (k0, tokens.len());
                for o in &r.matchable_values {
                    tokens.push(OBJ_MARKER.to_string());
                    tokens.extend(o.iter().cloned());
                }
            }
        }
        record_spans.push((start, tokens.len()));
        key_spans.push(key_span);
    }
    Ok(LinearizedInput { tokens, record_spans, key_spans })
}

/// Record at plan position `j` (1-based) gets label `j`; the rest get
/// [`EMPTY_LABEL`].
pub fn plan_to_ordering(data: &StructuredData, plan: &ContentPlan) -> Result<OrderingSequence> {
    plan.validate(data)?;
    let mut labels = alloc::vec![EMPTY_LABEL; data.len()];
    for (pos, &i) in plan.entries().iter().enumerate() {
        labels[i] = pos + 1;
    }
    Ok(OrderingSequence { labels })
}

/// Drops empty-labelled records and sorts the rest by `(label, record index)`.
/// Duplicate labels are kept and fall back to record order.
pub fn ordering_to_plan(data: &StructuredData, ordering: &OrderingSequence) -> Result<ContentPlan> {
    if ordering.len() != data.len() {
        return Err(Error::OrderingLength { expected: data.len(), got: ordering.len() });
    }
    let mut picked: Vec<(usize, usize)> =
        ordering.labels.iter().enumerate().filter(|(_, &l)| l != EMPTY_LABEL).map(|(i, &l)| (l, i)).collect();
    picked.sort_unstable();
    Ok(ContentPlan { entries: picked.into_iter().map(|(_, i)| i).collect() })
}

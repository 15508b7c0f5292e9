//! JSON wire forms of structured data and the JSON Lines dataset format.
//!
//! ```text
//! {"kind":"tabular","records":[{"key":"Name","value":"Alma Jodorowsky"}],"text":"...","plan":["Name"]}
//! {"kind":"rdf","records":[{"subject":"Alan Bean","predicate":"status","object":"Retired"}],"text":"..."}
//! ```
//!
//! `plan` is optional; its tokens resolve to records by first unused
//! matching key. Texts and values are stored as space-joined tokens, so a
//! save followed by a load reproduces the dataset exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use plangen_core::data::{ContentPlan, DataKind, Record, StructuredData, TrainingExample};
use plangen_core::delex::reference_plan;
use plangen_core::tokenize::tokenize;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One record as it appears on the wire. Tabular records use `key`/`value`,
/// RDF records use `subject`/`predicate`/`object`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireData {
    pub kind: DataKind,
    pub records: Vec<WireRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireExample {
    pub kind: DataKind,
    pub records: Vec<WireRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<Vec<String>>,
}

fn join(tokens: &[String]) -> String {
    tokens.join(" ")
}

impl WireData {
    pub fn from_data(data: &StructuredData) -> Self {
        let records = data
            .records()
            .iter()
            .map(|r| match data.kind() {
                DataKind::Tabular => {
                    WireRecord { key: Some(r.plan_token.clone()), value: Some(join(&r.matchable_values[0])), ..Default::default() }
                }
                DataKind::Rdf => WireRecord {
                    subject: Some(r.auxiliary_values.first().map(|s| join(s)).unwrap_or_default()),
                    predicate: Some(r.plan_token.clone()),
                    object: Some(join(&r.matchable_values[0])),
                    ..Default::default()
                },
            })
            .collect();
        Self { kind: data.kind(), records }
    }

    pub fn to_data(&self) -> Result<StructuredData, String> {
        to_data(self.kind, &self.records)
    }
}

fn to_data(kind: DataKind, records: &[WireRecord]) -> Result<StructuredData, String> {
    let records = records
        .iter()
        .enumerate()
        .map(|(i, r)| match (kind, r) {
            (DataKind::Tabular, WireRecord { key: Some(k), value: Some(v), subject: None, predicate: None, object: None }) => {
                Ok(Record::slot(k, v))
            }
            (DataKind::Rdf, WireRecord { key: None, value: None, subject: Some(s), predicate: Some(p), object: Some(o) }) => {
                Ok(Record::triple(s, p, o))
            }
            (DataKind::Tabular, _) => Err(format!("record {i}: tabular records need exactly \"key\" and \"value\"")),
            (DataKind::Rdf, _) => Err(format!("record {i}: rdf records need exactly \"subject\", \"predicate\" and \"object\"")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    StructuredData::new(kind, records).map_err(|e| e.to_string())
}

/// One parsed dataset line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub data: StructuredData,
    pub text: Option<Vec<String>>,
    pub plan: Option<ContentPlan>,
}

impl Entry {
    pub fn parse(line: &str) -> Result<Self, String> {
        let wire: WireExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let data = to_data(wire.kind, &wire.records)?;
        let plan = match &wire.plan {
            Some(tokens) => Some(ContentPlan::resolve(tokens, &data).map_err(|e| e.to_string())?),
            None => None,
        };
        Ok(Self { data, text: wire.text.as_deref().map(tokenize), plan })
    }

    pub fn to_wire(&self) -> WireExample {
        let w = WireData::from_data(&self.data);
        WireExample {
            kind: w.kind,
            records: w.records,
            text: self.text.as_deref().map(join),
            plan: self.plan.as_ref().map(|p| p.tokens(&self.data)),
        }
    }

    /// Training example, taking the plan from the delexicalizer when the line
    /// carries none.
    pub fn into_example(self) -> Result<TrainingExample, String> {
        let text = self.text.ok_or("missing \"text\"")?;
        let plan = match self.plan {
            Some(p) => p,
            None => reference_plan(&self.data, &text),
        };
        TrainingExample::new(self.data, plan, text).map_err(|e| e.to_string())
    }
}

impl From<&TrainingExample> for Entry {
    fn from(e: &TrainingExample) -> Self {
        Self { data: e.data.clone(), text: Some(e.text.clone()), plan: Some(e.plan.clone()) }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.display().to_string(), source }
}

/// Parses every non-blank line with `parse`, reporting failures with their
/// 1-based line number.
pub fn read_lines<T>(path: &Path, mut parse: impl FnMut(&str) -> Result<T, String>) -> Result<Vec<T>, FormatError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse(&line).map_err(|message| FormatError::Line { line: i + 1, message })?);
    }
    Ok(out)
}

pub fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for item in items {
        let line = serde_json::to_string(&item).expect("wire types serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Lines with optional text and plan.
pub fn load_entries(path: &Path) -> Result<Vec<Entry>, FormatError> {
    read_lines(path, Entry::parse)
}

/// Dataset lines; every line needs a text.
pub fn load_jsonl(path: &Path) -> Result<Vec<TrainingExample>, FormatError> {
    read_lines(path, |l| Entry::parse(l)?.into_example())
}

pub fn save_jsonl(examples: &[TrainingExample], path: &Path) -> Result<(), FormatError> {
    write_lines(path, examples.iter().map(|e| Entry::from(e).to_wire()))
}

pub fn save_entries(entries: &[Entry], path: &Path) -> Result<(), FormatError> {
    write_lines(path, entries.iter().map(Entry::to_wire))
}

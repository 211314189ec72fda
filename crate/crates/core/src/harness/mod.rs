//! Multiple-choice datasets, answer extraction and per-discipline evaluation.
//!
//! Dataset files are JSON Lines. Each line carries
//! `{"id", "question", "options", "answer", "discipline"}`; `options` is
//! either an object keyed by letter or a list mapped onto `A, B, C, ...`, and
//! `answer` is a letter string (`"C"`, `"A,C"`) or a list of letters.

mod evaluate;
mod extract;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluate::{evaluate, render_table, DisciplineReport, EvalReport, ReportManifest, DEFAULT_PASS_THRESHOLD};
pub use extract::{extract_answer, Extraction};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("no answer for question(s): {}", .0.join(", "))]
    MissingAnswers(Vec<String>),
    #[error("invalid evaluation input: {0}")]
    InvalidInput(String),
}

/// Option layout of a dataset file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSchema {
    /// Letters A-D.
    Choices4,
    /// Letters A-J.
    Choices10,
}

impl DatasetSchema {
    pub fn max_options(self) -> usize {
        match self {
            DatasetSchema::Choices4 => 4,
            DatasetSchema::Choices10 => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    /// Contiguous letters starting at `A`.
    pub options: BTreeMap<char, String>,
    pub gold: BTreeSet<char>,
    pub discipline: String,
}

impl Question {
    pub fn allowed_letters(&self) -> Vec<char> {
        self.options.keys().copied().collect()
    }

    /// Canonical class label of the gold set, letters in order (`"AC"`).
    pub fn gold_label(&self) -> String {
        self.gold.iter().collect()
    }

    pub fn is_multi_answer(&self) -> bool {
        self.gold.len() > 1
    }

    fn validate(&self, schema: DatasetSchema) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.stem.trim().is_empty() {
            return Err(format!("question {}: empty stem", self.id));
        }
        let n = self.options.len();
        if n < 2 || n > schema.max_options() {
            return Err(format!("question {}: {n} options, schema allows 2 to {}", self.id, schema.max_options()));
        }
        for (expected, letter) in ('A'..).zip(self.options.keys()) {
            if *letter != expected {
                return Err(format!("question {}: option letters must run contiguously from A", self.id));
            }
        }
        if self.gold.is_empty() {
            return Err(format!("question {}: empty answer", self.id));
        }
        if let Some(bad) = self.gold.iter().find(|g| !self.options.contains_key(g)) {
            return Err(format!("question {}: answer {bad} is not one of the options", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: Option<serde_json::Value>,
    question: Option<String>,
    options: Option<RawOptions>,
    answer: Option<RawAnswer>,
    discipline: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawOptions {
    Map(BTreeMap<String, String>),
    List(Vec<String>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawAnswer {
    One(String),
    Many(Vec<String>),
}

fn single_letter(s: &str) -> Option<char> {
    let mut chars = s.trim().chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(c.to_ascii_uppercase()),
        _ => None,
    }
}

fn parse_letters(raw: &RawAnswer) -> Result<BTreeSet<char>, String> {
    let tokens: Vec<String> = match raw {
        RawAnswer::One(s) => s
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .flat_map(|t| t.chars().map(String::from).collect::<Vec<_>>())
            .collect(),
        RawAnswer::Many(list) => list.clone(),
    };
    tokens.iter().map(|t| single_letter(t).ok_or_else(|| format!("answer token {t:?} is not a letter"))).collect()
}

fn convert(raw: RawQuestion) -> Result<Question, String> {
    let id = match raw.id.ok_or("missing field \"id\"")? {
        serde_json::Value::String(s) => s,
        serde_json::Value::Number(n) => n.to_string(),
        other => return Err(format!("id must be a string or number, got {other}")),
    };
    let stem = raw.question.ok_or("missing field \"question\"")?;
    let options = match raw.options.ok_or("missing field \"options\"")? {
        RawOptions::List(list) => ('A'..).zip(list).collect(),
        RawOptions::Map(map) => map
            .into_iter()
            .map(|(k, v)| single_letter(&k).map(|c| (c, v)).ok_or_else(|| format!("option key {k:?} is not a letter")))
            .collect::<Result<_, _>>()?,
    };
    let gold = parse_letters(&raw.answer.ok_or("missing field \"answer\"")?)?;
    let discipline = raw.discipline.ok_or("missing field \"discipline\"")?;
    Ok(Question { id, stem, options, gold, discipline })
}

/// Parses and validates a JSON Lines dataset.
pub fn parse_dataset(reader: impl BufRead, schema: DatasetSchema) -> Result<Vec<Question>, HarnessError> {
    let mut questions = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| HarnessError::Io { path: "<reader>".into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion =
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse { line: line_no, message: e.to_string() })?;
        let invalid = |message: String| HarnessError::Validation { line: line_no, message };
        let question = convert(raw).map_err(invalid)?;
        question.validate(schema).map_err(invalid)?;
        if !seen.insert(question.id.clone()) {
            return Err(invalid(format!("duplicate question id {}", question.id)));
        }
        questions.push(question);
    }
    Ok(questions)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: DatasetSchema) -> Result<Vec<Question>, HarnessError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| HarnessError::Io { path: path.display().to_string(), source })?;
    parse_dataset(BufReader::new(file), schema)
}

/// Number of questions per discipline.
pub fn discipline_counts(questions: &[Question]) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for q in questions {
        *counts.entry(q.discipline.clone()).or_insert(0) += 1;
    }
    counts
}

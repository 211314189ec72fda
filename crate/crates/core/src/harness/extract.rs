//! Option-letter extraction from free-text completions.
//!
//! Rules are tried in order and the first that yields an allowed letter wins:
//!
//! 1. an explicit statement such as `answer is C`, `Answer: (B)` or
//!    `answers are A and C`, case-insensitive; the last such statement wins and
//!    a list of letters in it becomes a multi-answer set;
//! 2. a final non-empty line that is nothing but a letter, optionally in
//!    parentheses or followed by a period;
//! 3. the last standalone allowed letter anywhere in the text.
//!
//! Letters must be upper case to count, which keeps the article `a` out.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

static STATEMENT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i:\banswers?)[*_]*\s*(?:(?i:is|are)\b[\s*_]*[:=]?|[:=])[\s*_]*(?:(?i:options?|choices?)\s*)?(?P<list>\(?[A-Z]\b\)?(?:\s*(?:,|&|/|(?i:and)\b)\s*\(?[A-Z]\b\)?)*)",
    )
    .expect("statement pattern compiles")
});

static LETTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b[A-Z]\b").expect("letter pattern compiles"));

static LONE_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[\s*_>#-]*(?:(?i:options?|choices?)\s*)?\(?(?P<letter>[A-Z])\)?[.!]?[\s*_]*$")
        .expect("line pattern compiles")
});

/// Result of answer extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extraction {
    Letters(BTreeSet<char>),
    Abstain,
}

impl Extraction {
    pub fn is_abstain(&self) -> bool {
        matches!(self, Extraction::Abstain)
    }

    /// Letters in order, e.g. `"AC"`; `None` on abstention.
    pub fn label(&self) -> Option<String> {
        match self {
            Extraction::Letters(set) => Some(set.iter().collect()),
            Extraction::Abstain => None,
        }
    }

    pub fn from_label(label: Option<&str>) -> Self {
        match label {
            Some(l) if !l.is_empty() => Extraction::Letters(l.chars().collect()),
            _ => Extraction::Abstain,
        }
    }
}

impl fmt::Display for Extraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label() {
            Some(l) => f.write_str(&l),
            None => f.write_str("abstain"),
        }
    }
}

impl Serialize for Extraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.label().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Extraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let label: Option<String> = Option::deserialize(d)?;
        Ok(Extraction::from_label(label.as_deref()))
    }
}

fn first_char(m: regex::Match<'_>) -> char {
    m.as_str().chars().next().expect("non-empty match")
}

/// Extracts the chosen option letter(s) from `text`. Never returns a letter
/// outside `allowed`.
pub fn extract_answer(text: &str, allowed: &[char]) -> Extraction {
    let allowed: BTreeSet<char> = allowed.iter().copied().collect();
    if allowed.is_empty() {
        return Extraction::Abstain;
    }

    let statements: Vec<_> = STATEMENT.captures_iter(text).collect();
    for caps in statements.iter().rev() {
        let list = caps.name("list").map_or("", |m| m.as_str());
        let letters: BTreeSet<char> = LETTER.find_iter(list).map(first_char).filter(|c| allowed.contains(c)).collect();
        if !letters.is_empty() {
            return Extraction::Letters(letters);
        }
    }

    if let Some(last_line) = text.lines().rev().find(|l| !l.trim().is_empty()) {
        if let Some(c) = LONE_LINE.captures(last_line.trim()).and_then(|c| c.name("letter")).map(first_char) {
            if allowed.contains(&c) {
                return Extraction::Letters(BTreeSet::from([c]));
            }
        }
    }

    match LETTER.find_iter(text).map(first_char).filter(|c| allowed.contains(c)).last() {
        Some(c) => Extraction::Letters(BTreeSet::from([c])),
        None => Extraction::Abstain,
    }
}

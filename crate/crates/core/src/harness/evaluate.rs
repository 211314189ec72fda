use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{extract_answer, HarnessError, Question};
use crate::metrics::{ConfusionTally, MetricSet};

/// Per-discipline pass mark of the specialist licensing exam.
pub const DEFAULT_PASS_THRESHOLD: f64 = 0.65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisciplineReport {
    pub questions: u64,
    pub correct: u64,
    pub abstained: u64,
    #[serde(flatten)]
    pub metrics: MetricSet<f64>,
    /// `acc >= threshold`
    pub pass: bool,
    pub tally: ConfusionTally,
}

impl DisciplineReport {
    fn from_tally(tally: ConfusionTally, threshold: f64) -> Result<Self, HarnessError> {
        let metrics = MetricSet::<f64>::compute(&tally).map_err(|e| HarnessError::InvalidInput(e.to_string()))?;
        Ok(DisciplineReport {
            questions: tally.total(),
            correct: tally.correct(),
            abstained: tally.abstain_count(),
            pass: metrics.acc >= threshold,
            metrics,
            tally,
        })
    }
}

/// Provenance embedded in every report. Wall-clock timestamps are kept out
/// of it so replayed reports compare byte for byte.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: DisciplineReport,
    pub per_discipline: BTreeMap<String, DisciplineReport>,
    pub all_disciplines_pass: bool,
    pub manifest: ReportManifest,
}

impl EvalReport {
    pub fn failing_disciplines(&self) -> Vec<&str> {
        self.per_discipline.iter().filter(|(_, r)| !r.pass).map(|(name, _)| name.as_str()).collect()
    }

    pub fn with_manifest(mut self, manifest: ReportManifest) -> Self {
        self.manifest = manifest;
        self
    }
}

/// Scores final texts against the dataset. `answers` maps question id to the
/// text the answer is extracted from.
pub fn evaluate(
    questions: &[Question],
    answers: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<EvalReport, HarnessError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(HarnessError::InvalidInput(format!("threshold {threshold} outside [0, 1]")));
    }
    if questions.is_empty() {
        return Err(HarnessError::InvalidInput("empty dataset".into()));
    }
    let mut missing: Vec<String> =
        questions.iter().filter(|q| !answers.contains_key(&q.id)).map(|q| q.id.clone()).collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(HarnessError::MissingAnswers(missing));
    }

    let mut tallies: BTreeMap<String, ConfusionTally> = BTreeMap::new();
    for q in questions {
        let extraction = extract_answer(&answers[&q.id], &q.allowed_letters());
        tallies.entry(q.discipline.clone()).or_default().add(&q.gold_label(), extraction.label().as_deref());
    }

    let overall_tally = tallies.values().fold(ConfusionTally::new(), |acc, t| acc.merge(t));
    let per_discipline = tallies
        .into_iter()
        .map(|(name, t)| DisciplineReport::from_tally(t, threshold).map(|r| (name, r)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(EvalReport {
        threshold,
        overall: DisciplineReport::from_tally(overall_tally, threshold)?,
        all_disciplines_pass: per_discipline.values().all(|r| r.pass),
        per_discipline,
        manifest: ReportManifest::default(),
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}%", v * 100.0)
}

/// Fixed-width table: one row per discipline, then the overall row, metrics
/// as percentages with two decimals.
pub fn render_table(report: &EvalReport) -> String {
    let mut names: Vec<&str> = report.per_discipline.keys().map(String::as_str).collect();
    names.push("Overall");
    let width = names.iter().map(|n| n.chars().count()).max().unwrap_or(0).max("Discipline".len());

    let mut out = String::new();
    let _ = write!(out, "{:<width$} {:>5}", "Discipline", "N");
    for name in MetricSet::<f64>::NAMES {
        let _ = write!(out, " {name:>8}");
    }
    let _ = writeln!(out, "  PASS");

    let row = |out: &mut String, name: &str, r: &DisciplineReport| {
        let _ = write!(out, "{name:<width$} {:>5}", r.questions);
        for v in r.metrics.as_array() {
            let _ = write!(out, " {:>8}", pct(v));
        }
        let _ = writeln!(out, "  {}", if r.pass { "yes" } else { "no" });
    };
    for (name, r) in &report.per_discipline {
        row(&mut out, name, r);
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 6 + 9 * 7 + 6));
    row(&mut out, "Overall", &report.overall);
    let _ = writeln!(
        out,
        "pass threshold {} per discipline: {}",
        pct(report.threshold),
        if report.all_disciplines_pass { "all disciplines pass" } else { "not all disciplines pass" }
    );
    out
}

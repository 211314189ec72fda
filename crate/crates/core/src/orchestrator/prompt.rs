//! Question and aggregation prompt templates.
//!
//! Templates use `{name}` placeholders substituted in a single pass, so text
//! pasted into a prompt is never re-expanded. The question template takes
//! `{stem}` and `{options}`; the aggregation template takes `{responses}` and
//! `{question}` (the rendered question prompt).

use serde::{Deserialize, Serialize};

use crate::harness::Question;

pub const DEFAULT_QUESTION_TEMPLATE: &str = "Answer the following multiple-choice question.

{stem}

{options}

Reply with the letter of the correct option. If more than one option is correct, give every correct letter. End with \"The answer is <letter>.\"";

pub const DEFAULT_AGGREGATION_TEMPLATE: &str = "You have been provided with a set of responses from various models to the latest user query. Your task is to synthesize these responses into a single, high-quality response. It is crucial to critically evaluate the information provided in these responses, recognizing that some of it may be biased or incorrect. Your response should not simply replicate the given answers but should offer a refined, accurate, and comprehensive reply to the instruction. Ensure your response is well-structured, coherent, and adheres to the highest standards of accuracy and reliability.

Responses from models:
{responses}

{question}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub question: String,
    pub aggregation: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            question: DEFAULT_QUESTION_TEMPLATE.to_string(),
            aggregation: DEFAULT_AGGREGATION_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn validate(&self) -> Result<(), String> {
        for (name, template, required) in [
            ("question", &self.question, &["{stem}", "{options}"][..]),
            ("aggregation", &self.aggregation, &["{responses}", "{question}"][..]),
        ] {
            if let Some(missing) = required.iter().find(|p| !template.contains(**p)) {
                return Err(format!("{name} template lacks the {missing} placeholder"));
            }
        }
        Ok(())
    }

    /// The bare question prompt given to every model in the first layer.
    pub fn render_question(&self, question: &Question) -> String {
        let options =
            question.options.iter().map(|(letter, text)| format!("{letter}. {text}")).collect::<Vec<_>>().join("\n");
        substitute(&self.question, &[("stem", &question.stem), ("options", &options)])
    }
}

/// A rendered prompt and whether embedded responses were shortened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub text: String,
    pub truncated: bool,
}

/// Question prompt for the first layer (no prior outputs); otherwise the
/// aggregation template around the prior layer's surviving outputs, numbered
/// in the given order.
///
/// With `budget_chars` set and the responses exceeding it in total, every
/// response is cut from the tail to an equal share of the budget.
pub fn build_aggregation_prompt(
    question: &Question,
    prior_outputs: &[(String, String)],
    templates: &PromptTemplates,
    budget_chars: Option<usize>,
) -> RenderedPrompt {
    let question_prompt = templates.render_question(question);
    if prior_outputs.is_empty() {
        return RenderedPrompt { text: question_prompt, truncated: false };
    }

    let total: usize = prior_outputs.iter().map(|(_, t)| t.chars().count()).sum();
    let share = match budget_chars {
        Some(budget) if total > budget => Some(budget / prior_outputs.len()),
        _ => None,
    };
    let mut truncated = false;
    let responses = prior_outputs
        .iter()
        .enumerate()
        .map(|(i, (_, text))| {
            let body = match share {
                Some(limit) if text.chars().count() > limit => {
                    truncated = true;
                    text.chars().take(limit).collect::<String>()
                }
                _ => text.clone(),
            };
            format!("{}. {}", i + 1, body)
        })
        .collect::<Vec<_>>()
        .join("\n");

    let text = substitute(&templates.aggregation, &[("responses", &responses), ("question", &question_prompt)]);
    RenderedPrompt { text, truncated }
}

fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        let hit = after.find('}').and_then(|end| {
            let name = &after[..end];
            values.iter().find(|(k, _)| *k == name).map(|(_, v)| (end, *v))
        });
        match hit {
            Some((end, value)) => {
                out.push_str(value);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

//! Layered collaborative generation with consistency-driven masking.
//!
//! Every layer prompts the active models with the same text: the bare
//! question in layer 1, afterwards an aggregation prompt embedding the
//! previous layer's surviving outputs. After each layer the anchor's output is
//! compared with every other output (cross-consistency, the diversity of the
//! pair) and the schedule's number of models is masked out. The anchor is
//! never masked; its output in the last layer is the final answer.

pub mod prompt;

use std::collections::BTreeMap;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{build_aggregation_prompt, PromptTemplates, RenderedPrompt};

use crate::backends::{BackendError, FixtureStore, GenerationRequest, ModelOutput, ModelPool};
use crate::concurrency::bounded_map;
use crate::diversity::ClusterPlan;
use crate::fuzzy::diversity;
use crate::harness::{extract_answer, Extraction, Question};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("layer {layer}: anchor {anchor_id} failed: {source}")]
    AnchorFailed {
        layer: usize,
        anchor_id: String,
        #[source]
        source: Box<BackendError>,
        /// Layers completed before the failure.
        partial: Vec<LayerState>,
    },
}

/// Which end of the cross-consistency ranking is masked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskPolarity {
    /// Smallest diversity against the anchor first.
    #[default]
    #[serde(rename = "as-written")]
    AsWritten,
    /// Largest diversity against the anchor first.
    #[serde(rename = "inverse")]
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub total_layers: usize,
    /// Models masked after layers `1..total_layers`.
    pub masks_after_layer: Vec<usize>,
}

impl MaskSchedule {
    pub fn new(total_layers: usize, masks_after_layer: Vec<usize>) -> Result<Self, OrchestratorError> {
        if total_layers == 0 {
            return Err(OrchestratorError::InvalidInput("at least one layer is required".into()));
        }
        if masks_after_layer.len() != total_layers - 1 {
            return Err(OrchestratorError::InvalidInput(format!(
                "{total_layers} layers need {} mask counts, got {}",
                total_layers - 1,
                masks_after_layer.len()
            )));
        }
        Ok(MaskSchedule { total_layers, masks_after_layer })
    }

    /// Two models masked per layer until one remains: `[2, 2, 1]` over four
    /// layers for six models.
    pub fn two_per_layer(cluster_size: usize) -> Self {
        let mut masks = Vec::new();
        let mut active = cluster_size.max(1);
        while active > 1 {
            let n = (active - 1).min(2);
            masks.push(n);
            active -= n;
        }
        MaskSchedule { total_layers: masks.len() + 1, masks_after_layer: masks }
    }

    pub fn validate_for(&self, cluster_size: usize) -> Result<(), OrchestratorError> {
        Self::new(self.total_layers, self.masks_after_layer.clone())?;
        let masked: usize = self.masks_after_layer.iter().sum();
        if cluster_size == 0 || masked >= cluster_size {
            return Err(OrchestratorError::InvalidInput(format!(
                "schedule masks {masked} of {cluster_size} models, at least one must remain"
            )));
        }
        Ok(())
    }

    /// Active model count per layer when no backend fails.
    pub fn active_counts(&self, cluster_size: usize) -> Vec<usize> {
        let mut counts = vec![cluster_size];
        for m in &self.masks_after_layer {
            let last = *counts.last().unwrap();
            counts.push(last.saturating_sub(*m));
        }
        counts
    }

    pub fn masks_after(&self, layer_index: usize) -> usize {
        self.masks_after_layer.get(layer_index.wrapping_sub(1)).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskReason {
    Consistency,
    BackendFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEvent {
    pub model_id: String,
    /// Layer after which the model was removed.
    pub layer: usize,
    /// Absent for backend failures.
    pub cc: Option<f64>,
    pub reason: MaskReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Snapshot of one finished layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub layer_index: usize,
    #[serde(rename = "active")]
    pub active_ids: Vec<String>,
    pub anchor_id: String,
    pub prompt: String,
    #[serde(default)]
    pub prompt_truncated: bool,
    pub outputs: BTreeMap<String, ModelOutput>,
    pub cc: BTreeMap<String, f64>,
    /// Models removed after this layer, in masking order.
    pub masked: Vec<MaskEvent>,
    /// Every removal up to and including this layer.
    pub masked_so_far: Vec<MaskEvent>,
}

impl LayerState {
    /// Active models of the next layer, in order.
    pub fn survivors(&self) -> Vec<String> {
        self.active_ids.iter().filter(|id| !self.masked.iter().any(|e| &e.model_id == *id)).cloned().collect()
    }

    /// `(model_id, text)` of the survivors, in active order.
    pub fn surviving_outputs(&self) -> Vec<(String, String)> {
        self.survivors().into_iter().filter_map(|id| self.outputs.get(&id).map(|o| (id, o.text.clone()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaborationTrace {
    pub question_id: String,
    pub layers: Vec<LayerState>,
    pub final_text: String,
    pub final_answer: Extraction,
    #[serde(default)]
    pub config_digest: Option<String>,
}

impl CollaborationTrace {
    pub fn active_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.active_ids.len()).collect()
    }

    /// Loads every recorded completion into `store`, so a replay of the same
    /// question and configuration serves exactly these outputs.
    pub fn export_fixtures(&self, store: &FixtureStore, pool: &ModelPool) -> Result<(), BackendError> {
        for layer in &self.layers {
            for (model_id, output) in &layer.outputs {
                let sampling = pool.spec(model_id).map(|s| s.sampling.clone()).unwrap_or_default();
                store.record(model_id, &GenerationRequest::new(layer.prompt.clone(), sampling), output)?;
            }
        }
        Ok(())
    }
}

/// Diversity between the anchor's output and every other output.
pub fn compute_cc(anchor_output: &str, others: &BTreeMap<String, String>) -> BTreeMap<String, f64> {
    others.iter().map(|(id, text)| (id.clone(), diversity(anchor_output, text).value())).collect()
}

/// Picks `count` models to mask, one at a time: the smallest cc under
/// [`MaskPolarity::AsWritten`], the largest under [`MaskPolarity::Inverse`].
/// Ties go to the lexically smaller model id. The anchor is never picked.
pub fn mask_lowest_cc(
    active_ids: &[String],
    anchor_id: &str,
    cc: &BTreeMap<String, f64>,
    count: usize,
    polarity: MaskPolarity,
) -> Result<Vec<String>, OrchestratorError> {
    let mut candidates: Vec<&String> = active_ids.iter().filter(|id| *id != anchor_id).collect();
    if count > candidates.len() {
        return Err(OrchestratorError::InvalidInput(format!(
            "cannot mask {count} of {} non-anchor models",
            candidates.len()
        )));
    }
    if let Some(missing) = candidates.iter().find(|id| !cc.contains_key(id.as_str())) {
        return Err(OrchestratorError::InvalidInput(format!("no cc value for {missing}")));
    }
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let (pos, _) = candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let (va, vb) = (cc[a.as_str()], cc[b.as_str()]);
                let by_value = match polarity {
                    MaskPolarity::AsWritten => va.total_cmp(&vb),
                    MaskPolarity::Inverse => vb.total_cmp(&va),
                };
                by_value.then_with(|| a.cmp(b))
            })
            .expect("count <= candidates");
        picked.push(candidates.remove(pos).clone());
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollaborationConfig {
    pub schedule: MaskSchedule,
    pub polarity: MaskPolarity,
    pub templates: PromptTemplates,
    /// Character budget for embedded responses.
    pub prompt_budget: Option<usize>,
    /// Concurrent requests within a layer.
    pub parallelism: usize,
}

impl CollaborationConfig {
    pub fn new(schedule: MaskSchedule) -> Self {
        CollaborationConfig {
            schedule,
            polarity: MaskPolarity::default(),
            templates: PromptTemplates::default(),
            prompt_budget: None,
            parallelism: 4,
        }
    }
}

pub struct Orchestrator<'a> {
    pool: &'a ModelPool,
    config: CollaborationConfig,
}

impl<'a> Orchestrator<'a> {
    pub fn new(pool: &'a ModelPool, config: CollaborationConfig) -> Result<Self, OrchestratorError> {
        config.templates.validate().map_err(OrchestratorError::InvalidInput)?;
        Ok(Orchestrator { pool, config })
    }

    pub fn config(&self) -> &CollaborationConfig {
        &self.config
    }

    fn check_plan(&self, plan: &ClusterPlan) -> Result<(), OrchestratorError> {
        if plan.members.first() != Some(&plan.anchor_id) {
            return Err(OrchestratorError::InvalidInput("anchor must be the first cluster member".into()));
        }
        if let Some(unknown) = plan.members.iter().find(|m| !self.pool.contains(m)) {
            return Err(OrchestratorError::InvalidInput(format!("no backend for cluster member {unknown}")));
        }
        self.config.schedule.validate_for(plan.members.len())
    }

    /// Runs the layer after `prev` (layer 1 when `prev` is `None`).
    pub fn run_layer(
        &self,
        question: &Question,
        plan: &ClusterPlan,
        prev: Option<&LayerState>,
    ) -> Result<LayerState, OrchestratorError> {
        let layer_index = prev.map_or(1, |p| p.layer_index + 1);
        if layer_index > self.config.schedule.total_layers {
            return Err(OrchestratorError::InvalidInput(format!(
                "schedule has {} layers",
                self.config.schedule.total_layers
            )));
        }
        let anchor_id = plan.anchor_id.clone();
        let (active_ids, prior) = match prev {
            Some(p) => (p.survivors(), p.surviving_outputs()),
            None => (plan.members.clone(), Vec::new()),
        };
        let rendered = build_aggregation_prompt(question, &prior, &self.config.templates, self.config.prompt_budget);

        let results = bounded_map(&active_ids, self.config.parallelism, |_, id| {
            let sampling = self.pool.spec(id).map(|s| s.sampling.clone()).unwrap_or_default();
            self.pool.generate(id, &GenerationRequest::new(rendered.text.clone(), sampling))
        });

        let mut outputs = BTreeMap::new();
        let mut failed = Vec::new();
        for (id, result) in active_ids.iter().zip(results) {
            match result {
                Ok(out) => {
                    outputs.insert(id.clone(), out);
                }
                Err(source) if *id == anchor_id => {
                    return Err(OrchestratorError::AnchorFailed {
                        layer: layer_index,
                        anchor_id,
                        source: Box::new(source),
                        partial: vec![],
                    })
                }
                Err(e) => {
                    warn!("question {}: layer {layer_index}: {id} failed, masking it: {e}", question.id);
                    failed.push(MaskEvent {
                        model_id: id.clone(),
                        layer: layer_index,
                        cc: None,
                        reason: MaskReason::BackendFailure,
                        error: Some(e.to_string()),
                    });
                }
            }
        }

        let anchor_text = &outputs[&anchor_id].text;
        let others: BTreeMap<String, String> =
            outputs.iter().filter(|(id, _)| **id != anchor_id).map(|(id, o)| (id.clone(), o.text.clone())).collect();
        let cc = compute_cc(anchor_text, &others);

        // failed models use up the layer's mask slots first
        let scheduled = self.config.schedule.masks_after(layer_index);
        let by_cc = scheduled.saturating_sub(failed.len());
        let healthy: Vec<String> = active_ids.iter().filter(|id| outputs.contains_key(*id)).cloned().collect();
        let chosen = mask_lowest_cc(&healthy, &anchor_id, &cc, by_cc, self.config.polarity)?;
        let mut masked = failed;
        masked.extend(chosen.into_iter().map(|id| MaskEvent {
            cc: Some(cc[&id]),
            model_id: id,
            layer: layer_index,
            reason: MaskReason::Consistency,
            error: None,
        }));
        debug!(
            "question {}: layer {layer_index}: {} active, masking {:?}",
            question.id,
            active_ids.len(),
            masked.iter().map(|e| &e.model_id).collect::<Vec<_>>()
        );

        let mut masked_so_far = prev.map(|p| p.masked_so_far.clone()).unwrap_or_default();
        masked_so_far.extend(masked.iter().cloned());
        Ok(LayerState {
            layer_index,
            active_ids,
            anchor_id,
            prompt: rendered.text,
            prompt_truncated: rendered.truncated,
            outputs,
            cc,
            masked,
            masked_so_far,
        })
    }

    pub fn run_collaboration(
        &self,
        question: &Question,
        plan: &ClusterPlan,
    ) -> Result<CollaborationTrace, OrchestratorError> {
        self.check_plan(plan)?;
        let mut layers: Vec<LayerState> = Vec::with_capacity(self.config.schedule.total_layers);
        for _ in 0..self.config.schedule.total_layers {
            match self.run_layer(question, plan, layers.last()) {
                Ok(state) => layers.push(state),
                Err(OrchestratorError::AnchorFailed { layer, anchor_id, source, .. }) => {
                    return Err(OrchestratorError::AnchorFailed { layer, anchor_id, source, partial: layers })
                }
                Err(e) => return Err(e),
            }
        }
        let last = layers.last().expect("at least one layer");
        let final_text = last.outputs[&last.anchor_id].text.clone();
        let final_answer = extract_answer(&final_text, &question.allowed_letters());
        Ok(CollaborationTrace {
            question_id: question.id.clone(),
            layers,
            final_text,
            final_answer,
            config_digest: None,
        })
    }
}

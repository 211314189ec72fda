//! Adaptive cluster collaboration for LLM ensembles.
//!
//! Models are ranked by self-diversity, the highest-ranked ones form a
//! cluster, and the cluster answers a question over several layers while
//! models whose outputs score worst against the anchor are masked out.

pub mod backends;
pub mod concurrency;
pub mod diversity;
pub mod fuzzy;
pub mod harness;
pub mod metrics;
pub mod orchestrator;
pub mod scalar;

pub use backends::{
    Backend, BackendError, BackendKind, GenerationRequest, ModelOutput, ModelPool, ModelSpec, Sampling,
};
pub use diversity::{profile_model, select_cluster, ClusterPlan, SdProfile};
pub use harness::{evaluate, extract_answer, EvalReport, Extraction, Question};
pub use orchestrator::{CollaborationConfig, CollaborationTrace, LayerState, MaskPolarity, MaskSchedule, Orchestrator};
pub use scalar::Scalar;

/// Default scalar of the crate.
pub type Score = f64;
pub type Similarity = fuzzy::SimilarityScore<Score>;
pub type Diversity = fuzzy::DiversityScore<Score>;
pub type Metrics = metrics::MetricSet<Score>;
pub type Similarity32 = fuzzy::SimilarityScore<f32>;
pub type Metrics32 = metrics::MetricSet<f32>;

//! Multimodal behavioral-engagement detection pipeline.
//!
//! Detects whether a learner is on-task or off-task in each analysis
//! window by combining three data streams: appearance, context and
//! performance, and mouse dynamics. Each modality gets its own random
//! forest; the forests are merged at the decision level by pooling all
//! trees (equivalently, summing per-forest confidences). Ground truth
//! comes from three annotators via majority voting with validity
//! filtering, and evaluation runs leave-one-student-out or per-student
//! chronological holdout with repeated class balancing. A seeded
//! classroom simulator generates datasets with the same file formats the
//! rest of the pipeline consumes.

pub mod config;
pub mod csvio;
pub mod domain;
pub mod eval;
pub mod features;
pub mod forest;
pub mod fusion;
pub mod persist;
pub mod pipeline;
pub mod report;
pub mod seed;
pub mod simulate;

pub use config::{LoadedConfig, RunConfig};
pub use domain::{
    AnnotationSpan, AnnotatorMark, DomainError, EngagementLabel, Modality, ScheduleSpan,
    SectionType, TimedSample, Window,
};
pub use eval::{EvalSettings, MetricsReport, ModelKind, OverallScheme, Protocol};
pub use features::{FeatureSchema, FeatureVector, Instance, PerModality, Statistic};
pub use forest::{ClassCounts, Confidence, Forest, ForestParams, Split, TreeNode};
pub use fusion::{FusionPool, ModalityFeatures};
pub use persist::ModelBundle;
pub use pipeline::{RawSession, WindowParams};
pub use simulate::{Dataset, SessionData, SimConfig};

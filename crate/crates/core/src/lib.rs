//! Slow-fast video anomaly detection.
//!
//! A fast detector's per-frame scores are cut into fixed windows; windows
//! whose score distribution is uncertain (high differential entropy), plus
//! a periodic sample, are handed to a slow vision-language path that
//! describes the segment, retrieves known normal and abnormal behaviour
//! patterns from a [`KnowledgeBase`], and returns a scored, explained
//! verdict. The verdicts are fused back into the fast curve and evaluated
//! with frame-level ROC-AUC.
//!
//! Modules follow the data flow: [`ingest`] → [`entropy_gate`] →
//! [`slow_detector`] (with [`knowledge_base`]) → [`fusion`] →
//! [`evaluation`]. [`pipeline`] wires them together.

pub mod ablation;
pub mod config;
pub mod entropy_gate;
pub mod evaluation;
pub mod fusion;
pub mod gaussian;
pub mod ingest;
pub mod knowledge_base;
pub mod pipeline;
pub mod slow_detector;
pub mod synthetic;

pub use config::PipelineConfig;
pub use entropy_gate::{EntropyMode, GateConfig, SegmentSelection, Theta, Trigger};
pub use evaluation::{roc_auc, EvalReport};
pub use fusion::{Dataset, FusedSeries, FusionConfig};
pub use ingest::{FrameRef, GroundTruth, ScoreSeries};
pub use knowledge_base::{KnowledgeBase, Label, Pattern, RetrievedKnowledge};
pub use pipeline::{Clients, PipelineError};
pub use slow_detector::{SlowDetector, SlowVerdict, SpatioTemporalDescription};

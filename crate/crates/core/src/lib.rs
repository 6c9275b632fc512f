//! Driving-state monitoring: telemetry ingest and verification, windowed
//! feature extraction, two-cluster irregularity detection, alert policy and a
//! line-delimited JSON service.

pub mod alerts;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod service;
pub mod synth;
pub mod telemetry;

pub use alerts::{Alert, AlertContent, AlertPolicy, OperatingMode, PresentationConfig, ScenarioTag};
pub use features::{FeatureParams, FeatureSchema, WindowFeatures, WindowSpec};
pub use model::{ClusterModel, IrregularityModel, Label, Prediction, TrainConfig};
pub use pipeline::{PipelineConfig, PipelineOutput, SessionPipeline};
pub use telemetry::{BufferReport, BufferStatus, Channel, RawFrame, SessionRecord};

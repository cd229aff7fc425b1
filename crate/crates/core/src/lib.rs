//! Small-model / big-model edge-cloud object detection offloading, driven by
//! detector output traces.
//!
//! The crate is organised bottom-up:
//!
//! * [`detect`], boxes, raw and final detections, IoU and greedy matching.
//! * [`ingest`], JSONL traces, VOC XML annotations, PGM images, manifests.
//! * [`discriminator`], difficult-case feature estimation, the three-step
//!   threshold decision and grid calibration of all three thresholds.
//! * [`baselines`], random, Brenner-blur, top-1 confidence and semantic
//!   difficulty rankings.
//! * [`eval`], case labelling, VOC-style AP/mAP, detected-object counts.
//! * [`synth`], seeded synthetic datasets with planted structure.
//! * [`sim`], routing, channel cost accounting and upload-ratio sweeps.
//! * [`wire`], [`cloud`], [`edge`], the two-process deployment over a
//!   length-prefixed TCP protocol.

pub mod baselines;
pub mod canonical;
pub mod cloud;
pub mod detect;
pub mod discriminator;
pub mod edge;
pub mod eval;
pub mod ingest;
pub mod sim;
pub mod synth;
pub mod wire;

pub use detect::{BBox, DetectionRecord, FinalDetection, GroundTruth, RawDetection};
pub use discriminator::{CaseLabel, FeatureVector, ThresholdSet};
pub use eval::{ApMode, MetricsReport};
pub use ingest::Dataset;
pub use sim::{ChannelModel, Route, RouteDecision};

/// Score cutoff at which a raw detection counts as a reported object.
pub const REPORT_CUTOFF: f64 = 0.5;

/// IoU needed for a detection to count as a true positive.
pub const MATCH_IOU: f64 = 0.5;

//! Desk-scale dynamic scene graph generation built around explicit
//! object-pair motion features.
//!
//! The pipeline ingests per-frame detections, forms person-object pairs,
//! extracts motion attributes (distance, approach velocity, windowed IoU,
//! direction consistency), fuses them with spatially encoded pair features
//! through cross-attention, decodes pair trajectories over time, and scores
//! relations against a frozen text-embedding matrix. Training uses a
//! category-weighted focal loss; evaluation implements the standard
//! Recall@K / mean-Recall@K protocols.

pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod model;
pub mod motion;
pub mod nn;
pub mod scene;
pub mod testkit;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use geometry::{box_iou, union_box, BoundingBox};
pub use motion::{MotionAttributes, MotionConfig};
pub use nn::{Matrix, NetConfig, ParameterSet, Tape};
pub use scene::{Detection, PairTrack, RelationVocabulary, SceneGraphTriple};

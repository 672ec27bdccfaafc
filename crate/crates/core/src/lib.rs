//! Turbine-blade surface pressure prediction with per-station classifiers.
//!
//! The pipeline runs as a chain of stages:
//!
//! - [`geometry`]: datum blade and the thickness-perturbed blade library
//! - [`flow`]: cascade vortex-panel solver producing Cp on every surface point
//! - [`encoding`]: 400-point profile to 20×20 input matrix
//! - [`dataset`]: station Cp binned into 0.1-wide labels, split, persisted
//! - [`nn`] and [`models`]: from-scratch layers and the nn2 / cnn2_nn2 / cnn4_nn2 networks
//! - [`eval`]: label-adjacency accuracy and the report tables
//!
//! [`pipeline`] strings the stages together under an [`ExperimentConfig`].

pub mod binio;
pub mod config;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod flow;
pub mod geometry;
pub mod models;
pub mod nn;
pub mod pgm;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use dataset::{DatasetBank, LabelSpec, Split, Station, StationDataset};
pub use encoding::{InputMatrix, NormRange};
pub use error::{Error, Result};
pub use eval::AdjacencyResult;
pub use flow::{CpDistribution, FlowConditions};
pub use geometry::{BladeProfile, DatumSpec, LibrarySweep, PerturbSpec, Side};
pub use models::{ArchKind, ArchSpec, ClassifierBank, StationModel};

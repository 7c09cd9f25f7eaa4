//! Statistically validated progression networks between AI investment and
//! goods/services export specializations.
//!
//! The numeric core is generic over [`scalar::Value`], so the same code runs
//! on `f32`, `f64` or exact rationals ([`Exact`]). Null-model fitting needs a
//! floating type ([`scalar::Real`]).

pub mod assist;
pub mod config;
pub mod density;
pub mod ingest;
pub mod matrix;
pub mod network;
pub mod nullmodel;
pub mod pipeline;
pub mod rca;
pub mod scalar;

pub use assist::{assist, random_walk_oracle, AssistMatrix, SectorFilter};
pub use config::RunConfig;
pub use density::{compute_density, country_report, top_specializations, Application, DensityReport};
pub use ingest::{align, load_panel, Layer, Panel, SectorRef, Taxonomy};
pub use matrix::BinaryMatrix;
pub use network::{build_progression, export_graph, node_summary, GraphFormat, ProgressionConfig, ProgressionNetwork};
pub use nullmodel::{fit_bicm, validate, BicmFit, ValidationOptions};
pub use pipeline::{run_pipeline, PipelineError};
pub use rca::{compute_rca, label_specializations, SpecMatrix, Status};
pub use scalar::Exact;

pub type Panel64 = Panel<f64>;
pub type Panel32 = Panel<f32>;
pub type ExactPanel = Panel<Exact>;
pub type SpecMatrix64 = SpecMatrix<f64>;
pub type ExactSpecMatrix = SpecMatrix<Exact>;
pub type AssistMatrix64 = AssistMatrix<f64>;
pub type ExactAssistMatrix = AssistMatrix<Exact>;
pub type BicmFit64 = BicmFit<f64>;

//! Probabilistic dry-climate classification on gridded monthly climate data.
//!
//! The pipeline runs: gridded precipitation and temperature ([`grid`]) are
//! labeled with the Köppen–Trewartha dry-climate rule ([`ktc`]), encoded with
//! compact spatial and temporal basis functions ([`basis`]), fed to a small
//! feed-forward classifier ([`nn`], [`checkpoint`]), scored ([`evaluation`])
//! and summarized over time ([`fluctuation`]).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod checkpoint;
pub mod error;
pub mod evaluation;
pub mod fluctuation;
pub mod grid;
pub mod ktc;
pub mod nn;
pub mod pipeline;

pub use basis::{BandwidthRule, BasisConfig, FeatureVector, SpatialKnots, TemporalKnots};
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use evaluation::{ConfusionCounts, MetricsReport};
pub use fluctuation::{CvMap, FluctuationLevel, ProbCube, RegionMask};
pub use grid::{GridSpec, Layer, LayerStack, MonthlyField, StGrid};
pub use ktc::{AridityClass, AridityLabel, LabelRaster};
pub use nn::{Dataset, Network, NetworkConfig, ProbTriple, TrainConfig};

//! Temporal graph classification from sliding-window topological and spectral
//! descriptors.
//!
//! The crate is organised bottom-up:
//!
//! * [`temporal_graph`]: events, sliding windows, temporal-degree features.
//! * [`topology`]: clique complexes, Betti numbers, sublevel persistence.
//! * [`spectral`]: normalized Laplacian spectra and density-of-states histograms.
//! * [`neural`]: a small reverse-mode autodiff tape and the classifier built on it.
//! * [`pipeline`]: datasets, descriptor extraction, training and evaluation.
//! * [`stability`]: perturbation campaigns measuring descriptor stability.

pub mod neural;
pub mod pipeline;
pub mod spectral;
pub mod stability;
pub mod temporal_graph;
pub mod topology;
mod union_find;

pub use neural::{Model, ModelConfig, ModelMode, ParamStore, Tensor};
pub use pipeline::{Dataset, Metrics, RunConfig};
pub use spectral::DosHistogram;
pub use stability::StabilityReport;
pub use temporal_graph::{Event, StaticGraph, TemporalGraph, WindowGraph, WindowSpec};
pub use topology::{PersistenceDiagram, TopoDescriptor};

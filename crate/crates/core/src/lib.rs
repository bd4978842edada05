//! Bayesian multi-group functional factor analysis.
//!
//! Grouped curves observed on a common grid are decomposed into group mean
//! functions, latent factors shared by every group and latent factors specific
//! to each group. All smooth components live in the span of one cubic B-spline
//! basis. Loadings carry a parameter-expanded cumulative shrinkage process
//! prior, so the number of active shared and group-specific factors is learned
//! by the Gibbs sampler in [`gibbs`]. Draws are identified after sampling by
//! [`postprocess`].
//!
//! Gamma and inverse-gamma distributions use the shape-rate convention
//! everywhere in this crate.

pub mod basis;
pub mod commands;
pub mod cusp;
pub mod dist;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod postprocess;
pub mod simulate;

pub use basis::{build_bspline_basis, build_penalty, BasisSystem, TimeGrid};
pub use cusp::{count_active, CuspHyper, CuspState};
pub use error::{Error, Result};
pub use gibbs::{run_chain, PosteriorDraws, SamplerConfig};
pub use model::{ExpansionBlock, FunctionalDataset, GroupData, ModelState};
pub use postprocess::{FactorConfiguration, IdentifiedLoadings};
pub use simulate::{ScenarioConfig, ScenarioTruth};

/// Default ridge added to the second-difference penalty.
pub const DEFAULT_RIDGE: f64 = 1e-7;

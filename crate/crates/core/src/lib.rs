//! Conservative sampling of annual catastrophe losses.
//!
//! Yearly loss totals are sampled from distributions built out of upper and
//! lower tail bounds on the year's loss sum, giving a bracket around the
//! standard Monte Carlo answer at a fraction of its cost.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod bounds;
pub mod error;
pub mod mc;
pub mod optimize;
pub mod portfolio;
pub mod returns;
pub mod rng;
pub mod sampler;
pub mod sensitivity;
pub mod special;
pub mod stats;

pub use bounds::{BoundFamily, SummandStats};
pub use error::{Error, Result};
pub use mc::{Method, ReplicateMatrix};
pub use portfolio::{LossModel, Portfolio, YearSummary};
pub use returns::{LevelMatrix, ReturnLevelReport};
pub use sampler::{run_conservative, SamplingPath};
pub use sensitivity::{Scenario, SensitivityConfig};

//! Data-driven one-step control of unknown smooth systems.
//!
//! First-order samples of the cost give a majorant and a minorant; the
//! controller minimizes a linear combination of the two exactly over a
//! polyhedral control set at every step.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod controller;
pub mod environments;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod optimizer;
pub mod polyhedral;
pub mod surrogate;

pub use controller::{run_episode, EpisodeConfig, EpisodeTrace};
pub use error::{Error, Result};
pub use optimizer::{classify, minimize_surrogate, ConvexityCase, SolveReport};
pub use polyhedral::{AxisBox, Halfspace, Polyhedron};
pub use surrogate::{Dataset, FirstOrderSample, SideInfo, SurrogateSpec};

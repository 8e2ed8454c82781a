//! Manifold-valued spiking graph networks.
//!
//! Spiking graph layers whose layer outputs live on constant-curvature
//! manifolds (Lorentz, sphere, Euclidean, and their products). The backward
//! pass uses closed-form exp-map Jacobians instead of unrolling spike
//! dynamics through time, so its cost is independent of the number of
//! simulation timesteps.

pub mod backprop;
pub mod chartsolver;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod model;
pub mod spiking;
pub mod tasks;

pub use error::{MsgError, Result};

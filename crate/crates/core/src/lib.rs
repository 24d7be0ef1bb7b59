//! Joint subcarrier and power allocation for multi-antenna uplink NOMA.
//!
//! The crate computes sum-rate-maximizing allocations for three schemes —
//! hybrid-domain NOMA (`hd`), sparse code multiple access (`scma`), and
//! power-domain NOMA (`pd`) — by successive convex approximation with a
//! reweighted-ℓ1 binary relaxation. Each inner convex subproblem is a
//! second-order cone program solved by the embedded interior-point solver in
//! [`conic`]. An exhaustive oracle provides the optimal baseline at desk
//! scale, and [`harness`] drives Monte Carlo sweeps and CSV emission.

pub mod conic;
pub mod error;
pub mod model;
pub mod subproblem;

pub use error::{Error, Result};
pub use model::{
    Allocation, ChannelSet, Scheme, SystemConfig, Topology, ValidationReport,
};

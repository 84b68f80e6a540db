//! Learned articulated rigid-body physics.
//!
//! A maximal-coordinate reference simulator ([`refsim`]) produces capsule-chain
//! trajectories; a recurrent neural simulator ([`model`]) built from a
//! per-body dynamics network and a pairwise contact network is trained on
//! them by unrolled rollouts ([`train`]).

pub mod adnn;
pub mod body;
mod contact_ad;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod features;
pub mod geom;
pub mod kv;
pub mod model;
pub mod refsim;
pub mod train;

pub use body::{BodySpec, ControlInput, LinkControl, LinkSpec, LinkState, SceneState, Trajectory};
pub use error::{Error, Result};
pub use geom::{Capsule, ContactInfo, Mat3, Pose, Quat, Vec3};

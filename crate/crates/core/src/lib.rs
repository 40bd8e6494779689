//! Rotation-invariant random features for 3D point clouds.
//!
//! A point cloud is turned into a fixed-length feature vector that does not
//! change when the cloud is rotated. Each feature is the sine of the
//! rotation-averaged squared response of the cloud to a random band-limited
//! function, evaluated in closed form through a per-sample invariant tensor
//! (see [`features::BTensor`]). Linear models on top of the features are fit
//! with the solvers in [`solvers`].

pub mod error;
pub mod so3;

pub use error::{Error, Result};
pub mod exec;
pub mod features;
pub mod quadrature;
pub mod solvers;
pub mod dataio;
pub mod train;
pub mod timing;
pub mod validate;

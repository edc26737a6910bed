//! Contact-point guided surface segmentation and raster coverage planning.
//!
//! The pipeline runs in three stages that mirror how an operator programs a
//! surface-finishing robot:
//!
//! 1. [`segmentation`] fits competing shape primitives to contact points the
//!    operator provides and scores them against the whole cloud.
//! 2. [`surface`] turns the winning model and its object inliers into a
//!    bounded, croppable, triangulated patch.
//! 3. [`coverage`] plans raster lanes over the patch and lifts them into a
//!    list of via poses.
//!
//! [`synth`] generates synthetic scenes and simulated demonstrations used by
//! the test-suite, and [`session`] hosts the whole workflow behind a line
//! protocol and a command line interface.

pub mod cloud;
pub mod cli;
pub mod coverage;
pub mod geom;
pub mod error;
pub mod ply;
pub mod primitives;
pub mod segmentation;
pub mod session;
pub mod surface;
pub mod synth;

mod hash;

pub use cloud::{PointCloud, PointIndexSet, SpatialIndex};
pub use error::Error;
pub use primitives::{PcaFrame, ShapeKind, ShapeModel};
pub use segmentation::{ContactPointSet, Engine, SegmentationConfig, SegmentationSnapshot};

/// 3D vector in meters.
pub type Vec3 = nalgebra::Vector3<f64>;
/// 2D vector in a surface parameter domain, meters.
pub type Vec2 = nalgebra::Vector2<f64>;

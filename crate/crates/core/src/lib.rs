//! Physically based rendering of Gaussian-primitive scenes with PBR
//! materials, reflection-aware masking and intrinsic-space object removal.

pub mod error;
pub mod image;
pub mod lightmask;
pub mod math;
pub mod metrics;
pub mod optim;
pub mod raster;
pub mod removal;
pub mod render;
pub mod scene;
pub mod shading;
pub mod ssfilter;
pub mod tracer;

pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use scene::{Camera, EnvironmentMap, GaussianPrimitive, Scene, ViewData};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

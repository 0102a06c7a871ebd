//! Incremental true orthophoto generation with 3D Gaussian splatting.
//!
//! A sparse reconstruction is replayed frame by frame ([`scene`]). Each new
//! frame's key region ([`key_region`]) and rendering discrepancy
//! ([`discrepancy`]) decide where new Gaussians are seeded into the field
//! ([`field`]), which is then optimized online ([`trainer`]) with a CPU
//! splatting rasterizer ([`render`]). After every update an orthographic
//! render produces a georeferenced orthophoto ([`tdom`]).

pub mod delaunay;
pub mod discrepancy;
pub mod error;
pub mod field;
pub mod geometry;
pub mod key_region;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scene;
pub mod synthetic;
pub mod tdom;
pub mod trainer;

pub use error::{Error, Result};

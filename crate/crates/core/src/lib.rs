//! Layered, occlusion-aware texturing of triangle meshes.
//!
//! The mesh is split into hit levels (how deep a surface sits along rays
//! from a ring of cameras), each level is rendered with the layers in front
//! of it flipped away, and the per-level textures are blended in UV space.

// `!(x > 0.0)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod atlas;
pub mod bvh;
pub mod camera;
pub mod error;
pub mod fixtures;
pub mod hitlevel;
pub mod mesh;
pub mod pipeline;
pub mod provider;
pub mod superface;
pub mod uvblend;
pub mod visibility;

pub use error::{Error, Result};

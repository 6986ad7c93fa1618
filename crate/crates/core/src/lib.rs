//! PlenOctrees: sparse voxel octrees whose leaves hold a density and
//! spherical-basis color coefficients.
//!
//! The crate covers the full offline pipeline: evaluating a radiance field on
//! a grid and converting it into a tree ([`convert`]), rendering
//! ([`renderer`]), fine-tuning leaf values with analytic gradients
//! ([`autodiff`], [`optim`]), and the raw and compressed file formats
//! ([`codec`]). [`scenes`] provides analytic radiance fields and datasets.

pub mod autodiff;
pub mod basis;
pub mod bench;
pub mod codec;
pub mod convert;
pub mod error;
pub mod math;
pub mod octree;
pub mod optim;
pub mod renderer;
pub mod scenes;

pub use basis::{Direction, SgLobe, SphericalBasis};
pub use error::{CodecError, Error, Result};
pub use math::Vec3;
pub use octree::{BoundingBox, PlenOctree, Ray, Segment, SegmentSequence};
pub use renderer::{Camera, Image, RenderConfig};

//! Pericoronary adipose tissue (PCAT) measurement on coronary CT angiography.
//!
//! Given a CT volume in Hounsfield units and coronary artery masks, the
//! crate extracts artery centerlines, sweeps a sphere of one vessel
//! diameter along the measured segments, and reports the mean attenuation
//! and volume of the fat-range voxels in that region, for the right
//! coronary artery (RPCAT) and the left main with its two daughters
//! (LPCAT).

pub mod centerline;
pub mod config;
pub mod error;
pub mod morphology;
pub mod nifti;
pub mod pcat;
pub mod phantom;
pub mod pipeline;
pub mod report;
pub mod volume;

pub use error::{Error, ErrorClass, Result};
pub use volume::{BinaryMask, Geometry, Ijk, Point3, VoxelGrid};

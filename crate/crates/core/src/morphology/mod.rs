//! Binary volume morphology: connected components, thinning, and the
//! Euclidean distance transform.

mod components;
mod edt;
mod skeleton;

pub use components::{connected_components, ComponentLabeling, Connectivity};
pub use edt::distance_transform;
pub use skeleton::skeletonize;

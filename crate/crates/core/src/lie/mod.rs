//! Lie algebra bases, regularizers, coset normalization, identity-component
//! distance and invariant bilinear forms.

mod basis;
mod coset;
mod distance;
mod metric;
mod regularize;

pub use basis::{rotation_generator, so13_basis, so3_in_lorentz, LieBasis};
pub use coset::{normalize_coset, normalize_coset_node, CosetBank};
pub use distance::{closest_in_component, component_distance, ComponentDistance};
pub use metric::{invariant_metric, principal_angles, subspace_angle, InvariantMetric};
pub use regularize::{cosine_node, cosine_reg, growth_node, growth_reg, sbr_loss, sbr_node};

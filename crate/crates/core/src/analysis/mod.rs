//! Experiment harnesses and metrics: two-point resolution, field-of-view
//! shift invariance and ghosts, and the spiral depth-range study.

pub mod depth;
pub mod fov;
pub mod metrics;
pub mod phantom;
pub mod resolution;

pub use depth::{
    count_resolved_spheres, depth_psfs, depth_study, CountParams, DepthParams, DepthResult, SphereCount,
};
pub use fov::{fov_study, ghost_ratio, simulate_field, FieldPsfs, FovParams, FovResult, GhostReport};
pub use metrics::{cosine_similarity_profile, dip_between, local_maxima, psnr, trilinear, SimilarityProfile};
pub use phantom::{fov_phantom, spiral_centers, spiral_phantom, voxelize_spheres, ChartPattern, SpiralParams};
pub use resolution::{
    resolution_curve, two_point_axial, two_point_lateral, ResolutionCurve, Separation, TwoPointParams,
};

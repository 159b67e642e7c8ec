//! Curves, frames, surface grids, distances and fitting.

pub mod bezier;
pub mod distance;
pub mod fit;
pub mod frame;
pub mod linalg;
pub mod patch;
pub mod vec3;

pub use bezier::{bernstein, uniform_params, RationalCubicBezier, CURVE_SAMPLES, WEIGHT_FLOOR};
pub use distance::{chamfer_distance, point_segment_distance, point_triangle_distance, PointIndex};
pub use fit::{fit_plane_least_squares, Plane};
pub use frame::{canonical_frame_from_face, Frame};
pub use linalg::{symmetric_eigen, SymmetricEigen};
pub use patch::{grid_uv, SurfacePatch, GRID};
pub use vec3::Vec3;

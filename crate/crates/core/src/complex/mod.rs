//! Cell complexes, their spatial Hasse diagrams, and particle sets.

mod cell;
mod hasse;
mod lpe;
mod particles;
mod restore;

pub(crate) use cell::UnionFind;
pub use cell::{
    complexity_filter, cycles_from_edges, edge_of, orient_loops, shoelace, signed_ref, CellComplex, CellType,
    ComplexityLimits, Edge, Face, Mode, OrientedLoops, ShellStats,
};
pub use hasse::{build_hasse_diagram, HasseNode, SpatialHasseDiagram};
pub use lpe::{laplacian_positional_encoding, LPE_DIM};
pub use particles::{flatten_to_particles, Particle, ParticleSet};
pub use restore::{
    canonical_endpoints, planar_face_from_boundary, restore_complex, restore_topology, PredictedGeometry, Repair,
    RepairLog, RestoredTopology, LINK_THRESHOLD,
};

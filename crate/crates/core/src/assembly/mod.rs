//! Primitive fitting, B-Rep assembly, validity checking and export.

mod export;
mod model;
mod mutations;
mod validity;

pub use crate::complex::orient_loops as orient_loops_largest_area;
pub use export::{export_model, model_from_json, model_to_json, model_to_obj, read_model, ExportFormat};
pub use model::{classify_edge, fit_and_assemble, fit_face_plane, BRepModel, EdgeKind, FaceKind, FitConfig};
pub use mutations::Mutation;
pub use validity::{check_validity, Check, Diagnostic, ValidityConfig, Verdict};

/// Assemble with default tolerances.
pub fn assemble(complex: &crate::complex::CellComplex) -> BRepModel {
    fit_and_assemble(complex, &FitConfig::default(), &ValidityConfig::default())
}

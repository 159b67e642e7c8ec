use serde::{Deserialize, Serialize};

use super::validity::{check_validity, Check, Diagnostic, ValidityConfig, Verdict};
use crate::complex::{orient_loops, CellComplex, ShellStats};
use crate::geometry::vec3::{add, cross, dist, norm, scale, sub};
use crate::geometry::{fit_plane_least_squares, Plane, RationalCubicBezier, SurfacePatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaceKind {
    Plane,
    Freeform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    Line,
    /// Rational cubic tracing a circular arc.
    Arc,
    Freeform,
}

/// Tolerances for primitive fitting, in normalized units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub plane_rms: f64,
    pub line_deviation: f64,
    pub arc_deviation: f64,
    /// Replace straight edges by exact lines; off keeps every decoded curve bit for bit.
    pub snap_lines: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            plane_rms: 1e-3,
            line_deviation: 1e-3,
            arc_deviation: 1e-3,
            snap_lines: true,
        }
    }
}

/// An assembled boundary model with its validity verdict.
#[derive(Clone, Debug, PartialEq)]
pub struct BRepModel {
    pub complex: CellComplex,
    pub face_kinds: Vec<FaceKind>,
    pub edge_kinds: Vec<EdgeKind>,
    pub shells: Vec<ShellStats>,
    pub verdict: Verdict,
}

impl BRepModel {
    pub fn is_valid(&self) -> bool {
        self.verdict.valid
    }
}

const FIT_SAMPLES: usize = 33;

/// Circle through three points, as (center, radius), when they are not collinear.
fn circumcircle(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Option<([f64; 3], f64)> {
    let (u, v) = (sub(b, a), sub(c, a));
    let w = cross(u, v);
    let w2 = crate::geometry::vec3::dot(w, w);
    if w2 < 1e-18 {
        return None;
    }
    let uu = crate::geometry::vec3::dot(u, u);
    let vv = crate::geometry::vec3::dot(v, v);
    let offset = scale(add(scale(cross(w, u), vv), scale(cross(v, w), uu)), 0.5 / w2);
    Some((add(a, offset), norm(offset)))
}

pub fn classify_edge(curve: &RationalCubicBezier, config: &FitConfig) -> EdgeKind {
    if curve.max_chord_deviation(FIT_SAMPLES) <= config.line_deviation {
        return EdgeKind::Line;
    }
    let Some((center, radius)) = circumcircle(curve.start(), curve.eval(0.5), curve.end()) else {
        return EdgeKind::Freeform;
    };
    let off = curve
        .sample_uniform(FIT_SAMPLES)
        .iter()
        .map(|&p| (dist(p, center) - radius).abs())
        .fold(0.0, f64::max);
    if off <= config.arc_deviation {
        EdgeKind::Arc
    } else {
        EdgeKind::Freeform
    }
}

/// Plane through the grid when its RMS residual is within tolerance.
pub fn fit_face_plane(grid: &SurfacePatch, config: &FitConfig) -> Option<Plane> {
    fit_plane_least_squares(&grid.points)
        .ok()
        .filter(|p| p.rms <= config.plane_rms)
}

/// Fit primitives with a preference for analytic shapes, orient loops and
/// check validity.
///
/// Straight edges are replaced by exact lines through their endpoints and
/// planar grids are projected onto their plane; everything else is kept as
/// decoded. Open loops are left in place and reported by the checker.
pub fn fit_and_assemble(complex: &CellComplex, fit: &FitConfig, validity: &ValidityConfig) -> BRepModel {
    let mut c = complex.clone();
    let mut edge_kinds = Vec::with_capacity(c.edges.len());
    for e in &mut c.edges {
        let kind = classify_edge(&e.curve, fit);
        if kind == EdgeKind::Line && fit.snap_lines {
            e.curve = RationalCubicBezier::line(e.curve.start(), e.curve.end());
        }
        edge_kinds.push(kind);
    }
    let mut face_kinds = Vec::with_capacity(c.faces.len());
    let mut loop_diagnostics = Vec::new();
    for k in 0..c.faces.len() {
        let kind = match fit_face_plane(&c.faces[k].grid, fit) {
            Some(plane) => {
                for p in &mut c.faces[k].grid.points {
                    *p = sub(*p, scale(plane.normal, plane.signed_distance(*p)));
                }
                FaceKind::Plane
            }
            None => FaceKind::Freeform,
        };
        face_kinds.push(kind);
        let face = &c.faces[k];
        if face.loops.iter().all(|lp| c.loop_closes(lp)) {
            let oriented = orient_loops(&c, &face.loops, &face.frame);
            c.faces[k].loops = oriented.loops;
        } else {
            loop_diagnostics.push(Diagnostic::new(
                Check::LoopClosure,
                format!("face {k}"),
                "open loop left unoriented",
            ));
        }
    }
    let mut verdict = check_validity(&c, validity);
    if !loop_diagnostics.is_empty() {
        verdict.valid = false;
        verdict.diagnostics.extend(loop_diagnostics);
        verdict.diagnostics.sort();
        verdict.diagnostics.dedup();
    }
    BRepModel {
        shells: c.shells(),
        complex: c,
        face_kinds,
        edge_kinds,
        verdict,
    }
}

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::complex::{edge_of, CellComplex, Mode, UnionFind};
use crate::geometry::vec3::dist2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Empty,
    /// A cell refers to something that does not exist.
    Reference,
    EdgeFaceCount,
    LoopClosure,
    VertexCoincidence,
    CurveOnSurface,
    Genus,
    Connectivity,
    DuplicateCell,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Diagnostic {
    pub check: Check,
    pub cell: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(check: Check, cell: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            check,
            cell: cell.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:?}] {}: {}", self.check, self.cell, self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub valid: bool,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidityConfig {
    /// Maximum distance from a sampled edge point to each incident face patch.
    pub curve_on_surface: f64,
    /// Distinct vertices closer than this are an unmerged duplicate.
    pub vertex_merge: f64,
    pub edge_samples: usize,
}

impl Default for ValidityConfig {
    fn default() -> Self {
        Self {
            curve_on_surface: 0.02,
            vertex_merge: 1e-9,
            edge_samples: 16,
        }
    }
}

/// Watertightness and consistency checks for the complex's own mode.
///
/// Solid: every edge on exactly two faces, closed loops, curve ends equal to
/// their vertices, edge samples on incident face patches, and a non-negative
/// integer genus per shell. Open shell: as solid but edges may border one
/// face. Wireframe: edges with two distinct existing endpoints and a single
/// connected graph. All modes reject coincident duplicate vertices, edges and
/// faces. Every failure is reported, not just the first.
pub fn check_validity(c: &CellComplex, config: &ValidityConfig) -> Verdict {
    let mut d = Vec::new();
    if c.is_empty() {
        d.push(Diagnostic::new(Check::Empty, "model", "no cells"));
        return Verdict {
            valid: false,
            diagnostics: d,
        };
    }
    let nv = c.vertices.len();
    let ne = c.edges.len();

    let mut edge_ok = vec![true; ne];
    for (i, e) in c.edges.iter().enumerate() {
        if let Some(&v) = e.v.iter().find(|&&v| v >= nv) {
            d.push(Diagnostic::new(
                Check::Reference,
                format!("edge {i}"),
                format!("missing vertex {v}"),
            ));
            edge_ok[i] = false;
        } else if e.v[0] == e.v[1] {
            d.push(Diagnostic::new(
                Check::Reference,
                format!("edge {i}"),
                "only one distinct endpoint",
            ));
            edge_ok[i] = false;
        }
        if !e.curve.is_finite() {
            d.push(Diagnostic::new(
                Check::Reference,
                format!("edge {i}"),
                "non-finite curve",
            ));
            edge_ok[i] = false;
        }
    }

    // (c) curve ends sit exactly on their vertices; no unmerged duplicates.
    for (i, e) in c.edges.iter().enumerate() {
        if !edge_ok[i] {
            continue;
        }
        if e.curve.start() != c.vertices[e.v[0]] || e.curve.end() != c.vertices[e.v[1]] {
            d.push(Diagnostic::new(
                Check::VertexCoincidence,
                format!("edge {i}"),
                "curve endpoints do not coincide with their vertices",
            ));
        }
    }
    let merge2 = config.vertex_merge * config.vertex_merge;
    for a in 0..nv {
        if c.vertices[a].iter().any(|x| !x.is_finite()) {
            d.push(Diagnostic::new(
                Check::Reference,
                format!("vertex {a}"),
                "non-finite position",
            ));
        }
        for b in a + 1..nv {
            if dist2(c.vertices[a], c.vertices[b]) <= merge2 {
                d.push(Diagnostic::new(
                    Check::VertexCoincidence,
                    format!("vertex {b}"),
                    format!("coincides with vertex {a}"),
                ));
            }
        }
    }
    let mut by_ends: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
    for (i, e) in c.edges.iter().enumerate() {
        if edge_ok[i] {
            by_ends
                .entry([e.v[0].min(e.v[1]), e.v[0].max(e.v[1])])
                .or_default()
                .push(i);
        }
    }
    for group in by_ends.values() {
        for (x, &a) in group.iter().enumerate() {
            for &b in &group[x + 1..] {
                let (ca, cb) = (&c.edges[a].curve, &c.edges[b].curve);
                let same = |other: &crate::geometry::RationalCubicBezier| {
                    ca.sample_uniform(9)
                        .iter()
                        .zip(other.sample_uniform(9))
                        .all(|(p, q)| dist2(*p, q) <= merge2)
                };
                if same(cb) || same(&cb.reversed()) {
                    d.push(Diagnostic::new(
                        Check::DuplicateCell,
                        format!("edge {b}"),
                        format!("duplicates edge {a}"),
                    ));
                }
            }
        }
    }

    match c.mode {
        Mode::Wireframe => check_wireframe(c, &edge_ok, &mut d),
        Mode::Solid | Mode::OpenShell => check_surface(c, &edge_ok, config, &mut d),
    }

    d.sort();
    d.dedup();
    Verdict {
        valid: d.is_empty(),
        diagnostics: d,
    }
}

fn check_wireframe(c: &CellComplex, edge_ok: &[bool], d: &mut Vec<Diagnostic>) {
    if !c.faces.is_empty() {
        d.push(Diagnostic::new(
            Check::Reference,
            "model",
            format!("wireframe carries {} faces", c.faces.len()),
        ));
    }
    let nv = c.vertices.len();
    let mut uf = UnionFind::new(nv);
    for (i, e) in c.edges.iter().enumerate() {
        if edge_ok[i] {
            uf.union(e.v[0], e.v[1]);
        }
    }
    let components = uf.components();
    if components != 1 {
        d.push(Diagnostic::new(
            Check::Connectivity,
            "model",
            format!("graph has {components} connected components"),
        ));
    }
}

fn check_surface(c: &CellComplex, edge_ok: &[bool], config: &ValidityConfig, d: &mut Vec<Diagnostic>) {
    let ne = c.edges.len();
    let mut face_ok = vec![true; c.faces.len()];
    for (k, f) in c.faces.iter().enumerate() {
        let cell = format!("face {k}");
        if f.loops.is_empty() {
            d.push(Diagnostic::new(Check::LoopClosure, &cell, "no boundary loops"));
            face_ok[k] = false;
        }
        for lp in &f.loops {
            if let Some(&s) = lp.iter().find(|&&s| s == 0 || edge_of(s) >= ne) {
                d.push(Diagnostic::new(Check::Reference, &cell, format!("missing edge {s}")));
                face_ok[k] = false;
            } else if lp.iter().any(|&s| !edge_ok[edge_of(s)]) {
                face_ok[k] = false;
            } else if !c.loop_closes(lp) {
                d.push(Diagnostic::new(
                    Check::LoopClosure,
                    &cell,
                    format!("loop {lp:?} does not close"),
                ));
                face_ok[k] = false;
            }
        }
        if f.edge_set().len() < 3 {
            d.push(Diagnostic::new(
                Check::LoopClosure,
                &cell,
                "fewer than 3 boundary edges",
            ));
        }
        if !f.grid.is_finite() {
            d.push(Diagnostic::new(Check::Reference, &cell, "non-finite sample grid"));
            face_ok[k] = false;
        }
    }

    let mut seen: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for (k, f) in c.faces.iter().enumerate() {
        if let Some(&first) = seen.get(&f.edge_set()) {
            d.push(Diagnostic::new(
                Check::DuplicateCell,
                format!("face {k}"),
                format!("duplicates face {first}"),
            ));
        } else {
            seen.insert(f.edge_set(), k);
        }
    }

    // (a) edge/face incidence.
    let counts = c.edge_face_counts();
    let allowed: &[usize] = if c.mode == Mode::Solid { &[2] } else { &[1, 2] };
    for (i, &n) in counts.iter().enumerate() {
        if !allowed.contains(&n) {
            let expected = if c.mode == Mode::Solid { "2" } else { "1 or 2" };
            d.push(Diagnostic::new(
                Check::EdgeFaceCount,
                format!("edge {i}"),
                format!("on {n} faces, expected {expected}"),
            ));
        }
    }
    let isolated: BTreeSet<usize> = {
        let mut used = vec![false; c.vertices.len()];
        for (i, e) in c.edges.iter().enumerate() {
            if edge_ok[i] {
                used[e.v[0]] = true;
                used[e.v[1]] = true;
            }
        }
        (0..c.vertices.len()).filter(|&v| !used[v]).collect()
    };
    for v in isolated {
        d.push(Diagnostic::new(
            Check::Connectivity,
            format!("vertex {v}"),
            "not on any edge",
        ));
    }

    // (d) curve on surface.
    let samples = config.edge_samples.max(2);
    for (k, f) in c.faces.iter().enumerate() {
        if !face_ok[k] {
            continue;
        }
        for e in f.edge_set() {
            let worst = c.edges[e]
                .curve
                .sample_uniform(samples)
                .iter()
                .map(|&p| f.grid.distance_to(p))
                .fold(0.0, f64::max);
            if worst > config.curve_on_surface {
                d.push(Diagnostic::new(
                    Check::CurveOnSurface,
                    format!("edge {e}"),
                    format!("{worst:.4} from face {k}"),
                ));
            }
        }
    }

    // (e) genus per shell.
    for (k, s) in c.shells().iter().enumerate() {
        if s.genus < 0.0 || s.genus.fract() != 0.0 {
            d.push(Diagnostic::new(
                Check::Genus,
                format!("shell {k}"),
                format!(
                    "genus {} from V={} E={} F={} loops={} boundaries={}",
                    s.genus, s.vertices, s.edges, s.faces, s.loops, s.boundary_components
                ),
            ));
        }
    }
}

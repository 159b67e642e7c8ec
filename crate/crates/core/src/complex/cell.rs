use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::vec3::{lex_cmp, Vec3};
use crate::geometry::{Frame, RationalCubicBezier, SurfacePatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Solid,
    Wireframe,
    OpenShell,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Solid => "solid",
            Mode::Wireframe => "wireframe",
            Mode::OpenShell => "open-shell",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solid" => Ok(Mode::Solid),
            "wireframe" => Ok(Mode::Wireframe),
            "open-shell" | "open_shell" | "openshell" => Ok(Mode::OpenShell),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// Rank of a cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellType {
    Vertex = 0,
    Edge = 1,
    Face = 2,
}

impl CellType {
    pub const ALL: [CellType; 3] = [CellType::Vertex, CellType::Edge, CellType::Face];

    pub fn rank(self) -> usize {
        self as usize
    }

    pub fn from_rank(rank: usize) -> Option<Self> {
        Self::ALL.get(rank).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub v: [usize; 2],
    pub curve: RationalCubicBezier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Face {
    /// Boundary loops of signed edge references `±(edge + 1)`; a positive
    /// entry traverses the edge from `v[0]` to `v[1]`.
    pub loops: Vec<Vec<i64>>,
    pub grid: SurfacePatch,
    pub frame: Frame,
}

impl Face {
    /// Distinct edges on the boundary, ascending.
    pub fn edge_set(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.loops.iter().flatten().map(|&s| edge_of(s)).collect();
        set.into_iter().collect()
    }

    pub fn boundary_len(&self) -> usize {
        self.loops.iter().map(Vec::len).sum()
    }
}

pub fn edge_of(signed: i64) -> usize {
    (signed.unsigned_abs() - 1) as usize
}

pub fn signed_ref(edge: usize, forward: bool) -> i64 {
    let s = edge as i64 + 1;
    if forward {
        s
    } else {
        -s
    }
}

/// Explicit vertices, edges and faces with geometry; cell ids are positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellComplex {
    pub mode: Mode,
    pub vertices: Vec<Vec3>,
    pub edges: Vec<Edge>,
    pub faces: Vec<Face>,
}

/// Euler characteristic inputs and genus of one connected shell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ShellStats {
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub loops: usize,
    pub boundary_components: usize,
    /// `(2 − b − (V − E + F − (L − F))) / 2`; may be negative or fractional for broken input.
    pub genus: f64,
}

impl CellComplex {
    pub fn empty(mode: Mode) -> Self {
        Self {
            mode,
            vertices: Vec::new(),
            edges: Vec::new(),
            faces: Vec::new(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.vertices.len() + self.edges.len() + self.faces.len()
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.vertices.len(), self.edges.len(), self.faces.len())
    }

    pub fn is_empty(&self) -> bool {
        self.cell_count() == 0
    }

    pub fn euler(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    /// Number of loop references to each edge.
    pub fn edge_face_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.edges.len()];
        for f in &self.faces {
            for &s in f.loops.iter().flatten() {
                if let Some(c) = counts.get_mut(edge_of(s)) {
                    *c += 1;
                }
            }
        }
        counts
    }

    pub fn signed_endpoints(&self, s: i64) -> (usize, usize) {
        let e = &self.edges[edge_of(s)];
        if s > 0 {
            (e.v[0], e.v[1])
        } else {
            (e.v[1], e.v[0])
        }
    }

    /// Whether a loop chains head to tail and closes.
    pub fn loop_closes(&self, lp: &[i64]) -> bool {
        if lp.is_empty() || lp.iter().any(|&s| s == 0 || edge_of(s) >= self.edges.len()) {
            return false;
        }
        (0..lp.len()).all(|k| {
            let (_, end) = self.signed_endpoints(lp[k]);
            let (start, _) = self.signed_endpoints(lp[(k + 1) % lp.len()]);
            end == start
        })
    }

    /// Structural invariants; the error names the first failing cell.
    pub fn validate(&self) -> Result<()> {
        let bad = |cell: String, reason: String| Err(Error::InvalidComplex { cell, reason });
        for (i, p) in self.vertices.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return bad(format!("vertex {i}"), "non-finite position".into());
            }
        }
        for (i, e) in self.edges.iter().enumerate() {
            if e.v.iter().any(|&v| v >= self.vertices.len()) {
                return bad(format!("edge {i}"), format!("references missing vertex in {:?}", e.v));
            }
            if e.v[0] == e.v[1] {
                return bad(format!("edge {i}"), "both endpoints are the same vertex".into());
            }
            if !e.curve.is_finite() || e.curve.weights.iter().any(|&w| w <= 0.0) {
                return bad(format!("edge {i}"), "invalid curve".into());
            }
        }
        if self.mode == Mode::Wireframe && !self.faces.is_empty() {
            return bad("face 0".into(), "wireframe complexes carry no faces".into());
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.loops.is_empty() {
                return bad(format!("face {i}"), "no boundary loops".into());
            }
            for lp in &f.loops {
                if let Some(&s) = lp.iter().find(|&&s| s == 0 || edge_of(s) >= self.edges.len()) {
                    return bad(format!("face {i}"), format!("references missing edge {s}"));
                }
                if !self.loop_closes(lp) {
                    return bad(format!("face {i}"), format!("loop {lp:?} does not close"));
                }
            }
            if f.edge_set().len() < 3 {
                return bad(format!("face {i}"), "fewer than 3 boundary edges".into());
            }
            if f.grid.points.len() != f.grid.g * f.grid.g || !f.grid.is_finite() {
                return bad(format!("face {i}"), "invalid sample grid".into());
            }
        }
        let counts = self.edge_face_counts();
        match self.mode {
            Mode::Solid => {
                if let Some((i, c)) = counts.iter().enumerate().find(|(_, &c)| c != 2) {
                    return bad(format!("edge {i}"), format!("on {c} faces, expected 2"));
                }
            }
            Mode::OpenShell => {
                if let Some((i, c)) = counts.iter().enumerate().find(|(_, &c)| c == 0 || c > 2) {
                    return bad(format!("edge {i}"), format!("on {c} faces, expected 1 or 2"));
                }
            }
            Mode::Wireframe => {}
        }
        if self.mode != Mode::Wireframe {
            for (k, s) in self.shells().iter().enumerate() {
                if s.genus < 0.0 || s.genus.fract() != 0.0 {
                    return bad(
                        format!("shell {k}"),
                        format!("genus {} is not a non-negative integer", s.genus),
                    );
                }
            }
        }
        Ok(())
    }

    /// Connected components over vertex/edge/face incidence, each with its Euler data.
    pub fn shells(&self) -> Vec<ShellStats> {
        let (nv, ne) = (self.vertices.len(), self.edges.len());
        let n = nv + ne + self.faces.len();
        let mut uf = UnionFind::new(n);
        for (i, e) in self.edges.iter().enumerate() {
            for &v in &e.v {
                if v < nv {
                    uf.union(nv + i, v);
                }
            }
        }
        for (k, f) in self.faces.iter().enumerate() {
            for e in f.edge_set() {
                if e < ne {
                    uf.union(nv + ne + k, nv + e);
                }
            }
        }
        let counts = self.edge_face_counts();
        // Boundary components: connected pieces of the graph formed by single-face edges.
        let mut buf = UnionFind::new(nv);
        let mut on_boundary = vec![false; nv];
        for (i, e) in self.edges.iter().enumerate() {
            if counts[i] == 1 && e.v.iter().all(|&v| v < nv) {
                buf.union(e.v[0], e.v[1]);
                on_boundary[e.v[0]] = true;
                on_boundary[e.v[1]] = true;
            }
        }
        let mut groups: BTreeMap<usize, ShellStats> = BTreeMap::new();
        fn entry(groups: &mut BTreeMap<usize, ShellStats>, root: usize) -> &mut ShellStats {
            groups.entry(root).or_default()
        }
        for v in 0..nv {
            let r = uf.find(v);
            entry(&mut groups, r).vertices += 1;
        }
        for e in 0..ne {
            let r = uf.find(nv + e);
            entry(&mut groups, r).edges += 1;
        }
        for (k, f) in self.faces.iter().enumerate() {
            let r = uf.find(nv + ne + k);
            let s = entry(&mut groups, r);
            s.faces += 1;
            s.loops += f.loops.len();
        }
        let mut seen = BTreeSet::new();
        for v in 0..nv {
            if on_boundary[v] && seen.insert(buf.find(v)) {
                let r = uf.find(v);
                entry(&mut groups, r).boundary_components += 1;
            }
        }
        groups
            .into_values()
            .map(|mut s| {
                let chi = s.vertices as f64 - s.edges as f64 + s.faces as f64 - (s.loops as f64 - s.faces as f64);
                s.genus = (2.0 - s.boundary_components as f64 - chi) / 2.0;
                s
            })
            .collect()
    }

    /// Orient every edge from the lexicographically smaller endpoint and put
    /// every face's loops in canonical order.
    pub fn canonicalize(&mut self) {
        for i in 0..self.edges.len() {
            let (a, b) = (self.edges[i].v[0], self.edges[i].v[1]);
            if lex_cmp(&self.vertices[b], &self.vertices[a]).then(b.cmp(&a)).is_lt() {
                let e = &mut self.edges[i];
                e.v = [b, a];
                e.curve = e.curve.reversed();
                for f in &mut self.faces {
                    for s in f.loops.iter_mut().flatten() {
                        if edge_of(*s) == i {
                            *s = -*s;
                        }
                    }
                }
            }
        }
        for k in 0..self.faces.len() {
            let loops = std::mem::take(&mut self.faces[k].loops);
            let oriented = orient_loops(self, &loops, &self.faces[k].frame);
            self.faces[k].loops = oriented.loops;
        }
    }
}

/// Result of loop orientation for one face.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedLoops {
    /// Outer loop first, then inner loops by smallest edge id.
    pub loops: Vec<Vec<i64>>,
    /// Signed shoelace areas in the face frame, aligned with `loops`.
    pub areas: Vec<f64>,
}

/// Points along a signed loop, used for shoelace areas.
fn loop_polyline(c: &CellComplex, lp: &[i64]) -> Vec<Vec3> {
    let mut pts = Vec::with_capacity(lp.len() * 4);
    for &s in lp {
        let curve = &c.edges[edge_of(s)].curve;
        for k in 0..4 {
            let t = k as f64 / 4.0;
            pts.push(curve.eval(if s > 0 { t } else { 1.0 - t }));
        }
    }
    pts
}

pub fn shoelace(c: &CellComplex, lp: &[i64], frame: &Frame) -> f64 {
    let pts: Vec<[f64; 2]> = loop_polyline(c, lp)
        .into_iter()
        .map(|p| {
            let l = frame.to_local(p);
            [l[0], l[1]]
        })
        .collect();
    let n = pts.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

fn reverse_loop(lp: &[i64]) -> Vec<i64> {
    lp.iter().rev().map(|s| -s).collect()
}

fn rotate_to_min(lp: &[i64]) -> Vec<i64> {
    let k = (0..lp.len()).min_by_key(|&i| (lp[i].unsigned_abs(), i)).unwrap_or(0);
    lp[k..].iter().chain(&lp[..k]).copied().collect()
}

/// Largest-area loop becomes the outer loop, counter-clockwise about the
/// frame normal; all others become clockwise inner loops. Ties in area go to
/// the loop whose smallest vertex anchor is lexicographically first.
pub fn orient_loops(c: &CellComplex, loops: &[Vec<i64>], frame: &Frame) -> OrientedLoops {
    let min_anchor = |lp: &Vec<i64>| -> Vec3 {
        lp.iter()
            .map(|&s| c.vertices[c.signed_endpoints(s).0])
            .min_by(lex_cmp)
            .unwrap_or([f64::INFINITY; 3])
    };
    let mut items: Vec<(Vec<i64>, f64, Vec3)> = loops
        .iter()
        .map(|lp| (lp.clone(), shoelace(c, lp, frame), min_anchor(lp)))
        .collect();
    let outer = (0..items.len()).min_by(|&i, &j| {
        let (ai, aj) = (items[i].1.abs(), items[j].1.abs());
        let tol = 1e-12 * ai.max(aj).max(1.0);
        if (ai - aj).abs() <= tol {
            lex_cmp(&items[i].2, &items[j].2)
        } else {
            aj.total_cmp(&ai)
        }
    });
    let mut out = Vec::with_capacity(items.len());
    if let Some(o) = outer {
        let (lp, area, _) = items.remove(o);
        let (lp, area) = if area < 0.0 {
            (reverse_loop(&lp), -area)
        } else {
            (lp, area)
        };
        out.push((rotate_to_min(&lp), area));
    }
    let mut inner: Vec<(Vec<i64>, f64)> = items
        .into_iter()
        .map(|(lp, area, _)| {
            let (lp, area) = if area > 0.0 {
                (reverse_loop(&lp), -area)
            } else {
                (lp, area)
            };
            (rotate_to_min(&lp), area)
        })
        .collect();
    inner.sort_by_key(|(lp, _)| lp.first().map(|s| s.unsigned_abs()));
    out.extend(inner);
    OrientedLoops {
        areas: out.iter().map(|(_, a)| *a).collect(),
        loops: out.into_iter().map(|(lp, _)| lp).collect(),
    }
}

/// Split a set of edges, all of whose vertices have degree 2, into closed
/// loops. `None` if some vertex has another degree.
pub fn cycles_from_edges(c: &CellComplex, edges: &[usize]) -> Option<Vec<Vec<i64>>> {
    let mut incident: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &e in edges {
        for &v in &c.edges[e].v {
            incident.entry(v).or_default().push(e);
        }
    }
    if incident.values().any(|es| es.len() != 2) {
        return None;
    }
    let mut sorted = edges.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != edges.len() {
        return None;
    }
    let mut used = BTreeSet::new();
    let mut loops = Vec::new();
    for &start in &sorted {
        if used.contains(&start) {
            continue;
        }
        let mut lp = vec![signed_ref(start, true)];
        used.insert(start);
        let origin = c.edges[start].v[0];
        let mut at = c.edges[start].v[1];
        while at != origin {
            let next = *incident[&at].iter().find(|&&e| !used.contains(&e))?;
            let forward = c.edges[next].v[0] == at;
            lp.push(signed_ref(next, forward));
            used.insert(next);
            at = if forward {
                c.edges[next].v[1]
            } else {
                c.edges[next].v[0]
            };
        }
        loops.push(lp);
    }
    Some(loops)
}

#[derive(Clone, Debug)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    pub fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

/// Limits of the dataset complexity filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexityLimits {
    pub max_faces: usize,
    pub max_edges_per_face: usize,
    pub max_cells: usize,
}

impl Default for ComplexityLimits {
    fn default() -> Self {
        Self {
            max_faces: 50,
            max_edges_per_face: 30,
            max_cells: 192,
        }
    }
}

/// `true` keeps the complex.
pub fn complexity_filter(c: &CellComplex, limits: &ComplexityLimits) -> bool {
    c.faces.len() <= limits.max_faces
        && c.faces.iter().all(|f| f.boundary_len() <= limits.max_edges_per_face)
        && c.cell_count() <= limits.max_cells
}

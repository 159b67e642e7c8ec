use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::cell::{cycles_from_edges, orient_loops, CellComplex, CellType, Edge, Face, Mode};
use crate::geometry::vec3::{centroid, dist2, lex_cmp, sub};
use crate::geometry::{canonical_frame_from_face, Frame, RationalCubicBezier, SurfacePatch, Vec3, GRID};

/// Probability at or above which a predicted link is kept.
pub const LINK_THRESHOLD: f64 = 0.5;

/// One modification made while restoring a complex from predicted links.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Repair {
    /// A kept link was removed (`p` is its probability).
    DroppedLink {
        parent: usize,
        child: usize,
        p: f64,
        reason: String,
    },
    /// A link below the threshold was re-added.
    RestoredLink {
        parent: usize,
        child: usize,
        p: f64,
        reason: String,
    },
    /// A confident link between non-adjacent ranks was ignored.
    IgnoredLink { a: usize, b: usize, p: f64 },
    /// A particle produced no cell.
    DroppedCell {
        particle: usize,
        cell: CellType,
        reason: String,
    },
}

impl fmt::Display for Repair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repair::DroppedLink {
                parent,
                child,
                p,
                reason,
            } => {
                write!(f, "dropped link {parent}->{child} (p={p:.3}): {reason}")
            }
            Repair::RestoredLink {
                parent,
                child,
                p,
                reason,
            } => {
                write!(f, "restored link {parent}->{child} (p={p:.3}): {reason}")
            }
            Repair::IgnoredLink { a, b, p } => write!(f, "ignored non-adjacent link {a}-{b} (p={p:.3})"),
            Repair::DroppedCell { particle, cell, reason } => {
                write!(f, "dropped {cell:?} particle {particle}: {reason}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairLog {
    pub entries: Vec<Repair>,
}

impl RepairLog {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    fn push(&mut self, r: Repair) {
        self.entries.push(r);
    }
}

/// Cells that survive restoration, referenced by particle index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RestoredTopology {
    pub vertices: Vec<usize>,
    /// Edge particle and its endpoint particles in canonical (anchor-lexicographic) order.
    pub edges: Vec<(usize, [usize; 2])>,
    /// Face particle and its boundary edge particles, ascending.
    pub faces: Vec<(usize, Vec<usize>)>,
}

/// Geometry predicted per particle; missing entries fall back to straight
/// edges and planar faces.
#[derive(Clone, Debug, Default)]
pub struct PredictedGeometry {
    pub edges: HashMap<usize, RationalCubicBezier>,
    pub faces: HashMap<usize, (Frame, SurfacePatch)>,
}

impl PredictedGeometry {
    /// Ground-truth geometry keyed by diagram node index (vertices, then edges, then faces).
    pub fn from_complex(c: &CellComplex) -> Self {
        let (nv, ne) = (c.vertices.len(), c.edges.len());
        Self {
            edges: c
                .edges
                .iter()
                .enumerate()
                .map(|(k, e)| (nv + k, e.curve.clone()))
                .collect(),
            faces: c
                .faces
                .iter()
                .enumerate()
                .map(|(k, f)| (nv + ne + k, (f.frame, f.grid.clone())))
                .collect(),
        }
    }
}

/// Order two endpoint particles by anchor, then index.
pub fn canonical_endpoints(anchors: &[Vec3], a: usize, b: usize) -> [usize; 2] {
    if lex_cmp(&anchors[b], &anchors[a]).then(b.cmp(&a)).is_lt() {
        [b, a]
    } else {
        [a, b]
    }
}

fn by_probability(cands: &mut [(usize, f64)]) {
    cands.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
}

/// Decide which cells and links survive.
///
/// Adjacent-rank links with `p ≥ 0.5` are kept. An edge keeps its two most
/// probable vertex links; with one it re-adds its best dropped vertex link,
/// with none it is dropped. A face whose kept edges leave open chains gets
/// one round of repair, re-adding for each open chain the most probable
/// dropped edge touching an open end; if the boundary still does not split
/// into closed cycles the face is dropped. Vertices left without edges are
/// dropped. Every change is logged.
pub fn restore_topology(
    types: &[CellType],
    anchors: &[Vec3],
    probs: &[f64],
    mode: Mode,
) -> (RestoredTopology, RepairLog) {
    let n = types.len();
    assert_eq!(anchors.len(), n, "one anchor per particle");
    assert_eq!(probs.len(), n * n, "link matrix must be n × n");
    let p = |i: usize, j: usize| probs[i * n + j].max(probs[j * n + i]);
    let mut log = RepairLog::default();
    let of = |t: CellType| (0..n).filter(move |&i| types[i] == t);

    for i in 0..n {
        for j in i + 1..n {
            if types[i].rank().abs_diff(types[j].rank()) != 1 && p(i, j) >= LINK_THRESHOLD {
                log.push(Repair::IgnoredLink { a: i, b: j, p: p(i, j) });
            }
        }
    }

    let mut edges = Vec::new();
    for e in of(CellType::Edge) {
        let mut kept: Vec<(usize, f64)> = of(CellType::Vertex).map(|v| (v, p(e, v))).collect();
        by_probability(&mut kept);
        let split = kept.iter().position(|c| c.1 < LINK_THRESHOLD).unwrap_or(kept.len());
        let (confident, rest) = kept.split_at(split);
        let mut chosen: Vec<(usize, f64)> = confident.to_vec();
        for &(v, pv) in chosen.iter().skip(2) {
            log.push(Repair::DroppedLink {
                parent: e,
                child: v,
                p: pv,
                reason: "edge keeps its two most probable vertices".into(),
            });
        }
        chosen.truncate(2);
        if chosen.len() == 1 {
            if let Some(&(v, pv)) = rest.first() {
                log.push(Repair::RestoredLink {
                    parent: e,
                    child: v,
                    p: pv,
                    reason: "edge had a single endpoint".into(),
                });
                chosen.push((v, pv));
            }
        }
        if chosen.len() == 2 {
            edges.push((e, canonical_endpoints(anchors, chosen[0].0, chosen[1].0)));
        } else {
            log.push(Repair::DroppedCell {
                particle: e,
                cell: CellType::Edge,
                reason: format!("{} endpoint links", chosen.len()),
            });
        }
    }
    let endpoints: BTreeMap<usize, [usize; 2]> = edges.iter().copied().collect();

    let mut faces = Vec::new();
    for f in of(CellType::Face) {
        if mode == Mode::Wireframe {
            log.push(Repair::DroppedCell {
                particle: f,
                cell: CellType::Face,
                reason: "wireframe mode has no faces".into(),
            });
            continue;
        }
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for e in of(CellType::Edge) {
            let pe = p(f, e);
            match (pe >= LINK_THRESHOLD, endpoints.contains_key(&e)) {
                (true, true) => kept.push(e),
                (true, false) => log.push(Repair::DroppedLink {
                    parent: f,
                    child: e,
                    p: pe,
                    reason: "edge was dropped".into(),
                }),
                (false, true) => dropped.push((e, pe)),
                (false, false) => {}
            }
        }
        let degrees = |set: &[usize]| {
            let mut d: BTreeMap<usize, usize> = BTreeMap::new();
            for e in set {
                for v in endpoints[e] {
                    *d.entry(v).or_default() += 1;
                }
            }
            d
        };
        let odd: Vec<usize> = degrees(&kept)
            .into_iter()
            .filter(|(_, k)| k % 2 == 1)
            .map(|(v, _)| v)
            .collect();
        if !odd.is_empty() {
            by_probability(&mut dropped);
            let mut open: Vec<usize> = odd;
            for _ in 0..open.len() / 2 {
                let best = dropped
                    .iter()
                    .find(|(e, _)| !kept.contains(e) && endpoints[e].iter().any(|v| open.contains(v)))
                    .copied();
                let Some((e, pe)) = best else { break };
                kept.push(e);
                log.push(Repair::RestoredLink {
                    parent: f,
                    child: e,
                    p: pe,
                    reason: "closing an open boundary chain".into(),
                });
                open = degrees(&kept)
                    .into_iter()
                    .filter(|(_, k)| k % 2 == 1)
                    .map(|(v, _)| v)
                    .collect();
            }
        }
        kept.sort_unstable();
        let closed = kept.len() >= 3 && degrees(&kept).values().all(|&k| k == 2);
        if closed {
            faces.push((f, kept));
        } else {
            log.push(Repair::DroppedCell {
                particle: f,
                cell: CellType::Face,
                reason: format!("boundary of {} edges does not close into cycles", kept.len()),
            });
        }
    }

    let mut used = vec![false; n];
    for (_, [a, b]) in &edges {
        used[*a] = true;
        used[*b] = true;
    }
    let mut vertices = Vec::new();
    for v in of(CellType::Vertex) {
        if used[v] {
            vertices.push(v);
        } else {
            log.push(Repair::DroppedCell {
                particle: v,
                cell: CellType::Vertex,
                reason: "no incident edge".into(),
            });
        }
    }
    (RestoredTopology { vertices, edges, faces }, log)
}

/// Orient a predicted curve to run from `a` to `b` and pin its ends to them exactly.
fn fit_curve(curve: Option<&RationalCubicBezier>, a: Vec3, b: Vec3) -> RationalCubicBezier {
    let Some(c) = curve else {
        return RationalCubicBezier::line(a, b);
    };
    let mut c = if dist2(c.start(), a) + dist2(c.end(), b) <= dist2(c.start(), b) + dist2(c.end(), a) {
        c.clone()
    } else {
        c.reversed()
    };
    c.ctrl[0] = a;
    c.ctrl[3] = b;
    c
}

/// Planar face geometry fitted to boundary samples.
pub fn planar_face_from_boundary(boundary: &[Vec3], normal_hint: Vec3) -> Option<(Frame, SurfacePatch)> {
    let frame = canonical_frame_from_face(boundary, normal_hint).ok()?;
    let local: Vec<Vec3> = boundary.iter().map(|&p| frame.to_local(p)).collect();
    let lo = [
        local.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        local.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min),
    ];
    let hi = [
        local.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
        local.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
    ];
    let grid = SurfacePatch::planar(&frame, lo, hi, GRID);
    Some((frame, grid))
}

/// Rebuild a complex from particles, a link probability matrix and per-particle geometry.
pub fn restore_complex(
    types: &[CellType],
    anchors: &[Vec3],
    probs: &[f64],
    mode: Mode,
    geometry: &PredictedGeometry,
) -> (CellComplex, RepairLog) {
    let (topo, mut log) = restore_topology(types, anchors, probs, mode);
    let vindex: HashMap<usize, usize> = topo.vertices.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let mut c = CellComplex::empty(mode);
    c.vertices = topo.vertices.iter().map(|&p| anchors[p]).collect();
    let mut eindex = HashMap::new();
    for (k, &(ep, [a, b])) in topo.edges.iter().enumerate() {
        eindex.insert(ep, k);
        c.edges.push(Edge {
            v: [vindex[&a], vindex[&b]],
            curve: fit_curve(geometry.edges.get(&ep), anchors[a], anchors[b]),
        });
    }
    let body = centroid(&c.vertices);
    for (fp, es) in &topo.faces {
        let local: Vec<usize> = es.iter().map(|e| eindex[e]).collect();
        let Some(loops) = cycles_from_edges(&c, &local) else {
            log.push(Repair::DroppedCell {
                particle: *fp,
                cell: CellType::Face,
                reason: "boundary does not split into loops".into(),
            });
            continue;
        };
        let geom = geometry.faces.get(fp).cloned().or_else(|| {
            let boundary: Vec<Vec3> = local.iter().flat_map(|&e| c.edges[e].curve.sample_uniform(8)).collect();
            planar_face_from_boundary(&boundary, sub(centroid(&boundary), body))
        });
        let Some((frame, grid)) = geom else {
            log.push(Repair::DroppedCell {
                particle: *fp,
                cell: CellType::Face,
                reason: "degenerate boundary geometry".into(),
            });
            continue;
        };
        let oriented = orient_loops(&c, &loops, &frame);
        c.faces.push(Face {
            loops: oriented.loops,
            grid,
            frame,
        });
    }
    (c, log)
}

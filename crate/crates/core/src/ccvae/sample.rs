use serde::{Deserialize, Serialize};

use crate::complex::{
    canonical_endpoints, laplacian_positional_encoding, CellType, Mode, SpatialHasseDiagram, LPE_DIM,
};
use crate::dataio::{DatasetRecord, PaddedSample};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Vec3, CURVE_SAMPLES};

/// Supervision for one edge cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTarget {
    /// Diagram node of the edge.
    pub node: usize,
    /// Endpoint nodes in canonical (anchor-lexicographic) order.
    pub ends: [usize; 2],
    /// Curve samples from `ends[0]` to `ends[1]`.
    pub samples: Vec<Vec3>,
}

/// Supervision for one face cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceTarget {
    pub node: usize,
    /// Boundary edge nodes.
    pub children: Vec<usize>,
    pub frame: Frame,
    pub points: Vec<Vec3>,
}

/// Everything the VAE needs from one normalized solid.
///
/// Rows `0..types.len()` are the diagram nodes; `source` maps every
/// (possibly padded) particle slot to the node it copies.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeSample {
    pub mode: Mode,
    pub types: Vec<CellType>,
    pub anchors: Vec<Vec3>,
    pub rotations: Vec<[f64; 9]>,
    /// `(parent, child)` node pairs.
    pub links: Vec<(usize, usize)>,
    /// Row-major `n × LPE_DIM`.
    pub lpe: Vec<f64>,
    pub cloud: Vec<Vec3>,
    pub source: Vec<usize>,
    pub edges: Vec<EdgeTarget>,
    pub faces: Vec<FaceTarget>,
}

impl VaeSample {
    /// From an already normalized record, its diagram and a slot layout.
    pub fn new(record: &DatasetRecord, diagram: &SpatialHasseDiagram, source: Vec<usize>) -> Result<Self> {
        let n = diagram.len();
        if n == 0 {
            return Err(Error::Empty("diagram"));
        }
        if let Some(&bad) = source.iter().find(|&&s| s >= n) {
            return Err(Error::shape("vae sample", format!("slot copies node {bad} of {n}")));
        }
        let c = &record.complex;
        if c.cell_count() != n {
            return Err(Error::shape(
                "vae sample",
                format!("record has {} cells, diagram {n} nodes", c.cell_count()),
            ));
        }
        let anchors = diagram.anchors();
        let children = diagram.children();
        let (nv, ne) = (c.vertices.len(), c.edges.len());
        let edges = c
            .edges
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let ends = canonical_endpoints(&anchors, e.v[0], e.v[1]);
                let curve = if ends[0] == e.v[0] {
                    e.curve.clone()
                } else {
                    e.curve.reversed()
                };
                EdgeTarget {
                    node: nv + k,
                    ends,
                    samples: curve.sample_uniform(CURVE_SAMPLES),
                }
            })
            .collect();
        let faces = c
            .faces
            .iter()
            .enumerate()
            .map(|(k, f)| FaceTarget {
                node: nv + ne + k,
                children: children[nv + ne + k].clone(),
                frame: f.frame,
                points: f.grid.points.clone(),
            })
            .collect();
        Ok(Self {
            mode: c.mode,
            types: diagram.types(),
            rotations: diagram.nodes.iter().map(|nd| nd.rotation).collect(),
            lpe: laplacian_positional_encoding(n, &diagram.links, LPE_DIM)?,
            links: diagram.links.clone(),
            anchors,
            cloud: record.cloud.clone(),
            source,
            edges,
            faces,
        })
    }

    pub fn from_padded(p: &PaddedSample) -> Result<Self> {
        Self::new(&p.record, &p.diagram, p.source.clone())
    }

    /// Unpadded sample: one slot per node.
    pub fn unpadded(record: &DatasetRecord, diagram: &SpatialHasseDiagram) -> Result<Self> {
        Self::new(record, diagram, (0..diagram.len()).collect())
    }

    pub fn true_count(&self) -> usize {
        self.types.len()
    }

    pub fn slots(&self) -> usize {
        self.source.len()
    }

    pub fn is_linked(&self, a: usize, b: usize) -> bool {
        self.links.iter().any(|&(p, c)| (p, c) == (a, b) || (p, c) == (b, a))
    }

    /// Slot pairs `i < j` that the link loss sees: adjacent ranks, different sources.
    pub fn link_pairs(&self) -> Vec<(usize, usize)> {
        let rank = |i: usize| self.types[self.source[i]].rank();
        let m = self.slots();
        let mut out = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if self.source[i] != self.source[j] && rank(i).abs_diff(rank(j)) == 1 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Same sample with slots permuted: new slot `k` is old slot `perm[k]`.
    pub fn permuted_slots(&self, perm: &[usize]) -> Self {
        let mut s = self.clone();
        s.source = perm.iter().map(|&k| self.source[k]).collect();
        s
    }
}

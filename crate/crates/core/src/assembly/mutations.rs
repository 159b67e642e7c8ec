use std::fmt;

use crate::complex::{CellComplex, Mode};

/// Constructed defects that the validity checker must reject.
///
/// Wireframes have no faces or loops, so the face-level defects map to their
/// one-rank-down counterparts there: a duplicated edge, an edge with a single
/// endpoint link, an edge pointing at a vertex that does not exist, and a
/// stray vertex that disconnects the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    DroppedLink,
    DuplicatedFace,
    SplitVertex,
    FarEndpoint,
    OpenLoop,
    NonIntegerGenus,
}

impl Mutation {
    pub const ALL: [Mutation; 6] = [
        Mutation::DroppedLink,
        Mutation::DuplicatedFace,
        Mutation::SplitVertex,
        Mutation::FarEndpoint,
        Mutation::OpenLoop,
        Mutation::NonIntegerGenus,
    ];

    /// Apply to a valid complex with at least one edge (and one face unless a wireframe).
    pub fn apply(self, c: &CellComplex) -> CellComplex {
        let mut m = c.clone();
        let wire = c.mode == Mode::Wireframe;
        match self {
            Mutation::DroppedLink if wire => m.edges[0].v[1] = m.edges[0].v[0],
            Mutation::DroppedLink => {
                m.faces[0].loops[0].remove(0);
            }
            Mutation::DuplicatedFace if wire => m.edges.push(m.edges[0].clone()),
            Mutation::DuplicatedFace => m.faces.push(m.faces[0].clone()),
            Mutation::SplitVertex => {
                let v = m.edges[0].v[0];
                m.vertices.push(m.vertices[v]);
                m.edges[0].v[0] = m.vertices.len() - 1;
            }
            Mutation::FarEndpoint => m.edges[0].curve.ctrl[3][0] += 0.3,
            Mutation::OpenLoop if wire => m.edges[0].v[1] = m.vertices.len(),
            Mutation::OpenLoop => m.faces[0].loops[0][0] *= -1,
            Mutation::NonIntegerGenus => m.vertices.push([1.5, 1.5, 1.5]),
        }
        m
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mutation::DroppedLink => "dropped link",
            Mutation::DuplicatedFace => "duplicated face",
            Mutation::SplitVertex => "split vertex",
            Mutation::FarEndpoint => "far endpoint",
            Mutation::OpenLoop => "open loop",
            Mutation::NonIntegerGenus => "non-integer genus",
        };
        f.write_str(s)
    }
}

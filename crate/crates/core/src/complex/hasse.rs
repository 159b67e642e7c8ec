use serde::{Deserialize, Serialize};

use super::cell::{CellComplex, CellType};
use crate::error::{Error, Result};
use crate::geometry::{Frame, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HasseNode {
    pub cell: CellType,
    /// Position of the cell within its own list in the complex.
    pub index: usize,
    pub anchor: Vec3,
    /// Row-major flattened rotation.
    pub rotation: [f64; 9],
}

/// Typed nodes with anchors, plus parent → child incidence links between adjacent ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialHasseDiagram {
    pub nodes: Vec<HasseNode>,
    pub links: Vec<(usize, usize)>,
}

impl SpatialHasseDiagram {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn types(&self) -> Vec<CellType> {
        self.nodes.iter().map(|n| n.cell).collect()
    }

    pub fn anchors(&self) -> Vec<Vec3> {
        self.nodes.iter().map(|n| n.anchor).collect()
    }

    /// Children of every node, in link order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for &(p, c) in &self.links {
            out[p].push(c);
        }
        out
    }

    pub fn count(&self, cell: CellType) -> usize {
        self.nodes.iter().filter(|n| n.cell == cell).count()
    }

    /// Dense `n × n` 0/1 matrix with both `(parent, child)` and `(child, parent)` set.
    pub fn link_matrix(&self) -> Vec<f64> {
        let n = self.nodes.len();
        let mut a = vec![0.0; n * n];
        for &(p, c) in &self.links {
            a[p * n + c] = 1.0;
            a[c * n + p] = 1.0;
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        let children = self.children();
        for &(p, c) in &self.links {
            if p >= self.nodes.len() || c >= self.nodes.len() {
                return Err(Error::InvalidComplex {
                    cell: format!("link {p}->{c}"),
                    reason: "endpoint out of range".into(),
                });
            }
            if self.nodes[p].cell.rank() != self.nodes[c].cell.rank() + 1 {
                return Err(Error::InvalidComplex {
                    cell: format!("link {p}->{c}"),
                    reason: "does not connect adjacent ranks".into(),
                });
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let k = children[i].len();
            let ok = match n.cell {
                CellType::Vertex => k == 0,
                CellType::Edge => k == 2,
                CellType::Face => k >= 3,
            };
            if !ok {
                return Err(Error::InvalidComplex {
                    cell: format!("node {i}"),
                    reason: format!("{:?} with {k} children", n.cell),
                });
            }
        }
        Ok(())
    }
}

/// Node order: vertices, then edges, then faces, each in complex order.
pub fn build_hasse_diagram(c: &CellComplex) -> Result<SpatialHasseDiagram> {
    c.validate()?;
    let (nv, ne) = (c.vertices.len(), c.edges.len());
    let mut nodes = Vec::with_capacity(c.cell_count());
    let identity = Frame::identity().flat_r();
    for (i, &p) in c.vertices.iter().enumerate() {
        nodes.push(HasseNode {
            cell: CellType::Vertex,
            index: i,
            anchor: p,
            rotation: identity,
        });
    }
    let mut links = Vec::new();
    for (i, e) in c.edges.iter().enumerate() {
        let frame = Frame::for_edge(c.vertices[e.v[0]], c.vertices[e.v[1]]);
        nodes.push(HasseNode {
            cell: CellType::Edge,
            index: i,
            anchor: e.curve.eval(0.5),
            rotation: frame.flat_r(),
        });
        links.push((nv + i, e.v[0]));
        links.push((nv + i, e.v[1]));
    }
    for (k, f) in c.faces.iter().enumerate() {
        nodes.push(HasseNode {
            cell: CellType::Face,
            index: k,
            anchor: f.grid.area_weighted_centroid(),
            rotation: f.frame.flat_r(),
        });
        for e in f.edge_set() {
            links.push((nv + ne + k, nv + e));
        }
    }
    Ok(SpatialHasseDiagram { nodes, links })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::generator::{generate, Kind};

    #[test]
    fn cube_counts() {
        let c = generate(Kind::Box, 0, false).unwrap();
        let d = build_hasse_diagram(&c).unwrap();
        assert_eq!(d.len(), 26);
        assert_eq!(d.links.len(), 48);
        d.validate().unwrap();
    }

    #[test]
    fn prism_counts() {
        let c = generate(Kind::Prism(3), 0, false).unwrap();
        let d = build_hasse_diagram(&c).unwrap();
        assert_eq!((d.len(), d.links.len()), (20, 36));
    }

    #[test]
    fn wireframe_cube_counts() {
        let c = generate(Kind::Box, 0, true).unwrap();
        let d = build_hasse_diagram(&c).unwrap();
        assert_eq!((d.len(), d.links.len(), d.count(CellType::Face)), (20, 24, 0));
    }

    #[test]
    fn invalid_input_names_cell() {
        let mut c = generate(Kind::Box, 0, false).unwrap();
        c.edges[3].v[1] = 99;
        let err = build_hasse_diagram(&c).unwrap_err().to_string();
        assert!(err.contains("edge 3"), "{err}");
    }
}

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::record::Normalization;
use crate::complex::{signed_ref, CellComplex, Edge, Face, Mode};
use crate::error::{Error, Result};
use crate::geometry::vec3::{add, cross, mat_vec, scale, Vec3};
use crate::geometry::{canonical_frame_from_face, RationalCubicBezier, SurfacePatch, GRID};

/// Procedural shape families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Box,
    Prism(usize),
    Pyramid(usize),
    Frustum(usize),
    Wedge,
    LExtrusion,
    HoleBox,
    Roof,
}

impl Kind {
    /// Every kind with every supported side count.
    pub fn catalog() -> Vec<Kind> {
        let mut out = vec![Kind::Box];
        out.extend((3..=8).map(Kind::Prism));
        out.extend((3..=8).map(Kind::Pyramid));
        out.extend((3..=8).map(Kind::Frustum));
        out.extend([Kind::Wedge, Kind::LExtrusion, Kind::HoleBox, Kind::Roof]);
        out
    }

    /// Closed solids only.
    pub fn solids() -> Vec<Kind> {
        Self::catalog().into_iter().filter(|k| *k != Kind::Roof).collect()
    }

    pub fn mode(self, wireframe: bool) -> Mode {
        match (wireframe, self) {
            (true, _) => Mode::Wireframe,
            (false, Kind::Roof) => Mode::OpenShell,
            (false, _) => Mode::Solid,
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kind::Box => write!(f, "box"),
            Kind::Prism(n) => write!(f, "prism{n}"),
            Kind::Pyramid(n) => write!(f, "pyramid{n}"),
            Kind::Frustum(n) => write!(f, "frustum{n}"),
            Kind::Wedge => write!(f, "wedge"),
            Kind::LExtrusion => write!(f, "l-extrusion"),
            Kind::HoleBox => write!(f, "hole-box"),
            Kind::Roof => write!(f, "roof"),
        }
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let sided = |prefix: &str, make: fn(usize) -> Kind| -> Option<Result<Kind>> {
            let rest = s.strip_prefix(prefix)?;
            let n: usize = rest.parse().ok()?;
            Some(if (3..=8).contains(&n) {
                Ok(make(n))
            } else {
                Err(Error::Config(format!("{prefix} side count {n} outside 3..=8")))
            })
        };
        match s {
            "box" => return Ok(Kind::Box),
            "wedge" => return Ok(Kind::Wedge),
            "l-extrusion" => return Ok(Kind::LExtrusion),
            "hole-box" => return Ok(Kind::HoleBox),
            "roof" | "roof-shell" => return Ok(Kind::Roof),
            _ => {}
        }
        sided("prism", Kind::Prism)
            .or_else(|| sided("pyramid", Kind::Pyramid))
            .or_else(|| sided("frustum", Kind::Frustum))
            .unwrap_or_else(|| Err(Error::Config(format!("unknown shape kind {s:?}"))))
    }
}

/// Expand a kind list such as `box,prism,roof`; bare family names cover all side counts.
pub fn parse_kinds(spec: &str) -> Result<Vec<Kind>> {
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name {
            "all" => out.extend(Kind::catalog()),
            "solids" => out.extend(Kind::solids()),
            "prism" => out.extend((3..=8).map(Kind::Prism)),
            "pyramid" => out.extend((3..=8).map(Kind::Pyramid)),
            "frustum" => out.extend((3..=8).map(Kind::Frustum)),
            _ => out.push(name.parse()?),
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty kind list".into()));
    }
    Ok(out)
}

/// Polyhedral surface: vertex cycles listed counter-clockwise seen from outside.
struct PolyMesh {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
}

fn dim(rng: &mut impl Rng) -> f64 {
    rng.random_range(0.2..=1.0)
}

fn ellipse(n: usize, rx: f64, ry: f64, phase: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = phase + 2.0 * PI * i as f64 / n as f64;
            [rx * a.cos(), ry * a.sin()]
        })
        .collect()
}

/// Extrude a counter-clockwise polygon along +z, scaling the top copy by `top`.
fn extrude(poly: &[[f64; 2]], h: f64, top: f64) -> PolyMesh {
    let n = poly.len();
    let mut vertices: Vec<Vec3> = poly.iter().map(|p| [p[0], p[1], 0.0]).collect();
    vertices.extend(poly.iter().map(|p| [p[0] * top, p[1] * top, h]));
    let mut faces = vec![(0..n).rev().collect::<Vec<_>>(), (n..2 * n).collect()];
    for i in 0..n {
        let j = (i + 1) % n;
        faces.push(vec![i, j, n + j, n + i]);
    }
    PolyMesh { vertices, faces }
}

fn pyramid(poly: &[[f64; 2]], h: f64, apex: [f64; 2]) -> PolyMesh {
    let n = poly.len();
    let mut vertices: Vec<Vec3> = poly.iter().map(|p| [p[0], p[1], 0.0]).collect();
    vertices.push([apex[0], apex[1], h]);
    let mut faces = vec![(0..n).rev().collect::<Vec<_>>()];
    for i in 0..n {
        faces.push(vec![i, (i + 1) % n, n]);
    }
    PolyMesh { vertices, faces }
}

/// Box with a rectangular through-hole; each cap is split into four trapezoids.
fn hole_box(rng: &mut impl Rng) -> PolyMesh {
    let (a, b, h) = (dim(rng), dim(rng), dim(rng));
    let (fa, fb) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
    let outer = [[-a, -b], [a, -b], [a, b], [-a, b]];
    let inner: Vec<[f64; 2]> = outer.iter().map(|p| [p[0] * fa, p[1] * fb]).collect();
    // 0..4 outer bottom, 4..8 inner bottom, 8..12 outer top, 12..16 inner top.
    let mut vertices = Vec::new();
    for z in [0.0, h] {
        vertices.extend(outer.iter().map(|p| [p[0], p[1], z]));
        vertices.extend(inner.iter().map(|p| [p[0], p[1], z]));
    }
    let (ob, ib, ot, it) = (0, 4, 8, 12);
    let mut faces = Vec::new();
    for i in 0..4 {
        let j = (i + 1) % 4;
        faces.push(vec![ob + j, ob + i, ib + i, ib + j]);
        faces.push(vec![ot + i, ot + j, it + j, it + i]);
        faces.push(vec![ob + i, ob + j, ot + j, ot + i]);
        faces.push(vec![ib + j, ib + i, it + i, it + j]);
    }
    PolyMesh { vertices, faces }
}

fn roof(rng: &mut impl Rng) -> PolyMesh {
    let (a, b, h) = (dim(rng), dim(rng), dim(rng));
    let base = vec![[-a, -b, 0.0], [a, -b, 0.0], [a, b, 0.0], [-a, b, 0.0]];
    if rng.random_bool(0.3) {
        let mut vertices = base;
        vertices.push([0.0, 0.0, h]);
        let faces = (0..4).map(|i| vec![i, (i + 1) % 4, 4]).collect();
        return PolyMesh { vertices, faces };
    }
    // Gable (ridge spans the full length) or hip (shortened ridge).
    let r = if rng.random_bool(0.5) {
        a
    } else {
        a * rng.random_range(0.2..0.8)
    };
    let mut vertices = base;
    vertices.push([-r, 0.0, h]);
    vertices.push([r, 0.0, h]);
    let faces = vec![vec![0, 1, 5, 4], vec![2, 3, 4, 5], vec![1, 2, 5], vec![3, 0, 4]];
    PolyMesh { vertices, faces }
}

fn mesh_for(kind: Kind, rng: &mut impl Rng) -> PolyMesh {
    match kind {
        Kind::Box => {
            let (w, d, h) = (dim(rng), dim(rng), dim(rng));
            extrude(&[[0.0, 0.0], [w, 0.0], [w, d], [0.0, d]], h, 1.0)
        }
        Kind::Prism(n) => extrude(
            &ellipse(n, dim(rng), dim(rng), rng.random_range(0.0..PI)),
            dim(rng),
            1.0,
        ),
        Kind::Pyramid(n) => {
            let (rx, ry) = (dim(rng), dim(rng));
            let apex = [rng.random_range(-0.3..0.3) * rx, rng.random_range(-0.3..0.3) * ry];
            pyramid(&ellipse(n, rx, ry, rng.random_range(0.0..PI)), dim(rng), apex)
        }
        Kind::Frustum(n) => extrude(
            &ellipse(n, dim(rng), dim(rng), rng.random_range(0.0..PI)),
            dim(rng),
            rng.random_range(0.3..0.8),
        ),
        Kind::Wedge => {
            let (w, h) = (dim(rng), dim(rng));
            extrude(&[[0.0, 0.0], [w, 0.0], [0.0, h]], dim(rng), 1.0)
        }
        Kind::LExtrusion => {
            let (w, h) = (dim(rng), dim(rng));
            let (tx, ty) = (w * rng.random_range(0.25..0.75), h * rng.random_range(0.25..0.75));
            extrude(
                &[[0.0, 0.0], [w, 0.0], [w, ty], [tx, ty], [tx, h], [0.0, h]],
                dim(rng),
                1.0,
            )
        }
        Kind::HoleBox => hole_box(rng),
        Kind::Roof => roof(rng),
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let mut q: [f64; 4] = [0.0; 4];
    loop {
        for v in &mut q {
            *v = StandardNormal.sample(rng);
        }
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.iter_mut().for_each(|v| *v /= n);
            break;
        }
    }
    let [w, x, y, z] = q;
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Center on the bounding-box midpoint and scale the longest side to `[-1, 1]`.
pub fn normalize_points(points: &mut [Vec3]) -> (Vec3, f64) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = scale(add(lo, hi), 0.5);
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let s = if extent > 0.0 { 2.0 / extent } else { 1.0 };
    for p in points.iter_mut() {
        for k in 0..3 {
            p[k] = ((p[k] - center[k]) * s).clamp(-1.0, 1.0);
        }
    }
    (center, s)
}

/// Newell normal of a closed polygon.
fn newell(points: &[Vec3]) -> Vec3 {
    let n = points.len();
    (0..n).fold([0.0; 3], |acc, i| add(acc, cross(points[i], points[(i + 1) % n])))
}

fn build(mesh: PolyMesh, mode: Mode) -> Result<CellComplex> {
    let mut c = CellComplex::empty(mode);
    c.vertices = mesh.vertices.clone();
    let mut edge_ids = std::collections::HashMap::new();
    let mut face_loops = Vec::new();
    for cycle in &mesh.faces {
        let mut lp = Vec::with_capacity(cycle.len());
        for k in 0..cycle.len() {
            let (a, b) = (cycle[k], cycle[(k + 1) % cycle.len()]);
            let key = (a.min(b), a.max(b));
            let id = *edge_ids.entry(key).or_insert_with(|| {
                c.edges.push(Edge {
                    v: [key.0, key.1],
                    curve: RationalCubicBezier::line(mesh.vertices[key.0], mesh.vertices[key.1]),
                });
                c.edges.len() - 1
            });
            lp.push(signed_ref(id, a == key.0));
        }
        face_loops.push(lp);
    }
    if mode != Mode::Wireframe {
        for (cycle, lp) in mesh.faces.iter().zip(face_loops) {
            let pts: Vec<Vec3> = cycle.iter().map(|&v| mesh.vertices[v]).collect();
            let boundary: Vec<Vec3> = lp
                .iter()
                .flat_map(|&s| c.edges[crate::complex::edge_of(s)].curve.sample_uniform(8))
                .collect();
            let frame = canonical_frame_from_face(&boundary, newell(&pts))?;
            let local: Vec<Vec3> = boundary.iter().map(|&p| frame.to_local(p)).collect();
            let lo = [0, 1].map(|k| local.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min));
            let hi = [0, 1].map(|k| local.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max));
            let grid = SurfacePatch::planar(&frame, lo, hi, GRID);
            c.faces.push(Face {
                loops: vec![lp],
                grid,
                frame,
            });
        }
    }
    c.canonicalize();
    c.validate()?;
    Ok(c)
}

/// One randomized, rotated and normalized instance of `kind`.
///
/// The same `(kind, seed)` always yields the same complex.
pub fn generate(kind: Kind, seed: u64, wireframe: bool) -> Result<CellComplex> {
    generate_with_normalization(kind, seed, wireframe).map(|(c, _)| c)
}

/// As [`generate`], also returning the center and scale that normalized the raw shape.
pub fn generate_with_normalization(kind: Kind, seed: u64, wireframe: bool) -> Result<(CellComplex, Normalization)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = mesh_for(kind, &mut rng);
    let r = random_rotation(&mut rng);
    for p in &mut mesh.vertices {
        *p = mat_vec(&r, *p);
    }
    let (center, scale) = normalize_points(&mut mesh.vertices);
    Ok((build(mesh, kind.mode(wireframe))?, Normalization { center, scale }))
}

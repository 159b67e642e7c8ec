use rand::Rng;

use crate::complex::{edge_of, CellComplex, Face, Mode};
use crate::geometry::fit_plane_least_squares;
use crate::geometry::patch::triangle_area;
use crate::geometry::vec3::{add, scale, sub, Vec3};

/// Points per dense surface cloud.
pub const CLOUD_POINTS: usize = 2048;

/// Even-odd containment of a 2D point in a set of closed polygons.
fn inside(polys: &[Vec<[f64; 2]>], p: [f64; 2]) -> bool {
    let mut odd = false;
    for poly in polys {
        let n = poly.len();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    odd = !odd;
                }
            }
        }
    }
    odd
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| poly[i][0] * poly[(i + 1) % n][1] - poly[(i + 1) % n][0] * poly[i][1])
        .sum::<f64>()
}

enum Sampler {
    /// Trimmed plane: boundary polygons in frame coordinates plus plane height.
    Planar {
        polys: Vec<Vec<[f64; 2]>>,
        lo: [f64; 2],
        hi: [f64; 2],
        z: f64,
    },
    /// Triangles of the sample grid with cumulative areas.
    Grid { tris: Vec<[Vec3; 3]>, cumulative: Vec<f64> },
}

struct FaceSampler<'a> {
    face: &'a Face,
    area: f64,
    kind: Sampler,
}

fn grid_sampler(face: &Face) -> Sampler {
    let pts = &face.grid.points;
    let tris: Vec<[Vec3; 3]> = face
        .grid
        .triangle_indices()
        .into_iter()
        .map(|t| [pts[t[0]], pts[t[1]], pts[t[2]]])
        .collect();
    let mut acc = 0.0;
    let cumulative = tris
        .iter()
        .map(|t| {
            acc += triangle_area(t[0], t[1], t[2]);
            acc
        })
        .collect();
    Sampler::Grid { tris, cumulative }
}

impl<'a> FaceSampler<'a> {
    fn new(c: &CellComplex, face: &'a Face) -> Self {
        let planar = fit_plane_least_squares(&face.grid.points).is_ok_and(|p| p.rms <= 1e-3);
        if planar {
            let polys: Vec<Vec<[f64; 2]>> = face
                .loops
                .iter()
                .map(|lp| {
                    lp.iter()
                        .flat_map(|&s| {
                            let curve = &c.edges[edge_of(s)].curve;
                            (0..8).map(move |k| {
                                let t = k as f64 / 8.0;
                                curve.eval(if s > 0 { t } else { 1.0 - t })
                            })
                        })
                        .map(|p| {
                            let l = face.frame.to_local(p);
                            [l[0], l[1]]
                        })
                        .collect()
                })
                .collect();
            let area = polys.iter().map(|p| polygon_area(p)).sum::<f64>().abs();
            if area > 1e-12 {
                let all = polys.iter().flatten();
                let lo = [
                    all.clone().map(|p| p[0]).fold(f64::INFINITY, f64::min),
                    all.clone().map(|p| p[1]).fold(f64::INFINITY, f64::min),
                ];
                let hi = [
                    all.clone().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max),
                    all.map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max),
                ];
                let z = face.grid.points.iter().map(|&p| face.frame.to_local(p)[2]).sum::<f64>()
                    / face.grid.points.len() as f64;
                return Self {
                    face,
                    area,
                    kind: Sampler::Planar { polys, lo, hi, z },
                };
            }
        }
        let kind = grid_sampler(face);
        let area = match &kind {
            Sampler::Grid { cumulative, .. } => cumulative.last().copied().unwrap_or(0.0),
            Sampler::Planar { .. } => unreachable!(),
        };
        Self { face, area, kind }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        match &self.kind {
            Sampler::Planar { polys, lo, hi, z } => {
                for _ in 0..10_000 {
                    let p = [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])];
                    if inside(polys, p) {
                        return self.face.frame.to_world([p[0], p[1], *z]);
                    }
                }
                self.face
                    .frame
                    .to_world([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), *z])
            }
            Sampler::Grid { tris, cumulative } => {
                let total = cumulative.last().copied().unwrap_or(0.0);
                let k = if total > 0.0 {
                    let x = rng.random_range(0.0..total);
                    cumulative.partition_point(|&c| c <= x).min(tris.len() - 1)
                } else {
                    rng.random_range(0..tris.len())
                };
                let [a, b, c] = tris[k];
                let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
                if u + v > 1.0 {
                    (u, v) = (1.0 - u, 1.0 - v);
                }
                add(a, add(scale(sub(b, a), u), scale(sub(c, a), v)))
            }
        }
    }
}

fn pick(cumulative: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    if total <= 0.0 {
        return rng.random_range(0..cumulative.len());
    }
    let x = rng.random_range(0.0..total);
    cumulative.partition_point(|&c| c <= x).min(cumulative.len() - 1)
}

fn edge_cloud(c: &CellComplex, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let polylines: Vec<Vec<Vec3>> = c.edges.iter().map(|e| e.curve.sample_uniform(65)).collect();
    let segs: Vec<(Vec3, Vec3)> = polylines
        .iter()
        .flat_map(|pl| pl.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let mut acc = 0.0;
    let cumulative: Vec<f64> = segs
        .iter()
        .map(|(a, b)| {
            acc += crate::geometry::vec3::dist(*a, *b);
            acc
        })
        .collect();
    (0..n)
        .map(|_| {
            let (a, b) = segs[pick(&cumulative, rng)];
            crate::geometry::vec3::lerp(a, b, rng.random())
        })
        .collect()
}

/// Uniform samples on the faces (trimmed planes where planar, grid
/// triangles otherwise), or along the edges when there are no faces.
pub fn sample_cloud(c: &CellComplex, n: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    if c.edges.is_empty() {
        return c
            .vertices
            .iter()
            .cycle()
            .take(if c.vertices.is_empty() { 0 } else { n })
            .copied()
            .collect();
    }
    if c.mode == Mode::Wireframe || c.faces.is_empty() {
        return edge_cloud(c, n, rng);
    }
    let samplers: Vec<FaceSampler> = c.faces.iter().map(|f| FaceSampler::new(c, f)).collect();
    let mut acc = 0.0;
    let cumulative: Vec<f64> = samplers
        .iter()
        .map(|s| {
            acc += s.area;
            acc
        })
        .collect();
    (0..n).map(|_| samplers[pick(&cumulative, rng)].sample(rng)).collect()
}

use serde::{Deserialize, Serialize};

use super::distance::point_triangle_distance;
use super::frame::Frame;
use super::vec3::{add, centroid, cross, norm, scale, sub, Vec3};
use crate::error::{Error, Result};

/// Default resolution of face sample grids.
pub const GRID: usize = 16;

/// `g × g` surface samples; entry `i * g + j` sits at `(u, v) = (i, j) / (g - 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePatch {
    pub g: usize,
    pub points: Vec<Vec3>,
}

pub fn grid_uv(g: usize) -> Vec<[f64; 2]> {
    let step = 1.0 / (g.max(2) - 1) as f64;
    (0..g)
        .flat_map(|i| (0..g).map(move |j| [i as f64 * step, j as f64 * step]))
        .collect()
}

impl SurfacePatch {
    pub fn new(g: usize, points: Vec<Vec3>) -> Result<Self> {
        if g < 2 || points.len() != g * g {
            return Err(Error::Geometry(format!(
                "patch of resolution {g} needs {} samples, got {}",
                g * g,
                points.len()
            )));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Geometry("patch contains non-finite samples".into()));
        }
        Ok(Self { g, points })
    }

    pub fn from_fn(g: usize, mut f: impl FnMut(f64, f64) -> Vec3) -> Self {
        let points = grid_uv(g).into_iter().map(|[u, v]| f(u, v)).collect();
        Self { g, points }
    }

    /// Planar rectangle `[lo, hi]` in the xy-plane of `frame`.
    pub fn planar(frame: &Frame, lo: [f64; 2], hi: [f64; 2], g: usize) -> Self {
        Self::from_fn(g, |u, v| {
            frame.to_world([lo[0] + (hi[0] - lo[0]) * u, lo[1] + (hi[1] - lo[1]) * v, 0.0])
        })
    }

    pub fn at(&self, i: usize, j: usize) -> Vec3 {
        self.points[i * self.g + j]
    }

    /// Two triangles per grid cell, `2 (g − 1)²` in total, as index triples.
    pub fn triangle_indices(&self) -> Vec<[usize; 3]> {
        let g = self.g;
        let mut out = Vec::with_capacity(2 * (g - 1) * (g - 1));
        for i in 0..g - 1 {
            for j in 0..g - 1 {
                let (a, b, c, d) = (i * g + j, (i + 1) * g + j, (i + 1) * g + j + 1, i * g + j + 1);
                out.push([a, b, c]);
                out.push([a, c, d]);
            }
        }
        out
    }

    pub fn distance_to(&self, p: Vec3) -> f64 {
        self.triangle_indices()
            .iter()
            .map(|t| point_triangle_distance(p, self.points[t[0]], self.points[t[1]], self.points[t[2]]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn area(&self) -> f64 {
        self.triangle_indices()
            .iter()
            .map(|t| triangle_area(self.points[t[0]], self.points[t[1]], self.points[t[2]]))
            .sum()
    }

    /// Centroid of the triangulated grid weighted by triangle area; plain mean if the grid is degenerate.
    pub fn area_weighted_centroid(&self) -> Vec3 {
        let mut acc = [0.0; 3];
        let mut total = 0.0;
        for t in self.triangle_indices() {
            let (a, b, c) = (self.points[t[0]], self.points[t[1]], self.points[t[2]]);
            let w = triangle_area(a, b, c);
            acc = add(acc, scale(add(add(a, b), c), w / 3.0));
            total += w;
        }
        if total > 1e-300 {
            scale(acc, 1.0 / total)
        } else {
            centroid(&self.points)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * norm(cross(sub(b, a), sub(c, a)))
}

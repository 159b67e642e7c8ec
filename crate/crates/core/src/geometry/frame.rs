use serde::{Deserialize, Serialize};

use super::linalg::symmetric_eigen;
use super::vec3::{add, centroid, cross, det, dot, mat_t_vec, mat_vec, normalize, scale, sub, Vec3};
use crate::error::{Error, Result};

/// Rigid frame; the columns of `r` are the local axes in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub r: [[f64; 3]; 3],
    pub t: Vec3,
}

impl Frame {
    pub fn identity() -> Self {
        Self {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: [0.0; 3],
        }
    }

    pub fn from_axes(e1: Vec3, e2: Vec3, e3: Vec3, t: Vec3) -> Self {
        Self {
            r: [[e1[0], e2[0], e3[0]], [e1[1], e2[1], e3[1]], [e1[2], e2[2], e3[2]]],
            t,
        }
    }

    pub fn axis(&self, k: usize) -> Vec3 {
        [self.r[0][k], self.r[1][k], self.r[2][k]]
    }

    pub fn to_world(&self, local: Vec3) -> Vec3 {
        add(mat_vec(&self.r, local), self.t)
    }

    pub fn to_local(&self, world: Vec3) -> Vec3 {
        mat_t_vec(&self.r, sub(world, self.t))
    }

    /// Row-major flattening of `r`.
    pub fn flat_r(&self) -> [f64; 9] {
        let r = &self.r;
        [
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        ]
    }

    pub fn from_flat(r: &[f64], t: Vec3) -> Self {
        Self {
            r: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
            t,
        }
    }

    /// Gram–Schmidt on two column vectors; `None` if they are (nearly) parallel.
    pub fn from_6d(a1: Vec3, a2: Vec3, t: Vec3) -> Option<Self> {
        let e1 = normalize(a1)?;
        let e2 = normalize(sub(a2, scale(e1, dot(e1, a2))))?;
        Some(Self::from_axes(e1, e2, cross(e1, e2), t))
    }

    /// `max |RᵀR − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v = dot(self.axis(i), self.axis(j)) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(v.abs());
            }
        }
        worst
    }

    pub fn det(&self) -> f64 {
        det(&self.r)
    }

    /// Frame for an edge: `e1` along the chord, completed with the world axis least aligned to it.
    pub fn for_edge(a: Vec3, b: Vec3) -> Self {
        let Some(e1) = normalize(sub(b, a)) else {
            return Self {
                t: scale(add(a, b), 0.5),
                ..Self::identity()
            };
        };
        let k = (0..3).min_by(|&i, &j| e1[i].abs().total_cmp(&e1[j].abs())).unwrap_or(0);
        let mut axis = [0.0; 3];
        axis[k] = 1.0;
        let e2 = normalize(sub(axis, scale(e1, dot(axis, e1)))).expect("axis not parallel to chord");
        Self::from_axes(e1, e2, cross(e1, e2), scale(add(a, b), 0.5))
    }
}

/// Flip `v` so its first non-negligible component is positive.
pub(crate) fn fix_sign(v: Vec3) -> Vec3 {
    match v.iter().find(|c| c.abs() > 1e-9) {
        Some(&c) if c < 0.0 => scale(v, -1.0),
        _ => v,
    }
}

/// Principal axes of a point set: `(centroid, eigenvalues ascending, eigenvectors)`.
pub(crate) fn principal_axes(points: &[Vec3]) -> Result<(Vec3, [f64; 3], [Vec3; 3])> {
    let c = centroid(points);
    let mut cov = [0.0; 9];
    for p in points {
        let d = sub(*p, c);
        for i in 0..3 {
            for j in 0..3 {
                cov[i * 3 + j] += d[i] * d[j];
            }
        }
    }
    let n = points.len() as f64;
    cov.iter_mut().for_each(|v| *v /= n);
    let e = symmetric_eigen(&cov, 3)?;
    let v = |k: usize| [e.vectors[k], e.vectors[3 + k], e.vectors[6 + k]];
    Ok((c, [e.values[0], e.values[1], e.values[2]], [v(0), v(1), v(2)]))
}

/// Local frame of a face from its boundary or surface samples.
///
/// `t` is the centroid, `e1` the in-plane direction of largest variance with
/// its first non-zero component positive, `e3` the plane normal turned
/// towards `normal_hint`, and `e2 = e3 × e1`.
pub fn canonical_frame_from_face(samples: &[Vec3], normal_hint: Vec3) -> Result<Frame> {
    if samples.len() < 3 {
        return Err(Error::Geometry(format!(
            "face frame needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let (c, values, vectors) = principal_axes(samples)?;
    if !(values[1] > 1e-12 * values[2].max(f64::MIN_POSITIVE)) || values[2] <= 1e-24 {
        return Err(Error::Geometry("face samples are collinear".into()));
    }
    let e1 = fix_sign(vectors[2]);
    let mut e3 = vectors[0];
    let along = dot(e3, normal_hint);
    if along < -1e-12 || (along.abs() <= 1e-12 && fix_sign(e3) != e3) {
        e3 = scale(e3, -1.0);
    }
    let e2 = cross(e3, e1);
    Ok(Frame::from_axes(e1, e2, e3, c))
}

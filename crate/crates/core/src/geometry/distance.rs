use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::vec3::{add, cross, dist2, dot, scale, sub, Vec3};
use crate::error::{Error, Result};

/// Nearest-neighbour index over a fixed point set.
pub struct PointIndex {
    tree: ImmutableKdTree<f64, 3>,
}

impl PointIndex {
    pub fn new(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point set"));
        }
        let tree = ImmutableKdTree::new_from_slice(points)
            .map_err(|e| Error::Geometry(format!("kd-tree construction failed: {e:?}")))?;
        Ok(Self { tree })
    }

    /// `(squared distance, index)` of the nearest stored point.
    pub fn nearest(&self, q: &Vec3) -> (f64, usize) {
        let n = self.tree.query(q).nearest_one::<SquaredEuclidean<f64>>().execute();
        (n.distance, n.item as usize)
    }
}

fn one_sided(from: &[Vec3], to: &PointIndex) -> f64 {
    from.iter().map(|p| to.nearest(p).0).sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance with squared Euclidean terms.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer input"));
    }
    let (ia, ib) = (PointIndex::new(a)?, PointIndex::new(b)?);
    Ok(one_sided(a, &ib) + one_sided(b, &ia))
}

/// Chamfer distance against a prebuilt index for `b`, reusing it across calls.
pub fn chamfer_with_index(a: &[Vec3], ia: &PointIndex, b: &[Vec3], ib: &PointIndex) -> f64 {
    one_sided(a, ib) + one_sided(b, ia)
}

pub fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 {
        (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist2(p, add(a, scale(ab, t))).sqrt()
}

/// Euclidean distance from `p` to the closed triangle `abc`.
pub fn point_triangle_distance(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let n = cross(sub(b, a), sub(c, a));
    let n2 = dot(n, n);
    if n2 > 1e-300 {
        let inside = [(a, b), (b, c), (c, a)]
            .iter()
            .all(|&(u, v)| dot(cross(sub(v, u), sub(p, u)), n) >= 0.0);
        if inside {
            return dot(sub(p, a), n).abs() / n2.sqrt();
        }
    }
    point_segment_distance(p, a, b)
        .min(point_segment_distance(p, b, c))
        .min(point_segment_distance(p, c, a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute(a: &[Vec3], b: &[Vec3]) -> f64 {
        let side = |x: &[Vec3], y: &[Vec3]| {
            x.iter()
                .map(|p| y.iter().map(|q| dist2(*p, *q)).fold(f64::INFINITY, f64::min))
                .sum::<f64>()
                / x.len() as f64
        };
        side(a, b) + side(b, a)
    }

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn identical_sets_are_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = cloud(&mut rng, 40);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_points() {
        assert_eq!(chamfer_distance(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
    }

    #[test]
    fn matches_brute_force_and_is_symmetric() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (a, b) = (cloud(&mut rng, 50), cloud(&mut rng, 50));
            let cd = chamfer_distance(&a, &b).unwrap();
            assert!((cd - brute(&a, &b)).abs() <= 1e-9);
            assert_eq!(cd, chamfer_distance(&b, &a).unwrap());
        }
    }

    #[test]
    fn empty_is_error() {
        assert!(chamfer_distance(&[], &[[0.0; 3]]).is_err());
    }

    #[test]
    fn triangle_distance_regions() {
        let (a, b, c) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        assert_eq!(point_triangle_distance([0.2, 0.2, 0.5], a, b, c), 0.5);
        assert_eq!(point_triangle_distance([2.0, 0.0, 0.0], a, b, c), 1.0);
        assert!((point_triangle_distance([1.0, 1.0, 0.0], a, b, c) - 0.5f64.sqrt()).abs() < 1e-15);
    }
}

use serde::{Deserialize, Serialize};

use super::vec3::{add, dist, lerp, scale, sub, Vec3};
use crate::error::{Error, Result};

/// Floor added to softplus outputs for the interior weights.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Number of uniform curve samples used for supervision.
pub const CURVE_SAMPLES: usize = 32;

/// Rational cubic Bézier curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RationalCubicBezier {
    pub ctrl: [Vec3; 4],
    pub weights: [f64; 4],
}

pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

/// `n` uniformly spaced parameters covering `[0, 1]` inclusive.
pub fn uniform_params(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of `softplus(x) + WEIGHT_FLOOR`, for targets above the floor.
pub fn raw_weight_for(w: f64) -> f64 {
    let y = w - WEIGHT_FLOOR;
    y + (-(-y).exp_m1()).ln()
}

impl RationalCubicBezier {
    pub fn new(ctrl: [Vec3; 4], weights: [f64; 4]) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Geometry(format!("non-positive curve weight {w}")));
        }
        Ok(Self { ctrl, weights })
    }

    /// Straight segment with uniform parameterization.
    pub fn line(a: Vec3, b: Vec3) -> Self {
        Self {
            ctrl: [a, lerp(a, b, 1.0 / 3.0), lerp(a, b, 2.0 / 3.0), b],
            weights: [1.0; 4],
        }
    }

    /// Circular arc from `a` to `b` around `center` spanning less than π,
    /// written as a degree-elevated rational quadratic.
    pub fn arc(center: Vec3, a: Vec3, b: Vec3) -> Result<Self> {
        let (ra, rb) = (sub(a, center), sub(b, center));
        let r = dist(a, center);
        let cos = super::vec3::dot(ra, rb) / (r * r);
        if !(cos > -1.0 + 1e-9) {
            return Err(Error::Geometry("arc must span less than a half turn".into()));
        }
        let half = ((1.0 + cos) / 2.0).sqrt();
        let bisector = super::vec3::normalize(add(ra, rb)).ok_or_else(|| Error::Geometry("degenerate arc".into()))?;
        let m = add(center, scale(bisector, r / half));
        // Degree elevation of (a, m, b) with weights (1, half, 1).
        let q1 = scale(add(a, scale(m, 2.0 * half)), 1.0 / (1.0 + 2.0 * half));
        let q2 = scale(add(scale(m, 2.0 * half), b), 1.0 / (1.0 + 2.0 * half));
        let w = (1.0 + 2.0 * half) / 3.0;
        Self::new([a, q1, q2, b], [1.0, w, w, 1.0])
    }

    /// Curve from shared endpoint anchors plus interior offsets and raw weights.
    pub fn from_relative_params(x_u: Vec3, x_v: Vec3, d1: Vec3, d2: Vec3, raw: [f64; 2]) -> Self {
        Self {
            ctrl: [x_u, add(x_u, d1), add(x_v, d2), x_v],
            weights: [
                1.0,
                softplus(raw[0]) + WEIGHT_FLOOR,
                softplus(raw[1]) + WEIGHT_FLOOR,
                1.0,
            ],
        }
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        if t == 0.0 {
            return self.ctrl[0];
        }
        if t == 1.0 {
            return self.ctrl[3];
        }
        let b = bernstein(t);
        let mut num = [0.0; 3];
        let mut den = 0.0;
        for i in 0..4 {
            let c = self.weights[i] * b[i];
            num = add(num, scale(self.ctrl[i], c));
            den += c;
        }
        scale(num, 1.0 / den)
    }

    pub fn sample(&self, params: &[f64]) -> Vec<Vec3> {
        params.iter().map(|&t| self.eval(t)).collect()
    }

    pub fn sample_uniform(&self, n: usize) -> Vec<Vec3> {
        self.sample(&uniform_params(n))
    }

    pub fn start(&self) -> Vec3 {
        self.ctrl[0]
    }

    pub fn end(&self) -> Vec3 {
        self.ctrl[3]
    }

    /// Same curve traversed from the other end.
    pub fn reversed(&self) -> Self {
        let mut c = self.clone();
        c.ctrl.reverse();
        c.weights.reverse();
        c
    }

    /// Largest distance of `samples` points from the chord.
    pub fn max_chord_deviation(&self, samples: usize) -> f64 {
        let (a, b) = (self.start(), self.end());
        self.sample_uniform(samples)
            .into_iter()
            .map(|p| super::distance::point_segment_distance(p, a, b))
            .fold(0.0, f64::max)
    }

    pub fn length(&self, samples: usize) -> f64 {
        self.sample_uniform(samples.max(2))
            .windows(2)
            .map(|w| dist(w[0], w[1]))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.ctrl.iter().flatten().all(|v| v.is_finite()) && self.weights.iter().all(|w| w.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_midpoint() {
        let c = RationalCubicBezier::new(
            [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            [1.0; 4],
        )
        .unwrap();
        assert_eq!(c.eval(0.5), [1.5, 0.0, 0.0]);
    }

    #[test]
    fn endpoints_exact() {
        let c = RationalCubicBezier::new(
            [[0.1, 0.2, 0.3], [1.0, 5.0, 0.0], [2.0, -1.0, 7.0], [3.3, 0.7, 0.9]],
            [0.3, 7.0, 0.01, 2.5],
        )
        .unwrap();
        assert_eq!(c.eval(0.0), c.ctrl[0]);
        assert_eq!(c.eval(1.0), c.ctrl[3]);
    }

    #[test]
    fn quarter_circle_is_round() {
        let c = RationalCubicBezier::arc([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]).unwrap();
        for p in c.sample_uniform(100) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 1.0).abs() <= 1e-6, "radius {r}");
            assert_eq!(p[2], 0.0);
        }
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(RationalCubicBezier::new([[0.0; 3]; 4], [1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(RationalCubicBezier::new([[0.0; 3]; 4], [1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn raw_weight_inverts_softplus() {
        for w in [0.01, 0.5, 1.0, 3.0] {
            assert!((softplus(raw_weight_for(w)) + WEIGHT_FLOOR - w).abs() < 1e-12);
        }
    }

    #[test]
    fn relative_params_share_anchors() {
        let (u, v) = ([0.25, -0.5, 0.125], [0.9, 0.1, -0.3]);
        let c = RationalCubicBezier::from_relative_params(u, v, [0.0; 3], [0.0; 3], [raw_weight_for(1.0); 2]);
        assert_eq!(c.eval(0.0), u);
        assert_eq!(c.eval(1.0), v);
        assert!(c.max_chord_deviation(32) < 1e-12);
    }
}

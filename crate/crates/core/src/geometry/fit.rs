use serde::{Deserialize, Serialize};

use super::frame::{fix_sign, principal_axes};
use super::vec3::{dot, Vec3};
use crate::error::{Error, Result};

/// Plane `normal · x = offset` with the RMS orthogonal residual of the fitted points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
    pub rms: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        dot(self.normal, p) - self.offset
    }
}

/// Total-least-squares plane through the covariance eigenvector of smallest eigenvalue.
pub fn fit_plane_least_squares(points: &[Vec3]) -> Result<Plane> {
    if points.len() < 3 {
        return Err(Error::Geometry(format!(
            "plane fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let (c, values, vectors) = principal_axes(points)?;
    if !(values[1] > 1e-12 * values[2].max(f64::MIN_POSITIVE)) || values[2] <= 1e-24 {
        return Err(Error::Geometry("plane fit: points are collinear or coincident".into()));
    }
    let normal = fix_sign(vectors[0]);
    let offset = dot(normal, c);
    let plane = Plane {
        normal,
        offset,
        rms: 0.0,
    };
    let ms = points.iter().map(|&p| plane.signed_distance(p).powi(2)).sum::<f64>() / points.len() as f64;
    Ok(Plane {
        rms: ms.sqrt(),
        ..plane
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coplanar_square() {
        let pts = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let p = fit_plane_least_squares(&pts).unwrap();
        assert!(p.rms < 1e-15);
        assert!(dot(p.normal, [1.0, 0.0, 0.0]).abs() < 1e-12);
        assert!(dot(p.normal, [0.0, 1.0, 0.0]).abs() < 1e-12);
    }

    #[test]
    fn plane_z_two() {
        let pts = [[0.3, 0.1, 2.0], [-1.0, 0.5, 2.0], [0.2, -0.7, 2.0], [0.9, 0.9, 2.0]];
        let p = fit_plane_least_squares(&pts).unwrap();
        assert!((p.normal[2].abs() - 1.0).abs() < 1e-12);
        assert!((p.offset / p.normal[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn outlier_rms_matches_residuals() {
        let mut pts: Vec<Vec3> = (0..100)
            .map(|i| [(i % 10) as f64 * 0.1, (i / 10) as f64 * 0.1, 0.0])
            .collect();
        pts.push([0.45, 0.45, 1.0]);
        let p = fit_plane_least_squares(&pts).unwrap();
        let direct = (pts.iter().map(|&x| p.signed_distance(x).powi(2)).sum::<f64>() / 101.0).sqrt();
        assert!((p.rms - direct).abs() < 1e-12);
        assert!(p.rms > 0.0);
    }

    #[test]
    fn degenerate_rank() {
        assert!(fit_plane_least_squares(&[[0.0; 3], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]).is_err());
        assert!(fit_plane_least_squares(&[[0.0; 3], [1.0; 3]]).is_err());
    }
}

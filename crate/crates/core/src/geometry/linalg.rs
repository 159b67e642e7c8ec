use crate::error::{Error, Result};

/// Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub n: usize,
    /// Ascending.
    pub values: Vec<f64>,
    /// Row-major `n × n`; column `k` is the eigenvector of `values[k]`.
    pub vectors: Vec<f64>,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.vectors[i * self.n + k]).collect()
    }
}

pub fn symmetric_eigen(matrix: &[f64], n: usize) -> Result<SymmetricEigen> {
    if matrix.len() != n * n {
        return Err(Error::Geometry(format!(
            "eigen: {} entries for a {n}×{n} matrix",
            matrix.len()
        )));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Geometry("eigen: non-finite matrix entry".into()));
    }
    let mut a = matrix.to_vec();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new] = v[i * n + old];
        }
    }
    Ok(SymmetricEigen { n, values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn residual(m: &[f64], e: &SymmetricEigen) -> f64 {
        let n = e.n;
        let mut worst: f64 = 0.0;
        for k in 0..n {
            let v = e.vector(k);
            for i in 0..n {
                let mv: f64 = (0..n).map(|j| m[i * n + j] * v[j]).sum();
                worst = worst.max((mv - e.values[k] * v[i]).abs());
            }
        }
        worst
    }

    #[test]
    fn diagonal_is_sorted() {
        let e = symmetric_eigen(&[3.0, 0.0, 0.0, 1.0], 2).unwrap();
        assert_eq!(e.values, vec![1.0, 3.0]);
        assert_eq!(e.vector(0).iter().map(|x| x.abs()).collect::<Vec<_>>(), vec![0.0, 1.0]);
    }

    #[test]
    fn random_symmetric_residuals() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for &n in &[1usize, 2, 5, 17, 64] {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    m[i * n + j] = x;
                    m[j * n + i] = x;
                }
            }
            let e = symmetric_eigen(&m, n).unwrap();
            assert!(residual(&m, &e) <= 1e-8, "n={n}");
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn size_mismatch_is_error() {
        assert!(symmetric_eigen(&[1.0, 2.0, 3.0], 2).is_err());
    }
}

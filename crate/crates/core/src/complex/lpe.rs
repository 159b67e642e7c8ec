use crate::error::{Error, Result};
use crate::geometry::symmetric_eigen;

/// Default number of Laplacian eigenvectors per node.
pub const LPE_DIM: usize = 8;

/// Eigenvalues below this are treated as zero.
const ZERO_EIGENVALUE: f64 = 1e-9;

/// Laplacian positional encoding of an undirected graph.
///
/// Uses `L = I − D^{-1/2} A D^{-1/2}` and returns, row-major `n × k`, the
/// eigenvectors of the `k` smallest non-zero eigenvalues, each with its
/// largest-magnitude entry positive. Missing columns are zero.
pub fn laplacian_positional_encoding(n: usize, links: &[(usize, usize)], k: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Empty("graph for positional encoding"));
    }
    let mut a = vec![0.0; n * n];
    for &(i, j) in links {
        if i != j {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a[i * n..(i + 1) * n].iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            l[i * n + j] = if i == j { 1.0 } else { 0.0 } - a[i * n + j] * inv_sqrt[i] * inv_sqrt[j];
        }
    }
    let eig = symmetric_eigen(&l, n)?;
    let mut out = vec![0.0; n * k];
    let columns = (0..n).filter(|&c| eig.values[c] > ZERO_EIGENVALUE).take(k);
    for (col, c) in columns.enumerate() {
        let mut v = eig.vector(c);
        let big = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let lead = v.iter().position(|x| x.abs() >= big - 1e-12).unwrap_or(0);
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..n {
            out[i * k + col] = v[i];
        }
    }
    Ok(out)
}

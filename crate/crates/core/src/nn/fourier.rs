use std::f64::consts::PI;

/// Default number of frequency bands.
pub const DEFAULT_BANDS: usize = 8;

pub fn fourier_dim(bands: usize) -> usize {
    3 * 2 * bands + 3
}

/// Fourier features of a point in `[-1, 1]^3`.
///
/// Layout: `sin(2^k π x_d)` for `d = 0..3, k = 0..bands`, then the matching
/// cosines in the same order, then the raw coordinates.
pub fn fourier_positional_encoding(x: [f64; 3], bands: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(fourier_dim(bands));
    for d in 0..3 {
        for k in 0..bands {
            out.push(((1u64 << k) as f64 * PI * x[d]).sin());
        }
    }
    for d in 0..3 {
        for k in 0..bands {
            out.push(((1u64 << k) as f64 * PI * x[d]).cos());
        }
    }
    out.extend_from_slice(&x);
    out
}

/// Row-stacked encodings of many points.
pub fn fourier_rows(points: &[[f64; 3]], bands: usize) -> Vec<f64> {
    points
        .iter()
        .flat_map(|&p| fourier_positional_encoding(p, bands))
        .collect()
}

//! Weight initialization: orthogonal matrices with a gain, zero biases.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major (rows x cols) matrix with orthonormal rows or columns
/// (whichever dimension is smaller), scaled by `gain`.
pub fn orthogonal<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // QR of a Gaussian matrix; taller-than-wide so Q has orthonormal columns.
    let (n, m, transpose) = if rows >= cols { (rows, cols, false) } else { (cols, rows, true) };
    let a = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the sign ambiguity so the distribution is uniform (Haar).
    for j in 0..m {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if transpose { q[(j, i)] } else { q[(i, j)] };
            out[i * cols + j] = gain * v;
        }
    }
    out
}

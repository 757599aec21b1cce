//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// `rows × cols` matrix with iid `N(0, std²)` entries, filled column-major.
pub fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        std * z
    })
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(d, d, 1.0, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Euclidean norms of the columns.
pub fn column_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

/// Right-to-left product `ms[n-1] ⋯ ms[0]`; identity of size `d` when empty.
pub fn chain_product(ms: &[DMatrix<f64>], d: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::<f64>::identity(d, d);
    for m in ms {
        acc = m * acc;
    }
    acc
}

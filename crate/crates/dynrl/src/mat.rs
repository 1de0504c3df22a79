//! Minimal dense row-major matrix used for weight blocks.
//!
//! Only the handful of operations the forward/backward passes need:
//! matrix-vector products, transposed products for error propagation,
//! rank-one accumulation for gradients, and spectral-radius estimation
//! for scaled recurrent initialization.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    /// Row-major: element (r, c) at `data[r * cols + c]`.
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y += A x`.
    pub fn matvec_acc(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input dimension mismatch");
        assert_eq!(y.len(), self.rows, "matvec output dimension mismatch");
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += w * xi;
            }
            *yr += acc;
        }
    }

    /// `y += scale · (A x)`, used for the leaky integration.
    pub fn matvec_acc_scaled(&self, x: &[f64], y: &mut [f64], scale: f64) {
        assert_eq!(x.len(), self.cols, "matvec input dimension mismatch");
        assert_eq!(y.len(), self.rows, "matvec output dimension mismatch");
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += w * xi;
            }
            *yr += scale * acc;
        }
    }

    /// `out += scale · (Aᵀ d)` — error propagation to this block's inputs.
    pub fn matvec_transpose_acc_scaled(&self, d: &[f64], out: &mut [f64], scale: f64) {
        assert_eq!(d.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        for (r, dr) in d.iter().enumerate() {
            let s = scale * dr;
            if s == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += w * s;
            }
        }
    }

    /// `out += Aᵀ d` — error propagation from this block's outputs to its inputs.
    pub fn matvec_transpose_acc(&self, d: &[f64], out: &mut [f64]) {
        assert_eq!(d.len(), self.rows);
        assert_eq!(out.len(), self.cols);
        for (r, dr) in d.iter().enumerate() {
            if *dr == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += w * dr;
            }
        }
    }

    /// `A += scale · d ⊗ x` (rank-one update).
    pub fn add_outer(&mut self, scale: f64, d: &[f64], x: &[f64]) {
        assert_eq!(d.len(), self.rows);
        assert_eq!(x.len(), self.cols);
        for (r, dr) in d.iter().enumerate() {
            let s = scale * dr;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x.iter()) {
                *w += s * xi;
            }
        }
    }

    /// `A += c · B`.
    pub fn add_scaled(&mut self, c: f64, other: &Mat) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.data.iter_mut() {
            *v *= c;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|e| *e = v);
    }
}

/// Estimates the spectral radius (largest eigenvalue magnitude) by power
/// iteration. A two-term Krylov recurrence fit handles the common case of a
/// dominant complex-conjugate pair, where the plain norm ratio oscillates.
///
/// Panics if the matrix is not square.
pub fn spectral_radius(m: &Mat, max_iter: usize, tol: f64) -> f64 {
    assert_eq!(m.rows, m.cols, "spectral radius requires a square matrix");
    let n = m.rows;
    if n == 0 {
        return 0.0;
    }

    // Deterministic, structureless start vector so repeated inits agree.
    let mut v0: Vec<f64> = (0..n)
        .map(|i| {
            let x = splitmix64(i as u64 ^ 0x9e37_79b9_7f4a_7c15);
            (x as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    normalize(&mut v0);

    let mut v1 = vec![0.0; n];
    m.matvec_into(&v0, &mut v1);
    let r1 = norm(&v1);
    if r1 == 0.0 {
        return 0.0;
    }
    v1.iter_mut().for_each(|x| *x /= r1);

    let mut est_prev = f64::NAN;
    let mut rho1 = r1; // ‖A v0‖ with v0, v1 the last two normalized iterates
    for _ in 0..max_iter {
        let mut v2 = vec![0.0; n];
        m.matvec_into(&v1, &mut v2);
        let rho2 = norm(&v2);
        if rho2 == 0.0 {
            return 0.0;
        }
        v2.iter_mut().for_each(|x| *x /= rho2);

        let est = recurrence_estimate(&v0, &v1, &v2, rho1, rho2);
        if est_prev.is_finite() && (est - est_prev).abs() <= tol * est.max(1e-300) {
            return est;
        }
        est_prev = est;
        v0 = std::mem::replace(&mut v1, v2);
        rho1 = rho2;
    }
    est_prev
}

/// Fits A²v0 = α·A v0 + β·v0 in least squares and returns the largest root
/// magnitude of λ² − αλ − β. Falls back to the norm ratio when the iterates
/// are already collinear (real dominant eigenvalue).
fn recurrence_estimate(v0: &[f64], v1: &[f64], v2: &[f64], rho1: f64, rho2: f64) -> f64 {
    let c = dot(v0, v1);
    let det = 1.0 - c * c;
    if det < 1e-12 {
        return rho2;
    }
    // A v0 = rho1 v1, A² v0 = rho1 rho2 v2; unknowns scaled as α, β.
    let p_q1 = rho1 * rho1 * rho2 * dot(v1, v2);
    let p_q2 = rho1 * rho2 * dot(v0, v2);
    // Normal equations with Gram matrix [[rho1², rho1 c], [rho1 c, 1]].
    let g11 = rho1 * rho1;
    let g12 = rho1 * c;
    let d = g11 * 1.0 - g12 * g12;
    if d.abs() < 1e-300 {
        return rho2;
    }
    let alpha = (p_q1 * 1.0 - g12 * p_q2) / d;
    let beta = (g11 * p_q2 - g12 * p_q1) / d;
    let disc = alpha * alpha + 4.0 * beta;
    let est = if disc >= 0.0 {
        let s = disc.sqrt();
        ((alpha + s) / 2.0).abs().max(((alpha - s) / 2.0).abs())
    } else {
        // Complex pair: |λ|² equals the product of roots, −β.
        (-beta).sqrt()
    };
    if est.is_finite() && est > 0.0 {
        est
    } else {
        rho2
    }
}

impl Mat {
    /// `y = A x` (overwrites `y`).
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.matvec_acc(x, y);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn oracle_radius(m: &Mat) -> f64 {
        let dm = nalgebra::DMatrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c));
        dm.complex_eigenvalues()
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn matvec_and_outer() {
        let mut m = Mat::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut y = vec![0.0; 2];
        m.matvec_into(&[1.0, 0.0, -1.0], &mut y);
        assert_eq!(y, vec![-2.0, -2.0]);

        let mut back = vec![0.0; 3];
        m.matvec_transpose_acc(&[1.0, 1.0], &mut back);
        assert_eq!(back, vec![5.0, 7.0, 9.0]);

        m.add_outer(2.0, &[1.0, 0.0], &[1.0, 1.0, 1.0]);
        assert_eq!(m.row(0), &[3.0, 4.0, 5.0]);
        assert_eq!(m.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn radius_of_scaled_identity() {
        let m = Mat::from_row_major(2, 2, vec![3.0, 0.0, 0.0, 3.0]);
        let r = spectral_radius(&m, 5000, 1e-12);
        assert!((r - 3.0).abs() < 1e-9, "got {r}");
    }

    #[test]
    fn radius_of_rotation_pair() {
        // Pure rotation scaled by 2: dominant complex pair of magnitude 2.
        let (s, c) = (0.6f64, 0.8f64);
        let m = Mat::from_row_major(2, 2, vec![2.0 * c, -2.0 * s, 2.0 * s, 2.0 * c]);
        let r = spectral_radius(&m, 5000, 1e-12);
        assert!((r - 2.0).abs() < 1e-8, "got {r}");
    }

    #[test]
    fn radius_matches_dense_eigensolver_on_small_randoms() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=10 {
            for _ in 0..8 {
                let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                let got = spectral_radius(&m, 20_000, 1e-13);
                let want = oracle_radius(&m);
                assert!(
                    (got - want).abs() <= 1e-6 * want.max(1e-9),
                    "n={n} got {got} want {want}"
                );
            }
        }
    }

    #[test]
    fn scaling_matrix_scales_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let n = rng.random_range(2..=10);
            let m = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let c: f64 = rng.random_range(-3.0..3.0);
            let mut scaled = m.clone();
            scaled.scale(c);
            let want = c.abs() * oracle_radius(&m);
            let got = oracle_radius(&scaled);
            assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }
    }
}

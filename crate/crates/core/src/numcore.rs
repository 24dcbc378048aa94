//! Dense 64-bit linear algebra and numeric primitives.
//!
//! Everything here is small-scale and exact-first: matrices are row-major
//! `Vec<f64>` buffers, linear systems are solved by LU with partial pivoting
//! plus one round of iterative refinement, and randomness comes from seeded
//! ChaCha streams so every run is reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameter and gradient vectors.
pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "buffer of length {} cannot hold {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics, and a zero-column matrix still has rows.
        (0..self.rows).map(move |i| self.row(i))
    }

    /// New matrix made of the listed rows, in order (indices may repeat).
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::Dimension(format!(
                "matvec: {}x{} times vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, x)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul: {}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Dimension("add_scaled: shape mismatch".into()));
        }
        axpy(scale, &other.data, &mut self.data);
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// In-place LU factorization with partial pivoting.
struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot == 0.0 {
                return Err(Error::Singular {
                    residual: f64::INFINITY,
                    tolerance: 0.0,
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = lu[k * n + k];
            for i in (k + 1)..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        lu[i * n + j] -= f * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    fn solve(&self, b: &[f64]) -> Vector {
        let n = self.n;
        let mut x: Vector = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.lu[i * n + j] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

/// Solves `(A + damping I) x = b` for symmetric `A`.
///
/// The residual is checked after one refinement step; anything above
/// `1e-8 (1 + |b|)` is reported as [`Error::Singular`].
pub fn solve_damped(a: &Matrix, b: &[f64], damping: f64) -> Result<Vector> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "solve_damped: matrix is {}x{}",
            a.rows, a.cols
        )));
    }
    if b.len() != a.rows {
        return Err(Error::Dimension(format!(
            "solve_damped: {}x{} system with rhs of length {}",
            a.rows,
            a.cols,
            b.len()
        )));
    }
    if damping < 0.0 || !damping.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "damping must be finite and >= 0, got {damping}"
        )));
    }
    if !a.is_finite() || b.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("solve_damped input".into()));
    }
    let scale = a.max_abs().max(1.0);
    if a.asymmetry() > 1e-9 * scale {
        return Err(Error::Dimension(format!(
            "solve_damped: matrix is not symmetric (asymmetry {:.3e})",
            a.asymmetry()
        )));
    }

    let mut damped = a.clone();
    for i in 0..damped.rows {
        damped[(i, i)] += damping;
    }
    let tolerance = 1e-8 * (1.0 + norm(b));
    let lu = Lu::factor(&damped).map_err(|_| Error::Singular {
        residual: f64::INFINITY,
        tolerance,
    })?;
    let mut x = lu.solve(b);
    let residual = |x: &[f64]| -> Vector {
        let ax = damped.matvec(x).expect("square system");
        sub(b, &ax)
    };
    let r = residual(&x);
    let dx = lu.solve(&r);
    axpy(1.0, &dx, &mut x);
    let r = norm(&residual(&x));
    if r.is_nan() || r > tolerance {
        return Err(Error::Singular {
            residual: r,
            tolerance,
        });
    }
    Ok(x)
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for i in 0..out.rows {
        softmax_in_place(out.row_mut(i));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `log(sum(exp(row)))`, stable for large magnitudes.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter(format!("step must be > 0, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "function evaluation near coordinate {i}"
            )));
        }
        g.push((up - down) / (2.0 * h));
    }
    Ok(g)
}

/// Identifies one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Well-known stream ids so independent consumers never share draws.
pub mod streams {
    pub const DATA_CENTERS: u64 = 1;
    pub const DATA_TRAIN: u64 = 2;
    pub const DATA_TEST: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const UNLEARN: u64 = 6;
    pub const MEMBER_SAMPLE: u64 = 7;
    pub const RETRAIN: u64 = 8;
    pub const RELABEL: u64 = 9;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn identity_system() {
        let x = solve_damped(&Matrix::identity(3), &[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn scaled_identity() {
        let mut a = Matrix::identity(2);
        a.scale(2.0);
        let x = solve_damped(&a, &[4.0, 6.0], 0.0).unwrap();
        assert_eq!(x, vec![2.0, 3.0]);
    }

    #[test]
    fn damped_singular_matches_reference_solver() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let x = solve_damped(&a, &[1.0, 1.0], 1e-3).unwrap();
        let reference = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0 + 1e-3, 0.0, 0.0, 1e-3]);
        let expected = reference
            .lu()
            .solve(&nalgebra::DVector::from_vec(vec![1.0, 1.0]))
            .unwrap();
        assert_relative_eq!(x[0], expected[0], max_relative = 1e-12);
        assert_relative_eq!(x[1], expected[1], max_relative = 1e-12);
        assert_relative_eq!(x[1], 1000.0, max_relative = 1e-12);
    }

    #[test]
    fn undamped_singular_is_rejected() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            solve_damped(&a, &[1.0, 1.0], 0.0),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(solve_damped(&a, &[1.0, 2.0], 0.0), Err(Error::Dimension(_))));
        let a = Matrix::identity(2);
        assert!(matches!(solve_damped(&a, &[1.0], 0.0), Err(Error::Dimension(_))));
        assert!(matches!(
            solve_damped(&a, &[1.0, 1.0], -1.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn softmax_cases() {
        let m = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]]).unwrap();
        let s = softmax_rows(&m);
        for j in 0..3 {
            assert_relative_eq!(s[(0, j)], 1.0 / 3.0, max_relative = 1e-15);
        }
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for j in 0..3 {
            assert_relative_eq!(s[(1, j)], ((j + 1) as f64).exp() / denom, max_relative = 1e-14);
        }

        let big = softmax_rows(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap());
        assert_eq!(big[(0, 0)], 1.0);
        assert_eq!(big[(0, 1)], 0.0);
    }

    #[test]
    fn finite_diff_quadratic_and_constant() {
        let g = finite_diff_grad(|x| dot(x, x), &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(|_| 3.5, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(finite_diff_grad(|x| 1.0 / x[0], &[0.0], 1e-5).is_ok());
        assert!(matches!(
            finite_diff_grad(|x| (x[0] - 1e-5).ln(), &[1e-5], 1e-5),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngStream::new(42, 7).rng();
        let mut b = RngStream::new(42, 7).rng();
        let mut c = RngStream::new(42, 8).rng();
        let xs: Vec<u64> = (0..10_000).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..10_000).map(|_| b.random()).collect();
        let zs: Vec<u64> = (0..10).map(|_| c.random()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs[..10], zs[..]);
    }
}

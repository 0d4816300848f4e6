//! Tensors, layers with hand-derived gradients, the two point-set scorers
//! and the weights container.

mod arch;
mod container;
pub mod gradcheck;
pub mod layers;
mod model;
mod sampling;

pub use arch::{Arch, ArchSpec, NetworkWeights, SaLayerSpec};
pub use container::{read_container, write_container, Container, Tensor, CONTAINER_VERSION, MAGIC};
pub use model::{ForwardCache, Gradients, Mode, Network};
pub use sampling::{ball_query, farthest_point_sample};

use std::fmt::Debug;

/// Scalar type the network runs in: `f32` for training and inference,
/// `f64` for gradient checks.
pub trait Real:
    num_traits::Float + Default + Debug + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `C = A·B + beta·C` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], rsa: isize, csa: isize, b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self]);
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32]) {
        check_gemm(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        // SAFETY: extents and strides were checked against the slice lengths.
        unsafe {
            matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
        check_gemm(m, k, n, a.len(), rsa, csa, b.len(), rsb, csb, c.len());
        // SAFETY: as above.
        unsafe {
            matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn check_gemm(m: usize, k: usize, n: usize, la: usize, rsa: isize, csa: isize, lb: usize, rsb: isize, csb: isize, lc: usize) {
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0);
    assert!(last(m, k, rsa, csa) as usize <= la, "gemm: A too short");
    assert!(last(k, n, rsb, csb) as usize <= lb, "gemm: B too short");
    assert!(m * n <= lc, "gemm: C too short");
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self · wᵀ` where `w` is `out × self.cols`.
    pub fn mul_transposed(&self, w: &[T], out: usize) -> Matrix<T> {
        let mut y = Matrix::zeros(self.rows, out);
        T::gemm(self.rows, self.cols, out, &self.data, self.cols as isize, 1, w, 1, self.cols as isize, T::zero(), &mut y.data);
        y
    }

    /// `selfᵀ · x`.
    pub fn transposed_mul(&self, x: &Matrix<T>) -> Matrix<T> {
        assert_eq!(self.rows, x.rows);
        let mut out = Matrix::zeros(self.cols, x.cols);
        T::gemm(self.cols, self.rows, x.cols, &self.data, 1, self.cols as isize, &x.data, x.cols as isize, 1, T::zero(), &mut out.data);
        out
    }

    /// `self · w` where `w` is `self.cols × n`.
    pub fn mul(&self, w: &[T], n: usize) -> Matrix<T> {
        let mut out = Matrix::zeros(self.rows, n);
        T::gemm(self.rows, self.cols, n, &self.data, self.cols as isize, 1, w, n as isize, 1, T::zero(), &mut out.data);
        out
    }
}

//! Scalar abstraction and dense kernels.

use core::fmt::Debug;
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point type the model can run in. Training defaults to `f32`;
/// gradient checks use `f64`.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Send + Sync + 'static
{
    const DTYPE: &'static str;

    /// `C = alpha * A B + beta * C` over strided matrices.
    ///
    /// # Safety
    ///
    /// The strides must describe valid, in-bounds views for the given
    /// dimensions, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64_lossy(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>);

    fn from_le_slice(b: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64_lossy(x: f64) -> f32 {
        x as f32
    }

    fn to_f64_lossy(self) -> f64 {
        f64::from(self)
    }

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(b: &[u8]) -> f32 {
        f32::from_le_bytes(b.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64_lossy(x: f64) -> f64 {
        x
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(self, out: &mut alloc::vec::Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn from_le_slice(b: &[u8]) -> f64 {
        f64::from_le_bytes(b.try_into().expect("8 bytes"))
    }
}

/// A strided read-only matrix view.
#[derive(Clone, Copy)]
pub struct View<'a, R> {
    pub data: &'a [R],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, R> View<'a, R> {
    /// Row-major `rows x cols` matrix.
    pub fn new(data: &'a [R], rows: usize, cols: usize) -> Self {
        View { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Row-major matrix whose rows are `stride` apart.
    pub fn strided(data: &'a [R], rows: usize, cols: usize, stride: usize) -> Self {
        View { data, rows, cols, rs: stride, cs: 1 }
    }

    pub fn t(self) -> Self {
        View { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn extent(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// A strided mutable matrix view.
pub struct ViewMut<'a, R> {
    pub data: &'a mut [R],
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
}

impl<'a, R> ViewMut<'a, R> {
    pub fn new(data: &'a mut [R], rows: usize, cols: usize) -> Self {
        ViewMut { data, rows, cols, rs: cols }
    }

    pub fn strided(data: &'a mut [R], rows: usize, cols: usize, stride: usize) -> Self {
        ViewMut { data, rows, cols, rs: stride }
    }
}

/// `C = A B` (or `C += A B` when `accumulate`).
pub fn matmul<R: Real>(a: View<'_, R>, b: View<'_, R>, c: ViewMut<'_, R>, accumulate: bool) {
    matmul_scaled(R::one(), a, b, c, accumulate);
}

/// `C = alpha A B` (or `C += alpha A B`).
pub fn matmul_scaled<R: Real>(alpha: R, a: View<'_, R>, b: View<'_, R>, c: ViewMut<'_, R>, accumulate: bool) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    assert!(a.extent() <= a.data.len() && b.extent() <= b.data.len(), "input view out of bounds");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    assert!((c.rows - 1) * c.rs + c.cols <= c.data.len(), "output view out of bounds");
    let beta = if accumulate { R::one() } else { R::zero() };
    // SAFETY: extents were checked above; `c` is a unique borrow so it
    // cannot alias the shared inputs.
    unsafe {
        R::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> alloc::vec::Vec<f64> {
        let mut c = alloc::vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: alloc::vec::Vec<f64> = (0..m * k).map(|x| x as f64 * 0.5 - 2.0).collect();
        let b: alloc::vec::Vec<f64> = (0..k * n).map(|x| (x as f64).sin()).collect();
        let expect = naive(&a, &b, m, k, n);
        let mut c = alloc::vec![0.0; m * n];
        matmul(View::new(&a, m, k), View::new(&b, k, n), ViewMut::new(&mut c, m, n), false);
        assert!(c.iter().zip(&expect).all(|(x, y)| (x - y).abs() < 1e-12));
        // transposed storage of b: n x k
        let mut bt = alloc::vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c2 = alloc::vec![1.0; m * n];
        matmul(View::new(&a, m, k), View::new(&bt, n, k).t(), ViewMut::new(&mut c2, m, n), true);
        assert!(c2.iter().zip(&expect).all(|(x, y)| (x - 1.0 - y).abs() < 1e-12));
    }
}

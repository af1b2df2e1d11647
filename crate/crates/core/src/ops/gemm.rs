//! Safe strided wrapper over `matrixmultiply::dgemm`.

/// Read-only strided view of an `rows x cols` matrix inside a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// `out = beta * out + a * b` with `out` row-major `a.rows x b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(out.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: `out` is an initialized m*n buffer.
    unsafe { dgemm_into(a, b, out.as_mut_ptr(), beta) }
}

/// Freshly allocated `a * b`, row-major `a.rows x b.cols`.
pub(crate) fn matmul(a: MatRef<'_>, b: MatRef<'_>) -> Vec<f64> {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    let len = a.rows * b.cols;
    if len == 0 || a.cols == 0 {
        return vec![0.0; len];
    }
    let mut out = Vec::with_capacity(len);
    // SAFETY: with beta = 0 dgemm never reads C and writes all m*n entries,
    // so the buffer is fully initialized before set_len.
    unsafe {
        dgemm_into(a, b, out.as_mut_ptr(), 0.0);
        out.set_len(len);
    }
    out
}

/// # Safety
/// `out` must be valid for `a.rows * b.cols` writes, and initialized unless
/// `beta == 0`. Dimensions must be non-zero.
unsafe fn dgemm_into(a: MatRef<'_>, b: MatRef<'_>, out: *mut f64, beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(a.max_offset() < a.data.len(), "gemm lhs out of bounds");
    assert!(b.max_offset() < b.data.len(), "gemm rhs out of bounds");
    // SAFETY: every index dgemm reads is bounded by max_offset, checked
    // above for both inputs; the caller guarantees `out`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out,
            n as isize,
            1,
        );
    }
}

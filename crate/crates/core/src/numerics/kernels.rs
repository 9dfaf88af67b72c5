//! Slice-level kernels shared by the autodiff tape and the inference path.
//!
//! Both code paths call exactly these functions so that a forward pass
//! recorded on the tape and a cached inference pass agree numerically.

/// Strided read-only matrix view into a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    data: &'a [f32],
    off: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` view of the whole buffer.
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view larger than buffer");
        Self {
            data,
            off: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Sub-block `[r0, r0+rows) × [c0, c0+cols)`.
    pub fn block(self, r0: usize, rows: usize, c0: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self {
            off: self.off + r0 * self.rs + c0 * self.cs,
            rows,
            cols,
            ..self
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn last_index(&self) -> usize {
        self.off + (self.rows.max(1) - 1) * self.rs + (self.cols.max(1) - 1) * self.cs
    }
}

/// Strided mutable matrix view.
#[derive(Debug)]
pub struct ViewMut<'a> {
    data: &'a mut [f32],
    off: usize,
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn new(data: &'a mut [f32], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view larger than buffer");
        Self {
            data,
            off: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn block(self, r0: usize, rows: usize, c0: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols, "block out of range");
        Self {
            off: self.off + r0 * self.rs + c0 * self.cs,
            rows,
            cols,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        self.off + (self.rows.max(1) - 1) * self.rs + (self.cols.max(1) - 1) * self.cs
    }
}

/// `c = alpha * a·b + beta * c`. When `beta == 0` the previous contents of `c`
/// are ignored.
pub fn gemm(alpha: f32, a: View<'_>, b: View<'_>, beta: f32, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = c.off + i * c.rs + j * c.cs;
                c.data[idx] = if beta == 0.0 { 0.0 } else { beta * c.data[idx] };
            }
        }
        return;
    }
    assert!(a.last_index() < a.data.len());
    assert!(b.last_index() < b.data.len());
    assert!(c.last_index() < c.data.len());
    // SAFETY: the asserts above bound every element the kernel touches, the
    // strides are non-negative, and `c` is a unique borrow.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.off),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Plain row-major product `[m×k]·[k×n]`.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        View::new(a, m, k),
        View::new(b, k, n),
        0.0,
        ViewMut::new(&mut out, m, n),
    );
    out
}

/// `x·w + bias` for row-major `x: [rows×d_in]`, `w: [d_in×d_out]`.
pub fn linear(x: &[f32], rows: usize, w: &[f32], bias: &[f32], d_in: usize, d_out: usize) -> Vec<f32> {
    let mut out = matmul(x, w, rows, d_in, d_out);
    add_bias(&mut out, bias);
    out
}

pub fn add_bias(x: &mut [f32], bias: &[f32]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Softmax over the entries of `row` where `valid` is true; others get 0.
/// A row with no valid entry becomes all zeros.
pub fn masked_softmax_in_place(row: &mut [f32], valid: impl Fn(usize) -> bool) {
    let mut max = f32::NEG_INFINITY;
    for (j, v) in row.iter().enumerate() {
        if valid(j) && *v > max {
            max = *v;
        }
    }
    if max == f32::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0f32;
    for (j, v) in row.iter_mut().enumerate() {
        if valid(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// Row-wise layer norm. Returns per-row `(mean, 1/std)` for the backward pass.
pub fn layer_norm_forward(x: &[f32], gain: &[f32], bias: &[f32], eps: f32, out: &mut [f32]) -> (Vec<f32>, Vec<f32>) {
    let d = gain.len();
    let rows = x.len() / d;
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for (xr, or) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mean = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rstd = 1.0 / (var + eps).sqrt();
        for i in 0..d {
            or[i] = (xr[i] - mean) * rstd * gain[i] + bias[i];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (means, rstds)
}

/// Scales `row` to unit norm (norm accumulated in `f64`, floored at 1e-12)
/// and returns the norm used.
pub fn l2_normalize_in_place(row: &mut [f32]) -> f32 {
    let n = row.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt() as f32;
    let n = n.max(1e-12);
    row.iter_mut().for_each(|v| *v /= n);
    n
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044_715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

/// Dot product with eight independent accumulators, combined in a fixed
/// order so the result is reproducible.
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

//! Dense row-major matrices and the handful of kernels the pipeline needs.
//!
//! Every kernel accumulates each output element in a fixed order that does not
//! depend on the row it lives in or on the number of worker threads, so a row
//! computed inside a large batch is bitwise equal to the same row computed alone.

use std::fmt;

use rayon::prelude::*;

use super::NumericsError;

/// Rows above which the matrix kernels fan out over the rayon pool.
const PAR_ROWS: usize = 256;

#[derive(Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(NumericsError::Shape(format!(
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

    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![x],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// The single entry of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor2) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Tensor2 {
        let mut out = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        Tensor2 {
            rows: idx.len(),
            cols: self.cols,
            data: out,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dot product with four interleaved accumulators, combined in a fixed order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let k = c * 4;
        s0 += a[k] * b[k];
        s1 += a[k + 1] * b[k + 1];
        s2 += a[k + 2] * b[k + 2];
        s3 += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in chunks * 4..n {
        tail += a[k] * b[k];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn for_each_row<F>(out: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if cols == 0 {
        return;
    }
    let rows = out.len() / cols;
    if rows >= PAR_ROWS && rayon::current_num_threads() > 1 {
        out.par_chunks_mut(cols).enumerate().for_each(|(i, r)| f(i, r));
    } else {
        out.chunks_mut(cols).enumerate().for_each(|(i, r)| f(i, r));
    }
}

/// `x · wᵀ` where `x` is n×k and `w` is m×k.
pub fn matmul_nt(x: &Tensor2, w: &Tensor2) -> Tensor2 {
    assert_eq!(x.cols, w.cols, "matmul_nt inner dimension");
    let mut out = Tensor2::zeros(x.rows, w.rows);
    let m = w.rows;
    for_each_row(&mut out.data, m, |i, orow| {
        let xr = x.row(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(xr, w.row(j));
        }
    });
    out
}

/// `g · w` where `g` is n×m and `w` is m×k.
pub fn matmul_nn(g: &Tensor2, w: &Tensor2) -> Tensor2 {
    assert_eq!(g.cols, w.rows, "matmul_nn inner dimension");
    let mut out = Tensor2::zeros(g.rows, w.cols);
    let k = w.cols;
    for_each_row(&mut out.data, k, |i, orow| {
        for (j, &gij) in g.row(i).iter().enumerate() {
            if gij != 0.0 {
                axpy(orow, gij, w.row(j));
            }
        }
    });
    out
}

/// `gᵀ · x` where `g` is n×m and `x` is n×k; the sum over n runs in index order.
pub fn matmul_tn(g: &Tensor2, x: &Tensor2) -> Tensor2 {
    assert_eq!(g.rows, x.rows, "matmul_tn outer dimension");
    let (m, k) = (g.cols, x.cols);
    let mut out = Tensor2::zeros(m, k);
    for_each_row(&mut out.data, k, |j, orow| {
        for i in 0..g.rows {
            let gij = g.data[i * m + j];
            if gij != 0.0 {
                axpy(orow, gij, x.row(i));
            }
        }
    });
    out
}

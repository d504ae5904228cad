//! Dense row-major matrix kernels.
//!
//! Every product sums over the shared dimension in ascending index order, so
//! `matmul_at(a, b)` and `matmul(&a.transpose(), b)` agree bit for bit. The
//! `*_into` variants write into a caller-owned buffer of exact shape and are
//! what the training loop uses to avoid per-step allocation.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DataLength {
                rows,
                cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// One row per index, each with a single 1 at that index.
    pub fn one_hot(indices: &[usize], width: usize) -> Self {
        let mut m = Self::zeros(indices.len(), width);
        for (r, &k) in indices.iter().enumerate() {
            assert!(k < width, "index {k} out of range for width {width}");
            m.data[r * width + k] = T::one();
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        transpose_into(self, &mut out).expect("shape computed above");
        out
    }

    /// Copies columns `start..start + width` into a new matrix.
    pub fn col_block(&self, start: usize, width: usize) -> Self {
        assert!(start + width <= self.cols);
        let mut out = Self::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        check_same("add_assign", self, other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}

fn check_same<T>(op: &'static str, a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return Err(Error::Shape {
            op,
            lhs: (a.rows, a.cols),
            rhs: (b.rows, b.cols),
        });
    }
    Ok(())
}

fn check_out<T>(op: &'static str, out: &Matrix<T>, rows: usize, cols: usize) -> Result<()> {
    if out.rows != rows || out.cols != cols {
        return Err(Error::Shape {
            op,
            lhs: (out.rows, out.cols),
            rhs: (rows, cols),
        });
    }
    Ok(())
}

pub fn transpose_into<T: Scalar>(a: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    check_out("transpose", out, a.cols, a.rows)?;
    for r in 0..a.rows {
        for c in 0..a.cols {
            out.data[c * a.rows + r] = a.data[r * a.cols + c];
        }
    }
    Ok(())
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out)?;
    Ok(out)
}

pub fn matmul_into<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    if a.cols != b.rows {
        return Err(Error::Shape {
            op: "matmul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    check_out("matmul output", out, a.rows, b.cols)?;
    let k = a.cols;
    blocked_product(
        a.rows,
        b.cols,
        k,
        &mut out.data,
        |i, kk| a.data[i * k + kk],
        &b.data,
    );
    Ok(())
}

/// Tile width of the blocked product.
const TILE: usize = 8;

/// `out[i][j] = Σ_k lhs(i, k) · b[k][j]` with `b` row-major `K × n`.
///
/// Each output element is accumulated in a register from zero in ascending
/// `k`, exactly like the textbook triple loop, so tiling changes speed but
/// never bits. Rows are processed in pairs to share the loads of `b`.
#[inline(always)]
fn blocked_product<T: Scalar>(
    rows: usize,
    n: usize,
    depth: usize,
    out: &mut [T],
    lhs: impl Fn(usize, usize) -> T,
    b: &[T],
) {
    let full = n - n % TILE;
    let mut i = 0;
    while i + 1 < rows {
        for j in (0..full).step_by(TILE) {
            let mut acc0 = [T::zero(); TILE];
            let mut acc1 = [T::zero(); TILE];
            for kk in 0..depth {
                let (a0, a1) = (lhs(i, kk), lhs(i + 1, kk));
                let bt: &[T; TILE] = b[kk * n + j..kk * n + j + TILE].try_into().unwrap();
                for t in 0..TILE {
                    acc0[t] += a0 * bt[t];
                    acc1[t] += a1 * bt[t];
                }
            }
            out[i * n + j..i * n + j + TILE].copy_from_slice(&acc0);
            out[(i + 1) * n + j..(i + 1) * n + j + TILE].copy_from_slice(&acc1);
        }
        for j in full..n {
            let (mut s0, mut s1) = (T::zero(), T::zero());
            for kk in 0..depth {
                s0 += lhs(i, kk) * b[kk * n + j];
                s1 += lhs(i + 1, kk) * b[kk * n + j];
            }
            out[i * n + j] = s0;
            out[(i + 1) * n + j] = s1;
        }
        i += 2;
    }
    if i < rows {
        for j in (0..full).step_by(TILE) {
            let mut acc = [T::zero(); TILE];
            for kk in 0..depth {
                let a0 = lhs(i, kk);
                let bt: &[T; TILE] = b[kk * n + j..kk * n + j + TILE].try_into().unwrap();
                for t in 0..TILE {
                    acc[t] += a0 * bt[t];
                }
            }
            out[i * n + j..i * n + j + TILE].copy_from_slice(&acc);
        }
        for j in full..n {
            let mut s0 = T::zero();
            for kk in 0..depth {
                s0 += lhs(i, kk) * b[kk * n + j];
            }
            out[i * n + j] = s0;
        }
    }
}

/// `aᵀ · b` without forming the transpose.
pub fn matmul_at<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = Matrix::zeros(a.cols, b.cols);
    matmul_at_into(a, b, &mut out)?;
    Ok(out)
}

pub fn matmul_at_into<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, out: &mut Matrix<T>) -> Result<()> {
    if a.rows != b.rows {
        return Err(Error::Shape {
            op: "matmul_at",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    check_out("matmul_at output", out, a.cols, b.cols)?;
    let m = a.cols;
    blocked_product(
        a.cols,
        b.cols,
        a.rows,
        &mut out.data,
        |i, kk| a.data[kk * m + i],
        &b.data,
    );
    Ok(())
}

/// `a · bᵀ`. Transposes `b` into scratch and runs the plain kernel; callers
/// multiplying by the same `b` repeatedly should transpose once and use
/// [`matmul_into`] directly.
pub fn matmul_bt<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols != b.cols {
        return Err(Error::Shape {
            op: "matmul_bt",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    matmul(a, &b.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EwiseOp {
    Mul,
    Add,
    Sub,
}

pub fn ewise<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, op: EwiseOp) -> Result<Matrix<T>> {
    check_same("ewise", a, b)?;
    let f: fn(T, T) -> T = match op {
        EwiseOp::Mul => |x, y| x * y,
        EwiseOp::Add => |x, y| x + y,
        EwiseOp::Sub => |x, y| x - y,
    };
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Elementwise functions. The `*PrimeFromAct` variants take the activation
/// value `v`, not the pre-activation: `1 - v²` and `v(1 - v)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    TanhPrimeFromAct,
    SigmoidPrimeFromAct,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Tanh => v.tanh_acc(),
            Activation::Sigmoid => sigmoid(v),
            Activation::TanhPrimeFromAct => T::one() - v * v,
            Activation::SigmoidPrimeFromAct => v * (T::one() - v),
        }
    }
}

pub fn map<T: Scalar>(a: &Matrix<T>, f: Activation) -> Matrix<T> {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().map(|&v| f.apply(v)).collect(),
    }
}

pub fn map_in_place<T: Scalar>(a: &mut Matrix<T>, f: Activation) {
    a.data.iter_mut().for_each(|v| *v = f.apply(*v));
}

/// Adds the `1 × n` bias row to every row of `a`.
pub fn row_broadcast_add<T: Scalar>(a: &Matrix<T>, bias: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = a.clone();
    row_broadcast_add_assign(&mut out, bias)?;
    Ok(out)
}

pub fn row_broadcast_add_assign<T: Scalar>(a: &mut Matrix<T>, bias: &Matrix<T>) -> Result<()> {
    if bias.rows != 1 || bias.cols != a.cols {
        return Err(Error::Shape {
            op: "row_broadcast_add",
            lhs: a.shape(),
            rhs: bias.shape(),
        });
    }
    let n = a.cols;
    for row in a.data.chunks_exact_mut(n) {
        for (x, &b) in row.iter_mut().zip(&bias.data) {
            *x += b;
        }
    }
    Ok(())
}

/// Multiplies row `i` of `a` by `scale[i]`, with `scale` an `m × 1` column.
pub fn col_broadcast_mul<T: Scalar>(a: &Matrix<T>, scale: &Matrix<T>) -> Result<Matrix<T>> {
    if scale.cols != 1 || scale.rows != a.rows {
        return Err(Error::Shape {
            op: "col_broadcast_mul",
            lhs: a.shape(),
            rhs: scale.shape(),
        });
    }
    let mut out = a.clone();
    if a.cols > 0 {
        for (row, &k) in out.data.chunks_exact_mut(a.cols).zip(&scale.data) {
            row.iter_mut().for_each(|x| *x *= k);
        }
    }
    Ok(out)
}

/// `1 × n` vector of column sums, rows added in ascending order.
pub fn column_sums<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(1, a.cols);
    column_sums_acc(a, &mut out).expect("shape computed above");
    out
}

/// `acc += column_sums(a)`, folding rows into `acc` one at a time.
pub fn column_sums_acc<T: Scalar>(a: &Matrix<T>, acc: &mut Matrix<T>) -> Result<()> {
    check_out("column_sums", acc, 1, a.cols)?;
    if a.cols == 0 {
        return Ok(());
    }
    for row in a.data.chunks_exact(a.cols) {
        for (s, &x) in acc.data.iter_mut().zip(row) {
            *s += x;
        }
    }
    Ok(())
}

/// Row `r` of the output is row `indices[r]` of `table`; equal to
/// `one_hot(indices) · table`.
pub fn gather_rows<T: Scalar>(table: &Matrix<T>, indices: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(indices.len(), table.cols);
    gather_rows_into(table, indices, &mut out).expect("shape computed above");
    out
}

pub fn gather_rows_into<T: Scalar>(
    table: &Matrix<T>,
    indices: &[usize],
    out: &mut Matrix<T>,
) -> Result<()> {
    check_out("gather_rows", out, indices.len(), table.cols)?;
    for (r, &k) in indices.iter().enumerate() {
        out.row_mut(r).copy_from_slice(table.row(k));
    }
    Ok(())
}

/// `target += one_hot(indices)ᵀ · src`, scattering rows of `src` in order.
pub fn scatter_add_rows<T: Scalar>(
    target: &mut Matrix<T>,
    indices: &[usize],
    src: &Matrix<T>,
) -> Result<()> {
    if src.rows != indices.len() || src.cols != target.cols {
        return Err(Error::Shape {
            op: "scatter_add_rows",
            lhs: target.shape(),
            rhs: src.shape(),
        });
    }
    for (r, &k) in indices.iter().enumerate() {
        let dst = target.row_mut(k);
        for (d, &s) in dst.iter_mut().zip(src.row(r)) {
            *d += s;
        }
    }
    Ok(())
}

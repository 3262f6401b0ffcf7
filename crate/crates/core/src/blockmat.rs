//! Block-partitioned matrix formats.
//!
//! Dense matrices are stored block-wise row-major: the `b * b` scalars of a
//! block are contiguous (row-major inside the block) and the blocks of one
//! block-row follow each other. Sparse weight matrices are stored per
//! block-column: a header with the block-row indices of the present blocks and
//! the blocks themselves, in header order.
//!
//! Dimensions that are not multiples of `b` are zero-padded. The logical
//! extent is kept next to the padded grid so reports use true dimensions.
//!
//! Every product in this module accumulates an output block over the inner
//! blocks in header order (ascending block-row index) and, inside a block,
//! over the inner index in ascending order. The simulator follows the same
//! order, which is what makes its results bit-identical to these kernels.

use serde::{Deserialize, Serialize};

use crate::staticprune::PruneMask;
use crate::{div_ceil, Error, Result};

/// Plain row-major matrix used at the edges (generation, embedding, I/O).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("matrix dims must be >= 1, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!("{rows}x{cols} matrix needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Dense matrix in block-wise row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDenseMatrix {
    rows: usize,
    cols: usize,
    b: usize,
    grid_rows: usize,
    grid_cols: usize,
    data: Vec<f64>,
}

/// Partitions `matrix` into `b x b` blocks, zero-padding ragged edges.
pub fn partition_dense(matrix: &Matrix, b: usize) -> Result<BlockDenseMatrix> {
    let mut out = BlockDenseMatrix::zeros(matrix.rows, matrix.cols, b)?;
    for i in 0..matrix.rows {
        for j in 0..matrix.cols {
            out.set(i, j, matrix.get(i, j));
        }
    }
    Ok(out)
}

impl BlockDenseMatrix {
    pub fn zeros(rows: usize, cols: usize, b: usize) -> Result<Self> {
        if b == 0 {
            return Err(Error::invalid("block size must be positive"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("matrix dims must be >= 1, got {rows}x{cols}")));
        }
        let grid_rows = div_ceil(rows, b);
        let grid_cols = div_ceil(cols, b);
        Ok(BlockDenseMatrix { rows, cols, b, grid_rows, grid_cols, data: vec![0.0; grid_rows * grid_cols * b * b] })
    }

    /// Rebuilds a matrix from its block-wise payload (container decoding).
    pub fn from_block_data(rows: usize, cols: usize, b: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(rows, cols, b)?;
        if data.len() != m.data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} (b={b}) needs {} block-wise scalars, got {}",
                m.data.len(),
                data.len()
            )));
        }
        m.data = data;
        Ok(m)
    }

    pub fn from_fn(rows: usize, cols: usize, b: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(rows, cols, b)?;
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, f(i, j));
            }
        }
        Ok(m)
    }

    /// Logical row count.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Logical column count.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let b = self.b;
        ((i / b) * self.grid_cols + j / b) * b * b + (i % b) * b + j % b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.offset(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }

    pub fn block(&self, bi: usize, bj: usize) -> &[f64] {
        let bb = self.b * self.b;
        let start = (bi * self.grid_cols + bj) * bb;
        &self.data[start..start + bb]
    }

    pub fn block_mut(&mut self, bi: usize, bj: usize) -> &mut [f64] {
        let bb = self.b * self.b;
        let start = (bi * self.grid_cols + bj) * bb;
        &mut self.data[start..start + bb]
    }

    /// Logical row `i` as a plain vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> BlockDenseMatrix {
        let mut t = BlockDenseMatrix::zeros(self.cols, self.rows, self.b).expect("dims already validated");
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    /// Copies `n_blocks` block-columns starting at `first_block` into a new
    /// matrix with `logical_cols` logical columns.
    pub fn block_columns(&self, first_block: usize, n_blocks: usize, logical_cols: usize) -> Result<BlockDenseMatrix> {
        if first_block + n_blocks > self.grid_cols || logical_cols > n_blocks * self.b || logical_cols == 0 {
            return Err(Error::shape(format!(
                "block-column slice {first_block}+{n_blocks} ({logical_cols} cols) outside {} block-columns",
                self.grid_cols
            )));
        }
        let mut out = BlockDenseMatrix::zeros(self.rows, logical_cols, self.b)?;
        for bi in 0..self.grid_rows {
            for bj in 0..n_blocks {
                out.block_mut(bi, bj).copy_from_slice(self.block(bi, first_block + bj));
            }
        }
        Ok(out)
    }

    /// Writes `src` into the block-columns starting at `first_block`.
    pub fn set_block_columns(&mut self, first_block: usize, src: &BlockDenseMatrix) -> Result<()> {
        if src.b != self.b || src.grid_rows != self.grid_rows || first_block + src.grid_cols > self.grid_cols {
            return Err(Error::shape("block-column write does not fit"));
        }
        for bi in 0..self.grid_rows {
            for bj in 0..src.grid_cols {
                let blk = src.block(bi, bj).to_vec();
                self.block_mut(bi, first_block + bj).copy_from_slice(&blk);
            }
        }
        Ok(())
    }

    /// Builds a matrix whose logical rows are the given rows, in order.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize, b: usize) -> Result<BlockDenseMatrix> {
        let mut out = BlockDenseMatrix::zeros(rows.len(), cols, b)?;
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            for (j, &v) in r.iter().enumerate() {
                out.set(i, j, v);
            }
        }
        Ok(out)
    }

    /// Valid (unpadded) extent of block-row `bi`.
    pub fn row_extent(&self, bi: usize) -> usize {
        extent(self.rows, self.b, bi)
    }

    pub fn col_extent(&self, bj: usize) -> usize {
        extent(self.cols, self.b, bj)
    }
}

pub(crate) fn extent(logical: usize, b: usize, block: usize) -> usize {
    logical.saturating_sub(block * b).min(b)
}

/// Header-only description of a block-sparse matrix: which blocks exist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseLayout {
    rows: usize,
    cols: usize,
    b: usize,
    headers: Vec<Vec<u32>>,
}

impl SparseLayout {
    pub fn new(rows: usize, cols: usize, b: usize, headers: Vec<Vec<u32>>) -> Result<Self> {
        if b == 0 {
            return Err(Error::invalid("block size must be positive"));
        }
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("matrix dims must be >= 1, got {rows}x{cols}")));
        }
        let grid_rows = div_ceil(rows, b);
        let grid_cols = div_ceil(cols, b);
        if headers.len() != grid_cols {
            return Err(Error::shape(format!("{} headers for {grid_cols} block-columns", headers.len())));
        }
        for (c, h) in headers.iter().enumerate() {
            if h.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Format(format!("header of column {c} is not strictly increasing")));
            }
            if h.last().is_some_and(|&r| r as usize >= grid_rows) {
                return Err(Error::Format(format!("header of column {c} indexes past {grid_rows} block-rows")));
            }
        }
        Ok(SparseLayout { rows, cols, b, headers })
    }

    /// Every block present.
    pub fn full(rows: usize, cols: usize, b: usize) -> Result<Self> {
        let grid_rows = div_ceil(rows.max(1), b.max(1)) as u32;
        let grid_cols = div_ceil(cols.max(1), b.max(1));
        Self::new(rows, cols, b, vec![(0..grid_rows).collect(); grid_cols])
    }

    pub fn from_mask(rows: usize, cols: usize, b: usize, mask: &PruneMask) -> Result<Self> {
        let grid_rows = div_ceil(rows, b.max(1));
        let grid_cols = div_ceil(cols, b.max(1));
        if mask.rows() != grid_rows || mask.cols() != grid_cols {
            return Err(Error::invalid(format!(
                "mask grid {}x{} does not match block grid {grid_rows}x{grid_cols}",
                mask.rows(),
                mask.cols()
            )));
        }
        let headers =
            (0..grid_cols).map(|c| (0..grid_rows).filter(|&r| mask.get(r, c)).map(|r| r as u32).collect()).collect();
        Self::new(rows, cols, b, headers)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn grid_rows(&self) -> usize {
        div_ceil(self.rows, self.b)
    }

    pub fn grid_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn header(&self, c: usize) -> &[u32] {
        &self.headers[c]
    }

    pub fn headers(&self) -> &[Vec<u32>] {
        &self.headers
    }

    pub fn present_blocks(&self) -> usize {
        self.headers.iter().map(Vec::len).sum()
    }

    pub fn to_mask(&self) -> PruneMask {
        let mut m = PruneMask::filled(self.grid_rows(), self.grid_cols(), false);
        for (c, h) in self.headers.iter().enumerate() {
            for &r in h {
                m.set(r as usize, c, true);
            }
        }
        m
    }

    pub fn profile(&self) -> ColumnProfile {
        ColumnProfile::new(self.headers.iter().map(Vec::len).collect(), self.grid_rows())
    }

    pub fn row_extent(&self, bi: usize) -> usize {
        extent(self.rows, self.b, bi)
    }

    pub fn col_extent(&self, bj: usize) -> usize {
        extent(self.cols, self.b, bj)
    }
}

/// Block-sparse weight matrix stored column-major by block-columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseMatrix {
    layout: SparseLayout,
    /// One entry per block-column: its blocks, in header order.
    columns: Vec<Vec<f64>>,
}

impl BlockSparseMatrix {
    pub fn from_parts(layout: SparseLayout, columns: Vec<Vec<f64>>) -> Result<Self> {
        let bb = layout.b * layout.b;
        if columns.len() != layout.grid_cols() {
            return Err(Error::shape(format!(
                "{} column payloads for {} block-columns",
                columns.len(),
                layout.grid_cols()
            )));
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != layout.header(c).len() * bb {
                return Err(Error::shape(format!(
                    "column {c} holds {} scalars, header lists {} blocks",
                    col.len(),
                    layout.header(c).len()
                )));
            }
        }
        Ok(BlockSparseMatrix { layout, columns })
    }

    pub fn layout(&self) -> &SparseLayout {
        &self.layout
    }

    pub fn rows(&self) -> usize {
        self.layout.rows
    }

    pub fn cols(&self) -> usize {
        self.layout.cols
    }

    pub fn block_size(&self) -> usize {
        self.layout.b
    }

    pub fn header(&self, c: usize) -> &[u32] {
        self.layout.header(c)
    }

    /// The `t`-th stored block of block-column `c`.
    pub fn block(&self, c: usize, t: usize) -> &[f64] {
        let bb = self.layout.b * self.layout.b;
        &self.columns[c][t * bb..(t + 1) * bb]
    }

    pub fn column_data(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    /// Scalars physically stored.
    pub fn stored_scalars(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }
}

/// Keeps the blocks of `dense` where `mask` is set.
pub fn compress(dense: &BlockDenseMatrix, mask: &PruneMask) -> Result<BlockSparseMatrix> {
    let layout = SparseLayout::from_mask(dense.rows, dense.cols, dense.b, mask)?;
    let columns = (0..layout.grid_cols())
        .map(|c| layout.header(c).iter().flat_map(|&r| dense.block(r as usize, c).iter().copied()).collect())
        .collect();
    BlockSparseMatrix::from_parts(layout, columns)
}

/// Zero-fills absent blocks.
pub fn decompress(sparse: &BlockSparseMatrix) -> BlockDenseMatrix {
    let mut out =
        BlockDenseMatrix::zeros(sparse.rows(), sparse.cols(), sparse.block_size()).expect("layout dims are valid");
    for c in 0..sparse.layout.grid_cols() {
        for (t, &r) in sparse.header(c).iter().enumerate() {
            out.block_mut(r as usize, c).copy_from_slice(sparse.block(c, t));
        }
    }
    out
}

/// Per-column present-block counts of a block grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnProfile {
    counts: Vec<usize>,
    total_rows: usize,
}

impl ColumnProfile {
    pub fn new(counts: Vec<usize>, total_rows: usize) -> Self {
        ColumnProfile { counts, total_rows }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Retained ratio of column `c`.
    pub fn phi(&self, c: usize) -> f64 {
        if self.total_rows == 0 {
            0.0
        } else {
            self.counts[c] as f64 / self.total_rows as f64
        }
    }
}

/// `acc += x * w` for one `b x b` block pair, inner index ascending.
#[inline]
pub fn block_mac(acc: &mut [f64], x: &[f64], w: &[f64], b: usize) {
    for i in 0..b {
        let xr = &x[i * b..(i + 1) * b];
        let ar = &mut acc[i * b..(i + 1) * b];
        for (t, &xv) in xr.iter().enumerate() {
            let wr = &w[t * b..(t + 1) * b];
            for (a, &wv) in ar.iter_mut().zip(wr) {
                *a += xv * wv;
            }
        }
    }
}

fn check_product(x: &BlockDenseMatrix, inner: usize, b: usize) -> Result<()> {
    if x.b != b {
        return Err(Error::invalid(format!("block sizes differ: {} vs {b}", x.b)));
    }
    if x.cols != inner {
        return Err(Error::shape(format!("left has {} cols, right has {inner} rows", x.cols)));
    }
    Ok(())
}

/// Sparse block-wise matmul `X * W`.
pub fn sbmm_ref(x: &BlockDenseMatrix, w: &BlockSparseMatrix) -> Result<BlockDenseMatrix> {
    check_product(x, w.rows(), w.block_size())?;
    let mut y = BlockDenseMatrix::zeros(x.rows, w.cols(), x.b)?;
    for r in 0..x.grid_rows {
        for c in 0..w.layout.grid_cols() {
            let acc = y.block_mut(r, c);
            for (t, &k) in w.header(c).iter().enumerate() {
                block_mac(acc, x.block(r, k as usize), w.block(c, t), x.b);
            }
        }
    }
    Ok(y)
}

/// Dense block-wise matmul `X * W`, same accumulation order as [`sbmm_ref`].
pub fn dbmm_ref(x: &BlockDenseMatrix, w: &BlockDenseMatrix) -> Result<BlockDenseMatrix> {
    check_product(x, w.rows, w.b)?;
    let mut y = BlockDenseMatrix::zeros(x.rows, w.cols, x.b)?;
    for r in 0..x.grid_rows {
        for c in 0..w.grid_cols {
            let acc = y.block_mut(r, c);
            for k in 0..w.grid_rows {
                block_mac(acc, x.block(r, k), w.block(k, c), x.b);
            }
        }
    }
    Ok(y)
}

//! Element-wise operations.
//!
//! These are shared by the reference model and by the simulator's element-wise
//! module, so both produce identical bits. All of them touch the logical
//! extent only; padding stays zero.

use crate::blockmat::BlockDenseMatrix;
use crate::vitref::LayerNormParams;
use crate::{Error, Result};

pub const LN_EPS: f64 = 1e-6;

fn same_shape(a: &BlockDenseMatrix, b: &BlockDenseMatrix) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() || a.block_size() != b.block_size() {
        return Err(Error::shape(format!(
            "{}x{} (b={}) vs {}x{} (b={})",
            a.rows(),
            a.cols(),
            a.block_size(),
            b.rows(),
            b.cols(),
            b.block_size()
        )));
    }
    Ok(())
}

/// Row-wise layer normalization with `eps` added to the variance.
pub fn layernorm(z: &BlockDenseMatrix, p: &LayerNormParams) -> Result<BlockDenseMatrix> {
    let d = z.cols();
    if p.gain.len() != d || p.bias.len() != d {
        return Err(Error::shape(format!("layer norm of width {} applied to {d} columns", p.gain.len())));
    }
    let mut out = BlockDenseMatrix::zeros(z.rows(), d, z.block_size())?;
    for i in 0..z.rows() {
        let row = z.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (j, x) in row.iter().enumerate() {
            out.set(i, j, (x - mean) * inv * p.gain[j] + p.bias[j]);
        }
    }
    Ok(out)
}

/// Exact-erf GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_matrix(z: &BlockDenseMatrix) -> BlockDenseMatrix {
    let mut out = z.clone();
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            out.set(i, j, gelu(z.get(i, j)));
        }
    }
    out
}

/// `a + b`.
pub fn add(a: &BlockDenseMatrix, b: &BlockDenseMatrix) -> Result<BlockDenseMatrix> {
    same_shape(a, b)?;
    let mut out = a.clone();
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            out.set(i, j, a.get(i, j) + b.get(i, j));
        }
    }
    Ok(out)
}

/// Adds `bias[j]` to every logical row.
pub fn add_bias(z: &mut BlockDenseMatrix, bias: &[f64]) -> Result<()> {
    if bias.len() != z.cols() {
        return Err(Error::shape(format!("bias of {} entries for {} columns", bias.len(), z.cols())));
    }
    for i in 0..z.rows() {
        for (j, &b) in bias.iter().enumerate() {
            z.set(i, j, z.get(i, j) + b);
        }
    }
    Ok(())
}

/// First softmax pass: `exp(s * scale - rowmax)` over the logical columns.
pub fn scale_exp(s: &BlockDenseMatrix, scale: f64) -> BlockDenseMatrix {
    let mut out = BlockDenseMatrix::zeros(s.rows(), s.cols(), s.block_size()).expect("shape already valid");
    for i in 0..s.rows() {
        let t: Vec<f64> = (0..s.cols()).map(|j| s.get(i, j) * scale).collect();
        let max = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (j, v) in t.iter().enumerate() {
            out.set(i, j, (v - max).exp());
        }
    }
    out
}

/// Row sums, inner index ascending.
pub fn row_sums(e: &BlockDenseMatrix) -> Vec<f64> {
    (0..e.rows())
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..e.cols() {
                acc += e.get(i, j);
            }
            acc
        })
        .collect()
}

/// Second softmax pass: divide each logical row by its sum.
pub fn normalize_rows(e: &BlockDenseMatrix, sums: &[f64]) -> BlockDenseMatrix {
    let mut out = e.clone();
    for (i, &s) in sums.iter().enumerate().take(e.rows()) {
        for j in 0..e.cols() {
            out.set(i, j, e.get(i, j) / s);
        }
    }
    out
}

pub fn softmax_scale(head_dim: usize) -> f64 {
    1.0 / (head_dim as f64).sqrt()
}

/// `x * W (+ bias)` for a single row vector against a plain matrix.
pub fn linear_row(x: &[f64], w: &crate::blockmat::Matrix, bias: Option<&[f64]>) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(Error::shape(format!("{} inputs for a {}-row weight", x.len(), w.rows())));
    }
    Ok((0..w.cols())
        .map(|j| {
            let mut acc = 0.0;
            for (k, &xv) in x.iter().enumerate() {
                acc += xv * w.get(k, j);
            }
            acc + bias.map_or(0.0, |b| b[j])
        })
        .collect())
}

//! `VSBM` binary tensor container. Byte layout is described in
//! `docs/container.md`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::blockmat::{partition_dense, BlockDenseMatrix, BlockSparseMatrix, Matrix, SparseLayout};
use crate::staticprune::{EncoderScores, NeuronScoreVector, ScoreMatrix};
use crate::vitref::{
    DenseEncoder, DenseModel, EmbeddingWeights, EncoderBiases, EncoderWeights, LayerNormParams, Model, ModelConfig,
};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VSBM";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const LAYOUT_DENSE: u8 = 0;
const LAYOUT_SPARSE: u8 = 1;
const LAYOUT_HEADERS: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Dense(BlockDenseMatrix),
    Sparse(BlockSparseMatrix),
    /// Sparsity structure only, e.g. an exported mask.
    Layout(SparseLayout),
}

/// Named tensors, kept sorted by name so output bytes are deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::invalid("tensor name must have 1 to 65535 bytes"));
        }
        if self.tensors.insert(name.clone(), t).is_some() {
            return Err(Error::invalid(format!("duplicate tensor {name}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
    }

    pub fn dense(&self, name: &str) -> Result<&BlockDenseMatrix> {
        match self.require(name)? {
            Tensor::Dense(d) => Ok(d),
            _ => Err(Error::Format(format!("tensor {name} is not dense"))),
        }
    }

    pub fn sparse(&self, name: &str) -> Result<&BlockSparseMatrix> {
        match self.require(name)? {
            Tensor::Sparse(s) => Ok(s),
            _ => Err(Error::Format(format!("tensor {name} is not block-sparse"))),
        }
    }

    pub fn layout(&self, name: &str) -> Result<&SparseLayout> {
        match self.require(name)? {
            Tensor::Layout(l) => Ok(l),
            Tensor::Sparse(s) => Ok(s.layout()),
            _ => Err(Error::Format(format!("tensor {name} has no sparse layout"))),
        }
    }

    /// Plain matrix, stored dense with `b = 1`.
    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &Matrix) -> Result<()> {
        self.insert(name, Tensor::Dense(partition_dense(m, 1)?))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        Ok(self.dense(name)?.to_matrix())
    }

    /// Vector as a `1 x n` matrix.
    pub fn insert_vector(&mut self, name: impl Into<String>, v: &[f64]) -> Result<()> {
        self.insert_matrix(name, &Matrix::new(1, v.len(), v.to_vec())?)
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.matrix(name)?;
        if m.rows() != 1 {
            return Err(Error::Format(format!("tensor {name} is not a vector")));
        }
        Ok(m.data().to_vec())
    }

    fn opt_vector(&self, name: &str) -> Result<Option<Vec<f64>>> {
        if self.contains(name) {
            self.vector(name).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (code, rows, cols, b) = match t {
                Tensor::Dense(d) => (LAYOUT_DENSE, d.rows(), d.cols(), d.block_size()),
                Tensor::Sparse(s) => (LAYOUT_SPARSE, s.rows(), s.cols(), s.block_size()),
                Tensor::Layout(l) => (LAYOUT_HEADERS, l.rows(), l.cols(), l.block_size()),
            };
            out.extend_from_slice(&[DTYPE_F64, code, 2]);
            out.extend_from_slice(&(rows as u64).to_le_bytes());
            out.extend_from_slice(&(cols as u64).to_le_bytes());
            out.extend_from_slice(&(b as u32).to_le_bytes());
            let headers = match t {
                Tensor::Dense(_) => None,
                Tensor::Sparse(s) => Some(s.layout().headers()),
                Tensor::Layout(l) => Some(l.headers()),
            };
            for h in headers.into_iter().flatten() {
                out.extend_from_slice(&(h.len() as u32).to_le_bytes());
                h.iter().for_each(|r| out.extend_from_slice(&r.to_le_bytes()));
            }
            let payload: Vec<f64> = match t {
                Tensor::Dense(d) => d.data().to_vec(),
                Tensor::Sparse(s) => (0..s.layout().grid_cols()).flat_map(|c| s.column_data(c).to_vec()).collect(),
                Tensor::Layout(_) => Vec::new(),
            };
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            payload.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a VSBM file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut c = Container::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let ctx = |e: Error| Error::Format(format!("tensor {name}: {e}"));
            let (dtype, code, ndim) = (r.u8()?, r.u8()?, r.u8()?);
            if dtype != DTYPE_F64 {
                return Err(Error::Format(format!("tensor {name}: unknown dtype {dtype}")));
            }
            if ndim != 2 {
                return Err(Error::Format(format!("tensor {name}: expected 2 dims, got {ndim}")));
            }
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let b = r.u32()? as usize;
            if b == 0 || rows == 0 || cols == 0 {
                return Err(Error::Format(format!("tensor {name}: zero dimension or block size")));
            }
            let headers = if code == LAYOUT_SPARSE || code == LAYOUT_HEADERS {
                let gc = cols.div_ceil(b);
                let mut hs = Vec::with_capacity(gc.min(r.remaining() / 4));
                for _ in 0..gc {
                    let n = r.u32()? as usize;
                    if n > r.remaining() / 4 {
                        return Err(Error::Format(format!("tensor {name}: truncated header")));
                    }
                    hs.push((0..n).map(|_| r.u32()).collect::<Result<Vec<u32>>>()?);
                }
                Some(hs)
            } else {
                None
            };
            let n = r.u64()? as usize;
            if n > r.remaining() / 8 {
                return Err(Error::Format(format!("tensor {name}: payload of {n} values runs past the end")));
            }
            let payload: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
            let t = match (code, headers) {
                (LAYOUT_DENSE, _) => {
                    Tensor::Dense(BlockDenseMatrix::from_block_data(rows, cols, b, payload).map_err(ctx)?)
                }
                (LAYOUT_SPARSE, Some(hs)) => {
                    let layout = SparseLayout::new(rows, cols, b, hs).map_err(ctx)?;
                    let bb = b * b;
                    let want: usize = layout.present_blocks() * bb;
                    if payload.len() != want {
                        return Err(Error::Format(format!(
                            "tensor {name}: {} values for {want} stored scalars",
                            payload.len()
                        )));
                    }
                    let mut it = payload.into_iter();
                    let columns = (0..layout.grid_cols())
                        .map(|c| it.by_ref().take(layout.header(c).len() * bb).collect())
                        .collect();
                    Tensor::Sparse(BlockSparseMatrix::from_parts(layout, columns).map_err(ctx)?)
                }
                (LAYOUT_HEADERS, Some(hs)) => {
                    if !payload.is_empty() {
                        return Err(Error::Format(format!("tensor {name}: header-only record carries a payload")));
                    }
                    Tensor::Layout(SparseLayout::new(rows, cols, b, hs).map_err(ctx)?)
                }
                (other, _) => return Err(Error::Format(format!("tensor {name}: unknown layout code {other}"))),
            };
            c.insert(name, t)?;
        }
        if r.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn put_embedding(c: &mut Container, e: &EmbeddingWeights) -> Result<()> {
    c.insert_matrix("embed.patch", &e.patch)?;
    if let Some(b) = &e.patch_bias {
        c.insert_vector("embed.patch_bias", b)?;
    }
    c.insert_vector("embed.cls", &e.cls)?;
    c.insert_matrix("embed.pos", &e.pos)?;
    put_ln(c, "embed.norm", &e.norm)?;
    c.insert_matrix("embed.head", &e.head)?;
    if let Some(b) = &e.head_bias {
        c.insert_vector("embed.head_bias", b)?;
    }
    Ok(())
}

fn get_embedding(c: &Container) -> Result<EmbeddingWeights> {
    Ok(EmbeddingWeights {
        patch: c.matrix("embed.patch")?,
        patch_bias: c.opt_vector("embed.patch_bias")?,
        cls: c.vector("embed.cls")?,
        pos: c.matrix("embed.pos")?,
        norm: get_ln(c, "embed.norm")?,
        head: c.matrix("embed.head")?,
        head_bias: c.opt_vector("embed.head_bias")?,
    })
}

fn put_ln(c: &mut Container, prefix: &str, p: &LayerNormParams) -> Result<()> {
    c.insert_vector(format!("{prefix}.gain"), &p.gain)?;
    c.insert_vector(format!("{prefix}.bias"), &p.bias)
}

fn get_ln(c: &Container, prefix: &str) -> Result<LayerNormParams> {
    Ok(LayerNormParams { gain: c.vector(&format!("{prefix}.gain"))?, bias: c.vector(&format!("{prefix}.bias"))? })
}

const BIAS_NAMES: [&str; 6] = ["bq", "bk", "bv", "bproj", "bint", "bout"];

fn put_common(
    c: &mut Container,
    l: usize,
    biases: &EncoderBiases,
    ln1: &LayerNormParams,
    ln2: &LayerNormParams,
) -> Result<()> {
    let all = [&biases.q, &biases.k, &biases.v, &biases.proj, &biases.int, &biases.out];
    for (name, b) in BIAS_NAMES.iter().zip(all) {
        if let Some(b) = b {
            c.insert_vector(format!("enc{l}.{name}"), b)?;
        }
    }
    put_ln(c, &format!("enc{l}.ln1"), ln1)?;
    put_ln(c, &format!("enc{l}.ln2"), ln2)
}

fn get_biases(c: &Container, l: usize) -> Result<EncoderBiases> {
    let g = |n: &str| c.opt_vector(&format!("enc{l}.{n}"));
    Ok(EncoderBiases { q: g("bq")?, k: g("bk")?, v: g("bv")?, proj: g("bproj")?, int: g("bint")?, out: g("bout")? })
}

/// Unpruned weights with plain matrices.
pub fn dense_model_to_container(m: &DenseModel) -> Result<Container> {
    let mut c = Container::new();
    put_embedding(&mut c, &m.embedding)?;
    for (l, e) in m.encoders.iter().enumerate() {
        for (name, w) in
            [("wq", &e.wq), ("wk", &e.wk), ("wv", &e.wv), ("wproj", &e.wproj), ("wint", &e.wint), ("wout", &e.wout)]
        {
            c.insert_matrix(format!("enc{l}.{name}"), w)?;
        }
        put_common(&mut c, l, &e.biases, &e.ln1, &e.ln2)?;
    }
    Ok(c)
}

pub fn dense_model_from_container(cfg: &ModelConfig, c: &Container) -> Result<DenseModel> {
    cfg.validate()?;
    let embedding = get_embedding(c)?;
    embedding.check(cfg)?;
    let encoders = (0..cfg.layers)
        .map(|l| {
            let m = |n: &str| c.matrix(&format!("enc{l}.{n}"));
            Ok(DenseEncoder {
                heads: cfg.heads,
                head_dim: cfg.head_dim,
                wq: m("wq")?,
                wk: m("wk")?,
                wv: m("wv")?,
                wproj: m("wproj")?,
                wint: m("wint")?,
                wout: m("wout")?,
                biases: get_biases(c, l)?,
                ln1: get_ln(c, &format!("enc{l}.ln1"))?,
                ln2: get_ln(c, &format!("enc{l}.ln2"))?,
            })
        })
        .collect::<Result<_>>()?;
    let model = DenseModel { config: cfg.clone(), embedding, encoders };
    model.to_model()?;
    Ok(model)
}

/// Pruned weights: block-sparse attention, compacted dense MLP.
pub fn model_to_container(m: &Model) -> Result<Container> {
    let mut c = Container::new();
    put_embedding(&mut c, &m.embedding)?;
    for (l, e) in m.encoders.iter().enumerate() {
        for (name, w) in [("wq", &e.wq), ("wk", &e.wk), ("wv", &e.wv), ("wproj", &e.wproj)] {
            c.insert(format!("enc{l}.{name}"), Tensor::Sparse(w.clone()))?;
        }
        c.insert(format!("enc{l}.wint"), Tensor::Dense(e.wint.clone()))?;
        c.insert(format!("enc{l}.wout"), Tensor::Dense(e.wout.clone()))?;
        put_common(&mut c, l, &e.biases, &e.ln1, &e.ln2)?;
    }
    Ok(c)
}

pub fn model_from_container(cfg: &ModelConfig, c: &Container) -> Result<Model> {
    cfg.validate()?;
    let embedding = get_embedding(c)?;
    let encoders = (0..cfg.layers)
        .map(|l| {
            let s = |n: &str| c.sparse(&format!("enc{l}.{n}")).cloned();
            let d = |n: &str| c.dense(&format!("enc{l}.{n}")).cloned();
            EncoderWeights::new(
                cfg.heads,
                cfg.head_dim,
                s("wq")?,
                s("wk")?,
                s("wv")?,
                s("wproj")?,
                d("wint")?,
                d("wout")?,
                get_biases(c, l)?,
                get_ln(c, &format!("enc{l}.ln1"))?,
                get_ln(c, &format!("enc{l}.ln2"))?,
            )
        })
        .collect::<Result<_>>()?;
    Model::new(cfg.clone(), embedding, encoders)
}

/// Block scores as `m x n` dense tensors with `b = 1`, neuron scores as
/// vectors.
pub fn put_scores(c: &mut Container, scores: &[EncoderScores]) -> Result<()> {
    for (l, s) in scores.iter().enumerate() {
        for (name, m) in [("sq", &s.q), ("sk", &s.k), ("sv", &s.v), ("sproj", &s.proj)] {
            c.insert_matrix(format!("enc{l}.{name}"), &Matrix::new(m.rows(), m.cols(), m.values().to_vec())?)?;
        }
        c.insert_vector(format!("enc{l}.sint"), s.int.values())?;
        c.insert_vector(format!("enc{l}.sout"), s.out.values())?;
    }
    Ok(())
}

pub fn get_scores(c: &Container, layers: usize) -> Result<Vec<EncoderScores>> {
    (0..layers)
        .map(|l| {
            let grid = |n: &str| -> Result<ScoreMatrix> {
                let m = c.matrix(&format!("enc{l}.{n}"))?;
                ScoreMatrix::new(m.rows(), m.cols(), m.data().to_vec())
            };
            let vec = |n: &str| NeuronScoreVector::new(c.vector(&format!("enc{l}.{n}"))?);
            Ok(EncoderScores {
                q: grid("sq")?,
                k: grid("sk")?,
                v: grid("sv")?,
                proj: grid("sproj")?,
                int: vec("sint")?,
                out: vec("sout")?,
            })
        })
        .collect()
}

pub fn has_scores(c: &Container) -> bool {
    c.contains("enc0.sq")
}

use serde::{Deserialize, Serialize};

use crate::blockmat::{compress, partition_dense, BlockDenseMatrix, BlockSparseMatrix, Matrix, SparseLayout};
use crate::staticprune::PruneMask;
use crate::vitref::ModelConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn identity(dim: usize) -> Self {
        LayerNormParams { gain: vec![1.0; dim], bias: vec![0.0; dim] }
    }
}

/// Optional bias vectors of one encoder.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EncoderBiases {
    pub q: Option<Vec<f64>>,
    pub k: Option<Vec<f64>>,
    pub v: Option<Vec<f64>>,
    pub proj: Option<Vec<f64>>,
    pub int: Option<Vec<f64>>,
    pub out: Option<Vec<f64>>,
}

impl EncoderBiases {
    fn check(&self, qkv: usize, dim: usize, mlp: usize) -> Result<()> {
        let want = [
            ("q", &self.q, qkv),
            ("k", &self.k, qkv),
            ("v", &self.v, qkv),
            ("proj", &self.proj, dim),
            ("int", &self.int, mlp),
            ("out", &self.out, dim),
        ];
        for (name, b, len) in want {
            if let Some(b) = b {
                if b.len() != len {
                    return Err(Error::shape(format!("{name} bias has {} entries, expected {len}", b.len())));
                }
            }
        }
        Ok(())
    }
}

/// Unpruned weights of one encoder in plain row-major form.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEncoder {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wproj: Matrix,
    pub wint: Matrix,
    pub wout: Matrix,
    pub biases: EncoderBiases,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

/// Pruned encoder: block-sparse attention weights, compacted MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: BlockSparseMatrix,
    pub wk: BlockSparseMatrix,
    pub wv: BlockSparseMatrix,
    pub wproj: BlockSparseMatrix,
    pub wint: BlockDenseMatrix,
    pub wout: BlockDenseMatrix,
    pub biases: EncoderBiases,
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
}

impl EncoderWeights {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        heads: usize,
        head_dim: usize,
        wq: BlockSparseMatrix,
        wk: BlockSparseMatrix,
        wv: BlockSparseMatrix,
        wproj: BlockSparseMatrix,
        wint: BlockDenseMatrix,
        wout: BlockDenseMatrix,
        biases: EncoderBiases,
        ln1: LayerNormParams,
        ln2: LayerNormParams,
    ) -> Result<Self> {
        let w = EncoderWeights { heads, head_dim, wq, wk, wv, wproj, wint, wout, biases, ln1, ln2 };
        w.layout()?;
        Ok(w)
    }

    /// All blocks kept.
    pub fn from_dense(d: &DenseEncoder, b: usize) -> Result<Self> {
        let full = |m: &Matrix| -> Result<BlockSparseMatrix> {
            let p = partition_dense(m, b)?;
            compress(&p, &PruneMask::filled(p.grid_rows(), p.grid_cols(), true))
        };
        Self::new(
            d.heads,
            d.head_dim,
            full(&d.wq)?,
            full(&d.wk)?,
            full(&d.wv)?,
            full(&d.wproj)?,
            partition_dense(&d.wint, b)?,
            partition_dense(&d.wout, b)?,
            d.biases.clone(),
            d.ln1.clone(),
            d.ln2.clone(),
        )
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn block_size(&self) -> usize {
        self.wq.block_size()
    }

    pub fn mlp_dim(&self) -> usize {
        self.wint.cols()
    }

    /// Shape and sparsity structure, checked for consistency.
    pub fn layout(&self) -> Result<EncoderLayout> {
        let bi = &self.biases;
        let biases = [&bi.q, &bi.k, &bi.v, &bi.proj, &bi.int, &bi.out].map(Option::is_some);
        let layout = EncoderLayout {
            heads: self.heads,
            head_dim: self.head_dim,
            dim: self.dim(),
            mlp_dim: self.mlp_dim(),
            b: self.block_size(),
            q: self.wq.layout().clone(),
            k: self.wk.layout().clone(),
            v: self.wv.layout().clone(),
            proj: self.wproj.layout().clone(),
            biases,
        };
        layout.validate()?;
        let b = layout.b;
        if self.wint.block_size() != b || self.wout.block_size() != b {
            return Err(Error::invalid("MLP block size differs from attention block size"));
        }
        if self.wint.rows() != layout.dim || self.wout.rows() != layout.mlp_dim || self.wout.cols() != layout.dim {
            return Err(Error::shape(format!(
                "MLP shapes {}x{} / {}x{} do not fit D = {}",
                self.wint.rows(),
                self.wint.cols(),
                self.wout.rows(),
                self.wout.cols(),
                layout.dim
            )));
        }
        self.biases.check(self.heads * self.head_dim, layout.dim, layout.mlp_dim)?;
        for ln in [&self.ln1, &self.ln2] {
            if ln.gain.len() != layout.dim || ln.bias.len() != layout.dim {
                return Err(Error::shape("layer norm parameters do not match D"));
            }
        }
        Ok(layout)
    }

    /// Heads that still have weights; see [`EncoderLayout::active_heads`].
    pub fn active_heads(&self) -> Vec<bool> {
        self.layout().map(|l| l.active_heads()).unwrap_or_else(|_| vec![true; self.heads])
    }
}

/// Structure of a pruned encoder without any weight values; enough to time
/// it on the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayout {
    pub heads: usize,
    pub head_dim: usize,
    pub dim: usize,
    /// Retained MLP neurons.
    pub mlp_dim: usize,
    pub b: usize,
    pub q: SparseLayout,
    pub k: SparseLayout,
    pub v: SparseLayout,
    pub proj: SparseLayout,
    /// Which of the q, k, v, proj, int, out bias vectors exist.
    #[serde(default)]
    pub biases: [bool; 6],
}

impl EncoderLayout {
    pub fn validate(&self) -> Result<()> {
        let b = self.b;
        if self.heads == 0 || self.head_dim == 0 || b == 0 {
            return Err(Error::invalid("heads, head_dim and block size must be positive"));
        }
        if !self.head_dim.is_multiple_of(b) {
            return Err(Error::invalid(format!("head_dim {} is not a multiple of block size {b}", self.head_dim)));
        }
        let width = self.heads * self.head_dim;
        for (name, l) in [("W_q", &self.q), ("W_k", &self.k), ("W_v", &self.v)] {
            if l.block_size() != b || l.rows() != self.dim || l.cols() != width {
                return Err(Error::shape(format!(
                    "{name} is {}x{} (b={}), expected {}x{width} (b={b})",
                    l.rows(),
                    l.cols(),
                    l.block_size(),
                    self.dim
                )));
            }
        }
        let p = &self.proj;
        if p.block_size() != b || p.rows() != width || p.cols() != self.dim {
            return Err(Error::shape(format!("W_proj is {}x{}, expected {width}x{}", p.rows(), p.cols(), self.dim)));
        }
        if self.mlp_dim == 0 {
            return Err(Error::invalid("MLP keeps no neurons"));
        }
        Ok(())
    }

    /// Block-columns (of W_q/W_k/W_v) or block-rows (of W_proj) per head.
    pub fn head_blocks(&self) -> usize {
        self.head_dim / self.b
    }

    /// A head is active unless all of its blocks in one of W_q, W_k, W_v
    /// (columns) or W_proj (rows) are gone.
    pub fn active_heads(&self) -> Vec<bool> {
        let hb = self.head_blocks();
        (0..self.heads)
            .map(|h| {
                let cols = h * hb..(h + 1) * hb;
                let p_live = [&self.q, &self.k, &self.v].iter().all(|l| cols.clone().any(|c| !l.header(c).is_empty()));
                let proj_live = self.proj.headers().iter().any(|hd| hd.iter().any(|&r| cols.contains(&(r as usize))));
                p_live && proj_live
            })
            .collect()
    }

    pub fn heads_kept(&self) -> usize {
        self.active_heads().iter().filter(|&&a| a).count()
    }
}

/// Patch projection, class token, position embedding, final norm and
/// classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWeights {
    /// `P^2 C x D`.
    pub patch: Matrix,
    pub patch_bias: Option<Vec<f64>>,
    pub cls: Vec<f64>,
    /// `N x D`.
    pub pos: Matrix,
    pub norm: LayerNormParams,
    /// `D x classes`.
    pub head: Matrix,
    pub head_bias: Option<Vec<f64>>,
}

impl EmbeddingWeights {
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let d = cfg.dim;
        let ok = self.patch.rows() == cfg.patch_len()
            && self.patch.cols() == d
            && self.cls.len() == d
            && self.pos.rows() == cfg.tokens()
            && self.pos.cols() == d
            && self.norm.gain.len() == d
            && self.norm.bias.len() == d
            && self.head.rows() == d
            && self.head.cols() == cfg.classes
            && self.patch_bias.as_ref().is_none_or(|b| b.len() == d)
            && self.head_bias.as_ref().is_none_or(|b| b.len() == cfg.classes);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("embedding or classifier weights do not match the model config"))
        }
    }
}

/// Image in channel-major layout: `data[(c * H + y) * W + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Image {
            channels: cfg.channels,
            height: cfg.image_height,
            width: cfg.image_width,
            data: vec![0.0; cfg.channels * cfg.image_height * cfg.image_width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    pub config: ModelConfig,
    pub embedding: EmbeddingWeights,
    pub encoders: Vec<DenseEncoder>,
}

impl DenseModel {
    /// Unpruned model in the block formats.
    pub fn to_model(&self) -> Result<Model> {
        let encoders = self
            .encoders
            .iter()
            .map(|e| EncoderWeights::from_dense(e, self.config.block))
            .collect::<Result<Vec<_>>>()?;
        Model::new(self.config.clone(), self.embedding.clone(), encoders)
    }
}

/// A model ready for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embedding: EmbeddingWeights,
    pub encoders: Vec<EncoderWeights>,
}

impl Model {
    pub fn new(config: ModelConfig, embedding: EmbeddingWeights, encoders: Vec<EncoderWeights>) -> Result<Self> {
        config.validate()?;
        embedding.check(&config)?;
        if encoders.len() != config.layers {
            return Err(Error::shape(format!("{} encoders for {} layers", encoders.len(), config.layers)));
        }
        for e in &encoders {
            let l = e.layout()?;
            if l.dim != config.dim || l.heads != config.heads || l.head_dim != config.head_dim || l.b != config.block {
                return Err(Error::shape("encoder does not match the model config"));
            }
        }
        Ok(Model { config, embedding, encoders })
    }

    pub fn layouts(&self) -> Result<Vec<EncoderLayout>> {
        self.encoders.iter().map(EncoderWeights::layout).collect()
    }
}

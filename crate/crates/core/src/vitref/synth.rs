//! Seeded synthetic weights, images and pruning scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blockmat::Matrix;
use crate::staticprune::{EncoderScores, NeuronScoreVector, ScoreMatrix};
use crate::vitref::{DenseEncoder, DenseModel, EmbeddingWeights, EncoderBiases, Image, LayerNormParams, ModelConfig};
use crate::Result;

const INIT_RANGE: f64 = 0.02;

struct Gen(ChaCha8Rng);

impl Gen {
    fn new(seed: u64) -> Self {
        Gen(ChaCha8Rng::seed_from_u64(seed))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.0.gen_range(-INIT_RANGE..=INIT_RANGE))
    }

    fn vector(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.0.gen_range(-INIT_RANGE..=INIT_RANGE)).collect()
    }

    fn bias(&mut self, on: bool, len: usize) -> Option<Vec<f64>> {
        on.then(|| self.vector(len))
    }
}

/// Uniform `[-0.02, 0.02]` weights, unit layer-norm gains, zero LN biases.
pub fn synthetic_dense_model(cfg: &ModelConfig, seed: u64) -> Result<DenseModel> {
    cfg.validate()?;
    let mut g = Gen::new(seed);
    let d = cfg.dim;
    let width = cfg.heads * cfg.head_dim;
    let on = cfg.biases;
    let embedding = EmbeddingWeights {
        patch: g.matrix(cfg.patch_len(), d),
        patch_bias: g.bias(on, d),
        cls: g.vector(d),
        pos: g.matrix(cfg.tokens(), d),
        norm: LayerNormParams::identity(d),
        head: g.matrix(d, cfg.classes),
        head_bias: g.bias(on, cfg.classes),
    };
    let encoders = (0..cfg.layers)
        .map(|_| DenseEncoder {
            heads: cfg.heads,
            head_dim: cfg.head_dim,
            wq: g.matrix(d, width),
            wk: g.matrix(d, width),
            wv: g.matrix(d, width),
            wproj: g.matrix(width, d),
            wint: g.matrix(d, cfg.mlp_dim),
            wout: g.matrix(cfg.mlp_dim, d),
            biases: EncoderBiases {
                q: g.bias(on, width),
                k: g.bias(on, width),
                v: g.bias(on, width),
                proj: g.bias(on, d),
                int: g.bias(on, cfg.mlp_dim),
                out: g.bias(on, d),
            },
            ln1: LayerNormParams::identity(d),
            ln2: LayerNormParams::identity(d),
        })
        .collect();
    Ok(DenseModel { config: cfg.clone(), embedding, encoders })
}

/// Pixels uniform in `[0, 1)`.
pub fn random_image(cfg: &ModelConfig, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = cfg.channels * cfg.image_height * cfg.image_width;
    Image {
        channels: cfg.channels,
        height: cfg.image_height,
        width: cfg.image_width,
        data: (0..len).map(|_| rng.gen_range(0.0..1.0)).collect(),
    }
}

fn grids(cfg: &ModelConfig) -> ((usize, usize), (usize, usize)) {
    let b = cfg.block;
    let width = cfg.heads * cfg.head_dim;
    ((cfg.dim.div_ceil(b), width.div_ceil(b)), (width.div_ceil(b), cfg.dim.div_ceil(b)))
}

/// Scores with a per-head offset plus uniform noise, so low-offset heads
/// lose all their blocks at moderate top-k rates.
pub fn synthetic_scores(cfg: &ModelConfig, seed: u64) -> Result<Vec<EncoderScores>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ((pr, pc), (jr, jc)) = grids(cfg);
    let hb = cfg.head_dim / cfg.block;
    (0..cfg.layers)
        .map(|_| {
            let offsets: Vec<f64> = (0..cfg.heads).map(|_| rng.gen_range(0.0..2.0)).collect();
            let mut by_col =
                |rows, cols| ScoreMatrix::from_fn(rows, cols, |_, c| offsets[c / hb] + rng.gen_range(0.0..1.0));
            let q = by_col(pr, pc)?;
            let k = by_col(pr, pc)?;
            let v = by_col(pr, pc)?;
            let proj = ScoreMatrix::from_fn(jr, jc, |r, _| offsets[r / hb] + rng.gen_range(0.0..1.0))?;
            let int = NeuronScoreVector::new((0..cfg.mlp_dim).map(|_| rng.gen_range(0.0..1.0)).collect())?;
            let out = NeuronScoreVector::new((0..cfg.mlp_dim).map(|_| rng.gen_range(0.0..1.0)).collect())?;
            Ok(EncoderScores { q, k, v, proj, int, out })
        })
        .collect()
}

/// Scores that make top-k keep the same number of blocks in every
/// block-column: block `(i, j)` scores `-((i + j) mod rows)`. Exact when
/// `r_b * rows` is a whole number.
pub fn staggered_scores(cfg: &ModelConfig) -> Result<Vec<EncoderScores>> {
    cfg.validate()?;
    let ((pr, pc), (jr, jc)) = grids(cfg);
    let stagger = |rows: usize, cols| ScoreMatrix::from_fn(rows, cols, |i, j| -(((i + j) % rows) as f64));
    let neurons = NeuronScoreVector::new((0..cfg.mlp_dim).map(|i| -(i as f64)).collect())?;
    (0..cfg.layers)
        .map(|_| {
            Ok(EncoderScores {
                q: stagger(pr, pc)?,
                k: stagger(pr, pc)?,
                v: stagger(pr, pc)?,
                proj: stagger(jr, jc)?,
                int: neurons.clone(),
                out: neurons.clone(),
            })
        })
        .collect()
}

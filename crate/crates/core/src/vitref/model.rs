use crate::blockmat::{dbmm_ref, sbmm_ref, BlockDenseMatrix};
use crate::tokenprune::{importance_scores, select_and_fuse, TokenMatrix, TokenRouting};
use crate::vitref::ops::{
    self, add, add_bias, gelu_matrix, layernorm, linear_row, normalize_rows, row_sums, scale_exp,
};
use crate::vitref::{EmbeddingWeights, EncoderWeights, Image, Model, ModelConfig};
use crate::{Error, Result};

/// `Z_0 = [x_CLS; patches * W_patch] + E_pos`.
pub fn embed(image: &Image, emb: &EmbeddingWeights, cfg: &ModelConfig) -> Result<TokenMatrix> {
    if image.channels != cfg.channels || image.height != cfg.image_height || image.width != cfg.image_width {
        return Err(Error::invalid(format!(
            "image is {}x{}x{}, model expects {}x{}x{}",
            image.channels, image.height, image.width, cfg.channels, cfg.image_height, cfg.image_width
        )));
    }
    emb.check(cfg)?;
    let p = cfg.patch;
    let per_row = cfg.image_width / p;
    let n = cfg.tokens();
    let mut rows = Vec::with_capacity(n);
    rows.push(emb.cls.clone());
    for idx in 0..n - 1 {
        let (py, px) = (idx / per_row, idx % per_row);
        let mut flat = Vec::with_capacity(cfg.patch_len());
        for c in 0..cfg.channels {
            for y in 0..p {
                for x in 0..p {
                    flat.push(image.get(c, py * p + y, px * p + x));
                }
            }
        }
        rows.push(linear_row(&flat, &emb.patch, emb.patch_bias.as_deref())?);
    }
    for (i, r) in rows.iter_mut().enumerate() {
        for (j, v) in r.iter_mut().enumerate() {
            *v += emb.pos.get(i, j);
        }
    }
    BlockDenseMatrix::from_rows(&rows, cfg.dim, cfg.block)
}

/// Attention output plus the attention matrices of the active heads.
#[derive(Debug, Clone)]
pub struct MsaOutput {
    pub out: BlockDenseMatrix,
    /// `(head, A_h)` for each active head, in head order.
    pub attention: Vec<(usize, BlockDenseMatrix)>,
}

/// Multi-head self-attention on an already normalized input.
pub fn msa_forward(z: &TokenMatrix, w: &EncoderWeights) -> Result<MsaOutput> {
    let layout = w.layout()?;
    let hb = layout.head_blocks();
    let dh = w.head_dim;
    let project = |m, bias: &Option<Vec<f64>>| -> Result<BlockDenseMatrix> {
        let mut y = sbmm_ref(z, m)?;
        if let Some(b) = bias {
            add_bias(&mut y, b)?;
        }
        Ok(y)
    };
    let q = project(&w.wq, &w.biases.q)?;
    let k = project(&w.wk, &w.biases.k)?;
    let v = project(&w.wv, &w.biases.v)?;
    let scale = ops::softmax_scale(dh);

    let mut concat = BlockDenseMatrix::zeros(z.rows(), w.heads * dh, z.block_size())?;
    let mut attention = Vec::new();
    for (h, active) in layout.active_heads().into_iter().enumerate() {
        if !active {
            continue;
        }
        let qh = q.block_columns(h * hb, hb, dh)?;
        let kt = k.block_columns(h * hb, hb, dh)?.transpose();
        let vh = v.block_columns(h * hb, hb, dh)?;
        let s = dbmm_ref(&qh, &kt)?;
        let e = scale_exp(&s, scale);
        let a = normalize_rows(&e, &row_sums(&e));
        let sa = dbmm_ref(&a, &vh)?;
        concat.set_block_columns(h * hb, &sa)?;
        attention.push((h, a));
    }
    let out = project_out(&concat, w)?;
    Ok(MsaOutput { out, attention })
}

fn project_out(concat: &BlockDenseMatrix, w: &EncoderWeights) -> Result<BlockDenseMatrix> {
    let mut out = sbmm_ref(concat, &w.wproj)?;
    if let Some(b) = &w.biases.proj {
        add_bias(&mut out, b)?;
    }
    Ok(out)
}

/// `GELU(Z W_int) W_out` on an already normalized input.
pub fn mlp_forward(z: &TokenMatrix, w: &EncoderWeights) -> Result<BlockDenseMatrix> {
    let mut h = dbmm_ref(z, &w.wint)?;
    if let Some(b) = &w.biases.int {
        add_bias(&mut h, b)?;
    }
    let g = gelu_matrix(&h);
    let mut out = dbmm_ref(&g, &w.wout)?;
    if let Some(b) = &w.biases.out {
        add_bias(&mut out, b)?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub z: TokenMatrix,
    /// Present when tokens were dropped.
    pub routing: Option<TokenRouting>,
    pub attention: Vec<(usize, BlockDenseMatrix)>,
}

/// One encoder. With `keep_rate` set, tokens are dropped between the
/// attention residual and the MLP. A layer whose heads were all pruned has
/// no attention to rank tokens by and keeps every token.
pub fn encoder_forward(z: &TokenMatrix, w: &EncoderWeights, keep_rate: Option<f64>) -> Result<EncoderOutput> {
    let msa = msa_forward(&layernorm(z, &w.ln1)?, w)?;
    let mut z1 = add(&msa.out, z)?;
    let mut routing = None;
    if let Some(r) = keep_rate {
        if z1.rows() >= 2 && !msa.attention.is_empty() {
            let heads: Vec<&BlockDenseMatrix> = msa.attention.iter().map(|(_, a)| a).collect();
            let scores = importance_scores(&heads)?;
            let (pruned, rt) = select_and_fuse(&z1, &scores, r)?;
            if rt.dropped() > 0 {
                routing = Some(rt);
            }
            z1 = pruned;
        }
    }
    let mlp = mlp_forward(&layernorm(&z1, &w.ln2)?, w)?;
    Ok(EncoderOutput { z: add(&mlp, &z1)?, routing, attention: msa.attention })
}

/// Logits plus the token count entering each encoder and the final count.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: Vec<f64>,
    pub token_counts: Vec<usize>,
}

/// Final norm, class-token row and classifier.
pub fn classify(z: &TokenMatrix, emb: &EmbeddingWeights) -> Result<Vec<f64>> {
    let zn = layernorm(z, &emb.norm)?;
    linear_row(&zn.row(0), &emb.head, emb.head_bias.as_deref())
}

pub fn model_forward(image: &Image, model: &Model) -> Result<Forward> {
    let cfg = &model.config;
    let mut z = embed(image, &model.embedding, cfg)?;
    let mut token_counts = Vec::with_capacity(cfg.layers + 1);
    for (l, w) in model.encoders.iter().enumerate() {
        token_counts.push(z.rows());
        z = encoder_forward(&z, w, cfg.tdm.rate_at(l + 1))?.z;
    }
    token_counts.push(z.rows());
    Ok(Forward { logits: classify(&z, &model.embedding)?, token_counts })
}

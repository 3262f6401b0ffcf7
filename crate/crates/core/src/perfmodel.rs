//! Closed-form complexity, cycle and resource models.

use serde::{Deserialize, Serialize};

use crate::accelsim::{tdhm_cycles, HardwareConfig, StageCycles};
use crate::blockmat::extent;
use crate::tokenprune::{kept_body_tokens, tokens_after};
use crate::vitref::{EncoderLayout, ModelConfig};
use crate::{div_ceil, Error, Result};

/// Dimensions and retained ratios of one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityInputs {
    pub batch: usize,
    /// Tokens entering the encoder, class token included.
    pub tokens: usize,
    pub dim: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub heads: usize,
    /// Retained block ratio of `W_q`, `W_k`, `W_v` over the kept heads.
    pub alpha: f64,
    /// Same for `W_proj`.
    pub alpha_proj: f64,
    pub alpha_mlp: f64,
    pub heads_kept: usize,
    /// Tokens after token dropping.
    pub tokens_kept: usize,
}

impl ComplexityInputs {
    pub fn unpruned(batch: usize, tokens: usize, dim: usize, head_dim: usize, mlp_dim: usize, heads: usize) -> Self {
        ComplexityInputs {
            batch,
            tokens,
            dim,
            head_dim,
            mlp_dim,
            heads,
            alpha: 1.0,
            alpha_proj: 1.0,
            alpha_mlp: 1.0,
            heads_kept: heads,
            tokens_kept: tokens,
        }
    }

    pub fn from_config(cfg: &ModelConfig) -> Self {
        Self::unpruned(1, cfg.tokens(), cfg.dim, cfg.head_dim, cfg.mlp_dim, cfg.heads)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("alpha", self.alpha), ("alpha_proj", self.alpha_proj), ("alpha_mlp", self.alpha_mlp)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} = {r} is outside [0, 1]")));
            }
        }
        if self.heads_kept > self.heads || self.tokens_kept > self.tokens {
            return Err(Error::invalid("kept heads or tokens exceed the totals"));
        }
        Ok(())
    }
}

/// Operation counts per encoder block. Matmul rows are multiply-accumulates,
/// layer norm and residual rows are element operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub layernorm1: u64,
    pub layernorm2: u64,
    pub residual1: u64,
    pub residual2: u64,
    pub msa: u64,
    pub tdm: u64,
    pub mlp: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.layernorm1 + self.layernorm2 + self.residual1 + self.residual2 + self.msa + self.tdm + self.mlp
    }

    pub fn add(&mut self, o: &OpCounts) {
        self.layernorm1 += o.layernorm1;
        self.layernorm2 += o.layernorm2;
        self.residual1 += o.residual1;
        self.residual2 += o.residual2;
        self.msa += o.msa;
        self.tdm += o.tdm;
        self.mlp += o.mlp;
    }
}

/// Dense encoder: two layer norms and residual adds of `BND`, attention
/// `4BHNDD' + 2BHN^2D'`, MLP `2BND D_mlp`.
pub fn complexity_unpruned(x: &ComplexityInputs) -> OpCounts {
    let (b, n, d, dh, m, h) =
        (x.batch as u64, x.tokens as u64, x.dim as u64, x.head_dim as u64, x.mlp_dim as u64, x.heads as u64);
    let bnd = b * n * d;
    OpCounts {
        layernorm1: bnd,
        layernorm2: bnd,
        residual1: bnd,
        residual2: bnd,
        msa: 4 * b * h * n * d * dh + 2 * b * h * n * n * dh,
        tdm: 0,
        mlp: 2 * bnd * m,
    }
}

/// Pruned encoder. The token-dropping term `BN(H + N + D)` is included only
/// when `with_tdm` is set.
pub fn complexity_pruned(x: &ComplexityInputs, with_tdm: bool) -> Result<OpCounts> {
    x.validate()?;
    let f = |v: usize| v as f64;
    let (b, n, d, dh, m, h, hk, nk) =
        (f(x.batch), f(x.tokens), f(x.dim), f(x.head_dim), f(x.mlp_dim), f(x.heads), f(x.heads_kept), f(x.tokens_kept));
    let r = |v: f64| v.round() as u64;
    Ok(OpCounts {
        layernorm1: r(b * n * d),
        layernorm2: r(b * nk * d),
        residual1: r(b * n * d),
        residual2: r(b * nk * d),
        msa: r(b * hk * n * dh * d * (3.0 * x.alpha + x.alpha_proj)) + r(2.0 * b * hk * n * n * dh),
        tdm: if with_tdm { r(b * n * (h + n + d)) } else { 0 },
        mlp: r(2.0 * b * nk * d * m * x.alpha_mlp),
    })
}

/// Retained ratios measured on a pruned encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredSparsity {
    pub alpha: f64,
    pub alpha_proj: f64,
    pub alpha_mlp: f64,
    pub heads_kept: usize,
}

/// Ratios as logical areas: retained `W_q/W_k/W_v` area inside the active
/// heads over `3 H_kept D' D`, retained `W_proj` area over `H_kept D' D`,
/// and retained neurons over `full_mlp_dim`. Zero when no head survives.
pub fn measure_sparsity(layout: &EncoderLayout, full_mlp_dim: usize) -> MeasuredSparsity {
    let active = layout.active_heads();
    let heads_kept = active.iter().filter(|&&a| a).count();
    let hb = layout.head_blocks();
    let area = |l: &crate::blockmat::SparseLayout, c: usize| -> usize {
        l.header(c).iter().map(|&r| extent(l.rows(), l.block_size(), r as usize)).sum::<usize>()
            * extent(l.cols(), l.block_size(), c)
    };
    let qkv: usize = (0..layout.heads)
        .filter(|&h| active[h])
        .flat_map(|h| h * hb..(h + 1) * hb)
        .map(|c| area(&layout.q, c) + area(&layout.k, c) + area(&layout.v, c))
        .sum();
    let proj: usize = (0..layout.proj.grid_cols()).map(|c| area(&layout.proj, c)).sum();
    let denom = (heads_kept * layout.head_dim * layout.dim) as f64;
    let (alpha, alpha_proj) =
        if heads_kept == 0 { (0.0, 0.0) } else { (qkv as f64 / (3.0 * denom), proj as f64 / denom) };
    MeasuredSparsity { alpha, alpha_proj, alpha_mlp: layout.mlp_dim as f64 / full_mlp_dim as f64, heads_kept }
}

/// Table-style inputs for one pruned encoder entered by `tokens` tokens.
pub fn pruned_inputs(
    layout: &EncoderLayout,
    full_mlp_dim: usize,
    tokens: usize,
    tokens_kept: usize,
) -> ComplexityInputs {
    let s = measure_sparsity(layout, full_mlp_dim);
    ComplexityInputs {
        batch: 1,
        tokens,
        dim: layout.dim,
        head_dim: layout.head_dim,
        mlp_dim: full_mlp_dim,
        heads: layout.heads,
        alpha: s.alpha,
        alpha_proj: s.alpha_proj,
        alpha_mlp: s.alpha_mlp,
        heads_kept: s.heads_kept,
        tokens_kept,
    }
}

/// Per-encoder and whole-model counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub encoders: Vec<OpCounts>,
    pub total: OpCounts,
    pub model_macs: u64,
    pub baseline_macs: u64,
    /// Baseline over this model.
    pub compression: f64,
    /// Patch embedding and classifier, not part of the encoder totals.
    pub embedding_macs: u64,
    pub classifier_macs: u64,
}

impl ComplexityReport {
    pub fn new(encoders: Vec<OpCounts>, baseline_macs: u64, cfg: &ModelConfig) -> Self {
        let mut total = OpCounts::default();
        encoders.iter().for_each(|e| total.add(e));
        let model_macs = total.total();
        ComplexityReport {
            encoders,
            total,
            model_macs,
            baseline_macs,
            compression: if model_macs == 0 { 0.0 } else { baseline_macs as f64 / model_macs as f64 },
            embedding_macs: ((cfg.tokens() - 1) * cfg.patch_len() * cfg.dim) as u64,
            classifier_macs: (cfg.dim * cfg.classes) as u64,
        }
    }
}

/// `L` times the dense encoder count.
pub fn model_complexity_unpruned(cfg: &ModelConfig) -> ComplexityReport {
    let e = complexity_unpruned(&ComplexityInputs::from_config(cfg));
    let report = ComplexityReport::new(vec![e; cfg.layers], 0, cfg);
    let base = report.model_macs;
    ComplexityReport { baseline_macs: base, compression: 1.0, ..report }
}

/// Pruned model counts with measured ratios and the token trajectory implied
/// by `cfg.tdm`.
pub fn model_complexity_pruned(cfg: &ModelConfig, layouts: &[EncoderLayout]) -> Result<ComplexityReport> {
    if layouts.len() != cfg.layers {
        return Err(Error::invalid(format!("{} encoder layouts for {} layers", layouts.len(), cfg.layers)));
    }
    let mut n = cfg.tokens();
    let mut encoders = Vec::with_capacity(layouts.len());
    for (l, layout) in layouts.iter().enumerate() {
        let after = tokens_after_layer(layout, n, cfg.tdm.rate_at(l + 1));
        let x = pruned_inputs(layout, cfg.mlp_dim, n, after);
        encoders.push(complexity_pruned(&x, dropping(layout, n, cfg.tdm.rate_at(l + 1)))?);
        n = after;
    }
    let base = model_complexity_unpruned(cfg).model_macs;
    Ok(ComplexityReport::new(encoders, base, cfg))
}

fn dropping(layout: &EncoderLayout, n: usize, rate: Option<f64>) -> bool {
    match rate {
        Some(r) => n >= 2 && layout.heads_kept() > 0 && kept_body_tokens(n, r) < n - 1,
        None => false,
    }
}

/// Tokens leaving the attention half of an encoder; layers with no active
/// head cannot rank tokens and keep them all.
pub fn tokens_after_layer(layout: &EncoderLayout, n: usize, rate: Option<f64>) -> usize {
    match rate {
        Some(r) if dropping(layout, n, Some(r)) => tokens_after(n, r),
        _ => n,
    }
}

/// SBMM/DBMM cycles for an `M1 x M2` by `M2 x D` product with CHM groups
/// of `D'` columns and retained ratio `phi` per column.
#[allow(clippy::too_many_arguments)]
pub fn cycles_sbmm(m1: usize, m2: usize, d: usize, d_group: usize, b: usize, phi: f64, hw: &HardwareConfig) -> f64 {
    let base = div_ceil(div_ceil(m1, b) * div_ceil(d_group, b), hw.p_t * hw.p_c)
        * div_ceil(div_ceil(d, d_group), hw.p_h)
        * div_ceil(m2, b);
    base as f64 * block_cycles(b, hw) as f64 * phi
}

/// [`cycles_sbmm`] with `phi` given as retained blocks per column, in
/// integers.
pub fn cycles_sbmm_exact(
    m1: usize,
    d: usize,
    d_group: usize,
    b: usize,
    kept_per_column: usize,
    hw: &HardwareConfig,
) -> u64 {
    (div_ceil(div_ceil(m1, b) * div_ceil(d_group, b), hw.p_t * hw.p_c)
        * div_ceil(div_ceil(d, d_group), hw.p_h)
        * kept_per_column) as u64
        * block_cycles(b, hw)
}

/// Head-wise dense matmul: `H` products of `M1 x M2` by `M2 x D`.
pub fn cycles_dhbmm(m1: usize, m2: usize, d: usize, heads: usize, b: usize, hw: &HardwareConfig) -> u64 {
    (div_ceil(div_ceil(m1, b) * div_ceil(d, b), hw.p_t * hw.p_c) * div_ceil(heads, hw.p_h) * div_ceil(m2, b)) as u64
        * block_cycles(b, hw)
}

fn block_cycles(b: usize, hw: &HardwareConfig) -> u64 {
    let s = div_ceil(b, hw.p_pe) as u64;
    s * s * b as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    /// `p_t p_h p_c p_pe^2` multiply units.
    pub compute_units: u64,
    pub dsp: f64,
    pub lut: f64,
    pub buffer_words: u64,
}

pub fn resource_model(hw: &HardwareConfig) -> ResourceEstimate {
    let units = (hw.p_t * hw.p_h * hw.p_c * hw.p_pe * hw.p_pe) as u64;
    let b2 = (hw.b * hw.b) as u64;
    let (pt, ph, pc, g) = (hw.p_t as u64, hw.p_h as u64, hw.p_c as u64, hw.gamma as u64);
    let array = b2 * pt * ph * pc;
    let row_buf = b2 * pt * g;
    ResourceEstimate {
        compute_units: units,
        dsp: hw.c1 * units as f64,
        lut: hw.c2 * units as f64,
        buffer_words: row_buf + b2 * pc * g + array + 6 * array.max(row_buf),
    }
}

/// Closed-form cost of a group whose columns all have `len` entries:
/// `ceil(ceil(C / p_c) * R / p_t) * len` block products.
fn group_cycles(cols: usize, row_blocks: usize, len: f64, hw: &HardwareConfig) -> u64 {
    if cols == 0 || row_blocks == 0 || len == 0.0 {
        return 0;
    }
    let waves = div_ceil(div_ceil(cols, hw.p_c) * row_blocks, hw.p_t) as f64;
    (waves * len).ceil() as u64 * hw.block_cycles()
}

/// Head iterations of `p_h` groups, each as slow as its slowest group.
fn iterations(groups: impl IntoIterator<Item = u64>, hw: &HardwareConfig) -> u64 {
    let live: Vec<u64> = groups.into_iter().filter(|&c| c > 0).collect();
    live.chunks(hw.p_h).map(|c| *c.iter().max().unwrap()).sum()
}

/// Analytic stage cycles of one encoder entered by `n` tokens. Each group
/// is costed with its mean column length, so the result is exact when the
/// columns inside every group retain the same number of blocks.
pub fn predict_encoder_cycles(
    layout: &EncoderLayout,
    n: usize,
    keep_rate: Option<f64>,
    hw: &HardwareConfig,
) -> StageCycles {
    let b = layout.b;
    let hb = layout.head_blocks();
    let active: Vec<usize> = layout.active_heads().iter().enumerate().filter(|(_, &a)| a).map(|(h, _)| h).collect();
    let ha = active.len();
    let (r1, d, dh) = (div_ceil(n, b), layout.dim, layout.head_dim);
    let n2 = tokens_after_layer(layout, n, keep_rate);
    let r2 = div_ceil(n2, b);
    let mlp = layout.mlp_dim;
    let em = |e: usize| hw.em_cycles(e);
    let mean_len = |l: &crate::blockmat::SparseLayout, cols: &[usize]| -> f64 {
        cols.iter().map(|&c| l.header(c).len()).sum::<usize>() as f64 / cols.len() as f64
    };

    let qkv = iterations(
        active.iter().map(|&h| {
            let cols: Vec<usize> = (h * hb..(h + 1) * hb).collect();
            let len = (mean_len(&layout.q, &cols) + mean_len(&layout.k, &cols) + mean_len(&layout.v, &cols)) / 3.0;
            group_cycles(3 * hb, r1, len, hw)
        }),
        hw,
    );
    let nb = div_ceil(n, b);
    let per_head = |cols: usize, len: usize| iterations(vec![group_cycles(cols, r1, len as f64, hw); ha], hw);
    let qk_t = per_head(nb, hb);
    let row_sum = per_head(1, nb);
    let av = per_head(hb, nb);
    let proj = iterations(
        (0..layout.proj.grid_cols()).step_by(hb).map(|s| {
            let cols: Vec<usize> = (s..(s + hb).min(layout.proj.grid_cols())).collect();
            group_cycles(cols.len(), r1, mean_len(&layout.proj, &cols), hw)
        }),
        hw,
    );
    let chunks = |total_cols: usize, len: usize| {
        iterations(
            (0..total_cols).step_by(hb).map(|s| group_cycles((s + hb).min(total_cols) - s, r2, len as f64, hw)),
            hw,
        )
    };
    let mlp_int = chunks(div_ceil(mlp, b), div_ceil(d, b));
    let mlp_out = chunks(div_ceil(d, b), div_ceil(mlp, b));
    let tdhm = match keep_rate {
        Some(r) if dropping(layout, n, Some(r)) => tdhm_cycles(n, d, r, hw).total(),
        _ => 0,
    };
    let bi = layout.biases;
    let bias = bi[..3].iter().filter(|&&x| x).count() as u64 * em(n * ha * dh)
        + if bi[3] { em(n * d) } else { 0 }
        + if bi[4] { em(n2 * mlp) } else { 0 }
        + if bi[5] { em(n2 * d) } else { 0 };
    StageCycles {
        ln1: em(n * d),
        qkv,
        qk_t,
        softmax: if ha == 0 { 0 } else { 2 * em(ha * n * n) + row_sum },
        av,
        proj,
        residual1: em(n * d),
        tdhm,
        ln2: em(n2 * d),
        mlp_int,
        gelu: em(n2 * mlp),
        mlp_out,
        residual2: em(n2 * d),
        bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deit() -> ComplexityInputs {
        ComplexityInputs::unpruned(1, 197, 384, 64, 1536, 6)
    }

    #[test]
    fn msa_term() {
        let c = complexity_unpruned(&deit());
        assert_eq!(4 * 6 * 197 * 384 * 64, 116_195_328);
        assert_eq!(c.msa, 116_195_328 + 2 * 6 * 197 * 197 * 64);
    }

    #[test]
    fn deit_small_total() {
        let r = model_complexity_unpruned(&ModelConfig::deit_small());
        // 12 * (4*197*384 + 116195328 + 2*6*197^2*64 + 2*197*384*1536)
        assert_eq!(r.model_macs, 12 * (302_592 + 116_195_328 + 29_805_312 + 232_390_656));
        assert_eq!(r.compression, 1.0);
    }

    #[test]
    fn doubling_tokens() {
        let a = complexity_unpruned(&deit());
        let b = complexity_unpruned(&ComplexityInputs { tokens: 394, tokens_kept: 394, ..deit() });
        assert_eq!(b.layernorm1, 2 * a.layernorm1);
        assert_eq!(b.mlp, 2 * a.mlp);
        let quad = |x: &ComplexityInputs| 2 * x.heads as u64 * (x.tokens * x.tokens * x.head_dim) as u64;
        assert_eq!(quad(&ComplexityInputs { tokens: 394, ..deit() }), 4 * quad(&deit()));
    }

    #[test]
    fn pruned_at_unity_is_unpruned_plus_tdm() {
        let x = deit();
        let p = complexity_pruned(&x, true).unwrap();
        let u = complexity_unpruned(&x);
        assert_eq!(p.total(), u.total() + 197 * (6 + 197 + 384));
        assert_eq!(complexity_pruned(&x, false).unwrap(), u);
    }

    #[test]
    fn pruned_rejects_bad_ratio() {
        assert!(complexity_pruned(&ComplexityInputs { alpha: 1.5, ..deit() }, false).is_err());
    }

    #[test]
    fn table_four_instances() {
        let hw = HardwareConfig::default();
        assert_eq!(cycles_sbmm(64, 64, 64, 64, 16, 1.0, &hw), 256.0);
        assert_eq!(cycles_sbmm(64, 64, 64, 64, 16, 0.5, &hw), 128.0);
        assert_eq!(cycles_sbmm_exact(64, 64, 64, 16, 4, &hw), 256);
        assert_eq!(cycles_dhbmm(64, 64, 64, 6, 16, &hw), 2 * cycles_dhbmm(64, 64, 64, 4, 16, &hw));
    }

    #[test]
    fn resources() {
        let hw = HardwareConfig { c1: 1.0, c2: 2.0, gamma: 24, ..HardwareConfig::default() };
        let r = resource_model(&hw);
        assert_eq!(r.compute_units, 6144);
        assert_eq!(r.dsp, 6144.0);
        assert_eq!(r.lut, 12288.0);
        // 256*12*24 + 256*2*24 + 256*96 + 6*max(256*96, 256*288)
        assert_eq!(r.buffer_words, 73_728 + 12_288 + 24_576 + 6 * 73_728);
        let zero = resource_model(&HardwareConfig { gamma: 0, ..hw });
        assert_eq!(zero.buffer_words, 7 * 256 * 96);
        let default = resource_model(&HardwareConfig::default());
        assert_eq!(default.dsp.round(), 7088.0);
        assert_eq!(default.lut.round(), 798_000.0);
    }

    fn dims() -> impl Strategy<Value = ComplexityInputs> {
        (1usize..4, 2usize..300, 1usize..512, 1usize..128, 1usize..2048, 1usize..16)
            .prop_map(|(b, n, d, dh, m, h)| ComplexityInputs::unpruned(b, n, d, dh, m, h))
    }

    fn bump(x: &ComplexityInputs, which: usize) -> ComplexityInputs {
        let mut y = x.clone();
        match which {
            0 => y.batch += 1,
            1 => y.tokens += 1,
            2 => y.dim += 1,
            3 => y.head_dim += 1,
            4 => y.mlp_dim += 1,
            _ => y.heads += 1,
        }
        y
    }

    proptest! {
        #[test]
        fn pruned_dominated_term_by_term(
            x in dims(),
            a in 0.0f64..=1.0,
            ap in 0.0f64..=1.0,
            am in 0.0f64..=1.0,
            hk in 0.0f64..=1.0,
            nk in 0.0f64..=1.0,
        ) {
            let y = ComplexityInputs {
                alpha: a,
                alpha_proj: ap,
                alpha_mlp: am,
                heads_kept: (hk * x.heads as f64) as usize,
                tokens_kept: ((nk * x.tokens as f64) as usize).max(1),
                ..x.clone()
            };
            let full = complexity_unpruned(&x);
            let p = complexity_pruned(&y, true).unwrap();
            let n = x.tokens as u64;
            prop_assert_eq!(p.tdm, x.batch as u64 * n * (x.heads as u64 + n + x.dim as u64));
            prop_assert!(p.layernorm1 <= full.layernorm1 && p.layernorm2 <= full.layernorm2);
            prop_assert!(p.residual1 <= full.residual1 && p.residual2 <= full.residual2);
            prop_assert!(p.msa <= full.msa, "msa {} > {}", p.msa, full.msa);
            prop_assert!(p.mlp <= full.mlp);
        }

        #[test]
        fn monotone_in_every_dimension(x in dims(), which in 0usize..6, a in 0.0f64..=1.0) {
            let y = bump(&x, which);
            prop_assert!(complexity_unpruned(&y).total() >= complexity_unpruned(&x).total());
            let px = ComplexityInputs { alpha: a, alpha_proj: a, alpha_mlp: a, ..x.clone() };
            let py = ComplexityInputs { alpha: a, alpha_proj: a, alpha_mlp: a, ..y };
            let (cx, cy) = (complexity_pruned(&px, true).unwrap(), complexity_pruned(&py, true).unwrap());
            prop_assert!(cy.total() >= cx.total());
        }

        #[test]
        fn cycles_invariant_to_row_scaling(
            rows in 1usize..20,
            k in 1usize..5,
            groups in 1usize..5,
            cg in 1usize..5,
            kept in 0usize..8,
            p_t in 1usize..6,
            p_c in 1usize..4,
            p_h in 1usize..4,
        ) {
            let b = 8;
            let hw = HardwareConfig { p_t, p_c, p_h, b, ..HardwareConfig::default() };
            let hk = HardwareConfig { p_t: k * p_t, ..hw.clone() };
            let (m1, d, dg) = (rows * b, groups * cg * b, cg * b);
            prop_assert_eq!(cycles_sbmm_exact(m1, d, dg, b, kept, &hw), cycles_sbmm_exact(k * m1, d, dg, b, kept, &hk));
            prop_assert_eq!(cycles_sbmm(m1, 64, d, dg, b, 0.5, &hw), cycles_sbmm(k * m1, 64, d, dg, b, 0.5, &hk));
            prop_assert_eq!(cycles_dhbmm(m1, 64, dg, groups, b, &hw), cycles_dhbmm(k * m1, 64, dg, groups, b, &hk));
        }

        #[test]
        fn resources_linear_in_coefficients(a in 0.0f64..10.0, b in 0.0f64..10.0, s in 0.0f64..10.0) {
            let r = |c1: f64, c2: f64| resource_model(&HardwareConfig { c1, c2, ..HardwareConfig::default() });
            let (x, y, sum, scaled) = (r(a, b), r(b, a), r(a + b, a + b), r(s * a, s * b));
            let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * u.abs().max(1.0);
            prop_assert!(close(sum.dsp, x.dsp + y.dsp) && close(sum.lut, x.lut + y.lut));
            prop_assert!(close(scaled.dsp, s * x.dsp) && close(scaled.lut, s * x.lut));
        }
    }
}

//! Whole-encoder execution on the simulated accelerator.
//!
//! Scheduling depends only on the sparsity structure and the token count,
//! so the plan is built from an [`EncoderLayout`] and then either executed
//! on real operands or just read for its cycle counts.

use crate::accelsim::mpca::{column_chunks, execute_group, plan, Concat, DenseShape, GroupSpec, Plan};
use crate::accelsim::report::{EncoderReport, Imbalance, SimReport, StageCycles};
use crate::accelsim::tdhm::{simulate_tdhm, tdhm_cycles};
use crate::accelsim::{HardwareConfig, KernelStats};
use crate::blockmat::{BlockDenseMatrix, SparseLayout};
use crate::perfmodel::{tokens_after_layer, OpCounts};
use crate::tokenprune::{importance_scores, kept_body_tokens, TokenMatrix, TokenRouting};
use crate::vitref::ops::{self, add, add_bias, gelu_matrix, layernorm, normalize_rows, scale_exp};
use crate::vitref::{classify, embed, EncoderLayout, EncoderWeights, Forward, Image, Model, ModelConfig};
use crate::{div_ceil, Error, Result};

/// Schedules of every array kernel of one encoder plus its stage cycles.
#[derive(Debug, Clone)]
pub struct EncoderPlan {
    pub tokens_in: usize,
    pub tokens_out: usize,
    /// Active heads in order; group `i` of the per-head kernels is head
    /// `active[i]`.
    pub active: Vec<usize>,
    /// Token dropping runs (and drops something) in this encoder.
    pub drops: bool,
    pub qkv: Plan,
    pub qk_t: Plan,
    pub row_sum: Plan,
    pub av: Plan,
    pub proj: Plan,
    pub mlp_int: Plan,
    pub mlp_out: Plan,
    pub stage_cycles: StageCycles,
}

impl EncoderPlan {
    fn compute_stats(&self) -> KernelStats {
        let mut s = KernelStats::default();
        for p in [&self.qkv, &self.qk_t, &self.av, &self.proj, &self.mlp_int, &self.mlp_out] {
            s.merge(&p.stats());
        }
        s
    }

    fn report(&self, layout: &EncoderLayout, routing: Option<TokenRouting>) -> EncoderReport {
        let (n, n2, d) = (self.tokens_in as u64, self.tokens_out as u64, layout.dim as u64);
        let compute = self.compute_stats();
        let ops = OpCounts {
            layernorm1: n * d,
            layernorm2: n2 * d,
            residual1: n * d,
            residual2: n2 * d,
            msa: self.qkv.macs + self.qk_t.macs + self.av.macs + self.proj.macs,
            tdm: if self.drops { n * (layout.heads as u64 + n + d) } else { 0 },
            mlp: self.mlp_int.macs + self.mlp_out.macs,
        };
        EncoderReport {
            stage_cycles: self.stage_cycles,
            total_cycles: self.stage_cycles.total(),
            tokens_in: self.tokens_in,
            tokens_out: self.tokens_out,
            heads_active: self.active.len(),
            compute,
            auxiliary: self.row_sum.stats(),
            ops,
            imbalance: Imbalance::from_stats(&compute),
            routing,
        }
    }
}

fn check_hw(layout: &EncoderLayout, hw: &HardwareConfig) -> Result<()> {
    hw.validate()?;
    layout.validate()?;
    if hw.b != layout.b {
        return Err(Error::invalid(format!("hardware block size {} but the model uses {}", hw.b, layout.b)));
    }
    Ok(())
}

/// Plans one encoder entered by `n` tokens.
pub fn plan_encoder(
    layout: &EncoderLayout,
    n: usize,
    keep_rate: Option<f64>,
    hw: &HardwareConfig,
) -> Result<EncoderPlan> {
    check_hw(layout, hw)?;
    if n == 0 {
        return Err(Error::invalid("encoder input has no tokens"));
    }
    let (b, d, dh) = (layout.b, layout.dim, layout.head_dim);
    let hb = layout.head_blocks();
    let hbw = layout.q.grid_cols();
    let active: Vec<usize> = layout.active_heads().iter().enumerate().filter(|(_, &a)| a).map(|(h, _)| h).collect();
    let ha = active.len();
    let n2 = tokens_after_layer(layout, n, keep_rate);
    let drops = match keep_rate {
        Some(r) => ha > 0 && n >= 2 && kept_body_tokens(n, r) < n - 1,
        None => false,
    };

    let qkv_w: Concat<SparseLayout> = Concat::new(vec![&layout.q, &layout.k, &layout.v])?;
    let qkv_groups: Vec<GroupSpec> = active
        .iter()
        .map(|&h| {
            let cols = (0..3).flat_map(|m| (h * hb..(h + 1) * hb).map(move |c| m * hbw + c)).collect();
            GroupSpec::new(n, &qkv_w, cols)
        })
        .collect();
    let kt = DenseShape { rows: dh, cols: n, b };
    let ones = DenseShape { rows: n, cols: 1, b };
    let vh = DenseShape { rows: n, cols: dh, b };
    let per_head = |w: &DenseShape| -> Plan {
        let specs: Vec<GroupSpec> = (0..ha).map(|_| GroupSpec::new(n, w, (0..div_ceil(w.cols, b)).collect())).collect();
        plan(&specs, hw)
    };
    let chunked = |rows: usize, w: &dyn crate::accelsim::mpca::Structure| -> Plan {
        let specs: Vec<GroupSpec> =
            column_chunks(w.grid_cols(), hb).into_iter().map(|c| GroupSpec::new(rows, w, c)).collect();
        plan(&specs, hw)
    };
    let mlp = layout.mlp_dim;
    let qkv = plan(&qkv_groups, hw);
    let qk_t = per_head(&kt);
    let row_sum = per_head(&ones);
    let av = per_head(&vh);
    let proj = chunked(n, &layout.proj);
    let mlp_int = chunked(n2, &DenseShape { rows: d, cols: mlp, b });
    let mlp_out = chunked(n2, &DenseShape { rows: mlp, cols: d, b });

    let em = |e: usize| hw.em_cycles(e);
    let bi = layout.biases;
    let bias = bi[..3].iter().filter(|&&x| x).count() as u64 * em(n * ha * dh)
        + if bi[3] { em(n * d) } else { 0 }
        + if bi[4] { em(n2 * mlp) } else { 0 }
        + if bi[5] { em(n2 * d) } else { 0 };
    let stage_cycles = StageCycles {
        ln1: em(n * d),
        qkv: qkv.cycles,
        qk_t: qk_t.cycles,
        softmax: if ha == 0 { 0 } else { 2 * em(ha * n * n) + row_sum.cycles },
        av: av.cycles,
        proj: proj.cycles,
        residual1: em(n * d),
        tdhm: match keep_rate {
            Some(r) if drops => tdhm_cycles(n, d, r, hw).total(),
            _ => 0,
        },
        ln2: em(n2 * d),
        mlp_int: mlp_int.cycles,
        gelu: em(n2 * mlp),
        mlp_out: mlp_out.cycles,
        residual2: em(n2 * d),
        bias,
    };
    Ok(EncoderPlan {
        tokens_in: n,
        tokens_out: n2,
        active,
        drops,
        qkv,
        qk_t,
        row_sum,
        av,
        proj,
        mlp_int,
        mlp_out,
        stage_cycles,
    })
}

/// Cycle report of one encoder without touching any values.
pub fn simulate_encoder_timing(
    layout: &EncoderLayout,
    n: usize,
    keep_rate: Option<f64>,
    hw: &HardwareConfig,
) -> Result<EncoderReport> {
    Ok(plan_encoder(layout, n, keep_rate, hw)?.report(layout, None))
}

fn with_bias(mut y: BlockDenseMatrix, bias: &Option<Vec<f64>>) -> Result<BlockDenseMatrix> {
    if let Some(bv) = bias {
        add_bias(&mut y, bv)?;
    }
    Ok(y)
}

/// Runs one encoder on the simulated accelerator. The output equals
/// [`crate::vitref::encoder_forward`] bit for bit.
pub fn simulate_encoder(
    z: &TokenMatrix,
    w: &EncoderWeights,
    keep_rate: Option<f64>,
    hw: &HardwareConfig,
) -> Result<(TokenMatrix, EncoderReport)> {
    let layout = w.layout()?;
    if z.cols() != layout.dim || z.block_size() != layout.b {
        return Err(Error::shape(format!(
            "tokens are {} wide (b={}), encoder expects {}",
            z.cols(),
            z.block_size(),
            layout.dim
        )));
    }
    let p = plan_encoder(&layout, z.rows(), keep_rate, hw)?;
    let (n, b, dh) = (z.rows(), layout.b, layout.head_dim);
    let hb = layout.head_blocks();
    let width = layout.heads * dh;

    // (i) Q, K, V
    let x1 = layernorm(z, &w.ln1)?;
    let qkv_w = Concat::new(vec![&w.wq, &w.wk, &w.wv])?;
    let mut qkv = BlockDenseMatrix::zeros(n, 3 * width, b)?;
    for gp in p.qkv.groups() {
        execute_group(gp, &x1, &qkv_w, &mut qkv);
    }
    let gw = width / b;
    let q = with_bias(qkv.block_columns(0, gw, width)?, &w.biases.q)?;
    let k = with_bias(qkv.block_columns(gw, gw, width)?, &w.biases.k)?;
    let v = with_bias(qkv.block_columns(2 * gw, gw, width)?, &w.biases.v)?;

    let heads = |m: &BlockDenseMatrix| -> Result<Vec<BlockDenseMatrix>> {
        p.active.iter().map(|&h| m.block_columns(h * hb, hb, dh)).collect()
    };
    let qh = heads(&q)?;
    let kt: Vec<BlockDenseMatrix> = heads(&k)?.iter().map(|m| m.transpose()).collect();
    let vh = heads(&v)?;

    // (ii) scores and softmax
    let ha = p.active.len();
    let mut s: Vec<BlockDenseMatrix> = (0..ha).map(|_| BlockDenseMatrix::zeros(n, n, b)).collect::<Result<_>>()?;
    for gp in p.qk_t.groups() {
        execute_group(gp, &qh[gp.group], &kt[gp.group], &mut s[gp.group]);
    }
    let scale = ops::softmax_scale(dh);
    let e: Vec<BlockDenseMatrix> = s.iter().map(|m| scale_exp(m, scale)).collect();
    let ones = BlockDenseMatrix::from_fn(n, 1, b, |_, _| 1.0)?;
    let mut sums: Vec<BlockDenseMatrix> = (0..ha).map(|_| BlockDenseMatrix::zeros(n, 1, b)).collect::<Result<_>>()?;
    for gp in p.row_sum.groups() {
        execute_group(gp, &e[gp.group], &ones, &mut sums[gp.group]);
    }
    let a: Vec<BlockDenseMatrix> = e
        .iter()
        .zip(&sums)
        .map(|(e, sm)| normalize_rows(e, &(0..n).map(|i| sm.get(i, 0)).collect::<Vec<_>>()))
        .collect();

    // (iii) A V
    let mut sa: Vec<BlockDenseMatrix> = (0..ha).map(|_| BlockDenseMatrix::zeros(n, dh, b)).collect::<Result<_>>()?;
    for gp in p.av.groups() {
        execute_group(gp, &a[gp.group], &vh[gp.group], &mut sa[gp.group]);
    }
    let mut concat = BlockDenseMatrix::zeros(n, width, b)?;
    for (i, &h) in p.active.iter().enumerate() {
        concat.set_block_columns(h * hb, &sa[i])?;
    }

    // (iv) projection
    let mut out = BlockDenseMatrix::zeros(n, layout.dim, b)?;
    for gp in p.proj.groups() {
        execute_group(gp, &concat, &w.wproj, &mut out);
    }
    let out = with_bias(out, &w.biases.proj)?;
    let mut z1 = add(&out, z)?;

    let mut routing = None;
    if let (Some(r), true) = (keep_rate, p.drops) {
        let refs: Vec<&BlockDenseMatrix> = a.iter().collect();
        let scores = importance_scores(&refs)?;
        let (pruned, rt, _) = simulate_tdhm(&z1, &scores, r, hw)?;
        z1 = pruned;
        routing = Some(rt);
    }
    if z1.rows() != p.tokens_out {
        return Err(Error::Invariant(format!("planned {} tokens after dropping, got {}", p.tokens_out, z1.rows())));
    }

    let x2 = layernorm(&z1, &w.ln2)?;
    let mut hid = BlockDenseMatrix::zeros(z1.rows(), layout.mlp_dim, b)?;
    for gp in p.mlp_int.groups() {
        execute_group(gp, &x2, &w.wint, &mut hid);
    }
    let g = gelu_matrix(&with_bias(hid, &w.biases.int)?);
    let mut mo = BlockDenseMatrix::zeros(z1.rows(), layout.dim, b)?;
    for gp in p.mlp_out.groups() {
        execute_group(gp, &g, &w.wout, &mut mo);
    }
    let mo = with_bias(mo, &w.biases.out)?;
    Ok((add(&mo, &z1)?, p.report(&layout, routing)))
}

/// Timing of a whole model from its layouts; token counts follow the
/// configured dropping layers.
pub fn simulate_model_timing(cfg: &ModelConfig, layouts: &[EncoderLayout], hw: &HardwareConfig) -> Result<SimReport> {
    if layouts.len() != cfg.layers {
        return Err(Error::invalid(format!("{} encoder layouts for {} layers", layouts.len(), cfg.layers)));
    }
    let mut n = cfg.tokens();
    let mut reports = Vec::with_capacity(layouts.len());
    for (l, layout) in layouts.iter().enumerate() {
        let r = simulate_encoder_timing(layout, n, cfg.tdm.rate_at(l + 1), hw)?;
        n = r.tokens_out;
        reports.push(r);
    }
    checked(SimReport::new(reports, hw))
}

/// Self-checks that stay on in release builds.
fn checked(r: SimReport) -> Result<SimReport> {
    if r.utilization > 1.0 || r.compute_utilization > 1.0 {
        return Err(Error::Invariant(format!(
            "utilization above one ({}, compute {})",
            r.utilization, r.compute_utilization
        )));
    }
    if r.total_cycles != r.encoders.iter().map(|e| e.total_cycles).sum::<u64>() {
        return Err(Error::Invariant("model cycles differ from the sum over encoders".into()));
    }
    for pair in r.encoders.windows(2) {
        if pair[0].tokens_out != pair[1].tokens_in {
            return Err(Error::Invariant(format!(
                "encoder emitted {} tokens, next one received {}",
                pair[0].tokens_out, pair[1].tokens_in
            )));
        }
    }
    Ok(r)
}

/// Full inference on the simulated accelerator. Embedding and classifier
/// run on the host and are not timed.
pub fn simulate_model(image: &Image, model: &Model, hw: &HardwareConfig) -> Result<(Forward, SimReport)> {
    let cfg = &model.config;
    let mut z = embed(image, &model.embedding, cfg)?;
    let mut token_counts = Vec::with_capacity(cfg.layers + 1);
    let mut reports = Vec::with_capacity(cfg.layers);
    for (l, w) in model.encoders.iter().enumerate() {
        token_counts.push(z.rows());
        let (out, r) = simulate_encoder(&z, w, cfg.tdm.rate_at(l + 1), hw)?;
        z = out;
        reports.push(r);
    }
    token_counts.push(z.rows());
    let logits = classify(&z, &model.embedding)?;
    Ok((Forward { logits, token_counts }, checked(SimReport::new(reports, hw))?))
}

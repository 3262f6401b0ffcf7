//! Static block-weight pruning.
//!
//! Scores are supplied from outside (a score file or the seeded synthetic
//! generator); this module turns them into masks, applies the head-aligned
//! alternate pattern to the attention weights, compacts pruned MLP neurons,
//! and provides the schedule and loss terms of the fine-pruning loop as pure
//! functions.

use serde::{Deserialize, Serialize};

use crate::blockmat::{compress, partition_dense, BlockDenseMatrix, Matrix};
use crate::vitref::{DenseEncoder, EncoderWeights};
use crate::{keep_count, Error, Result};

/// One importance score per `b x b` weight block.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} score grid needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("score {i} is not finite")));
        }
        Ok(ScoreMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

/// One score per MLP neuron (column of `W_int`, row of `W_out`).
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronScoreVector(Vec<f64>);

impl NeuronScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("neuron score {i} is not finite")));
        }
        Ok(NeuronScoreVector(scores))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Binary block mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PruneMask {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        PruneMask { rows, cols, bits: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        PruneMask { rows, cols, bits }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged mask rows"));
        }
        Ok(PruneMask { rows: rows.len(), cols, bits: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn keep_rate(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.ones() as f64 / self.bits.len() as f64
        }
    }

    fn column_empty(&self, c: usize, rows: std::ops::Range<usize>) -> bool {
        rows.into_iter().all(|r| !self.get(r, c))
    }

    fn row_empty(&self, r: usize) -> bool {
        (0..self.cols).all(|c| !self.get(r, c))
    }
}

fn check_rate(r_b: f64) -> Result<()> {
    if !(r_b > 0.0 && r_b <= 1.0) {
        return Err(Error::invalid(format!("top-k rate must be in (0, 1], got {r_b}")));
    }
    Ok(())
}

/// Indices of the `k` largest values; ties go to the smaller index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Keeps the `ceil(r_b * m * n)` highest-scoring blocks.
pub fn generate_mask(scores: &ScoreMatrix, r_b: f64) -> Result<PruneMask> {
    check_rate(r_b)?;
    if scores.data.is_empty() {
        return Err(Error::invalid("empty score grid"));
    }
    let k = keep_count(r_b, scores.data.len());
    let mut mask = PruneMask::filled(scores.rows, scores.cols, false);
    for idx in top_k(&scores.data, k) {
        mask.bits[idx] = true;
    }
    Ok(mask)
}

/// Keeps the `ceil(r_b * D_mlp)` highest-scoring neurons.
pub fn generate_neuron_mask(scores: &NeuronScoreVector, r_b: f64) -> Result<Vec<bool>> {
    check_rate(r_b)?;
    if scores.is_empty() {
        return Err(Error::invalid("empty neuron score vector"));
    }
    let mut keep = vec![false; scores.len()];
    for idx in top_k(&scores.0, keep_count(r_b, scores.len())) {
        keep[idx] = true;
    }
    Ok(keep)
}

/// Masks after the alternate pattern plus the heads it removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlternatePattern {
    pub mask_p: Vec<PruneMask>,
    pub mask_proj: PruneMask,
    pub removed_heads: Vec<usize>,
}

/// Enforces the head-aligned pattern between input projections (`D x H*D'`,
/// heads along block-columns) and the output projection (`H*D' x D`, heads
/// along block-rows): a head whose blocks are all masked in any of them is
/// removed from all of them.
pub fn apply_alternate_pattern_multi(
    mask_p: &[PruneMask],
    mask_proj: &PruneMask,
    heads: usize,
) -> Result<AlternatePattern> {
    if heads == 0 || mask_p.is_empty() {
        return Err(Error::invalid("need at least one head and one input projection mask"));
    }
    let width = mask_proj.rows;
    if !width.is_multiple_of(heads) {
        return Err(Error::invalid(format!("{width} head block-rows do not split into {heads} heads")));
    }
    for m in mask_p {
        if m.cols != width {
            return Err(Error::invalid(format!(
                "input mask has {} block-columns, projection has {width} block-rows",
                m.cols
            )));
        }
    }
    let per_head = width / heads;
    let removed: Vec<usize> = (0..heads)
        .filter(|&h| {
            let cols = h * per_head..(h + 1) * per_head;
            let p_empty = mask_p.iter().any(|m| cols.clone().all(|c| m.column_empty(c, 0..m.rows)));
            let proj_empty = cols.clone().all(|r| mask_proj.row_empty(r));
            p_empty || proj_empty
        })
        .collect();

    let mut out_p = mask_p.to_vec();
    let mut out_proj = mask_proj.clone();
    for &h in &removed {
        for c in h * per_head..(h + 1) * per_head {
            for m in &mut out_p {
                for r in 0..m.rows {
                    m.set(r, c, false);
                }
            }
            for j in 0..out_proj.cols {
                out_proj.set(c, j, false);
            }
        }
    }
    Ok(AlternatePattern { mask_p: out_p, mask_proj: out_proj, removed_heads: removed })
}

/// Two-mask form of [`apply_alternate_pattern_multi`].
pub fn apply_alternate_pattern(
    mask_p: &PruneMask,
    mask_proj: &PruneMask,
    heads: usize,
) -> Result<(PruneMask, PruneMask, Vec<usize>)> {
    let mut out = apply_alternate_pattern_multi(std::slice::from_ref(mask_p), mask_proj, heads)?;
    Ok((out.mask_p.remove(0), out.mask_proj, out.removed_heads))
}

/// Scores of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderScores {
    pub q: ScoreMatrix,
    pub k: ScoreMatrix,
    pub v: ScoreMatrix,
    pub proj: ScoreMatrix,
    pub int: NeuronScoreVector,
    pub out: NeuronScoreVector,
}

impl EncoderScores {
    pub fn groups(&self) -> [&[f64]; 6] {
        [self.q.values(), self.k.values(), self.v.values(), self.proj.values(), self.int.values(), self.out.values()]
    }
}

/// All masks of one encoder after the alternate pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderMasks {
    pub q: PruneMask,
    pub k: PruneMask,
    pub v: PruneMask,
    pub proj: PruneMask,
    /// Retained MLP neurons, shared by `W_int` columns and `W_out` rows.
    pub neurons: Vec<bool>,
    pub removed_heads: Vec<usize>,
}

impl EncoderMasks {
    pub fn retained_heads(&self, heads: usize) -> usize {
        heads - self.removed_heads.len()
    }
}

/// Masks for one encoder. `W_q`, `W_k`, `W_v` get independent masks; the
/// neuron mask ranks `S_int + S_out` so both MLP matrices keep the same
/// neurons.
pub fn encoder_masks(scores: &EncoderScores, r_b: f64, heads: usize) -> Result<EncoderMasks> {
    let q = generate_mask(&scores.q, r_b)?;
    let k = generate_mask(&scores.k, r_b)?;
    let v = generate_mask(&scores.v, r_b)?;
    let proj = generate_mask(&scores.proj, r_b)?;
    let alt = apply_alternate_pattern_multi(&[q, k, v], &proj, heads)?;
    if scores.int.len() != scores.out.len() {
        return Err(Error::shape("W_int and W_out neuron score lengths differ"));
    }
    let combined =
        NeuronScoreVector::new(scores.int.values().iter().zip(scores.out.values()).map(|(a, b)| a + b).collect())?;
    let neurons = generate_neuron_mask(&combined, r_b)?;
    let [q, k, v]: [PruneMask; 3] = alt.mask_p.try_into().expect("three input masks");
    Ok(EncoderMasks { q, k, v, proj: alt.mask_proj, neurons, removed_heads: alt.removed_heads })
}

/// Retained heads over all encoders divided by `L * H`.
pub fn head_retained_ratio(masks: &[EncoderMasks], heads: usize) -> f64 {
    if masks.is_empty() || heads == 0 {
        return 1.0;
    }
    let kept: usize = masks.iter().map(|m| m.retained_heads(heads)).sum();
    kept as f64 / (masks.len() * heads) as f64
}

fn check_score_grid(name: &str, s: &ScoreMatrix, w: &Matrix, b: usize) -> Result<()> {
    let want = (w.rows().div_ceil(b), w.cols().div_ceil(b));
    if (s.rows, s.cols) != want {
        return Err(Error::shape(format!(
            "{name} score grid {}x{} does not match weight block grid {}x{}",
            s.rows, s.cols, want.0, want.1
        )));
    }
    Ok(())
}

/// Prunes one encoder with precomputed masks: attention weights become
/// block-sparse, MLP neurons are physically removed.
pub fn prune_encoder(dense: &DenseEncoder, masks: &EncoderMasks, b: usize) -> Result<EncoderWeights> {
    let sparse = |w: &Matrix, m: &PruneMask| compress(&partition_dense(w, b)?, m);
    let kept: Vec<usize> = masks.neurons.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect();
    if masks.neurons.len() != dense.wint.cols() || dense.wout.rows() != dense.wint.cols() {
        return Err(Error::shape("neuron mask does not match MLP width"));
    }
    let wint = Matrix::from_fn(dense.wint.rows(), kept.len(), |i, j| dense.wint.get(i, kept[j]));
    let wout = Matrix::from_fn(kept.len(), dense.wout.cols(), |i, j| dense.wout.get(kept[i], j));
    EncoderWeights::new(
        dense.heads,
        dense.head_dim,
        sparse(&dense.wq, &masks.q)?,
        sparse(&dense.wk, &masks.k)?,
        sparse(&dense.wv, &masks.v)?,
        sparse(&dense.wproj, &masks.proj)?,
        partition_dense(&wint, b)?,
        partition_dense(&wout, b)?,
        crate::vitref::EncoderBiases {
            q: dense.biases.q.clone(),
            k: dense.biases.k.clone(),
            v: dense.biases.v.clone(),
            proj: dense.biases.proj.clone(),
            int: dense.biases.int.as_ref().map(|bi| kept.iter().map(|&i| bi[i]).collect()),
            out: dense.biases.out.clone(),
        },
        dense.ln1.clone(),
        dense.ln2.clone(),
    )
}

/// Result of [`prune_model`].
#[derive(Debug, Clone)]
pub struct PrunedEncoders {
    pub encoders: Vec<EncoderWeights>,
    pub masks: Vec<EncoderMasks>,
}

/// Computes masks from scores and prunes every encoder.
pub fn prune_model(dense: &[DenseEncoder], scores: &[EncoderScores], r_b: f64, b: usize) -> Result<PrunedEncoders> {
    if dense.len() != scores.len() {
        return Err(Error::shape(format!("{} encoders but {} score sets", dense.len(), scores.len())));
    }
    let mut encoders = Vec::with_capacity(dense.len());
    let mut masks = Vec::with_capacity(dense.len());
    for (d, s) in dense.iter().zip(scores) {
        check_score_grid("W_q", &s.q, &d.wq, b)?;
        check_score_grid("W_k", &s.k, &d.wk, b)?;
        check_score_grid("W_v", &s.v, &d.wv, b)?;
        check_score_grid("W_proj", &s.proj, &d.wproj, b)?;
        if s.int.len() != d.wint.cols() || s.out.len() != d.wout.rows() {
            return Err(Error::shape("neuron score length does not match D_mlp"));
        }
        let m = encoder_masks(s, r_b, d.heads)?;
        encoders.push(prune_encoder(d, &m, b)?);
        masks.push(m);
    }
    Ok(PrunedEncoders { encoders, masks })
}

/// Parameters physically stored by a pruned encoder.
pub fn encoder_param_count(w: &EncoderWeights) -> usize {
    let dense = |m: &BlockDenseMatrix| m.rows() * m.cols();
    let bias = |b: &Option<Vec<f64>>| b.as_ref().map_or(0, Vec::len);
    let biases = &w.biases;
    w.wq.stored_scalars()
        + w.wk.stored_scalars()
        + w.wv.stored_scalars()
        + w.wproj.stored_scalars()
        + dense(&w.wint)
        + dense(&w.wout)
        + bias(&biases.q)
        + bias(&biases.k)
        + bias(&biases.v)
        + bias(&biases.proj)
        + bias(&biases.int)
        + bias(&biases.out)
        + 2 * w.ln1.gain.len()
        + 2 * w.ln2.gain.len()
}

/// Density schedule from an initial to a final keep rate with warm-up and
/// a cubic ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub initial: f64,
    pub final_density: f64,
    pub warmup_steps: usize,
    pub ramp_steps: usize,
    pub total_steps: usize,
}

impl SparsitySchedule {
    pub fn new(
        initial: f64,
        final_density: f64,
        warmup_steps: usize,
        ramp_steps: usize,
        total_steps: usize,
    ) -> Result<Self> {
        if !(final_density > 0.0 && final_density <= initial && initial <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < final <= initial <= 1, got final={final_density} initial={initial}"
            )));
        }
        if warmup_steps + ramp_steps > total_steps {
            return Err(Error::invalid("warm-up plus ramp exceeds total steps"));
        }
        Ok(SparsitySchedule { initial, final_density, warmup_steps, ramp_steps, total_steps })
    }
}

/// Density (= top-k rate) at `step`.
pub fn cubic_density(step: usize, sched: &SparsitySchedule) -> f64 {
    let t0 = sched.warmup_steps;
    if step <= t0 {
        return sched.initial;
    }
    if sched.ramp_steps == 0 || step >= t0 + sched.ramp_steps {
        return sched.final_density;
    }
    let progress = (step - t0) as f64 / sched.ramp_steps as f64;
    sched.final_density + (sched.initial - sched.final_density) * (1.0 - progress).powi(3)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `lambda * sum(sigmoid(s))` over every score entry.
pub fn sparsity_penalty<'a>(groups: impl IntoIterator<Item = &'a [f64]>, lambda: f64) -> f64 {
    let total: f64 = groups.into_iter().flat_map(|g| g.iter()).map(|&s| sigmoid(s)).sum();
    lambda * total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneLossParams {
    pub lambda: f64,
    pub lambda_distill: f64,
    pub lambda_normal: f64,
    pub temperature: f64,
}

impl PruneLossParams {
    pub fn new(lambda: f64, lambda_distill: f64, lambda_normal: f64, temperature: f64) -> Result<Self> {
        if lambda < 0.0 || temperature <= 0.0 {
            return Err(Error::invalid("need lambda >= 0 and temperature > 0"));
        }
        Ok(PruneLossParams { lambda, lambda_distill, lambda_normal, temperature })
    }
}

fn log_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / t).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|&s| s - lse).collect()
}

/// `T^2 * KL(p_teacher(T) || p_student(T))`.
pub fn distill_loss(teacher: &[f64], student: &[f64], temperature: f64) -> Result<f64> {
    if teacher.len() != student.len() || teacher.is_empty() {
        return Err(Error::invalid(format!("logit lengths differ: {} vs {}", teacher.len(), student.len())));
    }
    if temperature <= 0.0 {
        return Err(Error::invalid("temperature must be positive"));
    }
    let lt = log_softmax(teacher, temperature);
    let ls = log_softmax(student, temperature);
    let kl: f64 = lt.iter().zip(&ls).map(|(&a, &b)| a.exp() * (a - b)).sum();
    Ok(temperature * temperature * kl.max(0.0))
}

/// `lambda_distill * L_distill + lambda_normal * (L_task + penalty)`.
pub fn net_loss(params: &PruneLossParams, task_loss: f64, penalty: f64, distill: f64) -> f64 {
    params.lambda_distill * distill + params.lambda_normal * (task_loss + penalty)
}

/// One replayed step of the fine-pruning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    pub step: usize,
    pub density: f64,
    pub kept_blocks: usize,
    pub total_blocks: usize,
    pub retained_heads: usize,
    pub penalty: f64,
}

/// Replays score snapshots through the schedule: at each step the masks are
/// recomputed from that step's scores at the scheduled density. Gradient
/// updates are outside this crate; snapshots stand in for them.
pub fn replay_schedule(
    snapshots: &[(usize, Vec<EncoderScores>)],
    sched: &SparsitySchedule,
    heads: usize,
    lambda: f64,
) -> Result<Vec<ReplayStep>> {
    let mut out = Vec::with_capacity(snapshots.len());
    for (step, scores) in snapshots {
        if *step > sched.total_steps {
            return Err(Error::invalid(format!("step {step} past schedule end {}", sched.total_steps)));
        }
        let density = cubic_density(*step, sched);
        let mut kept = 0;
        let mut total = 0;
        let mut retained = 0;
        for s in scores {
            let m = encoder_masks(s, density, heads)?;
            for mask in [&m.q, &m.k, &m.v, &m.proj] {
                kept += mask.ones();
                total += mask.rows() * mask.cols();
            }
            retained += m.retained_heads(heads);
        }
        let penalty = sparsity_penalty(scores.iter().flat_map(|s| s.groups()), lambda);
        out.push(ReplayStep {
            step: *step,
            density,
            kept_blocks: kept,
            total_blocks: total,
            retained_heads: retained,
            penalty,
        });
    }
    Ok(out)
}

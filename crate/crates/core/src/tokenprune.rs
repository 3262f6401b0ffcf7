//! Dynamic token pruning.
//!
//! Importance of a token is the attention it receives from the class token,
//! averaged over the active heads. At a token-dropping layer the top
//! `ceil((N - 1) * r_t)` non-class tokens survive and the rest are merged into
//! one fused token weighted by their normalized scores.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::blockmat::BlockDenseMatrix;
use crate::{keep_count, Error, Result};

/// Token matrix: row 0 is the class token.
pub type TokenMatrix = BlockDenseMatrix;

/// Mean over heads of the class-token row of each attention matrix.
pub fn importance_scores(a_heads: &[&BlockDenseMatrix]) -> Result<Vec<f64>> {
    let first = a_heads.first().ok_or_else(|| Error::invalid("need at least one attention head"))?;
    let n = first.rows();
    for a in a_heads {
        if a.rows() != a.cols() || a.rows() != n {
            return Err(Error::invalid(format!("attention matrix is {}x{}, expected {n}x{n}", a.rows(), a.cols())));
        }
    }
    let mut s = vec![0.0; n];
    for a in a_heads {
        for (j, v) in s.iter_mut().enumerate() {
            *v += a.get(0, j);
        }
    }
    let h = a_heads.len() as f64;
    s.iter_mut().for_each(|v| *v /= h);
    Ok(s)
}

/// Strict ranking order: higher score first, smaller id on ties.
pub fn rank_cmp(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Non-class token ids in ranking order.
pub fn rank_tokens(scores: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..scores.len()).collect();
    ids.sort_by(|&a, &b| rank_cmp(scores, a, b));
    ids
}

/// Number of non-class tokens kept out of `n` tokens.
pub fn kept_body_tokens(n: usize, r_t: f64) -> usize {
    keep_count(r_t, n - 1)
}

/// Token count after a dropping layer.
pub fn tokens_after(n: usize, r_t: f64) -> usize {
    let kept = kept_body_tokens(n, r_t);
    if kept == n - 1 {
        n
    } else {
        kept + 2
    }
}

fn check_rate(r_t: f64) -> Result<()> {
    if !(r_t > 0.0 && r_t <= 1.0) {
        return Err(Error::invalid(format!("keep rate must be in (0, 1], got {r_t}")));
    }
    Ok(())
}

/// One routing record per input token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEntry {
    pub id_old: usize,
    pub id_new: usize,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRouting {
    pub entries: Vec<RouteEntry>,
    /// Kept tokens including the class token.
    pub kept: usize,
}

impl TokenRouting {
    pub fn identity(n: usize) -> Self {
        TokenRouting { entries: (0..n).map(|i| RouteEntry { id_old: i, id_new: i, kept: true }).collect(), kept: n }
    }

    /// Builds routing from the ranked body order and the body keep count.
    pub fn from_ranking(n: usize, ranked: &[usize], keep: usize) -> Self {
        let mut entries: Vec<RouteEntry> =
            (0..n).map(|i| RouteEntry { id_old: i, id_new: keep + 1, kept: false }).collect();
        entries[0] = RouteEntry { id_old: 0, id_new: 0, kept: true };
        for (rank, &id) in ranked[..keep].iter().enumerate() {
            entries[id] = RouteEntry { id_old: id, id_new: rank + 1, kept: true };
        }
        TokenRouting { entries, kept: keep + 1 }
    }

    pub fn dropped(&self) -> usize {
        self.entries.len() - self.kept
    }
}

/// Weighted sum of `dropped` rows (in the given order) with weights
/// `s_i / sum(s)`; uniform weights if the scores sum to zero.
pub fn fuse_tokens(z: &TokenMatrix, scores: &[f64], dropped: &[usize]) -> Vec<f64> {
    let total: f64 = dropped.iter().map(|&i| scores[i]).sum();
    let weights: Vec<f64> = if total == 0.0 {
        vec![1.0 / dropped.len() as f64; dropped.len()]
    } else {
        dropped.iter().map(|&i| scores[i] / total).collect()
    };
    let mut out = vec![0.0; z.cols()];
    for (&i, &w) in dropped.iter().zip(&weights) {
        for (d, o) in out.iter_mut().enumerate() {
            *o += w * z.get(i, d);
        }
    }
    out
}

/// Assembles `[class; kept rows in rank order; fused]` from a ranking.
pub fn gather_tokens(z: &TokenMatrix, scores: &[f64], ranked: &[usize], keep: usize) -> Result<TokenMatrix> {
    let mut rows = Vec::with_capacity(keep + 2);
    rows.push(z.row(0));
    rows.extend(ranked[..keep].iter().map(|&i| z.row(i)));
    rows.push(fuse_tokens(z, scores, &ranked[keep..]));
    BlockDenseMatrix::from_rows(&rows, z.cols(), z.block_size())
}

/// Keeps the top `ceil((N - 1) * r_t)` non-class tokens and fuses the rest.
/// With nothing to drop the input is returned unchanged.
pub fn select_and_fuse(z: &TokenMatrix, scores: &[f64], r_t: f64) -> Result<(TokenMatrix, TokenRouting)> {
    check_rate(r_t)?;
    let n = z.rows();
    if n < 2 {
        return Err(Error::invalid(format!("token dropping needs at least 2 tokens, got {n}")));
    }
    if scores.len() != n {
        return Err(Error::invalid(format!("{} scores for {n} tokens", scores.len())));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("importance score {i} is not finite")));
    }
    let keep = kept_body_tokens(n, r_t);
    if keep == n - 1 {
        return Ok((z.clone(), TokenRouting::identity(n)));
    }
    let ranked = rank_tokens(scores);
    let out = gather_tokens(z, scores, &ranked, keep)?;
    Ok((out, TokenRouting::from_ranking(n, &ranked, keep)))
}

/// Where token dropping happens and at what keep rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdmConfig {
    /// 1-based encoder indices.
    pub layers: Vec<usize>,
    pub keep_rate: f64,
    #[serde(default)]
    pub overrides: BTreeMap<usize, f64>,
}

impl Default for TdmConfig {
    fn default() -> Self {
        TdmConfig { layers: vec![3, 7, 10], keep_rate: 1.0, overrides: BTreeMap::new() }
    }
}

impl TdmConfig {
    pub fn with_rate(keep_rate: f64) -> Self {
        TdmConfig { keep_rate, ..Self::default() }
    }

    pub fn disabled() -> Self {
        TdmConfig { layers: Vec::new(), keep_rate: 1.0, overrides: BTreeMap::new() }
    }

    /// Keep rate at 1-based layer `layer`, if it drops tokens.
    pub fn rate_at(&self, layer: usize) -> Option<f64> {
        self.layers.contains(&layer).then(|| self.overrides.get(&layer).copied().unwrap_or(self.keep_rate))
    }

    pub fn validate(&self, encoders: usize) -> Result<()> {
        tdm_layers(self, encoders)?;
        check_rate(self.keep_rate)?;
        for (&l, &r) in &self.overrides {
            if !self.layers.contains(&l) {
                return Err(Error::invalid(format!("keep-rate override for layer {l}, which drops no tokens")));
            }
            check_rate(r)?;
        }
        Ok(())
    }
}

/// The configured dropping layers, checked against the encoder count.
pub fn tdm_layers(cfg: &TdmConfig, encoders: usize) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for &l in &cfg.layers {
        if l == 0 || l > encoders {
            return Err(Error::invalid(format!("token-dropping layer {l} outside 1..={encoders}")));
        }
        out.insert(l);
    }
    Ok(out)
}

/// Token count entering each encoder, plus the final count.
pub fn token_trajectory(n: usize, encoders: usize, cfg: &TdmConfig) -> Result<Vec<usize>> {
    cfg.validate(encoders)?;
    let mut counts = Vec::with_capacity(encoders + 1);
    let mut cur = n;
    for l in 1..=encoders {
        counts.push(cur);
        if let Some(r) = cfg.rate_at(l) {
            if cur >= 2 {
                cur = tokens_after(cur, r);
            }
        }
    }
    counts.push(cur);
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockmat::{partition_dense, Matrix};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn attn(rows: &[&[f64]]) -> BlockDenseMatrix {
        let n = rows.len();
        partition_dense(&Matrix::new(n, n, rows.concat()).unwrap(), 2).unwrap()
    }

    fn random_tokens(rng: &mut ChaCha8Rng, n: usize, d: usize) -> TokenMatrix {
        partition_dense(&Matrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0)), 4).unwrap()
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    }

    #[test]
    fn uniform_single_head() {
        let a = attn(&[&[0.25; 4], &[0.25; 4], &[0.25; 4], &[0.25; 4]]);
        assert_eq!(importance_scores(&[&a]).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn two_head_mean() {
        let a = attn(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let b = attn(&[&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert_eq!(importance_scores(&[&a, &b]).unwrap(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn importance_rejects_mismatch() {
        let a = attn(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = attn(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(importance_scores(&[&a, &b]).is_err());
        assert!(importance_scores(&[]).is_err());
        let rect = partition_dense(&Matrix::zeros(2, 3), 2).unwrap();
        assert!(importance_scores(&[&rect]).is_err());
    }

    #[test]
    fn random_softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let heads: Vec<BlockDenseMatrix> = (0..6)
            .map(|_| {
                let rows: Vec<Vec<f64>> = (0..10).map(|_| random_scores(&mut rng, 10)).collect();
                BlockDenseMatrix::from_rows(&rows, 10, 4).unwrap()
            })
            .collect();
        let refs: Vec<&BlockDenseMatrix> = heads.iter().collect();
        let s = importance_scores(&refs).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn count_rule_at_197() {
        assert_eq!(tokens_after(197, 0.7), 140);
        assert_eq!(tokens_after(197, 0.5), 100);
        assert_eq!(tokens_after(197, 0.9), 179);
        assert_eq!(tokens_after(197, 1.0), 197);
    }

    #[test]
    fn full_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random_tokens(&mut rng, 7, 5);
        let s = random_scores(&mut rng, 7);
        let (out, routing) = select_and_fuse(&z, &s, 1.0).unwrap();
        assert_eq!(out, z);
        assert_eq!(routing, TokenRouting::identity(7));
    }

    #[test]
    fn hand_fused_token() {
        // r_t = 0.33 keeps ceil(3 * 0.33) = 1 body token.
        let z = BlockDenseMatrix::from_rows(&[vec![9.0, 9.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]], 2, 2)
            .unwrap();
        let s = [0.0, 0.5, 0.3, 0.2];
        let (out, routing) = select_and_fuse(&z, &s, 0.33).unwrap();
        assert_eq!(out.rows(), 3);
        assert_eq!(out.row(0), vec![9.0, 9.0]);
        assert_eq!(out.row(1), vec![1.0, 0.0]);
        let want = [(0.3 * 0.0 + 0.2 * 2.0) / 0.5, (0.3 * 1.0 + 0.2 * 2.0) / 0.5];
        for (g, w) in out.row(2).iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
        assert_eq!(routing.kept, 2);
        assert_eq!(routing.entries[1], RouteEntry { id_old: 1, id_new: 1, kept: true });
        assert_eq!(routing.entries[2], RouteEntry { id_old: 2, id_new: 2, kept: false });
        assert_eq!(routing.entries[3].id_new, 2);
    }

    #[test]
    fn zero_scores_fuse_uniformly() {
        let z = BlockDenseMatrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![4.0]], 1, 1).unwrap();
        let (out, _) = select_and_fuse(&z, &[1.0, 1.0, 0.0, 0.0], 0.3).unwrap();
        assert_eq!(out.row(2), vec![3.0]);
    }

    #[test]
    fn select_rejects_bad_input() {
        let z1 = BlockDenseMatrix::zeros(1, 2, 2).unwrap();
        assert!(select_and_fuse(&z1, &[1.0], 0.5).is_err());
        let z = BlockDenseMatrix::zeros(3, 2, 2).unwrap();
        assert!(select_and_fuse(&z, &[1.0, 0.5], 0.5).is_err());
        assert!(select_and_fuse(&z, &[1.0, 0.5, 0.1], 0.0).is_err());
    }

    #[test]
    fn default_layers() {
        let cfg = TdmConfig::default();
        assert_eq!(tdm_layers(&cfg, 12).unwrap(), BTreeSet::from([3, 7, 10]));
        assert!(tdm_layers(&TdmConfig::disabled(), 12).unwrap().is_empty());
        let bad = TdmConfig { layers: vec![13], ..TdmConfig::default() };
        assert!(tdm_layers(&bad, 12).is_err());
    }

    #[test]
    fn trajectory_composes_rule() {
        let t = token_trajectory(197, 12, &TdmConfig::with_rate(0.7)).unwrap();
        let after3 = tokens_after(197, 0.7);
        let after7 = tokens_after(after3, 0.7);
        let after10 = tokens_after(after7, 0.7);
        assert_eq!(&t[..4], &[197, 197, 197, after3]);
        assert_eq!(t[7], after7);
        assert_eq!(t[12], after10);
        assert_eq!(after3, 140);
    }

    #[test]
    fn overrides_apply_per_layer() {
        let mut cfg = TdmConfig::with_rate(0.7);
        cfg.overrides.insert(7, 0.5);
        assert_eq!(cfg.rate_at(3), Some(0.7));
        assert_eq!(cfg.rate_at(7), Some(0.5));
        assert_eq!(cfg.rate_at(4), None);
        cfg.overrides.insert(5, 0.5);
        assert!(cfg.validate(12).is_err());
    }

    proptest! {
        #[test]
        fn kept_set_is_sorted_top_k(n in 2usize..64, r_t in 0.01f64..=1.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_tokens(&mut rng, n, 3);
            // coarse scores so ties happen
            let s: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0u8..5))).collect();
            let (out, routing) = select_and_fuse(&z, &s, r_t).unwrap();
            let k = keep_count(r_t, n - 1);
            let mut oracle: Vec<(f64, usize)> = (1..n).map(|i| (-s[i], i)).collect();
            oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: BTreeSet<usize> = oracle[..k].iter().map(|&(_, i)| i).collect();
            let kept: BTreeSet<usize> = routing.entries.iter().skip(1).filter(|e| e.kept).map(|e| e.id_old).collect();
            prop_assert_eq!(kept, expected);
            prop_assert_eq!(out.rows(), if k == n - 1 { n } else { k + 2 });
            let mut ids: Vec<usize> = routing.entries.iter().filter(|e| e.kept).map(|e| e.id_new).collect();
            ids.sort_unstable();
            prop_assert_eq!(ids, (0..routing.kept).collect::<Vec<_>>());
        }

        #[test]
        fn count_decreases_with_rate(n in 3usize..300, a in 0.01f64..=1.0, b in 0.01f64..=1.0) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(tokens_after(n, lo) <= tokens_after(n, hi));
        }

        #[test]
        fn fused_token_in_convex_hull(n in 3usize..30, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_tokens(&mut rng, n, 4);
            let s = random_scores(&mut rng, n);
            let ranked = rank_tokens(&s);
            let dropped = &ranked[1..];
            let total: f64 = dropped.iter().map(|&i| s[i]).sum();
            let wsum: f64 = dropped.iter().map(|&i| s[i] / total).sum();
            prop_assert!((wsum - 1.0).abs() < 1e-12);
            let f = fuse_tokens(&z, &s, dropped);
            for (d, v) in f.iter().enumerate() {
                let lo = dropped.iter().map(|&i| z.get(i, d)).fold(f64::INFINITY, f64::min);
                let hi = dropped.iter().map(|&i| z.get(i, d)).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }

        #[test]
        fn permutation_commutes(n in 3usize..40, r_t in 0.05f64..0.95, seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = random_tokens(&mut rng, n, 3);
            // distinct scores
            let mut s: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
            s[1..].shuffle(&mut rng);
            let mut perm: Vec<usize> = (1..n).collect();
            perm.shuffle(&mut rng);
            perm.insert(0, 0);
            let zp = BlockDenseMatrix::from_rows(&perm.iter().map(|&p| z.row(p)).collect::<Vec<_>>(), 3, 4).unwrap();
            let sp: Vec<f64> = perm.iter().map(|&p| s[p]).collect();
            let (a, _) = select_and_fuse(&z, &s, r_t).unwrap();
            let (b, _) = select_and_fuse(&zp, &sp, r_t).unwrap();
            if kept_body_tokens(n, r_t) == n - 1 {
                // nothing dropped: each output is its own input
                prop_assert_eq!(a, z);
                prop_assert_eq!(b, zp);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }
}

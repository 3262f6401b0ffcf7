use proptest::prelude::*;

use vitsim_core::accelsim::{simulate_encoder, simulate_encoder_timing, simulate_sbmm, HardwareConfig};
use vitsim_core::blockmat::{compress, partition_dense, sbmm_ref, Matrix, SparseLayout};
use vitsim_core::staticprune::{encoder_masks, prune_encoder, EncoderMasks};
use vitsim_core::tokenprune::TdmConfig;
use vitsim_core::vitref::synth::{random_image, synthetic_dense_model, synthetic_scores};
use vitsim_core::vitref::{
    embed, model_forward, msa_forward, DenseEncoder, DenseModel, EncoderLayout, Model, ModelConfig,
};

fn toy(heads: usize, b: usize, layers: usize, tdm: Vec<usize>, rate: f64) -> ModelConfig {
    ModelConfig {
        layers,
        heads,
        dim: heads * 2 * b,
        head_dim: 2 * b,
        mlp_dim: 3 * b,
        image_height: 24,
        image_width: 24,
        channels: 2,
        patch: 4,
        classes: 4,
        block: b,
        tdm: TdmConfig { layers: tdm, keep_rate: rate, ..TdmConfig::default() },
        biases: true,
    }
}

/// Masks from synthetic scores, every MLP neuron kept.
fn masks(cfg: &ModelConfig, seed: u64, r_b: f64) -> Vec<EncoderMasks> {
    synthetic_scores(cfg, seed)
        .unwrap()
        .iter()
        .map(|s| EncoderMasks { neurons: vec![true; cfg.mlp_dim], ..encoder_masks(s, r_b, cfg.heads).unwrap() })
        .collect()
}

fn zero_masked(m: &Matrix, b: usize, keep: &vitsim_core::staticprune::PruneMask) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| if keep.get(i / b, j / b) { m.get(i, j) } else { 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pruned_forward_equals_masked_dense(seed in 0u64..1000, heads in 1usize..4, r_b in 0.2f64..=1.0) {
        let cfg = toy(heads, 4, 2, vec![], 1.0);
        let dense = synthetic_dense_model(&cfg, seed).unwrap();
        let ms = masks(&cfg, seed + 1, r_b);
        let b = cfg.block;
        let pruned: Vec<_> = dense.encoders.iter().zip(&ms).map(|(d, m)| prune_encoder(d, m, b).unwrap()).collect();
        let zeroed: Vec<DenseEncoder> = dense
            .encoders
            .iter()
            .zip(&ms)
            .map(|(d, m)| DenseEncoder {
                wq: zero_masked(&d.wq, b, &m.q),
                wk: zero_masked(&d.wk, b, &m.k),
                wv: zero_masked(&d.wv, b, &m.v),
                wproj: zero_masked(&d.wproj, b, &m.proj),
                ..d.clone()
            })
            .collect();
        let img = random_image(&cfg, seed);
        let sparse = model_forward(&img, &Model::new(cfg.clone(), dense.embedding.clone(), pruned).unwrap()).unwrap();
        let full = DenseModel { encoders: zeroed, ..dense };
        let reference = model_forward(&img, &full.to_model().unwrap()).unwrap();
        for (a, e) in sparse.logits.iter().zip(&reference.logits) {
            prop_assert!((a - e).abs() <= 1e-9 * e.abs().max(1.0), "{} vs {}", a, e);
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, heads in 1usize..4) {
        let cfg = toy(heads, 4, 1, vec![], 1.0);
        let m = synthetic_dense_model(&cfg, seed).unwrap().to_model().unwrap();
        let z = embed(&random_image(&cfg, seed), &m.embedding, &cfg).unwrap();
        let out = msa_forward(&z, &m.encoders[0]).unwrap();
        prop_assert_eq!(out.attention.len(), heads);
        for (_, a) in &out.attention {
            for i in 0..a.rows() {
                let row = a.row(i);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn token_counts_only_fall_at_dropping_layers(seed in 0u64..1000, rate in 0.1f64..=1.0, l1 in 1usize..=4, l2 in 1usize..=4) {
        let cfg = toy(2, 4, 4, vec![l1, l2], rate);
        let m = synthetic_dense_model(&cfg, seed).unwrap().to_model().unwrap();
        let f = model_forward(&random_image(&cfg, seed), &m).unwrap();
        prop_assert_eq!(f.token_counts[0], cfg.tokens());
        for l in 1..=cfg.layers {
            let (before, after) = (f.token_counts[l - 1], f.token_counts[l]);
            prop_assert!(after <= before);
            if !cfg.tdm.layers.contains(&l) {
                prop_assert_eq!(after, before);
            }
        }
    }

    #[test]
    fn simulated_encoder_is_bit_exact(seed in 0u64..1000, r_b in 0.2f64..=1.0, rate in 0.2f64..=1.0) {
        let cfg = toy(3, 4, 1, vec![1], rate);
        let dense = synthetic_dense_model(&cfg, seed).unwrap();
        let m = masks(&cfg, seed + 7, r_b);
        let w = prune_encoder(&dense.encoders[0], &m[0], cfg.block).unwrap();
        let emb = dense.to_model().unwrap().embedding;
        let z = embed(&random_image(&cfg, seed), &emb, &cfg).unwrap();
        let hw = HardwareConfig { p_h: 2, p_t: 2, p_c: 2, p_pe: 2, b: 4, em_throughput: 8, sorter_width: 4, ..HardwareConfig::default() };
        let want = vitsim_core::vitref::encoder_forward(&z, &w, Some(rate)).unwrap();
        let (got, report) = simulate_encoder(&z, &w, Some(rate), &hw).unwrap();
        prop_assert_eq!(got, want.z);
        prop_assert_eq!(report.total_cycles, report.stage_cycles.total());
    }

    #[test]
    fn sbmm_matches_reference(seed in any::<u64>(), m in 1usize..40, k in 1usize..40, n in 1usize..40, density in 0.0f64..=1.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = 4;
        let x = partition_dense(&Matrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..1.0)), b).unwrap();
        let wd = partition_dense(&Matrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0)), b).unwrap();
        let mask = vitsim_core::staticprune::PruneMask::from_fn(wd.grid_rows(), wd.grid_cols(), |_, _| rng.gen_bool(density));
        let w = compress(&wd, &mask).unwrap();
        let hw = HardwareConfig { p_h: 3, p_t: 2, p_c: 3, p_pe: 2, b, ..HardwareConfig::default() };
        let (y, s) = simulate_sbmm(&x, &w, 2, &hw).unwrap();
        prop_assert_eq!(y, sbmm_ref(&x, &w).unwrap());
        // array can never do more work than it has PEs for
        prop_assert!(s.busy <= s.cycles * (hw.p_h * hw.p_t * hw.p_c) as u64);
    }

    #[test]
    fn cycles_monotone_in_phi(keep in 1usize..8, heads in 1usize..5, n in 2usize..80) {
        let b = 8;
        let (d, w) = (64, heads * 16);
        let stagger = |rows: usize, cols: usize, k: usize| {
            vitsim_core::staticprune::PruneMask::from_fn(rows, cols, |i, j| (i + rows - j % rows) % rows < k)
        };
        let layout = |k: usize| EncoderLayout {
            heads,
            head_dim: 16,
            dim: d,
            mlp_dim: 128,
            b,
            q: SparseLayout::from_mask(d, w, b, &stagger(d / b, w / b, k)).unwrap(),
            k: SparseLayout::from_mask(d, w, b, &stagger(d / b, w / b, k)).unwrap(),
            v: SparseLayout::from_mask(d, w, b, &stagger(d / b, w / b, k)).unwrap(),
            proj: SparseLayout::from_mask(w, d, b, &stagger(w / b, d / b, k.min(w / b))).unwrap(),
            biases: [false; 6],
        };
        let hw = HardwareConfig { p_h: 2, p_t: 3, p_c: 2, p_pe: 4, b, ..HardwareConfig::default() };
        let lo = simulate_encoder_timing(&layout(keep), n, None, &hw).unwrap();
        let hi = simulate_encoder_timing(&layout(keep + 1), n, None, &hw).unwrap();
        prop_assert!(hi.total_cycles >= lo.total_cycles);
        prop_assert!(hi.stage_cycles.qkv >= lo.stage_cycles.qkv);
    }
}

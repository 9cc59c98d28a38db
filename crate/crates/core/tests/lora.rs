use lseg::encoder::{loose_descriptors, Bypass, EncoderConfig};
use lseg::lora::{
    adapter_param_count, build_loose_embedding, expand_loose, param_budget, FactorRole, LoraLinear,
};
use lseg::rng::Rng;
use lseg::{Grid, Model};
use lseg_autograd::{avg_pool_1d, expand_windows, Tape, Tensor};
use proptest::prelude::*;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.normal())
}

fn dense_forward(layer: &LoraLinear, f: &Tensor) -> Tensor {
    let mut y = layer.merge().matmul(f).unwrap();
    let n = f.shape()[1];
    if let Some(b) = &layer.bias {
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += b.data()[i / n];
        }
    }
    y
}

proptest! {
    #[test]
    fn bypass_matches_merged_weight(d_in in 1usize..10, d_out in 1usize..10, n in 1usize..5, seed in any::<u64>(), with_bias in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let rank = 1 + rng.below(d_in.min(d_out));
        let bias = with_bias.then(|| random(&mut rng, &[d_out]));
        let layer = LoraLinear::from_parts(
            random(&mut rng, &[d_out, d_in]),
            bias,
            random(&mut rng, &[rank, d_in]),
            random(&mut rng, &[d_out, rank]),
        ).unwrap();
        let f = random(&mut rng, &[d_in, n]);
        let mut tape = Tape::new();
        let fv = tape.constant(f.clone());
        let y = layer.forward(&mut tape, fv).unwrap();
        let diff = tape.value(y).sub(&dense_forward(&layer, &f)).unwrap().max_abs();
        prop_assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn fresh_adapter_is_the_frozen_layer(d_in in 1usize..10, d_out in 1usize..10, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let rank = 1 + rng.below(d_in.min(d_out));
        let w = random(&mut rng, &[d_out, d_in]);
        let layer = LoraLinear::new(w.clone(), None, rank, &mut rng).unwrap();
        prop_assert_eq!(layer.b.max_abs(), 0.0);
        prop_assert_eq!(layer.merge(), w);
        prop_assert_eq!(layer.a.len() + layer.b.len(), adapter_param_count(d_in, d_out, rank));
    }

    #[test]
    fn pool_inverts_expand(p in 1usize..20, k in 1usize..8, seed in any::<u64>()) {
        let row = random(&mut Rng::new(seed), &[p]);
        let back = avg_pool_1d(&expand_windows(&row, p * k).unwrap(), p).unwrap();
        prop_assert!(back.sub(&row).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn expand_keeps_window_means(n in 1usize..60, p_seed in 0usize..60, seed in any::<u64>()) {
        let p = 1 + p_seed % n;
        let x = random(&mut Rng::new(seed), &[n]);
        let pooled = avg_pool_1d(&x, p).unwrap();
        let back = avg_pool_1d(&expand_windows(&pooled, n).unwrap(), p).unwrap();
        prop_assert!(back.sub(&pooled).unwrap().max_abs() <= 1e-12);
    }
}

#[test]
fn rank_above_dimensions_is_rejected() {
    let mut rng = Rng::new(0);
    assert!(LoraLinear::new(Tensor::zeros(vec![3, 2]), None, 3, &mut rng).is_err());
    assert!(LoraLinear::new(Tensor::zeros(vec![3, 2]), None, 0, &mut rng).is_err());
    let bad_bias = LoraLinear::new(Tensor::zeros(vec![3, 2]), Some(Tensor::zeros(vec![2])), 1, &mut rng);
    assert!(bad_bias.is_err());
}

#[test]
fn loose_rows_are_pooled_factors() {
    let mut rng = Rng::new(3);
    let layers: Vec<LoraLinear> = (0..2)
        .map(|_| {
            let mut l = LoraLinear::new(random(&mut rng, &[6, 4]), None, 2, &mut rng).unwrap();
            l.b = random(&mut rng, &[6, 2]);
            l
        })
        .collect();
    let named: Vec<(String, &LoraLinear)> = layers.iter().enumerate().map(|(i, l)| (format!("l{i}"), l)).collect();
    let emb = build_loose_embedding(&named, 4).unwrap();
    assert_eq!(emb.matrix.shape(), &[4, 4]);
    assert_eq!(emb.row_of("l1", FactorRole::A).unwrap(), 2);

    // A of l0 is 2x4, flattened to 8 values and pooled in windows of two
    let a = layers[0].a.data();
    for j in 0..4 {
        let want = (a[2 * j] + a[2 * j + 1]) / 2.0;
        assert!((emb.matrix.at2(0, j) - want).abs() < 1e-15);
    }
    let rebuilt = emb.expand("l0", FactorRole::B).unwrap();
    assert_eq!(rebuilt.shape(), &[6, 2]);
    assert!(emb.expand("l9", FactorRole::A).is_err());
    assert!(build_loose_embedding(&named, 9).is_err());
    assert!(build_loose_embedding(&named, 0).is_err());
}

#[test]
fn tape_expand_matches_plain_expand() {
    let cfg = EncoderConfig {
        embed_dim: 8,
        lora_rank: 2,
        pooled_len: 5,
        num_blocks: 1,
        image_size: 16,
        patch_size: 4,
        ..EncoderConfig::default()
    };
    let descriptors = loose_descriptors(&cfg);
    let m = random(&mut Rng::new(1), &[descriptors.len(), 5]);
    let mut tape = Tape::new();
    let mv = tape.leaf(m.clone(), true);
    let b = expand_loose(&mut tape, mv, &descriptors, "block0/v", FactorRole::B).unwrap();
    let row = lseg::lora::row_of(&descriptors, "block0/v", FactorRole::B).unwrap();
    let want = expand_windows(&Tensor::new(vec![5], m.data()[row * 5..row * 5 + 5].to_vec()).unwrap(), 16)
        .unwrap()
        .reshape(vec![8, 2])
        .unwrap();
    assert_eq!(tape.value(b), &want);
}

#[test]
fn budget_matches_built_model() {
    for loose in [false, true] {
        for rank in [1, 4] {
            let cfg = EncoderConfig {
                use_loose_embedding: loose,
                lora_rank: rank,
                ..EncoderConfig::default()
            };
            let model = Model::new(cfg, 0).unwrap();
            let b = param_budget(&cfg);
            assert_eq!(model.params.trainable_count(), b.trainable_count);
            assert_eq!(model.params.frozen_count(), b.frozen_count);
            let expected = if loose {
                loose_descriptors(&cfg).len() * cfg.pooled_len
            } else {
                2 * cfg.num_blocks * adapter_param_count(cfg.embed_dim, cfg.embed_dim, rank)
            };
            assert_eq!(b.bypass_trainable, expected);
            assert!(b.encoder_fraction() < 0.15);
        }
    }
}

#[test]
fn untrained_bypass_leaves_embedding_unchanged() {
    let cfg = EncoderConfig {
        use_loose_embedding: false,
        ..EncoderConfig::default()
    };
    let model = Model::new(cfg, 9).unwrap();
    let mut rng = Rng::new(4);
    let image = Grid::from_fn(64, 64, |_, _| rng.uniform());
    let a = model.embed(&image, Bypass::Enabled).unwrap();
    let b = model.embed(&image, Bypass::Disabled).unwrap();
    assert_eq!(a.grid, b.grid);
}

#[test]
fn trained_bypass_changes_embedding() {
    let cfg = EncoderConfig::default();
    let mut model = Model::new(cfg, 9).unwrap();
    for v in model.params.tensor_mut("loose/M").unwrap().data_mut() {
        *v += 0.5;
    }
    let image = Grid::from_fn(64, 64, |r, c| ((r + c) % 7) as f64 / 7.0);
    let a = model.embed(&image, Bypass::Enabled).unwrap();
    let b = model.embed(&image, Bypass::Disabled).unwrap();
    assert!(a.grid.sub(&b.grid).unwrap().max_abs() > 1e-6);
}

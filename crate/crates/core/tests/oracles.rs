//! Straight-line reference evaluations of attention, the encoder, the full
//! forward pass and the loss, plus frozen reference values for the scalar
//! building blocks.

mod common;

use common::*;
use hgr_core::embedding::{embed, EmbeddingParams, PatchScheme};
use hgr_core::encoder::{encoder_forward, self_attention, EncoderLayer};
use hgr_core::harness::argmax;
use hgr_core::layers::Init;
use hgr_core::model::{loss, Logits};
use hgr_core::preprocess::mu_law;
use hgr_core::tensor::{AdamConfig, AdamState};
use hgr_core::{Graph, LossMode, Model, ParamSet, PathKind, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn hand_set_three_token_attention() {
    let mut params = ParamSet::<f64>::new();
    let layer = EncoderLayer::new(&mut params, &mut Init::new(0), "l", 4, 8, 2).unwrap();
    let w: Vec<f64> = (0..48)
        .map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0)
        .collect();
    *params.get_mut(layer.qkv.weight) = Tensor::new(vec![4, 12], w).unwrap();
    let z: Mat = vec![
        vec![1.0, 0.0, -1.0, 0.5],
        vec![0.2, 0.4, 0.6, 0.8],
        vec![-0.3, 0.9, 0.1, -0.7],
    ];
    let w_qkv = to_mat(params.get(layer.qkv.weight));
    for h in 0..2 {
        let mut g = Graph::new();
        let vars = g.bind(&params);
        let zv = g.leaf(Tensor::new(vec![1, 3, 4], flat(&z)).unwrap());
        let (out, probs) = self_attention(&mut g, &vars, zv, &layer, h).unwrap();
        let expected = flat(&attention_head(&z, &w_qkv, 2, h));
        assert!(max_diff(g.value(out).data(), &expected) < TOL, "head {h}");
        for row in g.value(probs).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < TOL);
        }
    }
}

#[test]
fn two_layer_encoder_matches_reference() {
    for seed in 0..5 {
        let mut params = ParamSet::<f64>::new();
        let mut init = Init::new(seed);
        let layers: Vec<EncoderLayer> = (0..2)
            .map(|l| {
                EncoderLayer::new(&mut params, &mut init, &format!("enc.{l}"), 8, 16, 2).unwrap()
            })
            .collect();
        jitter(&mut params, seed, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = random_tensor(&mut rng, &[1, 5, 8]);

        let mut g = Graph::new();
        let vars = g.bind(&params);
        let zv = g.leaf(z0.clone());
        let out = encoder_forward(&mut g, &vars, zv, &layers).unwrap();

        let z = to_mat(&z0.clone().reshape(vec![5, 8]).unwrap());
        let expected = encoder_layer(&encoder_layer(&z, &params, "enc.0", 2), &params, "enc.1", 2);
        assert!(max_diff(g.value(out).data(), &flat(&expected)) < TOL);
    }
}

fn check_forward(config: hgr_core::ModelConfig) {
    for seed in 0..4 {
        let mut model = Model::<f64>::new(config.clone(), seed).unwrap();
        jitter(&mut model.params, seed, 0.2);
        let x = toy_batch(seed + 10, &config, 3);
        let mut g = Graph::new();
        let vars = g.bind(&model.params);
        let logits = model.forward(&mut g, &vars, &x, 3).unwrap();
        for b in 0..3 {
            let (y, y_t, y_f) = reference_forward(&model, &nested(&x, &config, b));
            for (var, expected) in [(logits.fused, y), (logits.tnet, y_t), (logits.fnet, y_f)] {
                assert_eq!(var.is_some(), expected.is_some());
                if let (Some(v), Some(e)) = (var, expected) {
                    assert!(max_diff(g.value(v).row(b), &e) < TOL);
                }
            }
        }
    }
}

#[test]
fn forward_matches_reference_for_every_path_layout() {
    check_forward(toy_config());
    for variant in [Variant::TNet, Variant::FNet] {
        let mut c = toy_config();
        c.variant = variant;
        c.paths = variant.paths();
        check_forward(c);
    }
    let mut deep = toy_config();
    deep.layers = 2;
    check_forward(deep);
}

fn logits_leaves(g: &mut Graph<f64>, rows: [&Tensor<f64>; 3]) -> Logits {
    Logits {
        tnet: Some(g.leaf(rows[0].clone())),
        fnet: Some(g.leaf(rows[1].clone())),
        fused: Some(g.leaf(rows[2].clone())),
    }
}

#[test]
fn uniform_logits_three_term_loss() {
    let t = Tensor::<f64>::zeros(vec![4, 49]);
    let mut g = Graph::new();
    let logits = logits_leaves(&mut g, [&t, &t, &t]);
    let v = loss(&mut g, &logits, &[0, 7, 48, 20], LossMode::ThreeTerm)
        .unwrap()
        .values(&g);
    assert!((v.total - 3.0 * 49f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let ts: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut rng, &[6, 9])).collect();
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..9)).collect();
        let ce: Vec<f64> = ts
            .iter()
            .map(|t| cross_entropy(&to_mat(t), &labels))
            .collect();

        let mut g = Graph::new();
        let logits = logits_leaves(&mut g, [&ts[0], &ts[1], &ts[2]]);
        let three = loss(&mut g, &logits, &labels, LossMode::ThreeTerm)
            .unwrap()
            .values(&g);
        assert!((three.total - (ce[0] + ce[1] + ce[2])).abs() < 1e-12);

        let fused = loss(&mut g, &logits, &labels, LossMode::FusedOnly)
            .unwrap()
            .values(&g);
        assert!((fused.total - ce[2]).abs() < 1e-12);
        assert_eq!(fused.fused, Some(fused.total));
        assert!((fused.tnet.unwrap() - ce[0]).abs() < 1e-12);
    }
}

#[test]
fn fused_only_requires_hybrid() {
    let mut g = Graph::<f64>::new();
    let logits = Logits {
        fnet: Some(g.leaf(Tensor::zeros(vec![1, 3]))),
        ..Default::default()
    };
    assert!(loss(&mut g, &logits, &[0], LossMode::FusedOnly).is_err());
    assert!(loss(&mut g, &logits, &[0], LossMode::ThreeTerm).is_ok());
}

#[test]
fn argmax_ignores_constant_shift() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let row: Vec<f64> = (0..49).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = rng.random_range(-100.0..100.0);
        let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
        assert_eq!(argmax(&row), argmax(&shifted));
    }
}

#[test]
fn embedding_rows_follow_patch_permutation() {
    let scheme = PatchScheme::new(PathKind::Featural, 4, 24, 3).unwrap();
    let mut params = ParamSet::<f64>::new();
    let e = EmbeddingParams::new(&mut params, &mut Init::new(2), "e", &scheme, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let patches = random_tensor(&mut rng, &[1, scheme.n_patches, scheme.patch_dim]);
    let run = |params: &ParamSet<f64>, patches: &Tensor<f64>| {
        let mut g = Graph::new();
        let vars = g.bind(params);
        let p = g.constant(patches.clone());
        let out = embed(&mut g, &vars, p, &e).unwrap();
        to_mat(
            &g.value(out)
                .clone()
                .reshape(vec![scheme.n_patches + 1, 8])
                .unwrap(),
        )
    };
    let base = run(&params, &patches);

    let (i, j) = (1, 4);
    let pd = scheme.patch_dim;
    let mut swapped = patches.clone();
    let d = swapped.data_mut();
    for k in 0..pd {
        d.swap(i * pd + k, j * pd + k);
    }
    let mut p2 = params.clone();
    let pos = p2.get_mut(e.pos).data_mut();
    for k in 0..8 {
        pos.swap((i + 1) * 8 + k, (j + 1) * 8 + k);
    }
    let out = run(&p2, &swapped);
    let mut expected = base.clone();
    expected.swap(i + 1, j + 1);
    assert!(max_diff(&flat(&out), &flat(&expected)) < 1e-12);
}

/// Swapping two featural time blocks of the input together with their
/// positional rows leaves the class token, and so the prediction, unchanged.
#[test]
fn prediction_is_equivariant_over_patch_order() {
    let mut config = toy_config();
    config.variant = Variant::FNet;
    config.paths = Variant::FNet.paths();
    let (s, w, c) = (config.n_sensors, config.window_samples(), config.channels);
    for seed in 0..5 {
        let mut model = Model::<f64>::new(config.clone(), seed).unwrap();
        jitter(&mut model.params, seed, 0.2);
        let x = toy_batch(seed, &config, 1);
        let (i, j) = (0, 5);
        let mut x2 = x.clone();
        for sensor in 0..s {
            for dt in 0..s {
                for k in 0..c {
                    let a = (sensor * w + i * s + dt) * c + k;
                    let b = (sensor * w + j * s + dt) * c + k;
                    x2.swap(a, b);
                }
            }
        }
        let before = model.predict(&x, 1).unwrap();
        let pos = model.params.find("fnet.embed.pos").unwrap();
        let d = config.dim;
        let rows = model.params.get_mut(pos).data_mut();
        for k in 0..d {
            rows.swap((i + 1) * d + k, (j + 1) * d + k);
        }
        let after = model.predict(&x2, 1).unwrap();
        let (a, b) = (before[0].1.data(), after[0].1.data());
        assert!(max_diff(a, b) < 1e-9);
        assert_eq!(argmax(a), argmax(b));
    }
}

#[test]
fn mu_law_reference_values() {
    assert!((mu_law(0.5, 255.0) - 0.8757030686492349).abs() < 1e-12);
    assert_eq!(mu_law(1.0, 255.0), 1.0);
    assert_eq!(mu_law(-1.0, 255.0), -1.0);
    assert_eq!(mu_law(0.0, 255.0), 0.0);
    let mut prev = -1.0;
    for i in -99..=100 {
        let x = i as f64 / 100.0;
        let y = mu_law(x, 255.0);
        assert!(y > prev);
        assert_eq!(mu_law(-x, 255.0), -y);
        prev = y;
    }
}

#[test]
fn scalar_building_blocks() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let b = g.leaf(Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
    let m = g.matmul(a, b).unwrap();
    assert_eq!(g.value(m).data(), &[19.0, 22.0, 43.0, 50.0]);

    let x = g.leaf(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
    let s = g.softmax_lastdim(x).unwrap();
    let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
    assert!(max_diff(g.value(s).data(), &expected) < 1e-12);
    let ce = g.cross_entropy(x, &[2]).unwrap();
    assert!((g.value(ce).data()[0] - 0.40760596444438046).abs() < 1e-12);

    let one = g.leaf(Tensor::scalar(1.0));
    let ge = g.gelu(one);
    assert!((g.value(ge).data()[0] - 0.8413447460685429).abs() < 1e-12);
}

#[test]
fn adam_on_a_parabola() {
    let mut params = ParamSet::<f64>::new();
    let id = params.add("theta", Tensor::scalar(1.0).with_grad());
    let config = AdamConfig {
        lr: 0.1,
        weight_decay: 0.0,
        ..Default::default()
    };
    let mut adam = AdamState::new(config, &params);
    for _ in 0..100 {
        let theta = params.get(id).data()[0];
        params.zero_grad();
        params.get_mut(id).accumulate_grad(&[2.0 * theta]).unwrap();
        adam.step(&mut params).unwrap();
    }
    assert!((params.get(id).data()[0] - 0.002936675681102549).abs() < 1e-12);
}

use h4vdm::nn::{
    patchify, softmax_rows, Embedding, Encoder, LayerNorm, Linear, Mat, MultiHeadAttention, Params, TransformerLayer,
    ViTConfig, Vit,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat<f64> {
    Mat::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

/// Multi-head attention written out with scalar loops.
fn msa_reference(z: &Mat<f64>, attn: &MultiHeadAttention<f64>) -> Vec<Vec<f64>> {
    let (n, d) = z.shape();
    let h = attn.heads;
    let dh = d / h;
    let u = &attn.w_qkv;
    let proj = |row: usize, col: usize| -> f64 { (0..d).map(|k| z.get(row, k) * u.get(k, col)).sum() };
    let mut concat = vec![vec![0.0; d]; n];
    for head in 0..h {
        let base = 3 * head * dh;
        let q: Vec<Vec<f64>> = (0..n).map(|i| (0..dh).map(|c| proj(i, base + c)).collect()).collect();
        let k: Vec<Vec<f64>> = (0..n).map(|i| (0..dh).map(|c| proj(i, base + dh + c)).collect()).collect();
        let v: Vec<Vec<f64>> = (0..n).map(|i| (0..dh).map(|c| proj(i, base + 2 * dh + c)).collect()).collect();
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..dh {
                concat[i][head * dh + c] = (0..n).map(|j| e[j] / total * v[j][c]).sum();
            }
        }
    }
    let w = &attn.out.w;
    let b = attn.out.b.as_ref().unwrap();
    (0..n)
        .map(|i| (0..d).map(|o| b.get(0, o) + (0..d).map(|k| concat[i][k] * w.get(k, o)).sum::<f64>()).collect())
        .collect()
}

fn random_attention(rng: &mut ChaCha8Rng, d: usize, heads: usize) -> MultiHeadAttention<f64> {
    MultiHeadAttention::new(
        heads,
        random_mat(rng, d, 3 * d, 0.5),
        Linear::new(random_mat(rng, d, d, 0.5), Some(random_mat(rng, 1, d, 0.5))),
    )
    .unwrap()
}

#[test]
fn attention_matches_scalar_reference() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = [1, 2, 4][seed as usize % 3];
        let d = heads * rng.gen_range(1..5);
        let n = rng.gen_range(1..7);
        let attn = random_attention(&mut rng, d, heads);
        let z = random_mat(&mut rng, n, d, 1.0);
        let (y, _) = attn.forward(&z).unwrap();
        let reference = msa_reference(&z, &attn);
        for i in 0..n {
            for j in 0..d {
                assert!((y.get(i, j) - reference[i][j]).abs() < 1e-10, "seed {seed} at ({i},{j})");
            }
        }
    }
}

#[test]
fn single_token_attention_is_value_projection() {
    // one token: softmax is exactly 1, so each head returns its own v
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let attn = random_attention(&mut rng, 6, 3);
    let z = random_mat(&mut rng, 1, 6, 1.0);
    let qkv = z.matmul(&attn.w_qkv).unwrap();
    let mut concat = Mat::zeros(1, 6);
    for h in 0..3 {
        concat.set_col_slice(2 * h, &qkv.col_slice(6 * h + 4, 2));
    }
    let expected = attn.out.forward(&concat).unwrap();
    let (y, _) = attn.forward(&z).unwrap();
    for (a, b) in y.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn one_head_reduces_to_single_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let attn = random_attention(&mut rng, 4, 1);
    let z = random_mat(&mut rng, 5, 4, 1.0);
    let sa = h4vdm::nn::self_attention(&z, &attn, 0).unwrap();
    let expected = attn.out.forward(&sa).unwrap();
    let (y, _) = attn.forward(&z).unwrap();
    for (a, b) in y.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn logits_are_scaled_by_head_width() {
    // doubling q scales logits by 2; only the 1/sqrt(Dh) convention reproduces the reference
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let attn = random_attention(&mut rng, 8, 2);
    let z = random_mat(&mut rng, 4, 8, 2.0);
    let dh = 4.0f64;
    let qkv = z.matmul(&attn.w_qkv).unwrap();
    let q = qkv.col_slice(0, 4);
    let k = qkv.col_slice(4, 4);
    let v = qkv.col_slice(8, 4);
    let mut logits = q.matmul_t(&k).unwrap();
    logits.scale(1.0 / dh.sqrt());
    let expected = softmax_rows(&logits).matmul(&v).unwrap();
    let got = h4vdm::nn::self_attention(&z, &attn, 0).unwrap();
    for (a, b) in got.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_layer_passes_tokens_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let layer = TransformerLayer::<f64>::zeros(8, 2).unwrap();
    let z = random_mat(&mut rng, 5, 8, 1.0);
    let (y, _) = layer.forward(&z).unwrap();
    assert_eq!(y, z);
    let enc = Encoder::<f64>::zeros(8, 2, 3).unwrap();
    assert_eq!(enc.forward(&z).unwrap().0, z);
}

#[test]
fn encoder_preserves_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let enc = Encoder::<f64>::init(&mut rng, 12, 3, 2).unwrap();
    for n in [1, 4, 37] {
        let z = random_mat(&mut rng, n, 12, 1.0);
        let (y, caches) = enc.forward(&z).unwrap();
        assert_eq!(y.shape(), (n, 12));
        assert_eq!(caches.len(), 2);
        assert!(y.is_finite());
    }
}

#[test]
fn layer_param_count() {
    // 4D^2 attention + D bias, 8D^2 + 5D MLP, 4D layer norms
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for d in [4, 8, 16] {
        let layer = TransformerLayer::<f32>::init(&mut rng, d, 2).unwrap();
        assert_eq!(layer.num_params(), 12 * d * d + 10 * d);
    }
}

#[test]
fn vit_patch_counts() {
    let cfg = |c| ViTConfig {
        height: 224,
        width: 224,
        channels: c,
        patch: 16,
        dim: 768,
        depth: 12,
        heads: 12,
        out_dim: 256,
    };
    assert_eq!(cfg(3).num_patches(), 196);
    assert_eq!(cfg(3).patch_len(), 768);
    assert_eq!(cfg(8).patch_len(), 2048);
    let small = ViTConfig {
        height: 32,
        width: 48,
        channels: 2,
        patch: 16,
        dim: 8,
        depth: 1,
        heads: 2,
        out_dim: 4,
    };
    assert_eq!(small.num_patches(), 6);
    let image: Vec<f32> = (0..32 * 48 * 2).map(|i| i as f32).collect();
    assert_eq!(patchify(&image, &small).unwrap().shape(), (6, 512));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let vit = Vit::<f32>::init(&mut rng, small).unwrap();
    let (out, _) = vit.forward(&image).unwrap();
    assert_eq!(out.shape(), (1, 4));
}

#[test]
fn layer_norm_is_shift_and_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ln = LayerNorm::<f64>::new(6);
    let x = random_mat(&mut rng, 3, 6, 2.0);
    let y = x.map(|v| 3.0 * v + 7.0);
    let (a, _) = ln.forward(&x).unwrap();
    let (b, _) = ln.forward(&y).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() < 1e-4);
    }
}

#[test]
fn embedding_gradient_counts_occurrences() {
    let emb = Embedding::new(Mat::<f64>::zeros(5, 2));
    let ids = [3, 1, 3, 3, 0];
    let dy = Mat::from_fn(5, 2, |_, _| 1.0);
    let mut grad = emb.zeros_like();
    emb.backward(&ids, &dy, &mut grad).unwrap();
    let counts: Vec<f64> = (0..5).map(|r| grad.table.get(r, 0)).collect();
    assert_eq!(counts, vec![1.0, 1.0, 0.0, 3.0, 0.0]);
    assert!(emb.forward(&[5]).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in prop::collection::vec(-50.0f64..50.0, 1..40), cols in 1usize..8) {
        let rows = vals.len().div_ceil(cols);
        let mut data = vals.clone();
        data.resize(rows * cols, 0.0);
        let p = softmax_rows(&Mat::from_vec(rows, cols, data).unwrap());
        for i in 0..rows {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn softmax_shift_invariant(vals in prop::collection::vec(-20.0f64..20.0, 1..12), shift in -100.0f64..100.0) {
        let n = vals.len();
        let a = softmax_rows(&Mat::from_vec(1, n, vals.clone()).unwrap());
        let b = softmax_rows(&Mat::from_vec(1, n, vals.iter().map(|v| v + shift).collect()).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations(seed in 0u64..1000) {
        // with identity output projection each output lies in the hull of the values
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 3;
        let attn = MultiHeadAttention::new(
            1,
            random_mat(&mut rng, d, 3 * d, 1.0),
            Linear::new(Mat::identity(d), Some(Mat::zeros(1, d))),
        )
        .unwrap();
        let z = random_mat(&mut rng, 4, d, 1.0);
        let v = z.matmul(&attn.w_qkv).unwrap().col_slice(2 * d, d);
        let (y, _) = attn.forward(&z).unwrap();
        for c in 0..d {
            let lo = (0..4).map(|i| v.get(i, c)).fold(f64::INFINITY, f64::min);
            let hi = (0..4).map(|i| v.get(i, c)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..4 {
                prop_assert!(y.get(i, c) >= lo - 1e-12 && y.get(i, c) <= hi + 1e-12);
            }
        }
    }
}

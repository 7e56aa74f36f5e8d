use eet_core::ctp::PruneSchedule;
use eet_core::linalg::{gelu, layer_norm, Matrix};
use eet_core::vit::{
    encode, forward_layer, heads, mhsa, mlp_block, patch_embed, HeadWeights, Image, ModelWeights, TokenSequence,
    ViTConfig,
};
use eet_core::Rng;

fn random_image(cfg: &ViTConfig, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    let n = cfg.image_size * cfg.image_size * cfg.channels;
    Image::new(
        cfg.image_size,
        cfg.image_size,
        cfg.channels,
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )
    .unwrap()
}

fn small_cfg(heads: usize) -> ViTConfig {
    ViTConfig {
        image_size: 16,
        patch_size: 4,
        channels: 3,
        depth: 12,
        dim: 12,
        heads,
        mlp_ratio: 2.0,
        num_classes: 5,
        hash_bits: 8,
        ln_eps: 1e-6,
    }
}

fn random_seq(rng: &mut Rng, n: usize, d: usize) -> TokenSequence {
    TokenSequence {
        tokens: Matrix::from_fn(n, d, |_, _| rng.normal()),
        alive: (0..n).collect(),
        layer: 0,
    }
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn patch_token_counts() {
    let cfg = ViTConfig::small_224();
    let w = ModelWeights::zeros(&cfg);
    let seq = patch_embed(&Image::zeros(224, 224, 3), &w, &cfg).unwrap();
    assert_eq!(seq.len(), 197);
    assert_eq!(seq.alive[0], 0);

    let mut cfg = ViTConfig::small_224();
    cfg.image_size = 32;
    let w = ModelWeights::zeros(&cfg);
    assert_eq!(patch_embed(&Image::zeros(32, 32, 3), &w, &cfg).unwrap().len(), 5);
    assert!(patch_embed(&Image::zeros(31, 32, 3), &w, &cfg).is_err());
}

#[test]
fn zero_image_gives_bias_plus_position() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 4);
    let seq = patch_embed(&Image::zeros(16, 16, 3), &w, &cfg).unwrap();
    for i in 1..seq.len() {
        let expect: Vec<f64> = w.patch_b.iter().zip(w.pos_embed.row(i)).map(|(b, p)| b + p).collect();
        assert_eq!(seq.tokens.row(i), &expect[..]);
    }
    let cls: Vec<f64> = w.cls_token.iter().zip(w.pos_embed.row(0)).map(|(c, p)| c + p).collect();
    assert_eq!(seq.tokens.row(0), &cls[..]);
}

#[test]
fn patch_embedding_uses_row_major_patch_layout() {
    let cfg = small_cfg(3);
    let mut w = ModelWeights::zeros(&cfg);
    // weight column 0 picks the first pixel/channel of each patch
    w.patch_w[(0, 0)] = 1.0;
    let mut img = Image::zeros(16, 16, 3);
    let at = img.index(4, 8, 0); // patch row 1, col 2 → patch index 6
    img.data[at] = 7.0;
    let seq = patch_embed(&img, &w, &cfg).unwrap();
    assert_eq!(seq.tokens[(7, 0)], 7.0);
    assert_eq!(seq.tokens.col(0).iter().filter(|&&v| v != 0.0).count(), 1);
}

#[test]
fn singleton_attention_is_value_projection() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 5);
    let mut rng = Rng::new(1);
    let seq = random_seq(&mut rng, 1, cfg.dim);
    let (out, art) = mhsa(&seq, &w.layers[0], &cfg).unwrap();
    assert_eq!(art.class_self, vec![1.0; 3]);
    assert_eq!(art.class_attention.cols(), 0);

    let lw = &w.layers[0];
    let x = layer_norm(seq.tokens.row(0), &lw.ln1_gamma, &lw.ln1_beta, cfg.ln_eps).unwrap();
    let xm = Matrix::from_vec(1, cfg.dim, x).unwrap();
    let mut v = xm.matmul(&lw.wv).unwrap();
    v.add_row_vector(&lw.bv).unwrap();
    let mut o = v.matmul(&lw.wo).unwrap();
    o.add_row_vector(&lw.bo).unwrap();
    let expect: Vec<f64> = o.row(0).iter().zip(seq.tokens.row(0)).map(|(a, b)| a + b).collect();
    assert_close(out.tokens.row(0), &expect, 1e-12);
}

/// Per-head, per-query loop reference for MHSA.
fn naive_mhsa(seq: &TokenSequence, w: &ModelWeights, cfg: &ViTConfig) -> (Matrix, Vec<Matrix>) {
    let lw = &w.layers[0];
    let n = seq.len();
    let dh = cfg.head_dim();
    let mut x = Matrix::zeros(n, cfg.dim);
    for i in 0..n {
        let r = layer_norm(seq.tokens.row(i), &lw.ln1_gamma, &lw.ln1_beta, cfg.ln_eps).unwrap();
        x.row_mut(i).copy_from_slice(&r);
    }
    let proj = |wm: &Matrix, b: &[f64]| {
        Matrix::from_fn(n, cfg.dim, |i, j| {
            let mut s = b[j];
            for t in 0..cfg.dim {
                s += x[(i, t)] * wm[(t, j)];
            }
            s
        })
    };
    let (q, k, v) = (proj(&lw.wq, &lw.bq), proj(&lw.wk, &lw.bk), proj(&lw.wv, &lw.bv));
    let mut contents = vec![];
    let mut concat = Matrix::zeros(n, cfg.dim);
    for h in 0..cfg.heads {
        let mut c = Matrix::zeros(n, dh);
        for i in 0..n {
            let mut logits = vec![0.0; n];
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..dh {
                    s += q[(i, h * dh + t)] * k[(j, h * dh + t)];
                }
                logits[j] = s / (dh as f64).sqrt();
            }
            let m = logits.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for j in 0..n {
                let a = (logits[j] - m).exp() / z;
                for t in 0..dh {
                    c[(i, t)] += a * v[(j, h * dh + t)];
                }
            }
            for t in 0..dh {
                concat[(i, h * dh + t)] = c[(i, t)];
            }
        }
        contents.push(c);
    }
    let out = Matrix::from_fn(n, cfg.dim, |i, j| {
        let mut s = lw.bo[j];
        for t in 0..cfg.dim {
            s += concat[(i, t)] * lw.wo[(t, j)];
        }
        s + seq.tokens[(i, j)]
    });
    (out, contents)
}

#[test]
fn mhsa_matches_naive_loops() {
    for heads in [1, 3] {
        let cfg = small_cfg(heads);
        let w = ModelWeights::random(&cfg, 11);
        let mut rng = Rng::new(2);
        let seq = random_seq(&mut rng, 5, cfg.dim);
        let (out, art) = mhsa(&seq, &w.layers[0], &cfg).unwrap();
        let (expect, contents) = naive_mhsa(&seq, &w, &cfg);
        assert_close(out.tokens.as_slice(), expect.as_slice(), 1e-12);
        for (a, b) in art.head_content.iter().zip(&contents) {
            assert_close(a.as_slice(), b.as_slice(), 1e-12);
        }
        assert_eq!(out.alive, seq.alive);
    }
}

#[test]
fn single_head_content_is_full_attention_output() {
    let cfg = small_cfg(1);
    let w = ModelWeights::random(&cfg, 13);
    let mut rng = Rng::new(3);
    let seq = random_seq(&mut rng, 6, cfg.dim);
    let (_, art) = mhsa(&seq, &w.layers[0], &cfg).unwrap();
    assert_eq!(art.head_content.len(), 1);
    assert_eq!(art.head_content[0].shape(), (6, cfg.dim));
    let (_, contents) = naive_mhsa(&seq, &w, &cfg);
    assert_close(art.head_content[0].as_slice(), contents[0].as_slice(), 1e-12);
}

#[test]
fn zero_weights_pass_through() {
    let cfg = small_cfg(3);
    let w = ModelWeights::zeros(&cfg);
    let mut rng = Rng::new(4);
    let seq = random_seq(&mut rng, 7, cfg.dim);
    let (out, _) = forward_layer(&seq, &w.layers[0], &cfg).unwrap();
    assert_eq!(out.tokens, seq.tokens);
    assert_eq!(out.alive, seq.alive);
    assert_eq!(out.layer, 1);
}

#[test]
fn forward_layer_composes_sub_blocks() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 17);
    let mut rng = Rng::new(5);
    let seq = random_seq(&mut rng, 9, cfg.dim);
    let (out, _) = forward_layer(&seq, &w.layers[0], &cfg).unwrap();

    let (mid, _) = naive_mhsa(&seq, &w, &cfg);
    let lw = &w.layers[0];
    let hidden = cfg.mlp_hidden();
    for i in 0..seq.len() {
        let x = layer_norm(mid.row(i), &lw.ln2_gamma, &lw.ln2_beta, cfg.ln_eps).unwrap();
        let h: Vec<f64> = (0..hidden)
            .map(|j| gelu(lw.b1[j] + (0..cfg.dim).map(|t| x[t] * lw.w1[(t, j)]).sum::<f64>()))
            .collect();
        let y: Vec<f64> = (0..cfg.dim)
            .map(|j| mid[(i, j)] + lw.b2[j] + (0..hidden).map(|t| h[t] * lw.w2[(t, j)]).sum::<f64>())
            .collect();
        assert_close(out.tokens.row(i), &y, 1e-11);
    }
    let mid_seq = TokenSequence {
        tokens: mid,
        alive: seq.alive.clone(),
        layer: 0,
    };
    assert_close(
        mlp_block(&mid_seq, lw, &cfg).unwrap().tokens.as_slice(),
        out.tokens.as_slice(),
        1e-11,
    );
}

#[test]
fn class_attention_sums_to_one_every_layer() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 19);
    let img = random_image(&cfg, 1);
    let mut seq = patch_embed(&img, &w, &cfg).unwrap();
    for lw in &w.layers {
        let (next, art) = forward_layer(&seq, lw, &cfg).unwrap();
        for h in 0..cfg.heads {
            let s: f64 = art.class_attention.row(h).iter().sum::<f64>() + art.class_self[h];
            assert!((s - 1.0).abs() < 1e-9);
        }
        seq = next;
    }
}

#[test]
fn empty_schedule_matches_plain_forward() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 23);
    let img = random_image(&cfg, 2);
    let enc = encode(&img, &w, &cfg, &PruneSchedule::empty()).unwrap();
    assert!(enc.layer_tokens.iter().all(|&n| n == cfg.num_patches() + 1));
    assert_eq!(enc.stage_patches, vec![cfg.num_patches()]);

    let mut seq = patch_embed(&img, &w, &cfg).unwrap();
    for lw in &w.layers {
        seq = forward_layer(&seq, lw, &cfg).unwrap().0;
    }
    let reference = layer_norm(seq.tokens.row(0), &w.norm_gamma, &w.norm_beta, cfg.ln_eps).unwrap();
    assert_eq!(enc.class_embedding, reference);
    assert!(enc.importance.iter().all(|&m| m >= 0.0));
    assert!(enc.importance.iter().any(|&m| m > 0.0));
}

#[test]
fn default_schedule_trace_on_small_224() {
    let cfg = ViTConfig::small_224();
    let w = ModelWeights::random(&cfg, 1);
    let img = random_image(&cfg, 3);
    let enc = encode(&img, &w, &cfg, &PruneSchedule::default_hierarchical()).unwrap();
    assert_eq!(enc.stage_patches, vec![196, 98, 49, 12]);
    assert_eq!(enc.layer_tokens, vec![197, 197, 197, 197, 99, 99, 99, 99, 50, 50, 13, 13]);
    // last map comes from layer 12, over the 12 surviving patches
    assert_eq!(enc.importance.iter().filter(|&&m| m > 0.0).count(), 12);
}

#[test]
fn pruned_encoding_keeps_class_token() {
    let cfg = small_cfg(3);
    let w = ModelWeights::random(&cfg, 29);
    let schedule: PruneSchedule = "1:0.5,2:0.5,3:0.5,12:0.5".parse().unwrap();
    let enc = encode(&random_image(&cfg, 4), &w, &cfg, &schedule).unwrap();
    assert_eq!(enc.stage_patches, vec![16, 8, 4, 2, 1]);
    assert!(enc.class_embedding.iter().all(|v| v.is_finite()));
    assert!(encode(&random_image(&cfg, 4), &w, &cfg, &"13:0.5".parse().unwrap()).is_err());
}

#[test]
fn swapping_patches_swaps_importance() {
    let cfg = small_cfg(3);
    let mut w = ModelWeights::random(&cfg, 31);
    let shared = w.pos_embed.row(1).to_vec();
    for i in 1..w.pos_embed.rows() {
        w.pos_embed.row_mut(i).copy_from_slice(&shared);
    }
    let img = random_image(&cfg, 5);
    // swap patches 2 and 9 (grid 4×4, patch 4)
    let (a, b) = (2usize, 9usize);
    let mut swapped = img.clone();
    let p = cfg.patch_size;
    for py in 0..p {
        for px in 0..p {
            for c in 0..3 {
                let ia = img.index((a / 4) * p + py, (a % 4) * p + px, c);
                let ib = img.index((b / 4) * p + py, (b % 4) * p + px, c);
                swapped.data[ia] = img.data[ib];
                swapped.data[ib] = img.data[ia];
            }
        }
    }
    let e1 = encode(&img, &w, &cfg, &PruneSchedule::empty()).unwrap();
    let e2 = encode(&swapped, &w, &cfg, &PruneSchedule::empty()).unwrap();
    let mut expect = e1.importance.clone();
    expect.swap(a, b);
    assert_close(&e2.importance, &expect, 1e-9);
    assert_close(&e2.class_embedding, &e1.class_embedding, 1e-9);
}

#[test]
fn head_cases() {
    let cfg = small_cfg(3);
    let mut rng = Rng::new(6);
    let head = HeadWeights::random(&cfg, &mut rng);
    let mut head_b = head.clone();
    head_b.cls_b = (0..cfg.num_classes).map(|_| rng.normal()).collect();
    head_b.hash_b = (0..cfg.hash_bits).map(|_| rng.normal()).collect();
    let (logits, hash) = heads(&vec![0.0; cfg.dim], &head_b).unwrap();
    assert_eq!(logits, head_b.cls_b);
    let chain: Vec<f64> = (0..cfg.hash_bits)
        .map(|j| head_b.hash_b[j] + (0..cfg.num_classes).map(|c| head_b.cls_b[c] * head_b.hash_w[(c, j)]).sum::<f64>())
        .collect();
    assert_close(&hash, &chain, 1e-12);

    let ident = HeadWeights {
        cls_w: Matrix::identity(6),
        cls_b: vec![0.0; 6],
        hash_w: Matrix::identity(6),
        hash_b: vec![0.0; 6],
    };
    let e: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    assert_eq!(heads(&e, &ident).unwrap().1, e);

    let e: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
    let (logits, hash) = heads(&e, &head).unwrap();
    let el = Matrix::from_vec(1, cfg.dim, e.clone()).unwrap().matmul(&head.cls_w).unwrap();
    assert_close(&logits, el.as_slice(), 1e-12);
    let eh = el.matmul(&head.hash_w).unwrap();
    assert_close(&hash, eh.as_slice(), 1e-12);
    assert!(heads(&e[1..], &head).is_err());
}

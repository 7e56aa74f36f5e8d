//! Pre-LN transformer forward pass with pruning hooks.

use super::{Image, LayerWeights, ModelWeights, ViTConfig};
use crate::ctp::{importance_from_artifacts, prune, ImportanceMap, PruneSchedule};
use crate::error::{shape_err, Result};
use crate::linalg::{gelu, layer_norm, layer_norm_rows, softmax_in_place, Matrix};

/// Alive token embeddings plus their original indices (0 = class token).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Matrix,
    pub alive: Vec<usize>,
    /// Number of layers applied so far.
    pub layer: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }
}

/// Per-head attention outputs exported for token scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionArtifacts {
    /// H × (alive − 1): class-token attention over the patch keys, taken
    /// from the softmax over all alive keys (not renormalized).
    pub class_attention: Matrix,
    /// Per head: class-token attention on its own key.
    pub class_self: Vec<f64>,
    /// Per head: attention-weighted values before the output projection,
    /// alive × head_dim.
    pub head_content: Vec<Matrix>,
}

/// Result of [`encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// Final class token after the terminal layer norm.
    pub class_embedding: Vec<f64>,
    /// Last importance map indexed by patch (`original index − 1`); pruned
    /// patches are 0.
    pub importance: Vec<f64>,
    /// Tokens (class included) entering each layer.
    pub layer_tokens: Vec<usize>,
    /// Alive patch count initially and after each pruning stage.
    pub stage_patches: Vec<usize>,
}

pub fn patch_embed(image: &Image, w: &ModelWeights, cfg: &ViTConfig) -> Result<TokenSequence> {
    let (s, p, c) = (cfg.image_size, cfg.patch_size, cfg.channels);
    if image.height != s || image.width != s || image.channels != c {
        return Err(shape_err(
            "patch_embed",
            format!("{s}x{s}x{c} image"),
            format!("{}x{}x{}", image.height, image.width, image.channels),
        ));
    }
    let grid = cfg.grid();
    let n = cfg.num_patches();
    let mut patches = Matrix::zeros(n, cfg.patch_len());
    for gy in 0..grid {
        for gx in 0..grid {
            let row = patches.row_mut(gy * grid + gx);
            let mut t = 0;
            for py in 0..p {
                let start = image.index(gy * p + py, gx * p, 0);
                let len = p * c;
                row[t..t + len].copy_from_slice(&image.data[start..start + len]);
                t += len;
            }
        }
    }
    let mut proj = patches.matmul(&w.patch_w)?;
    proj.add_row_vector(&w.patch_b)?;

    let mut tokens = Matrix::zeros(n + 1, cfg.dim);
    tokens.row_mut(0).copy_from_slice(&w.cls_token);
    for i in 0..n {
        tokens.row_mut(i + 1).copy_from_slice(proj.row(i));
    }
    tokens.add_assign(&w.pos_embed)?;
    Ok(TokenSequence {
        tokens,
        alive: (0..=n).collect(),
        layer: 0,
    })
}

/// `E' = E + MHSA(LN(E))`.
pub fn mhsa(seq: &TokenSequence, lw: &LayerWeights, cfg: &ViTConfig) -> Result<(TokenSequence, AttentionArtifacts)> {
    let n = seq.len();
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let x = layer_norm_rows(&seq.tokens, &lw.ln1_gamma, &lw.ln1_beta, cfg.ln_eps)?;
    let q = linear(&x, &lw.wq, &lw.bq)?;
    let k = linear(&x, &lw.wk, &lw.bk)?;
    let v = linear(&x, &lw.wv, &lw.bv)?;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut concat = Matrix::zeros(n, cfg.dim);
    let mut class_attention = Matrix::zeros(heads, n.saturating_sub(1));
    let mut class_self = Vec::with_capacity(heads);
    let mut head_content = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = q.columns(lo, hi);
        let kh = k.columns(lo, hi);
        let vh = v.columns(lo, hi);
        let mut scores = qh.matmul_t(&kh)?;
        for i in 0..n {
            let row = scores.row_mut(i);
            for s in row.iter_mut() {
                *s *= scale;
            }
            softmax_in_place(row);
        }
        class_self.push(scores[(0, 0)]);
        class_attention.row_mut(h).copy_from_slice(&scores.row(0)[1..]);
        let content = scores.matmul(&vh)?;
        for i in 0..n {
            concat.row_mut(i)[lo..hi].copy_from_slice(content.row(i));
        }
        head_content.push(content);
    }
    let mut tokens = linear(&concat, &lw.wo, &lw.bo)?;
    tokens.add_assign(&seq.tokens)?;
    Ok((
        TokenSequence {
            tokens,
            alive: seq.alive.clone(),
            layer: seq.layer,
        },
        AttentionArtifacts {
            class_attention,
            class_self,
            head_content,
        },
    ))
}

/// `E = E' + MLP(LN(E'))` with a GELU hidden layer.
pub fn mlp_block(seq: &TokenSequence, lw: &LayerWeights, cfg: &ViTConfig) -> Result<TokenSequence> {
    let x = layer_norm_rows(&seq.tokens, &lw.ln2_gamma, &lw.ln2_beta, cfg.ln_eps)?;
    let hidden = linear(&x, &lw.w1, &lw.b1)?.map(gelu);
    let mut tokens = linear(&hidden, &lw.w2, &lw.b2)?;
    tokens.add_assign(&seq.tokens)?;
    Ok(TokenSequence {
        tokens,
        alive: seq.alive.clone(),
        layer: seq.layer,
    })
}

/// One transformer layer: attention sub-block then MLP sub-block.
pub fn forward_layer(seq: &TokenSequence, lw: &LayerWeights, cfg: &ViTConfig) -> Result<(TokenSequence, AttentionArtifacts)> {
    let (mid, art) = mhsa(seq, lw, cfg)?;
    let mut out = mlp_block(&mid, lw, cfg)?;
    out.layer = seq.layer + 1;
    Ok((out, art))
}

/// Runs all layers, pruning after each scheduled layer with importance from
/// that layer's attention. Importance is also computed after the final
/// layer, so an unpruned pass yields the last-layer map.
pub fn encode(image: &Image, w: &ModelWeights, cfg: &ViTConfig, schedule: &PruneSchedule) -> Result<Encoding> {
    schedule.validate_depth(cfg.depth)?;
    let n = cfg.num_patches();
    let mut seq = patch_embed(image, w, cfg)?;
    let mut layer_tokens = Vec::with_capacity(cfg.depth);
    let mut stage_patches = vec![n];
    let mut last: Option<(ImportanceMap, Vec<usize>)> = None;

    for (i, lw) in w.layers.iter().enumerate() {
        let layer = i + 1;
        layer_tokens.push(seq.len());
        let (next, art) = forward_layer(&seq, lw, cfg)?;
        seq = next;
        let ratio = schedule.keep_ratio_at(layer);
        if ratio.is_some() || layer == cfg.depth {
            let m = importance_from_artifacts(&art, layer)?;
            if let Some(r) = ratio {
                let pruned = prune(&seq, &m, r)?;
                last = Some((m, seq.alive.clone()));
                seq = pruned;
                stage_patches.push(seq.len() - 1);
            } else {
                last = Some((m, seq.alive.clone()));
            }
        }
    }

    let mut importance = vec![0.0; n];
    if let Some((m, alive)) = last {
        for (v, &orig) in m.values.iter().zip(&alive[1..]) {
            importance[orig - 1] = *v;
        }
    }
    let class_embedding = layer_norm(seq.tokens.row(0), &w.norm_gamma, &w.norm_beta, cfg.ln_eps)?;
    Ok(Encoding {
        class_embedding,
        importance,
        layer_tokens,
        stage_patches,
    })
}

/// Classification logits and the real-valued hash output computed from
/// them.
pub fn heads(class_embedding: &[f64], head: &super::HeadWeights) -> Result<(Vec<f64>, Vec<f64>)> {
    if class_embedding.len() != head.cls_w.rows() {
        return Err(shape_err(
            "heads",
            format!("embedding of length {}", head.cls_w.rows()),
            format!("{}", class_embedding.len()),
        ));
    }
    let e = Matrix::from_vec(1, class_embedding.len(), class_embedding.to_vec())?;
    let logits = linear(&e, &head.cls_w, &head.cls_b)?;
    let hash = linear(&logits, &head.hash_w, &head.hash_b)?;
    Ok((logits.into_vec(), hash.into_vec()))
}

fn linear(x: &Matrix, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut y = x.matmul(w)?;
    y.add_row_vector(b)?;
    Ok(y)
}

//! Parameter tensors and their canonical names.
//!
//! Linear maps are stored input-major (`in × out`) and applied as
//! `x · W + b` on row vectors. Layer indices in tensor names are 0-based:
//!
//! | name | shape |
//! |------|-------|
//! | `patch_embed.weight` | patch_len × dim |
//! | `patch_embed.bias` | dim |
//! | `pos_embed` | (patches + 1) × dim |
//! | `cls_token` | dim |
//! | `layer.{i}.ln1.gamma`, `layer.{i}.ln1.beta` | dim |
//! | `layer.{i}.attn.{wq,wk,wv,wo}` | dim × dim |
//! | `layer.{i}.attn.{bq,bk,bv,bo}` | dim |
//! | `layer.{i}.ln2.gamma`, `layer.{i}.ln2.beta` | dim |
//! | `layer.{i}.mlp.w1` / `layer.{i}.mlp.b1` | dim × hidden / hidden |
//! | `layer.{i}.mlp.w2` / `layer.{i}.mlp.b2` | hidden × dim / dim |
//! | `norm.gamma`, `norm.beta` | dim |
//! | `head.cls.weight` / `head.cls.bias` | dim × classes / classes |
//! | `head.hash.weight` / `head.hash.bias` | classes × bits / bits |

use std::collections::BTreeMap;

use super::ViTConfig;
use crate::error::{shape_err, EetError, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

/// Scale of random biases and embeddings.
const EMBED_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gamma: Vec<f64>,
    pub ln1_beta: Vec<f64>,
    pub wq: Matrix,
    pub bq: Vec<f64>,
    pub wk: Matrix,
    pub bk: Vec<f64>,
    pub wv: Matrix,
    pub bv: Vec<f64>,
    pub wo: Matrix,
    pub bo: Vec<f64>,
    pub ln2_gamma: Vec<f64>,
    pub ln2_beta: Vec<f64>,
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub cls_w: Matrix,
    pub cls_b: Vec<f64>,
    pub hash_w: Matrix,
    pub hash_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub patch_w: Matrix,
    pub patch_b: Vec<f64>,
    pub pos_embed: Matrix,
    pub cls_token: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub norm_gamma: Vec<f64>,
    pub norm_beta: Vec<f64>,
    pub head: HeadWeights,
}

/// A named tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl LayerWeights {
    fn zeros(cfg: &ViTConfig) -> Self {
        let (d, h) = (cfg.dim, cfg.mlp_hidden());
        Self {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            wq: Matrix::zeros(d, d),
            bq: vec![0.0; d],
            wk: Matrix::zeros(d, d),
            bk: vec![0.0; d],
            wv: Matrix::zeros(d, d),
            bv: vec![0.0; d],
            wo: Matrix::zeros(d, d),
            bo: vec![0.0; d],
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            w1: Matrix::zeros(d, h),
            b1: vec![0.0; h],
            w2: Matrix::zeros(h, d),
            b2: vec![0.0; d],
        }
    }

    fn random(cfg: &ViTConfig, rng: &mut Rng) -> Self {
        let (d, h) = (cfg.dim, cfg.mlp_hidden());
        Self {
            ln1_gamma: vec![1.0; d],
            ln1_beta: vec![0.0; d],
            wq: fan_in_matrix(rng, d, d),
            bq: small_vec(rng, d),
            wk: fan_in_matrix(rng, d, d),
            bk: small_vec(rng, d),
            wv: fan_in_matrix(rng, d, d),
            bv: small_vec(rng, d),
            wo: fan_in_matrix(rng, d, d),
            bo: small_vec(rng, d),
            ln2_gamma: vec![1.0; d],
            ln2_beta: vec![0.0; d],
            w1: fan_in_matrix(rng, d, h),
            b1: small_vec(rng, h),
            w2: fan_in_matrix(rng, h, d),
            b2: small_vec(rng, d),
        }
    }
}

impl HeadWeights {
    pub fn zeros(cfg: &ViTConfig) -> Self {
        Self {
            cls_w: Matrix::zeros(cfg.dim, cfg.num_classes),
            cls_b: vec![0.0; cfg.num_classes],
            hash_w: Matrix::zeros(cfg.num_classes, cfg.hash_bits),
            hash_b: vec![0.0; cfg.hash_bits],
        }
    }

    pub fn random(cfg: &ViTConfig, rng: &mut Rng) -> Self {
        Self {
            cls_w: fan_in_matrix(rng, cfg.dim, cfg.num_classes),
            cls_b: vec![0.0; cfg.num_classes],
            hash_w: fan_in_matrix(rng, cfg.num_classes, cfg.hash_bits),
            hash_b: vec![0.0; cfg.hash_bits],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls_w.cols()
    }

    pub fn hash_bits(&self) -> usize {
        self.hash_w.cols()
    }
}

impl ModelWeights {
    /// All-zero linear maps with identity layer norms.
    pub fn zeros(cfg: &ViTConfig) -> Self {
        let d = cfg.dim;
        Self {
            patch_w: Matrix::zeros(cfg.patch_len(), d),
            patch_b: vec![0.0; d],
            pos_embed: Matrix::zeros(cfg.num_patches() + 1, d),
            cls_token: vec![0.0; d],
            layers: (0..cfg.depth).map(|_| LayerWeights::zeros(cfg)).collect(),
            norm_gamma: vec![1.0; d],
            norm_beta: vec![0.0; d],
            head: HeadWeights::zeros(cfg),
        }
    }

    /// Seeded initialization: matrices ~ N(0, 1/fan_in), biases and
    /// embeddings ~ N(0, 0.02²), layer norms at identity.
    pub fn random(cfg: &ViTConfig, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let d = cfg.dim;
        let patch_w = fan_in_matrix(&mut rng, cfg.patch_len(), d);
        let patch_b = small_vec(&mut rng, d);
        let pos_embed = Matrix::from_fn(cfg.num_patches() + 1, d, |_, _| EMBED_STD * rng.normal());
        let cls_token = small_vec(&mut rng, d);
        let layers = (0..cfg.depth).map(|_| LayerWeights::random(cfg, &mut rng)).collect();
        let head = HeadWeights::random(cfg, &mut rng);
        Self {
            patch_w,
            patch_b,
            pos_embed,
            cls_token,
            layers,
            norm_gamma: vec![1.0; d],
            norm_beta: vec![0.0; d],
            head,
        }
    }

    /// Checks every tensor shape against `cfg`.
    pub fn validate(&self, cfg: &ViTConfig) -> Result<()> {
        let expected = Self::zeros(cfg).into_tensors();
        let actual = self.to_tensors();
        for (name, t) in &expected {
            match actual.get(name) {
                Some(a) if a.dims == t.dims => {
                    if a.data.iter().any(|v| !v.is_finite()) {
                        return Err(EetError::Numeric(format!("tensor `{name}` has non-finite values")));
                    }
                }
                Some(a) => {
                    return Err(shape_err("ModelWeights", format!("{name} {:?}", t.dims), format!("{:?}", a.dims)))
                }
                None => return Err(EetError::Config(format!("missing tensor `{name}`"))),
            }
        }
        if actual.len() != expected.len() {
            return Err(EetError::Config(format!(
                "expected {} tensors for depth {}, found {}",
                expected.len(),
                cfg.depth,
                actual.len()
            )));
        }
        Ok(())
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        self.clone().into_tensors()
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        put_m(&mut out, "patch_embed.weight", self.patch_w);
        put_v(&mut out, "patch_embed.bias", self.patch_b);
        put_m(&mut out, "pos_embed", self.pos_embed);
        put_v(&mut out, "cls_token", self.cls_token);
        for (i, l) in self.layers.into_iter().enumerate() {
            let p = |s: &str| format!("layer.{i}.{s}");
            put_v(&mut out, &p("ln1.gamma"), l.ln1_gamma);
            put_v(&mut out, &p("ln1.beta"), l.ln1_beta);
            put_m(&mut out, &p("attn.wq"), l.wq);
            put_v(&mut out, &p("attn.bq"), l.bq);
            put_m(&mut out, &p("attn.wk"), l.wk);
            put_v(&mut out, &p("attn.bk"), l.bk);
            put_m(&mut out, &p("attn.wv"), l.wv);
            put_v(&mut out, &p("attn.bv"), l.bv);
            put_m(&mut out, &p("attn.wo"), l.wo);
            put_v(&mut out, &p("attn.bo"), l.bo);
            put_v(&mut out, &p("ln2.gamma"), l.ln2_gamma);
            put_v(&mut out, &p("ln2.beta"), l.ln2_beta);
            put_m(&mut out, &p("mlp.w1"), l.w1);
            put_v(&mut out, &p("mlp.b1"), l.b1);
            put_m(&mut out, &p("mlp.w2"), l.w2);
            put_v(&mut out, &p("mlp.b2"), l.b2);
        }
        put_v(&mut out, "norm.gamma", self.norm_gamma);
        put_v(&mut out, "norm.beta", self.norm_beta);
        put_m(&mut out, "head.cls.weight", self.head.cls_w);
        put_v(&mut out, "head.cls.bias", self.head.cls_b);
        put_m(&mut out, "head.hash.weight", self.head.hash_w);
        put_v(&mut out, "head.hash.bias", self.head.hash_b);
        out
    }

    /// Assembles weights from named tensors and validates them against `cfg`.
    pub fn from_tensors(cfg: &ViTConfig, mut t: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let p = |s: &str| format!("layer.{i}.{s}");
            layers.push(LayerWeights {
                ln1_gamma: take_v(&mut t, &p("ln1.gamma"))?,
                ln1_beta: take_v(&mut t, &p("ln1.beta"))?,
                wq: take_m(&mut t, &p("attn.wq"))?,
                bq: take_v(&mut t, &p("attn.bq"))?,
                wk: take_m(&mut t, &p("attn.wk"))?,
                bk: take_v(&mut t, &p("attn.bk"))?,
                wv: take_m(&mut t, &p("attn.wv"))?,
                bv: take_v(&mut t, &p("attn.bv"))?,
                wo: take_m(&mut t, &p("attn.wo"))?,
                bo: take_v(&mut t, &p("attn.bo"))?,
                ln2_gamma: take_v(&mut t, &p("ln2.gamma"))?,
                ln2_beta: take_v(&mut t, &p("ln2.beta"))?,
                w1: take_m(&mut t, &p("mlp.w1"))?,
                b1: take_v(&mut t, &p("mlp.b1"))?,
                w2: take_m(&mut t, &p("mlp.w2"))?,
                b2: take_v(&mut t, &p("mlp.b2"))?,
            });
        }
        let w = Self {
            patch_w: take_m(&mut t, "patch_embed.weight")?,
            patch_b: take_v(&mut t, "patch_embed.bias")?,
            pos_embed: take_m(&mut t, "pos_embed")?,
            cls_token: take_v(&mut t, "cls_token")?,
            layers,
            norm_gamma: take_v(&mut t, "norm.gamma")?,
            norm_beta: take_v(&mut t, "norm.beta")?,
            head: HeadWeights {
                cls_w: take_m(&mut t, "head.cls.weight")?,
                cls_b: take_v(&mut t, "head.cls.bias")?,
                hash_w: take_m(&mut t, "head.hash.weight")?,
                hash_b: take_v(&mut t, "head.hash.bias")?,
            },
        };
        if let Some(extra) = t.keys().next() {
            return Err(EetError::Config(format!("unexpected tensor `{extra}`")));
        }
        w.validate(cfg)?;
        Ok(w)
    }
}

fn fan_in_matrix(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let s = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| s * rng.normal())
}

fn small_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| EMBED_STD * rng.normal()).collect()
}

fn put_m(out: &mut BTreeMap<String, Tensor>, name: &str, m: Matrix) {
    let dims = vec![m.rows(), m.cols()];
    out.insert(name.to_string(), Tensor { dims, data: m.into_vec() });
}

fn put_v(out: &mut BTreeMap<String, Tensor>, name: &str, v: Vec<f64>) {
    out.insert(name.to_string(), Tensor { dims: vec![v.len()], data: v });
}

fn take(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    t.remove(name)
        .ok_or_else(|| EetError::Config(format!("missing tensor `{name}`")))
}

fn take_m(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Matrix> {
    let x = take(t, name)?;
    if x.dims.len() != 2 {
        return Err(shape_err("weights", format!("{name} with 2 dims"), format!("{:?}", x.dims)));
    }
    Matrix::from_vec(x.dims[0], x.dims[1], x.data)
}

fn take_v(t: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Vec<f64>> {
    let x = take(t, name)?;
    if x.dims.len() != 1 {
        return Err(shape_err("weights", format!("{name} with 1 dim"), format!("{:?}", x.dims)));
    }
    Ok(x.data)
}

//! Analytic cost model and wall-clock timing for the encoder.
//!
//! Costs are multiply-accumulates of the matrix products only (layer norm,
//! softmax, GELU and biases are ignored). For a layer over `n` tokens with
//! width `D` and MLP width `F`:
//!
//! ```text
//! qkv 3nD² + scores n²D + weighted values n²D + output nD² + mlp 2nDF
//! ```
//!
//! The patch embedding adds `N · p²c · D`. The two heads (`D·C + C·k`) are
//! reported apart from the encoder. Published ViT "GFLOPs" figures count
//! multiply-accumulates, so [`CostReport::gmacs`] is the comparable number;
//! [`CostReport::flops`] doubles it.

use std::time::Instant;

use crate::ctp::PruneSchedule;
use crate::error::Result;
use crate::rng::Rng;
use crate::vit::{encode, heads, Image, ModelWeights, ViTConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCost {
    pub tokens: usize,
    pub qkv: u64,
    pub attention: u64,
    pub projection: u64,
    pub mlp: u64,
}

impl LayerCost {
    pub fn new(cfg: &ViTConfig, tokens: usize) -> Self {
        let (n, d, f) = (tokens as u64, cfg.dim as u64, cfg.mlp_hidden() as u64);
        LayerCost {
            tokens,
            qkv: 3 * n * d * d,
            attention: 2 * n * n * d,
            projection: n * d * d,
            mlp: 2 * n * d * f,
        }
    }

    pub fn total(&self) -> u64 {
        self.qkv + self.attention + self.projection + self.mlp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub patch_embed: u64,
    pub heads: u64,
}

impl CostReport {
    pub fn new(cfg: &ViTConfig, schedule: &PruneSchedule) -> Result<Self> {
        cfg.validate()?;
        schedule.validate_depth(cfg.depth)?;
        let layers = schedule
            .layer_token_counts(cfg.num_patches(), cfg.depth)
            .into_iter()
            .map(|n| LayerCost::new(cfg, n))
            .collect();
        Ok(CostReport {
            layers,
            patch_embed: (cfg.num_patches() * cfg.patch_len() * cfg.dim) as u64,
            heads: (cfg.dim * cfg.num_classes + cfg.num_classes * cfg.hash_bits) as u64,
        })
    }

    /// Encoder multiply-accumulates (patch embedding and layers).
    pub fn macs(&self) -> u64 {
        self.patch_embed + self.layers.iter().map(LayerCost::total).sum::<u64>()
    }

    pub fn gmacs(&self) -> f64 {
        self.macs() as f64 / 1e9
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs()
    }

    pub fn token_trace(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.tokens).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    /// Median seconds per image for the encoder.
    pub encoder: f64,
    /// Median seconds per image for the two heads.
    pub heads: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Random input image in the normalized range.
pub fn random_image(cfg: &ViTConfig, rng: &mut Rng) -> Image {
    let s = cfg.image_size;
    let data = (0..s * s * cfg.channels).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Image::new(s, s, cfg.channels, data).expect("consistent image size")
}

/// Median wall-clock over `runs` passes, after one warm-up pass.
pub fn time_encoder(w: &ModelWeights, cfg: &ViTConfig, schedule: &PruneSchedule, image: &Image, runs: usize) -> Result<Timing> {
    let runs = runs.max(1);
    let warm = encode(image, w, cfg, schedule)?;
    heads(&warm.class_embedding, &w.head)?;
    let mut enc = Vec::with_capacity(runs);
    let mut head = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        let e = encode(image, w, cfg, schedule)?;
        let t1 = Instant::now();
        std::hint::black_box(heads(&e.class_embedding, &w.head)?);
        let t2 = Instant::now();
        enc.push((t1 - t0).as_secs_f64());
        head.push((t2 - t1).as_secs_f64());
    }
    Ok(Timing {
        encoder: median(enc),
        heads: median(head),
    })
}

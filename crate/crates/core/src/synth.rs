//! Synthetic labelled image sets for desk-scale runs.
//!
//! Each class owns a template: one flat colour per patch plus a stripe
//! pattern with a class-specific period and orientation. Items add Gaussian
//! pixel noise to the template and are quantized to 8 bits. Teacher codes
//! start from a random ±1 centroid per class and flip each bit with a fixed
//! probability.

use crate::config::SynthConfig;
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::vit::{Image, ViTConfig};

#[derive(Debug, Clone)]
pub struct ClassTemplate {
    pub image: Image,
    pub centroid: Vec<f64>,
}

/// Generated split: images with labels and teacher codes (n×k, ±1).
#[derive(Debug, Clone)]
pub struct SynthSplit {
    pub images: Vec<Image>,
    pub labels: Vec<u32>,
    pub teacher: Matrix,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub templates: Vec<ClassTemplate>,
    pub train: SynthSplit,
    pub query: SynthSplit,
}

fn template(model: &ViTConfig, rng: &mut Rng) -> Image {
    let (s, p, c) = (model.image_size, model.patch_size, model.channels);
    let g = model.grid();
    let colours: Vec<f64> = (0..g * g * c).map(|_| rng.uniform(0.15, 0.85)).collect();
    let period = 2 + rng.below(p.max(2));
    let vertical = rng.below(2) == 1;
    let amp = rng.uniform(0.05, 0.15);
    let mut img = Image::zeros(s, s, c);
    for y in 0..s {
        for x in 0..s {
            let cell = (y / p) * g + x / p;
            let t = if vertical { x } else { y };
            let stripe = if (t / period).is_multiple_of(2) { amp } else { -amp };
            for ch in 0..c {
                let i = img.index(y, x, ch);
                img.data[i] = (colours[cell * c + ch] + stripe).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Adds noise and rounds to the 8-bit grid, matching a PPM round trip.
fn noisy(base: &Image, sigma: f64, rng: &mut Rng) -> Image {
    let mut img = base.clone();
    for v in &mut img.data {
        let x = if sigma > 0.0 { *v + sigma * rng.normal() } else { *v };
        *v = (x.clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    img
}

fn split(templates: &[ClassTemplate], per_class: usize, cfg: &SynthConfig, rng: &mut Rng) -> SynthSplit {
    let k = templates.first().map_or(0, |t| t.centroid.len());
    let n = templates.len() * per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut teacher = Matrix::zeros(n, k);
    for (c, t) in templates.iter().enumerate() {
        for _ in 0..per_class {
            let row = images.len();
            images.push(noisy(&t.image, cfg.pixel_noise, rng));
            labels.push(c as u32);
            for (j, &b) in t.centroid.iter().enumerate() {
                let flip = rng.next_f64() < cfg.flip_prob;
                teacher.row_mut(row)[j] = if flip { -b } else { b };
            }
        }
    }
    SynthSplit { images, labels, teacher }
}

/// Generates templates, a training split and a query split from one seed.
pub fn generate(model: &ViTConfig, cfg: &SynthConfig, seed: u64) -> SynthData {
    let mut rng = Rng::new(seed);
    let templates: Vec<ClassTemplate> = (0..cfg.classes)
        .map(|_| {
            let image = template(model, &mut rng);
            let centroid = (0..model.hash_bits)
                .map(|_| if rng.below(2) == 1 { 1.0 } else { -1.0 })
                .collect();
            ClassTemplate { image, centroid }
        })
        .collect();
    let train = split(&templates, cfg.train_per_class, cfg, &mut rng);
    let query = split(&templates, cfg.query_per_class, cfg, &mut rng);
    SynthData { templates, train, query }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_items_match_template() {
        let cfg = SynthConfig {
            classes: 2,
            train_per_class: 3,
            query_per_class: 1,
            pixel_noise: 0.0,
            flip_prob: 0.0,
        };
        let d = generate(&ViTConfig::tiny_32(), &cfg, 5);
        assert_eq!(d.train.images[0], d.train.images[2]);
        assert_ne!(d.train.images[0], d.train.images[3]);
        assert_eq!(d.train.teacher.row(0), d.templates[0].centroid.as_slice());
    }
}

//! Training losses: hash-code distillation, masked-region guidance,
//! classification, and the weighted total.

mod heads;

pub use heads::{fit_heads, head_gradients, head_loss, FitOptions, FitReport, HeadBatch, HeadLoss};

use crate::ctp::top_k_positions;
use crate::error::{shape_err, EetError, Result};
use crate::vit::Image;

/// Weights of the auxiliary terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Scales the classification and masked-region terms.
    pub beta: f64,
    /// Scales the distillation term.
    pub sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { beta: 0.1, sigma: 1.0 }
    }
}

impl LossWeights {
    pub fn new(beta: f64, sigma: f64) -> Result<Self> {
        if !(beta >= 0.0 && sigma >= 0.0) {
            return Err(EetError::Config(format!(
                "loss weights must be non-negative (beta {beta}, sigma {sigma})"
            )));
        }
        Ok(Self { beta, sigma })
    }
}

/// Binary patch mask: 0 marks a hidden patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub mask: Vec<u8>,
    pub k_masked: usize,
    pub patch_size: usize,
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_err("cosine", format!("length {}", a.len()), format!("{}", b.len())));
    }
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let (na, nb) = (sq(a), sq(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EetError::Degenerate("cosine of a zero vector".into()));
    }
    // one square root keeps ±1 inputs exact: sqrt(k·k) = k
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

/// `1 − cos(h_e, h_d)`, in [0, 2].
pub fn dkt_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    Ok(1.0 - cosine(student, teacher)?)
}

/// `k/2 · (1 − cos(h_i, h_j))`; the exact Hamming distance for ±1 inputs.
pub fn hamming_from_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let k = a.len() as f64;
    Ok(k / 2.0 * (1.0 - cosine(a, b)?))
}

/// Zeros the `k_masked` most important patches (lower index wins ties).
pub fn drg_mask(importance: &[f64], k_masked: usize, patch_size: usize) -> Result<RegionMask> {
    if k_masked > importance.len() {
        return Err(EetError::OutOfBounds {
            what: "k_masked",
            index: k_masked,
            bound: importance.len() + 1,
        });
    }
    let mut mask = vec![1u8; importance.len()];
    for p in top_k_positions(importance, k_masked) {
        mask[p] = 0;
    }
    Ok(RegionMask {
        mask,
        k_masked,
        patch_size,
    })
}

/// Zeros every pixel (all channels) of each masked patch.
pub fn apply_mask(image: &Image, mask: &RegionMask) -> Result<Image> {
    let p = mask.patch_size;
    if p == 0 || !image.height.is_multiple_of(p) || !image.width.is_multiple_of(p) {
        return Err(shape_err(
            "apply_mask",
            format!("image sides divisible by patch size {p}"),
            format!("{}x{}", image.height, image.width),
        ));
    }
    let (gh, gw) = (image.height / p, image.width / p);
    if gh * gw != mask.mask.len() {
        return Err(shape_err(
            "apply_mask",
            format!("{} patches", gh * gw),
            format!("{}", mask.mask.len()),
        ));
    }
    let mut out = image.clone();
    for (idx, _) in mask.mask.iter().enumerate().filter(|(_, &m)| m == 0) {
        let (gy, gx) = (idx / gw, idx % gw);
        for y in gy * p..(gy + 1) * p {
            let start = out.index(y, gx * p, 0);
            out.data[start..start + p * image.channels].fill(0.0);
        }
    }
    Ok(out)
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(EetError::OutOfBounds {
            what: "label",
            index: label,
            bound: logits.len(),
        });
    }
    Ok(log_sum_exp(logits) - logits[label])
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `L_hash + β(L_cls + L_drg) + σ·L_dkt`.
pub fn total_loss(l_hash: f64, l_cls: f64, l_drg: f64, l_dkt: f64, w: LossWeights) -> f64 {
    l_hash + w.beta * (l_cls + l_drg) + w.sigma * l_dkt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn dkt_cases() {
        let h = [0.3, -1.2, 2.0];
        assert!(dkt_loss(&h, &h).unwrap().abs() < 1e-15);
        let neg: Vec<f64> = h.iter().map(|x| -x).collect();
        assert!((dkt_loss(&h, &neg).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(dkt_loss(&h, &[0.0; 3]), Err(EetError::Degenerate(_))));
        assert!(dkt_loss(&h, &[1.0; 2]).is_err());

        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let a: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((dkt_loss(&a, &b).unwrap() - (1.0 - dot / (na * nb))).abs() < 1e-12);
            let c = 0.1 + 10.0 * rng.next_f64();
            let scaled: Vec<f64> = a.iter().map(|x| c * x).collect();
            assert!(dkt_loss(&a, &scaled).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn hamming_cosine_endpoints() {
        let a = [1.0; 16];
        assert_eq!(hamming_from_cosine(&a, &a).unwrap(), 0.0);
        assert_eq!(hamming_from_cosine(&a, &[-1.0; 16]).unwrap(), 16.0);
    }

    #[test]
    fn mask_cases() {
        let m = drg_mask(&[0.3, 0.2], 0, 4).unwrap();
        assert_eq!(m.mask, vec![1, 1]);
        let m = drg_mask(&[0.1, 0.5, 0.2, 0.2], 1, 4).unwrap();
        assert_eq!(m.mask, vec![1, 0, 1, 1]);
        let m = drg_mask(&[0.1, 0.5, 0.2, 0.2], 2, 4).unwrap();
        assert_eq!(m.mask, vec![1, 0, 0, 1]);
        assert!(drg_mask(&[0.1; 3], 4, 4).is_err());
        assert_eq!(drg_mask(&[0.1; 3], 3, 4).unwrap().mask, vec![0, 0, 0]);
    }

    #[test]
    fn apply_mask_extremes() {
        let mut rng = Rng::new(1);
        let img = Image::new(8, 8, 3, (0..192).map(|_| rng.normal()).collect()).unwrap();
        let ones = RegionMask {
            mask: vec![1; 4],
            k_masked: 0,
            patch_size: 4,
        };
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        let zeros = RegionMask {
            mask: vec![0; 4],
            k_masked: 4,
            patch_size: 4,
        };
        assert!(apply_mask(&img, &zeros).unwrap().data.iter().all(|&v| v == 0.0));
        let wrong = RegionMask {
            mask: vec![1; 3],
            k_masked: 0,
            patch_size: 4,
        };
        assert!(apply_mask(&img, &wrong).is_err());
    }

    #[test]
    fn cross_entropy_cases() {
        let ce = cross_entropy(&[0.0; 10], 3).unwrap();
        assert!((ce - 10f64.ln()).abs() < 1e-12);
        let mut logits = vec![0.0; 5];
        logits[2] = 50.0;
        assert!(cross_entropy(&logits, 2).unwrap() < 1e-20);
        assert!(cross_entropy(&logits, 5).is_err());

        let mut rng = Rng::new(4);
        let l: Vec<f64> = (0..7).map(|_| 3.0 * rng.normal()).collect();
        let z: f64 = l.iter().map(|v| v.exp()).sum();
        for y in 0..7 {
            let expect = -(l[y].exp() / z).ln();
            assert!((cross_entropy(&l, y).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn total_loss_cases() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, w), 0.0);
        assert!((total_loss(1.0, 1.0, 1.0, 1.0, w) - 2.2).abs() < 1e-15);
        let mut rng = Rng::new(5);
        for _ in 0..20 {
            let t: Vec<f64> = (0..4).map(|_| rng.next_f64()).collect();
            let w = LossWeights::new(rng.next_f64(), rng.next_f64()).unwrap();
            let expect = t[0] + w.beta * t[1] + w.beta * t[2] + w.sigma * t[3];
            assert!((total_loss(t[0], t[1], t[2], t[3], w) - expect).abs() < 1e-15);
        }
        assert!(LossWeights::new(-0.1, 1.0).is_err());
    }
}

use crate::error::{EetError, Result};

/// Architecture of the encoder and its two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub hash_bits: usize,
    pub ln_eps: f64,
}

impl ViTConfig {
    /// ViT-Small at 224×224 with 16×16 patches.
    pub fn small_224() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            depth: 12,
            dim: 384,
            heads: 6,
            mlp_ratio: 4.0,
            num_classes: 200,
            hash_bits: 48,
            ln_eps: 1e-6,
        }
    }

    /// Twelve narrow layers over 32×32 images; used for desk-scale runs.
    pub fn tiny_32() -> Self {
        Self {
            image_size: 32,
            patch_size: 8,
            channels: 3,
            depth: 12,
            dim: 48,
            heads: 4,
            mlp_ratio: 4.0,
            num_classes: 10,
            hash_bits: 16,
            ln_eps: 1e-6,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "small-224" => Ok(Self::small_224()),
            "tiny-32" => Ok(Self::tiny_32()),
            other => Err(EetError::Config(format!(
                "unknown model profile `{other}` (expected small-224 or tiny-32)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EetError::Config(m));
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.depth == 0 || self.channels == 0 || self.num_classes == 0 || self.hash_bits == 0 {
            return bad("depth, channels, num_classes and hash_bits must be positive".into());
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return bad(format!("invalid mlp_ratio {}", self.mlp_ratio));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Patch tokens per image.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Flattened length of one patch.
    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counts() {
        assert_eq!(ViTConfig::small_224().num_patches() + 1, 197);
        let mut c = ViTConfig::small_224();
        c.image_size = 32;
        assert_eq!(c.num_patches() + 1, 5);
        assert_eq!(ViTConfig::small_224().head_dim(), 64);
        assert_eq!(ViTConfig::small_224().mlp_hidden(), 1536);
    }

    #[test]
    fn validation() {
        assert!(ViTConfig::small_224().validate().is_ok());
        assert!(ViTConfig::tiny_32().validate().is_ok());
        let mut c = ViTConfig::tiny_32();
        c.image_size = 30;
        assert!(c.validate().is_err());
        let mut c = ViTConfig::tiny_32();
        c.heads = 5;
        assert!(c.validate().is_err());
        assert!(ViTConfig::profile("huge").is_err());
    }
}

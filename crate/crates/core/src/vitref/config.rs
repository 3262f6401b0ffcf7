use serde::{Deserialize, Serialize};

use crate::tokenprune::TdmConfig;
use crate::{Error, Result};

/// ViT hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub head_dim: usize,
    pub mlp_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub channels: usize,
    pub patch: usize,
    pub classes: usize,
    pub block: usize,
    #[serde(default)]
    pub tdm: TdmConfig,
    /// Generate and use bias vectors. Off keeps the math bias-free.
    #[serde(default)]
    pub biases: bool,
}

impl ModelConfig {
    /// DeiT-Small: 12 layers, 6 heads, D = 384, 224x224 input, 16x16 patches.
    pub fn deit_small() -> Self {
        ModelConfig {
            layers: 12,
            heads: 6,
            dim: 384,
            head_dim: 64,
            mlp_dim: 1536,
            image_height: 224,
            image_width: 224,
            channels: 3,
            patch: 16,
            classes: 1000,
            block: 16,
            tdm: TdmConfig::default(),
            biases: false,
        }
    }

    /// Small enough for unit tests: 2 layers, D = 32, 17 tokens.
    pub fn tiny() -> Self {
        ModelConfig {
            layers: 2,
            heads: 2,
            dim: 32,
            head_dim: 16,
            mlp_dim: 64,
            image_height: 32,
            image_width: 32,
            channels: 3,
            patch: 8,
            classes: 10,
            block: 8,
            tdm: TdmConfig { layers: vec![1], ..TdmConfig::default() },
            biases: false,
        }
    }

    /// Tokens including the class token.
    pub fn tokens(&self) -> usize {
        (self.image_height / self.patch) * (self.image_width / self.patch) + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("dim", self.dim),
            ("head_dim", self.head_dim),
            ("mlp_dim", self.mlp_dim),
            ("patch", self.patch),
            ("channels", self.channels),
            ("classes", self.classes),
            ("block", self.block),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.dim != self.heads * self.head_dim {
            return Err(Error::invalid(format!(
                "dim {} != heads {} x head_dim {}",
                self.dim, self.heads, self.head_dim
            )));
        }
        if !self.head_dim.is_multiple_of(self.block) {
            return Err(Error::invalid(format!(
                "head_dim {} must be a multiple of the block size {}",
                self.head_dim, self.block
            )));
        }
        if !self.image_height.is_multiple_of(self.patch)
            || !self.image_width.is_multiple_of(self.patch)
            || self.image_height == 0
        {
            return Err(Error::invalid("image dims must be positive multiples of the patch size"));
        }
        self.tdm.validate(self.layers)
    }
}

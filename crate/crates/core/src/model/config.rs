use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of the desk-scale backbone.
///
/// The head is `head_channels.len()` stride-2 conv–norm–ReLU stages, so the
/// attention layer sees a `input_size / 2^K` square map. The tail adds
/// stride-1 stages, global average pooling and a linear projection to
/// `embedding_dim` (2048 in the full-scale Xception setting).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct ArchConfig {
    pub input_size: usize,
    pub head_channels: Vec<usize>,
    pub tail_channels: Vec<usize>,
    pub embedding_dim: usize,
    pub disc_channels: usize,
    pub norm_groups: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_size: 32,
            head_channels: vec![8, 16, 32],
            tail_channels: vec![32, 64],
            embedding_dim: 128,
            disc_channels: 16,
            norm_groups: 4,
        }
    }
}

impl ArchConfig {
    /// Tiny double-precision network used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            input_size: 16,
            head_channels: vec![2, 4],
            tail_channels: vec![4],
            embedding_dim: 8,
            disc_channels: 4,
            norm_groups: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_channels.is_empty() || self.tail_channels.is_empty() {
            return Err(Error::Config("headChannels and tailChannels must be non-empty".into()));
        }
        let down = 1usize << self.head_channels.len();
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::Config(format!(
                "inputSize {} is not divisible by 2^{}",
                self.input_size,
                self.head_channels.len()
            )));
        }
        if self.norm_groups == 0 {
            return Err(Error::Config("normGroups must be positive".into()));
        }
        for &c in self.head_channels.iter().chain(&self.tail_channels) {
            if c == 0 || c % self.norm_groups != 0 {
                return Err(Error::Config(format!(
                    "channel count {c} is not a positive multiple of normGroups {}",
                    self.norm_groups
                )));
            }
        }
        if self.embedding_dim == 0 || self.disc_channels == 0 {
            return Err(Error::Config("embeddingDim and discChannels must be positive".into()));
        }
        Ok(())
    }

    /// Spatial side of the feature map at the attention insertion depth.
    pub fn attention_size(&self) -> usize {
        self.input_size >> self.head_channels.len()
    }

    /// Channel count at the attention insertion depth.
    pub fn feature_channels(&self) -> usize {
        *self.head_channels.last().expect("validated non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchId {
    High,
    Low,
}

impl BranchId {
    pub const BOTH: [BranchId; 2] = [BranchId::High, BranchId::Low];
}

impl std::str::FromStr for BranchId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" | "hq" => Ok(BranchId::High),
            "low" | "lq" => Ok(BranchId::Low),
            other => Err(Error::Parameter(format!("unknown branch `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Objective {
    /// Origin-radius margin loss; score is the embedding norm.
    Metric,
    /// Binary cross-entropy on a linear logit of the embedding.
    CrossEntropy,
}

/// Which parts of the method are switched on. The full method is the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, rename_all = "camelCase")]
pub struct Variant {
    /// Train both branches on pairs; otherwise only the low-quality branch on
    /// low-quality inputs.
    pub two_branch: bool,
    pub objective: Objective,
    pub attention: bool,
    /// Normalized-map transfer from the high to the low branch.
    pub transfer: bool,
    /// Concatenation-order discriminator.
    pub gan: bool,
    /// Let the transfer term back-propagate into the high branch as well.
    pub bidirectional_transfer: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self::full()
    }
}

impl Variant {
    pub fn full() -> Self {
        Self {
            two_branch: true,
            objective: Objective::Metric,
            attention: true,
            transfer: true,
            gan: true,
            bidirectional_transfer: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.two_branch && (self.transfer || self.gan) {
            return Err(Error::Config(
                "transfer and gan require twoBranch".into(),
            ));
        }
        if self.transfer && !self.attention {
            return Err(Error::Config("transfer requires attention".into()));
        }
        if self.objective == Objective::CrossEntropy && self.two_branch {
            return Err(Error::Config(
                "crossEntropy objective is only defined for the single-branch baseline".into(),
            ));
        }
        Ok(())
    }
}

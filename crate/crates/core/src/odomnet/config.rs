use serde::{Deserialize, Serialize};

use super::OdomNetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (inner width = stage width / 4).
    Bottleneck,
}

/// Which descriptors reach the regression head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Difference and similarity descriptors.
    Full,
    DifferenceOnly,
    SimilarityOnly,
    /// Flattened high-level features of both frames, concatenated.
    FeatureConcat,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::FeatureConcat,
        Variant::SimilarityOnly,
        Variant::DifferenceOnly,
        Variant::Full,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DifferenceOnly => "difference_only",
            Variant::SimilarityOnly => "similarity_only",
            Variant::FeatureConcat => "feature_concat",
        }
    }

    pub fn parse(s: &str) -> Result<Self, OdomNetError> {
        Self::ALL
            .into_iter()
            .find(|v| v.id() == s)
            .ok_or_else(|| OdomNetError::Config(vec![format!("unknown variant '{s}'")]))
    }

    pub fn uses_difference(self) -> bool {
        matches!(self, Variant::Full | Variant::DifferenceOnly)
    }

    pub fn uses_similarity(self) -> bool {
        matches!(self, Variant::Full | Variant::SimilarityOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// B-scan rows (time samples).
    pub height: usize,
    /// B-scan columns (traces).
    pub width: usize,
    pub stage_widths: [usize; 4],
    pub stage_blocks: [usize; 4],
    pub block: BlockKind,
    /// Channels of the compressed low-level feature map and the
    /// difference branch.
    pub compressed_channels: usize,
    /// Output channels of the similarity CBR.
    pub similarity_channels: usize,
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub attention_reduction: usize,
    pub spatial_kernel: usize,
    pub variant: Variant,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            stage_widths: [8, 16, 32, 64],
            stage_blocks: [2, 2, 2, 2],
            block: BlockKind::Basic,
            compressed_channels: 32,
            similarity_channels: 16,
            hidden: [64, 32],
            dropout: 0.3,
            attention_reduction: 4,
            spatial_kernel: 7,
            variant: Variant::Full,
        }
    }
}

impl NetConfig {
    /// Small configuration for gradient checks and quick tests.
    pub fn tiny(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            stage_widths: [2, 3, 4, 5],
            stage_blocks: [1, 1, 1, 1],
            compressed_channels: 4,
            similarity_channels: 3,
            hidden: [6, 4],
            attention_reduction: 2,
            ..Self::default()
        }
    }

    /// Every violated constraint.
    pub fn check(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.height == 0 || self.height % 32 != 0 {
            e.push(format!("height: {} is not a positive multiple of 32", self.height));
        }
        if self.width == 0 || self.width % 32 != 0 {
            e.push(format!("width: {} is not a positive multiple of 32", self.width));
        }
        if self.stage_widths[0] == 0 || self.stage_widths.windows(2).any(|w| w[1] <= w[0]) {
            e.push("stage_widths: must be positive and strictly increasing".into());
        }
        if self.block == BlockKind::Bottleneck && self.stage_widths.iter().any(|w| w % 4 != 0) {
            e.push("stage_widths: bottleneck blocks need widths divisible by 4".into());
        }
        if self.stage_blocks.contains(&0) {
            e.push("stage_blocks: every stage needs at least one block".into());
        }
        if self.compressed_channels == 0 {
            e.push("compressed_channels: must be positive".into());
        }
        if self.similarity_channels == 0 {
            e.push("similarity_channels: must be positive".into());
        }
        if self.hidden.contains(&0) {
            e.push("hidden: widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            e.push("dropout: must lie in [0, 1)".into());
        }
        if self.attention_reduction == 0 || self.attention_reduction > self.compressed_channels {
            e.push("attention_reduction: must lie in [1, compressed_channels]".into());
        }
        if self.spatial_kernel % 2 == 0 {
            e.push("spatial_kernel: must be odd".into());
        }
        e
    }

    pub fn validate(&self) -> Result<(), OdomNetError> {
        let e = self.check();
        if e.is_empty() {
            Ok(())
        } else {
            Err(OdomNetError::Config(e))
        }
    }

    /// Spatial extents of stage `i` (0-based) output.
    pub fn stage_extent(&self, i: usize) -> (usize, usize) {
        let f = 4 << i;
        (self.height / f, self.width / f)
    }

    /// Length of one frame's flattened high-level feature.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.stage_extent(3);
        self.stage_widths[3] * h * w
    }

    /// Width of the regression head input.
    pub fn head_input(&self) -> usize {
        match self.variant {
            Variant::Full => self.compressed_channels + self.similarity_channels,
            Variant::DifferenceOnly => self.compressed_channels,
            Variant::SimilarityOnly => self.similarity_channels,
            Variant::FeatureConcat => 2 * self.flat_len(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, OdomNetError> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| OdomNetError::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which attention block sits between encoder and boundary head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Temporal and/or channel gates computed from R by conv stacks.
    Csa,
    /// Dense bottleneck on the time-pooled R, channel gate only.
    FfCsa,
    /// Squeeze-and-excitation gate computed from F itself.
    SeBaseline,
    None,
}

/// How gated temporal and channel features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Stack both gated features, then a kernel-1 conv + ReLU back to C_out.
    ConcatProject,
    /// Elementwise sum of the two gated features.
    Add,
}

/// Where inside the encoder the attention is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    /// Gate R itself, before the first encoder stage.
    Start,
    /// After the second encoder stage.
    Middle,
    /// On the encoder output.
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsaConfig {
    pub variant: Variant,
    pub kernel_size: usize,
    pub conv_blocks: usize,
    pub use_temporal: bool,
    pub use_channel: bool,
    pub fusion: Fusion,
    pub location: Location,
    /// Width of the internal conv stacks; defaults to the source channel count.
    pub c_mid: Option<usize>,
    /// Bottleneck reduction ratio for SE and FF-CSA.
    pub se_reduction: usize,
}

impl Default for CsaConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Csa,
            kernel_size: 3,
            conv_blocks: 2,
            use_temporal: true,
            use_channel: true,
            fusion: Fusion::ConcatProject,
            location: Location::End,
            c_mid: None,
            se_reduction: 4,
        }
    }
}

impl CsaConfig {
    pub fn none() -> Self {
        Self { variant: Variant::None, ..Self::default() }
    }

    pub fn se() -> Self {
        Self { variant: Variant::SeBaseline, ..Self::default() }
    }

    pub fn ff_csa() -> Self {
        Self { variant: Variant::FfCsa, ..Self::default() }
    }

    pub fn temporal_only(self) -> Self {
        Self { use_temporal: true, use_channel: false, ..self }
    }

    pub fn channel_only(self) -> Self {
        Self { use_temporal: false, use_channel: true, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size % 2 == 0 {
            return Err(Error::config(format!("csa.kernel_size must be odd, got {}", self.kernel_size)));
        }
        if !(1..=3).contains(&self.conv_blocks) {
            return Err(Error::config(format!("csa.conv_blocks must be 1, 2 or 3, got {}", self.conv_blocks)));
        }
        if self.variant == Variant::Csa && !self.use_temporal && !self.use_channel {
            return Err(Error::config("csa: at least one of use_temporal/use_channel must be true"));
        }
        if self.c_mid == Some(0) {
            return Err(Error::config("csa.c_mid must be positive"));
        }
        if self.se_reduction == 0 {
            return Err(Error::config("csa.se_reduction must be positive"));
        }
        Ok(())
    }

    /// True when both branches are active and combined.
    pub fn fuses(&self) -> bool {
        self.use_temporal && self.use_channel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_names() {
        let cfg = CsaConfig::ff_csa();
        let json = serde_json::to_value(&cfg).unwrap();
        assert_eq!(json["variant"], "FF_CSA");
        assert_eq!(json["fusion"], "concat_project");
        assert_eq!(json["location"], "end");
        let parsed: CsaConfig = serde_json::from_str(r#"{"variant":"SE_BASELINE","kernel_size":5}"#).unwrap();
        assert_eq!(parsed.variant, Variant::SeBaseline);
        assert_eq!(parsed.kernel_size, 5);
        assert_eq!(parsed.conv_blocks, 2);
    }

    #[test]
    fn validation() {
        assert!(CsaConfig::default().validate().is_ok());
        assert!(CsaConfig { kernel_size: 4, ..Default::default() }.validate().is_err());
        assert!(CsaConfig { conv_blocks: 0, ..Default::default() }.validate().is_err());
        assert!(CsaConfig { conv_blocks: 4, ..Default::default() }.validate().is_err());
        let neither = CsaConfig { use_temporal: false, use_channel: false, ..Default::default() };
        assert!(neither.validate().is_err());
        // branch toggles are irrelevant for the other variants
        assert!(CsaConfig { variant: Variant::SeBaseline, ..neither }.validate().is_ok());
        assert!(serde_json::from_str::<CsaConfig>(r#"{"kernel":3}"#).is_err());
    }
}

use serde::{Deserialize, Serialize};

use super::{NetError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Hardswish,
}

/// First full convolution of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

/// One inverted-residual block: optional 1x1 expansion, depthwise k x k,
/// optional squeeze-excitation, linear 1x1 projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub expansion_ratio: f64,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub use_squeeze_excite: bool,
    pub activation: Activation,
}

impl BlockSpec {
    pub fn expanded_channels(&self, in_channels: usize) -> usize {
        (in_channels as f64 * self.expansion_ratio).round() as usize
    }

    pub fn has_expansion(&self, in_channels: usize) -> bool {
        self.expanded_channels(in_channels) != in_channels
    }

    pub fn has_residual(&self, in_channels: usize) -> bool {
        self.stride == 1 && in_channels == self.out_channels
    }
}

/// Width of the squeeze-excitation bottleneck for `channels` inputs:
/// a quarter of the channels rounded to a multiple of 8 (never below 8 and
/// never more than 10% under the quarter).
pub fn squeeze_channels(channels: usize) -> usize {
    let v = channels as f64 / 4.0;
    let d: f64 = 8.0;
    let mut out = d.max(((v + d / 2.0) / d).floor() * d);
    if out < 0.9 * v {
        out += d;
    }
    out as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderPreset {
    pub name: String,
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    /// Channels of the latent map. When this differs from the last block's
    /// output a 1x1 conv + affine + hardswish head widens it.
    pub latent_channels: usize,
}

pub const PRESET_NAMES: &[&str] = &["desk_tiny", "desk_small", "desk_micro", "identity", "mobilenet_small_full"];

fn block(expansion_ratio: f64, out_channels: usize, kernel: usize, stride: usize, se: bool, activation: Activation) -> BlockSpec {
    BlockSpec { expansion_ratio, out_channels, kernel, stride, use_squeeze_excite: se, activation }
}

impl EncoderPreset {
    pub fn by_name(name: &str) -> Result<Self> {
        use Activation::{Hardswish as HS, Relu as RE};
        let stem = |out_channels, stride, activation| StemSpec { out_channels, kernel: 3, stride, activation };
        let preset = match name {
            // 3x32x32 -> 32x4x4
            "desk_tiny" => Self {
                name: name.into(),
                stem: stem(16, 1, RE),
                blocks: vec![block(2.0, 16, 3, 2, false, RE), block(3.0, 24, 3, 2, true, HS), block(3.0, 32, 3, 2, true, HS)],
                latent_channels: 32,
            },
            // 3x64x64 -> 64x4x4
            "desk_small" => Self {
                name: name.into(),
                stem: stem(16, 2, HS),
                blocks: vec![
                    block(1.0, 16, 3, 2, true, RE),
                    block(4.0, 24, 3, 2, false, RE),
                    block(3.0, 24, 3, 1, false, RE),
                    block(4.0, 40, 5, 2, true, HS),
                    block(3.0, 40, 5, 1, true, HS),
                ],
                latent_channels: 64,
            },
            "desk_micro" => Self {
                name: name.into(),
                stem: stem(8, 2, RE),
                blocks: vec![block(2.0, 12, 3, 2, true, HS)],
                latent_channels: 16,
            },
            "identity" => Self {
                name: name.into(),
                stem: stem(8, 1, RE),
                blocks: vec![block(1.0, 8, 3, 1, false, RE)],
                latent_channels: 8,
            },
            // MobileNetV3-Small stage layout: 3x224x224 -> 576x7x7.
            "mobilenet_small_full" => Self {
                name: name.into(),
                stem: stem(16, 2, HS),
                blocks: vec![
                    block(1.0, 16, 3, 2, true, RE),
                    block(72.0 / 16.0, 24, 3, 2, false, RE),
                    block(88.0 / 24.0, 24, 3, 1, false, RE),
                    block(4.0, 40, 5, 2, true, HS),
                    block(6.0, 40, 5, 1, true, HS),
                    block(6.0, 40, 5, 1, true, HS),
                    block(3.0, 48, 5, 1, true, HS),
                    block(3.0, 48, 5, 1, true, HS),
                    block(6.0, 96, 5, 2, true, HS),
                    block(6.0, 96, 5, 1, true, HS),
                    block(6.0, 96, 5, 1, true, HS),
                ],
                latent_channels: 576,
            },
            other => return Err(NetError::UnknownPreset(other.to_string())),
        };
        debug_assert!(preset.validate().is_ok());
        Ok(preset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NetError::InvalidPreset(format!("{}: {msg}", self.name)));
        let s = &self.stem;
        if s.out_channels == 0 || s.kernel == 0 || s.kernel.is_multiple_of(2) || !(1..=2).contains(&s.stride) {
            return bad(format!("invalid stem {s:?}"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if !(1..=2).contains(&b.stride) {
                return bad(format!("block {i}: stride must be 1 or 2, got {}", b.stride));
            }
            if !(b.expansion_ratio >= 1.0) {
                return bad(format!("block {i}: expansion ratio must be >= 1, got {}", b.expansion_ratio));
            }
            if b.out_channels == 0 {
                return bad(format!("block {i}: out_channels must be >= 1"));
            }
            if b.kernel == 0 || b.kernel % 2 == 0 {
                return bad(format!("block {i}: kernel must be odd, got {}", b.kernel));
            }
        }
        if self.latent_channels == 0 {
            return bad("latent_channels must be >= 1".into());
        }
        Ok(())
    }

    /// Number of stride-2 stages, stem included.
    pub fn downsample_stages(&self) -> usize {
        usize::from(self.stem.stride == 2) + self.blocks.iter().filter(|b| b.stride == 2).count()
    }

    pub fn total_stride(&self) -> usize {
        1 << self.downsample_stages()
    }

    pub fn last_block_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem.out_channels, |b| b.out_channels)
    }

    pub fn has_head_conv(&self) -> bool {
        self.latent_channels != self.last_block_channels()
    }

    /// Latent shape for a `C x H x W` input, or an error naming the required
    /// divisibility.
    pub fn latent_shape(&self, height: usize, width: usize) -> Result<[usize; 3]> {
        let s = self.total_stride();
        if height == 0 || width == 0 || !height.is_multiple_of(s) || !width.is_multiple_of(s) {
            return Err(NetError::Divisibility { preset: self.name.clone(), required: s, height, width });
        }
        Ok([self.latent_channels, height / s, width / s])
    }

    /// Channel count the decoder restores at each stride-2 stage, from the
    /// latent resolution outwards. A stride-2 stem maps back to its own
    /// output width rather than to the raw image channels.
    pub fn decoder_stage_channels(&self) -> Vec<usize> {
        let mut stages = Vec::new();
        if self.stem.stride == 2 {
            stages.push(self.stem.out_channels);
        }
        let mut c = self.stem.out_channels;
        for b in &self.blocks {
            if b.stride == 2 {
                stages.push(c);
            }
            c = b.out_channels;
        }
        stages.reverse();
        stages
    }
}

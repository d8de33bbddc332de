//! Architecture configuration and the progressive bottom-up trunk shared by
//! the descriptor, the style encoder and the translator's encoder half.
//!
//! Blocks are tied to a resolution level. The block that reads images at
//! level `s` sits at depth `max_levels - s + 1` counted from the image side of
//! the fully grown network, and its widths follow the channel plan for that
//! depth. Tying widths to the final depth keeps every block's shape fixed
//! while the network grows around it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grad, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{self, join, Conv2d, Module, Param, NORM_EPS};
use crate::tensor::Float;

/// Block widths `min(cap, 2^(base_exp + depth))` in, `min(cap, 2^(base_exp + depth + 1))` out.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPlan {
    pub base_exp: u32,
    pub cap: usize,
}

impl ChannelPlan {
    pub fn width(&self, depth: usize) -> usize {
        let exp = self.base_exp as usize + depth;
        if exp >= usize::BITS as usize - 1 {
            self.cap
        } else {
            (1usize << exp).min(self.cap)
        }
    }

    pub fn block_in(&self, depth: usize) -> usize {
        self.width(depth)
    }

    pub fn block_out(&self, depth: usize) -> usize {
        self.width(depth + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub image_channels: usize,
    /// Side length of level-1 images.
    pub base_resolution: usize,
    pub max_levels: usize,
    pub channels: ChannelPlan,
    pub style_dim: usize,
    pub latent_dim: usize,
    pub mapping_hidden: usize,
    /// Shared fully connected layers in the style generator.
    pub mapping_layers: usize,
    /// Style-modulated residual blocks at the translator bottleneck.
    pub middle_blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ArchConfig {
    /// Desk-scale preset: 16 -> 32 -> 64 pixels.
    pub fn desk() -> Self {
        Self {
            image_channels: 3,
            base_resolution: 16,
            max_levels: 3,
            channels: ChannelPlan { base_exp: 2, cap: 512 },
            style_dim: 64,
            latent_dim: 16,
            mapping_hidden: 64,
            mapping_layers: 2,
            middle_blocks: 1,
        }
    }

    /// Full-scale preset: 64 -> 128 -> 256 pixels, widths capped at 512.
    pub fn full_scale() -> Self {
        Self {
            image_channels: 3,
            base_resolution: 64,
            max_levels: 3,
            channels: ChannelPlan { base_exp: 5, cap: 512 },
            style_dim: 64,
            latent_dim: 16,
            mapping_hidden: 512,
            mapping_layers: 3,
            middle_blocks: 2,
        }
    }

    /// Minimal configuration for finite-difference checks: one image
    /// channel, 4x4 -> 8x8 pixels, at most two channels per block.
    pub fn tiny() -> Self {
        Self {
            image_channels: 1,
            base_resolution: 4,
            max_levels: 2,
            channels: ChannelPlan { base_exp: 0, cap: 2 },
            style_dim: 2,
            latent_dim: 2,
            mapping_hidden: 3,
            mapping_layers: 1,
            middle_blocks: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_channels == 0 || self.style_dim == 0 || self.latent_dim == 0 || self.mapping_hidden == 0 {
            return bad("image_channels, style_dim, latent_dim and mapping_hidden must be positive");
        }
        if self.max_levels == 0 {
            return bad("max_levels must be at least 1");
        }
        if self.base_resolution < 2 || !self.base_resolution.is_multiple_of(2) {
            return bad("base_resolution must be even and at least 2");
        }
        if self.channels.cap == 0 {
            return bad("channel cap must be positive");
        }
        Ok(())
    }

    pub fn resolution(&self, level: usize) -> usize {
        self.base_resolution << (level - 1)
    }

    pub fn depth(&self, level: usize) -> usize {
        self.max_levels + 1 - level
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.max_levels {
            return Err(Error::Config(format!("level {level} outside 1..={}", self.max_levels)));
        }
        Ok(())
    }

    /// Channels at the bottleneck (output of the level-1 block).
    pub fn bottleneck_channels(&self) -> usize {
        self.channels.block_out(self.depth(1))
    }

    pub fn bottleneck_side(&self) -> usize {
        self.base_resolution / 2
    }

    /// Width of the flattened bottleneck feature map.
    pub fn feature_len(&self) -> usize {
        self.bottleneck_channels() * self.bottleneck_side() * self.bottleneck_side()
    }

    /// Channels of the feature map that the level-`s` image adapter produces.
    pub fn rgb_channels(&self, level: usize) -> usize {
        self.channels.block_in(self.depth(level))
    }
}

/// conv3x3 -> (instance norm) -> leaky relu -> 2x average pool
#[derive(Clone, Debug)]
pub struct DownBlock<T> {
    pub conv: Conv2d<T>,
    pub norm: bool,
}

impl<T: Float> DownBlock<T> {
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, grad: Grad) -> Result<Var<'t, T>> {
        let mut h = self.conv.forward(tape, x, grad)?;
        if self.norm {
            h = h.instance_norm(T::lit(NORM_EPS))?;
        }
        nn::lrelu(h).avg_pool2()
    }
}

impl<T: Float> Module<T> for DownBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
    }
}

/// Image adapter (1x1 conv + leaky relu) followed by one down block per level.
///
/// During a transition the previous level's adapter stays alive as a fading
/// path fed with a 2x average-pooled copy of the input; its features are
/// blended with the new block's output using the transition factor.
#[derive(Clone, Debug)]
pub struct BottomUp<T> {
    pub from_rgb: Conv2d<T>,
    pub fading_rgb: Option<Conv2d<T>>,
    /// `blocks[i]` reads images of level `i + 1`; index 0 is innermost.
    pub blocks: Vec<DownBlock<T>>,
    pub norm: bool,
}

impl<T: Float> BottomUp<T> {
    pub fn new<R: Rng>(arch: &ArchConfig, norm: bool, rng: &mut R) -> Self {
        let depth = arch.depth(1);
        let block = DownBlock {
            conv: Conv2d::new(arch.channels.block_in(depth), arch.channels.block_out(depth), 3, rng),
            norm,
        };
        Self {
            from_rgb: Conv2d::new(arch.image_channels, arch.rgb_channels(1), 1, rng),
            fading_rgb: None,
            blocks: vec![block],
            norm,
        }
    }

    pub fn level(&self) -> usize {
        self.blocks.len()
    }

    /// Grow by one level. The current adapter becomes the fading path and any
    /// older fading adapter is dropped.
    pub fn expand<R: Rng>(&mut self, arch: &ArchConfig, rng: &mut R) -> Result<()> {
        let level = self.level() + 1;
        arch.check_level(level)?;
        let depth = arch.depth(level);
        let block = DownBlock {
            conv: Conv2d::new(arch.channels.block_in(depth), arch.channels.block_out(depth), 3, rng),
            norm: self.norm,
        };
        let adapter = Conv2d::new(arch.image_channels, arch.rgb_channels(level), 1, rng);
        self.fading_rgb = Some(std::mem::replace(&mut self.from_rgb, adapter));
        self.blocks.push(block);
        Ok(())
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: Var<'t, T>, omega: T, grad: Grad) -> Result<Var<'t, T>> {
        let top = self.blocks.len() - 1;
        let mut h = nn::lrelu(self.from_rgb.forward(tape, x, grad)?);
        h = self.blocks[top].forward(tape, h, grad)?;
        if let Some(fading) = &self.fading_rgb {
            let old = nn::lrelu(fading.forward(tape, x.avg_pool2()?, grad)?);
            h = Var::blend(old, h, omega)?;
        }
        for block in self.blocks[..top].iter().rev() {
            h = block.forward(tape, h, grad)?;
        }
        Ok(h)
    }

    pub fn cast<U: Float>(&self) -> BottomUp<U> {
        BottomUp {
            from_rgb: self.from_rgb.cast(),
            fading_rgb: self.fading_rgb.as_ref().map(Conv2d::cast),
            blocks: self.blocks.iter().map(|b| DownBlock { conv: b.conv.cast(), norm: b.norm }).collect(),
            norm: self.norm,
        }
    }
}

impl<T: Float> Module<T> for BottomUp<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        let level = self.level();
        self.from_rgb.visit(&join(prefix, &format!("from_rgb_l{level}")), f);
        if let Some(fading) = &self.fading_rgb {
            fading.visit(&join(prefix, &format!("from_rgb_l{}", level - 1)), f);
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("down_l{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        let level = self.level();
        self.from_rgb.visit_mut(&join(prefix, &format!("from_rgb_l{level}")), f);
        if let Some(fading) = &mut self.fading_rgb {
            fading.visit_mut(&join(prefix, &format!("from_rgb_l{}", level - 1)), f);
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("down_l{}", i + 1)), f);
        }
    }
}

/// Images `[n, c, r, r]` must match the resolution of `level`.
pub(crate) fn check_image(arch: &ArchConfig, shape: &[usize], level: usize) -> Result<()> {
    let r = arch.resolution(level);
    match shape {
        [_, c, h, w] if *c == arch.image_channels && *h == r && *w == r => Ok(()),
        _ => Err(Error::Config(format!(
            "images {shape:?} do not match level {level} ({}x{r}x{r})",
            arch.image_channels
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_channel_plan_caps_at_512() {
        let plan = ArchConfig::full_scale().channels;
        assert_eq!((plan.block_in(1), plan.block_out(1)), (64, 128));
        assert_eq!((plan.block_in(3), plan.block_out(3)), (256, 512));
        assert_eq!((plan.block_in(4), plan.block_out(4)), (512, 512));
    }

    #[test]
    fn depth_is_counted_from_the_grown_image_side() {
        let arch = ArchConfig::desk();
        assert_eq!(arch.depth(3), 1);
        assert_eq!(arch.depth(1), 3);
        assert_eq!(arch.resolution(3), 64);
        // block of level s outputs what the block of level s-1 reads
        for s in 2..=3 {
            assert_eq!(arch.channels.block_out(arch.depth(s)), arch.rgb_channels(s - 1));
        }
    }
}

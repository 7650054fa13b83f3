//! ConvNeXt-style hierarchical encoder.
//!
//! A 4x4/stride-4 patch stem is followed by four stages; stages 2..4 open
//! with a 2x downsampling block, so stage `i` (1-based) produces
//! `2^(i-1) * C` channels at `1 / 2^(i+1)` of the input resolution.
//!
//! Block internals (norm placement, 4x expansion, GELU, layer scale) follow
//! the published ConvNeXt design. Stochastic depth is not implemented.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{ConvLayer, NormLayer};
use crate::ops::ConvSpec;
use crate::params::{Binder, ParamId, ParamStore};
use crate::rng::RngStream;
use crate::tensor::{Shape, Tensor};

/// Total stride of the encoder; network inputs must be multiples of this.
pub const INPUT_MULTIPLE: usize = 32;
const MLP_RATIO: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    ConvNext,
    /// Ablation arm: residual blocks of two plain 3x3 convolutions with the
    /// same stage depths. A generic CNN baseline, not ResNet-101.
    PlainCnn,
}

impl EncoderKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EncoderKind::ConvNext => "convnext",
            EncoderKind::PlainCnn => "plain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "convnext" => Ok(EncoderKind::ConvNext),
            "plain" => Ok(EncoderKind::PlainCnn),
            _ => Err(Error::config(format!("unknown encoder `{s}` (convnext | plain)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Base width `C` of stage 1.
    pub channels: usize,
    pub blocks_per_stage: [usize; 4],
    pub layer_scale_init: f64,
    pub kind: EncoderKind,
}

impl EncoderConfig {
    /// ConvNeXt-B widths and depths.
    pub fn full() -> Self {
        Self {
            channels: 128,
            blocks_per_stage: [3, 3, 27, 3],
            layer_scale_init: 1e-6,
            kind: EncoderKind::ConvNext,
        }
    }

    /// Small enough to train on one CPU core in minutes.
    pub fn desk() -> Self {
        Self {
            channels: 8,
            blocks_per_stage: [1, 1, 2, 1],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return Err(Error::config(format!(
                "encoder width must be even and positive, got {}",
                self.channels
            )));
        }
        if self.blocks_per_stage.contains(&0) {
            return Err(Error::config("every encoder stage needs at least one block"));
        }
        Ok(())
    }

    /// Channels of stage `i` (0-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.channels << i
    }

    fn stem_spec(&self) -> ConvSpec {
        ConvSpec::new(3, self.channels, 4).with_stride(4)
    }

    /// Shapes of `X0..X4` for a given input, derived from the same layer
    /// geometry the forward pass uses but without allocating parameters.
    pub fn plan(&self, input: Shape) -> Result<StageOutputs<Shape>> {
        self.validate()?;
        check_input(input)?;
        let x0 = self.stem_spec().output_shape(input)?;
        let mut x = x0;
        let mut stages = [x0; 4];
        for (i, stage) in stages.iter_mut().enumerate() {
            let ch = self.stage_channels(i);
            if i > 0 {
                x = downsample_spec(ch / 2).output_shape(x)?;
            }
            for _ in 0..self.blocks_per_stage[i] {
                let before = x;
                for spec in block_specs(self.kind, ch) {
                    x = spec.output_shape(x)?;
                }
                debug_assert_eq!(before, x);
            }
            *stage = x;
        }
        Ok(StageOutputs { x0, x: stages })
    }
}

fn check_input(input: Shape) -> Result<()> {
    if input.c != 3 {
        return Err(Error::Dimension {
            op: "stem",
            axis: "C",
            expected: 3,
            found: input.c,
        });
    }
    if !input.h.is_multiple_of(INPUT_MULTIPLE) || !input.w.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::InputSize {
            height: input.h,
            width: input.w,
            multiple: INPUT_MULTIPLE,
        });
    }
    Ok(())
}

fn downsample_spec(in_channels: usize) -> ConvSpec {
    ConvSpec::new(in_channels, 2 * in_channels, 2).with_stride(2)
}

fn block_specs(kind: EncoderKind, ch: usize) -> Vec<ConvSpec> {
    match kind {
        EncoderKind::ConvNext => vec![
            ConvSpec::depthwise(ch, 7).with_padding(3),
            ConvSpec::new(ch, MLP_RATIO * ch, 1),
            ConvSpec::new(MLP_RATIO * ch, ch, 1),
        ],
        EncoderKind::PlainCnn => vec![
            ConvSpec::new(ch, ch, 3).with_padding(1),
            ConvSpec::new(ch, ch, 3).with_padding(1),
        ],
    }
}

/// Stem output and the four stage outputs `X1..X4` (`x[0]` is `X1`).
#[derive(Clone, Debug, PartialEq)]
pub struct StageOutputs<T> {
    pub x0: T,
    pub x: [T; 4],
}

/// `y = x + ls * pw2(gelu(pw1(norm(dw(x)))))`, or for the plain arm
/// `y = x + ls * conv2(gelu(conv1(norm(x))))`.
#[derive(Clone, Debug)]
pub struct Block {
    kind: EncoderKind,
    /// Depthwise 7x7 (ConvNeXt) or first 3x3 (plain).
    pub spatial: ConvLayer,
    pub norm: NormLayer,
    /// Pointwise expansion (ConvNeXt only).
    pub expand: Option<ConvLayer>,
    /// Final projection back to the block width.
    pub project: ConvLayer,
    pub layer_scale: ParamId,
}

impl Block {
    fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, ch: usize, rng: &mut RngStream) -> Result<Self> {
        let specs = block_specs(cfg.kind, ch);
        let (spatial, norm, expand, project) = match cfg.kind {
            EncoderKind::ConvNext => (
                ConvLayer::new(store, &format!("{name}.dwconv"), specs[0], rng)?,
                NormLayer::new(store, &format!("{name}.norm"), ch),
                Some(ConvLayer::new(store, &format!("{name}.pwconv1"), specs[1], rng)?),
                ConvLayer::new(store, &format!("{name}.pwconv2"), specs[2], rng)?,
            ),
            EncoderKind::PlainCnn => (
                ConvLayer::new(store, &format!("{name}.conv1"), specs[0], rng)?,
                NormLayer::new(store, &format!("{name}.norm"), ch),
                None,
                ConvLayer::new(store, &format!("{name}.conv2"), specs[1], rng)?,
            ),
        };
        let layer_scale = store.add(
            format!("{name}.layer_scale"),
            Tensor::full(Shape::new(1, ch, 1, 1), cfg.layer_scale_init),
            false,
        );
        Ok(Self {
            kind: cfg.kind,
            spatial,
            norm,
            expand,
            project,
            layer_scale,
        })
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let h = match self.kind {
            EncoderKind::ConvNext => {
                let h = self.spatial.forward(g, b, x)?;
                let h = self.norm.forward(g, b, h)?;
                let expand = self.expand.as_ref().expect("ConvNeXt block has an expansion");
                let h = expand.forward(g, b, h)?;
                let h = g.gelu(h);
                self.project.forward(g, b, h)?
            }
            EncoderKind::PlainCnn => {
                let h = self.norm.forward(g, b, x)?;
                let h = self.spatial.forward(g, b, h)?;
                let h = g.gelu(h);
                self.project.forward(g, b, h)?
            }
        };
        let ls = b.var(g, self.layer_scale);
        let h = g.channel_scale(h, ls)?;
        g.add(x, h)
    }
}

/// Layer norm followed by a 2x2 stride-2 convolution doubling the channels.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub norm: NormLayer,
    pub conv: ConvLayer,
}

impl Downsample {
    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: Var) -> Result<Var> {
        let s = g.shape(x);
        if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
            return Err(Error::config(format!(
                "downsampling needs even spatial dims, got {}x{}",
                s.h, s.w
            )));
        }
        let h = self.norm.forward(g, b, x)?;
        self.conv.forward(g, b, h)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    pub stem_conv: ConvLayer,
    pub stem_norm: NormLayer,
    /// `downsamples[i]` opens stage `i + 2`.
    pub downsamples: Vec<Downsample>,
    pub stages: Vec<Vec<Block>>,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut RngStream) -> Result<Self> {
        cfg.validate()?;
        let stem_conv = ConvLayer::new(store, "encoder.stem.conv", cfg.stem_spec(), rng)?;
        let stem_norm = NormLayer::new(store, "encoder.stem.norm", cfg.channels);
        let mut downsamples = Vec::new();
        let mut stages = Vec::new();
        for i in 0..4 {
            let ch = cfg.stage_channels(i);
            if i > 0 {
                let name = format!("encoder.downsample{}", i + 1);
                downsamples.push(Downsample {
                    norm: NormLayer::new(store, &format!("{name}.norm"), ch / 2),
                    conv: ConvLayer::new(store, &format!("{name}.conv"), downsample_spec(ch / 2), rng)?,
                });
            }
            let blocks = (0..cfg.blocks_per_stage[i])
                .map(|j| Block::new(store, &format!("encoder.stage{}.block{j}", i + 1), cfg, ch, rng))
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem_conv,
            stem_norm,
            downsamples,
            stages,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Patch embedding: 4x4 stride-4 convolution then layer norm.
    pub fn stem(&self, g: &mut Graph, b: &mut Binder, image: Var) -> Result<Var> {
        check_input(g.shape(image))?;
        let h = self.stem_conv.forward(g, b, image)?;
        self.stem_norm.forward(g, b, h)
    }

    /// `downsample(i, x)` is the block that opens stage `i + 2` (`i` in 0..3).
    pub fn downsample(&self, g: &mut Graph, b: &mut Binder, i: usize, x: Var) -> Result<Var> {
        self.downsamples[i].forward(g, b, x)
    }

    pub fn encode(&self, g: &mut Graph, b: &mut Binder, image: Var) -> Result<StageOutputs<Var>> {
        let x0 = self.stem(g, b, image)?;
        let mut x = x0;
        let mut outs = [x0; 4];
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                x = self.downsample(g, b, i - 1, x)?;
            }
            for block in blocks {
                x = block.forward(g, b, x)?;
            }
            outs[i] = x;
        }
        Ok(StageOutputs { x0, x: outs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_plan_matches_closed_form() {
        let plan = EncoderConfig::full().plan(Shape::new(1, 3, 512, 512)).unwrap();
        assert_eq!(plan.x0, Shape::new(1, 128, 128, 128));
        let expected = [
            Shape::new(1, 128, 128, 128),
            Shape::new(1, 256, 64, 64),
            Shape::new(1, 512, 32, 32),
            Shape::new(1, 1024, 16, 16),
        ];
        assert_eq!(plan.x, expected);
    }

    #[test]
    fn desk_stem_shape() {
        let plan = EncoderConfig::desk().plan(Shape::new(2, 3, 64, 64)).unwrap();
        assert_eq!(plan.x0, Shape::new(2, 8, 16, 16));
        assert_eq!(plan.x[3], Shape::new(2, 64, 2, 2));
    }

    #[test]
    fn non_multiple_input_is_rejected() {
        let err = EncoderConfig::desk().plan(Shape::new(1, 3, 100, 64)).unwrap_err();
        assert!(matches!(err, Error::InputSize { multiple: 32, .. }), "{err}");
        assert!(err.to_string().contains("multiple of 32"));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EncoderConfig::desk();
        cfg.channels = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = EncoderConfig::desk();
        cfg.blocks_per_stage[2] = 0;
        assert!(cfg.validate().is_err());
    }
}

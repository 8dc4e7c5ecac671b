//! Building blocks shared by the encoder, decoder and heads. Layers hold
//! [`ParamId`]s into the owning network's [`ParamStore`] and run on a
//! [`Graph`] against the bound parameter handles.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::preset::{squeeze_channels, Activation, BlockSpec, EncoderPreset};
use crate::tensor::{Element, Graph, ParamId, ParamStore, Result, Tensor, Var};

pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub rng: ChaCha8Rng,
}

impl<T: Element> Builder<'_, T> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut self.rng))).collect();
        self.store.add(name, Tensor::new(shape, data).expect("consistent shape"))
    }

    /// He-normal conv kernel `[out, in, k, k]`.
    fn conv_weight(&mut self, name: String, out: usize, inp: usize, k: usize) -> ParamId {
        let fan_in = (inp * k * k) as f64;
        self.normal(name, vec![out, inp, k, k], (2.0 / fan_in).sqrt())
    }

    fn dense_weight(&mut self, name: String, out: usize, inp: usize) -> ParamId {
        self.normal(name, vec![out, inp], (1.0 / inp as f64).sqrt())
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.store.add(name, Tensor::zeros(vec![n]))
    }

    fn ones(&mut self, name: String, n: usize) -> ParamId {
        self.store.add(name, Tensor::full(vec![n], T::one()))
    }
}

pub(crate) fn activate<T: Element>(g: &mut Graph<T>, x: Var, act: Option<Activation>) -> Result<Var> {
    match act {
        None => Ok(x),
        Some(Activation::Relu) => g.relu(x),
        Some(Activation::Hardswish) => g.hardswish(x),
    }
}

/// Convolution without bias, followed by the per-channel affine and an
/// optional activation.
#[derive(Debug, Clone)]
pub(crate) struct ConvBnAct {
    pub weight: ParamId,
    pub scale: ParamId,
    pub shift: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub depthwise: bool,
    pub act: Option<Activation>,
}

impl ConvBnAct {
    #[allow(clippy::too_many_arguments)]
    pub fn build<T: Element>(
        b: &mut Builder<'_, T>,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        stride: usize,
        depthwise: bool,
        act: Option<Activation>,
    ) -> Self {
        let weight = if depthwise {
            b.conv_weight(format!("{name}.conv.weight"), inp, 1, k)
        } else {
            b.conv_weight(format!("{name}.conv.weight"), out, inp, k)
        };
        let scale = b.ones(format!("{name}.bn.scale"), out);
        let shift = b.zeros(format!("{name}.bn.shift"), out);
        Self { weight, scale, shift, stride, pad: k / 2, depthwise, act }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let y = if self.depthwise {
            g.depthwise_conv2d(x, p[self.weight.0], None, self.stride, self.pad)?
        } else {
            g.conv2d(x, p[self.weight.0], None, self.stride, self.pad)?
        };
        let y = g.affine(y, p[self.scale.0], p[self.shift.0])?;
        activate(g, y, self.act)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl DenseLayer {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, inp: usize, out: usize) -> Self {
        Self { weight: b.dense_weight(format!("{name}.weight"), out, inp), bias: b.zeros(format!("{name}.bias"), out) }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.dense(x, p[self.weight.0], Some(p[self.bias.0]))
    }
}

/// pool -> dense -> relu -> dense -> sigmoid -> channel scale.
#[derive(Debug, Clone)]
pub(crate) struct SqueezeExcite {
    pub reduce: DenseLayer,
    pub expand: DenseLayer,
}

impl SqueezeExcite {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, channels: usize) -> Self {
        let sq = squeeze_channels(channels);
        Self {
            reduce: DenseLayer::build(b, &format!("{name}.fc1"), channels, sq),
            expand: DenseLayer::build(b, &format!("{name}.fc2"), sq, channels),
        }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let s = g.global_avg_pool(x)?;
        let s = self.reduce.forward(g, p, s)?;
        let s = g.relu(s)?;
        let s = self.expand.forward(g, p, s)?;
        let s = g.sigmoid(s)?;
        g.channel_scale(x, s)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InvertedResidual {
    pub expand: Option<ConvBnAct>,
    pub depthwise: ConvBnAct,
    pub se: Option<SqueezeExcite>,
    pub project: ConvBnAct,
    pub residual: bool,
}

impl InvertedResidual {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, name: &str, inp: usize, spec: &BlockSpec) -> Self {
        let mid = spec.expanded_channels(inp);
        let act = Some(spec.activation);
        let expand = spec
            .has_expansion(inp)
            .then(|| ConvBnAct::build(b, &format!("{name}.expand"), inp, mid, 1, 1, false, act));
        let depthwise = ConvBnAct::build(b, &format!("{name}.depthwise"), mid, mid, spec.kernel, spec.stride, true, act);
        let se = spec.use_squeeze_excite.then(|| SqueezeExcite::build(b, &format!("{name}.se"), mid));
        let project = ConvBnAct::build(b, &format!("{name}.project"), mid, spec.out_channels, 1, 1, false, None);
        Self { expand, depthwise, se, project, residual: spec.has_residual(inp) }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.forward(g, p, h)?;
        }
        h = self.depthwise.forward(g, p, h)?;
        if let Some(se) = &self.se {
            h = se.forward(g, p, h)?;
        }
        h = self.project.forward(g, p, h)?;
        if self.residual {
            h = g.add(h, x)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    pub stem: ConvBnAct,
    pub blocks: Vec<InvertedResidual>,
    pub head: Option<ConvBnAct>,
}

impl Encoder {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, preset: &EncoderPreset, in_channels: usize) -> Self {
        let s = &preset.stem;
        let stem = ConvBnAct::build(b, "encoder.stem", in_channels, s.out_channels, s.kernel, s.stride, false, Some(s.activation));
        let mut c = s.out_channels;
        let blocks = preset
            .blocks
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let blk = InvertedResidual::build(b, &format!("encoder.blocks.{i}"), c, spec);
                c = spec.out_channels;
                blk
            })
            .collect();
        let head = preset
            .has_head_conv()
            .then(|| ConvBnAct::build(b, "encoder.head", c, preset.latent_channels, 1, 1, false, Some(Activation::Hardswish)));
        Self { stem, blocks, head }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = self.stem.forward(g, p, x)?;
        for blk in &self.blocks {
            h = blk.forward(g, p, h)?;
        }
        if let Some(head) = &self.head {
            h = head.forward(g, p, h)?;
        }
        Ok(h)
    }
}

/// 2x nearest upsample, then depthwise 3x3 + relu and pointwise + relu, both
/// with bias.
#[derive(Debug, Clone)]
pub(crate) struct DecoderStage {
    pub dw_weight: ParamId,
    pub dw_bias: ParamId,
    pub pw_weight: ParamId,
    pub pw_bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    pub stages: Vec<DecoderStage>,
    pub out_weight: ParamId,
    pub out_bias: ParamId,
}

impl Decoder {
    pub fn build<T: Element>(b: &mut Builder<'_, T>, preset: &EncoderPreset, out_channels: usize) -> Self {
        let mut c = preset.latent_channels;
        let stages = preset
            .decoder_stage_channels()
            .into_iter()
            .enumerate()
            .map(|(i, target)| {
                let name = format!("decoder.stages.{i}");
                let stage = DecoderStage {
                    dw_weight: b.conv_weight(format!("{name}.depthwise.weight"), c, 1, 3),
                    dw_bias: b.zeros(format!("{name}.depthwise.bias"), c),
                    pw_weight: b.conv_weight(format!("{name}.pointwise.weight"), target, c, 1),
                    pw_bias: b.zeros(format!("{name}.pointwise.bias"), target),
                };
                c = target;
                stage
            })
            .collect();
        let out_weight = b.conv_weight("decoder.output.weight".into(), out_channels, c, 1);
        let out_bias = b.zeros("decoder.output.bias".into(), out_channels);
        Self { stages, out_weight, out_bias }
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], z: Var) -> Result<Var> {
        let mut h = z;
        for s in &self.stages {
            h = g.upsample_nearest(h, 2)?;
            h = g.depthwise_conv2d(h, p[s.dw_weight.0], Some(p[s.dw_bias.0]), 1, 1)?;
            h = g.relu(h)?;
            h = g.conv2d(h, p[s.pw_weight.0], Some(p[s.pw_bias.0]), 1, 0)?;
            h = g.relu(h)?;
        }
        let h = g.conv2d(h, p[self.out_weight.0], Some(p[self.out_bias.0]), 1, 0)?;
        g.sigmoid(h)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Head {
    /// pooled latent -> 2 logits
    Classifier(DenseLayer),
    /// pooled latent -> 64 -> relu -> 2 logits
    Semi(DenseLayer, DenseLayer),
}

pub(crate) const SEMI_HIDDEN: usize = 64;

impl Head {
    pub fn classifier<T: Element>(b: &mut Builder<'_, T>, latent: usize) -> Self {
        Head::Classifier(DenseLayer::build(b, "classifier.fc", latent, 2))
    }

    pub fn semi<T: Element>(b: &mut Builder<'_, T>, latent: usize) -> Self {
        Head::Semi(DenseLayer::build(b, "semi_head.fc1", latent, SEMI_HIDDEN), DenseLayer::build(b, "semi_head.fc2", SEMI_HIDDEN, 2))
    }

    pub fn forward<T: Element>(&self, g: &mut Graph<T>, p: &[Var], latent: Var) -> Result<Var> {
        let pooled = g.global_avg_pool(latent)?;
        match self {
            Head::Classifier(fc) => fc.forward(g, p, pooled),
            Head::Semi(fc1, fc2) => {
                let h = fc1.forward(g, p, pooled)?;
                let h = g.relu(h)?;
                fc2.forward(g, p, h)
            }
        }
    }
}

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Builder, Decoder, Encoder, Head};
use super::{EncoderPreset, NetError, Result};
use crate::seed;
use crate::tensor::{Element, Graph, ParamStore, Tensor, Var};

/// Which of the three learners a network implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Learner {
    /// Supervised classifier: encoder + dense head.
    #[serde(rename = "clf")]
    Classifier,
    /// Convolutional autoencoder trained on normal images only.
    #[serde(rename = "ae")]
    Autoencoder,
    /// Autoencoder with an extra head on the pooled latent.
    #[serde(rename = "semi")]
    Semi,
}

impl Learner {
    pub const ALL: [Learner; 3] = [Learner::Classifier, Learner::Autoencoder, Learner::Semi];

    pub fn as_str(self) -> &'static str {
        match self {
            Learner::Classifier => "clf",
            Learner::Autoencoder => "ae",
            Learner::Semi => "semi",
        }
    }

    pub fn has_decoder(self) -> bool {
        matches!(self, Learner::Autoencoder | Learner::Semi)
    }

    pub fn has_head(self) -> bool {
        matches!(self, Learner::Classifier | Learner::Semi)
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Learner {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "clf" => Ok(Learner::Classifier),
            "ae" => Ok(Learner::Autoencoder),
            "semi" => Ok(Learner::Semi),
            other => Err(format!("unknown learner `{other}` (expected clf, ae or semi)")),
        }
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    pub latent: Var,
    /// `[N, 2]` (normal, anomaly) logits, for networks with a head.
    pub logits: Option<Var>,
    /// `[N, C, H, W]` reconstruction in `[0, 1]`, for networks with a decoder.
    pub reconstruction: Option<Var>,
}

/// One learner's weights and wiring.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub learner: Learner,
    pub preset: EncoderPreset,
    pub input_shape: [usize; 3],
    pub seed: u64,
    /// Completed training epochs; 0 marks an untrained network.
    pub trained_epochs: usize,
    pub params: ParamStore<T>,
    encoder: Encoder,
    decoder: Option<Decoder>,
    head: Option<Head>,
}

impl<T: Element> Network<T> {
    /// Builds a freshly initialized network. Encoder, decoder and head each
    /// draw from their own seed stream, so an autoencoder and a semi network
    /// built from the same seed share their encoder and decoder init.
    pub fn new(learner: Learner, preset: EncoderPreset, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        preset.validate()?;
        let [c, h, w] = input_shape;
        if c == 0 {
            return Err(NetError::InputShape { expected: input_shape, found: input_shape.to_vec() });
        }
        preset.latent_shape(h, w)?;
        let mut params = ParamStore::new();
        let section = |name: &str| ChaCha8Rng::seed_from_u64(seed::derive(seed, name, 0));
        let encoder = Encoder::build(&mut Builder { store: &mut params, rng: section("init.encoder") }, &preset, c);
        let decoder = learner
            .has_decoder()
            .then(|| Decoder::build(&mut Builder { store: &mut params, rng: section("init.decoder") }, &preset, c));
        let head = match learner {
            Learner::Classifier => {
                Some(Head::classifier(&mut Builder { store: &mut params, rng: section("init.classifier") }, preset.latent_channels))
            }
            Learner::Semi => Some(Head::semi(&mut Builder { store: &mut params, rng: section("init.semi_head") }, preset.latent_channels)),
            Learner::Autoencoder => None,
        };
        Ok(Self { learner, preset, input_shape, seed, trained_epochs: 0, params, encoder, decoder, head })
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        self.preset.latent_shape(self.input_shape[1], self.input_shape[2]).expect("validated at construction")
    }

    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    /// Learnable scalars per layer, in construction order. A layer is a
    /// parameter name without its last component, e.g. `encoder.stem.conv`.
    pub fn layer_parameter_counts(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, t) in self.params.iter() {
            let layer = name.rsplit_once('.').map_or(name, |(l, _)| l);
            match out.last_mut() {
                Some((l, n)) if l == layer => *n += t.len(),
                _ => out.push((layer.to_string(), t.len())),
            }
        }
        out
    }

    /// Sum of parameters whose names start with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.len()).sum()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[0] == 0 || shape[1..] != self.input_shape {
            return Err(NetError::InputShape { expected: self.input_shape, found: shape.to_vec() });
        }
        Ok(())
    }

    /// Records a forward pass of `x` (`[N, C, H, W]`) using parameter handles
    /// from [`ParamStore::bind`] or [`ParamStore::bind_frozen`].
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], x: Var) -> Result<Outputs> {
        self.check_input(g.shape(x))?;
        let latent = self.encoder.forward(g, params, x)?;
        let reconstruction = match &self.decoder {
            Some(d) => Some(d.forward(g, params, latent)?),
            None => None,
        };
        let logits = match &self.head {
            Some(h) => Some(h.forward(g, params, latent)?),
            None => None,
        };
        Ok(Outputs { latent, logits, reconstruction })
    }

    /// Inference on a batch; returns (logits, reconstruction) values.
    pub fn infer(&self, images: Tensor<T>) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(images);
        let out = self.forward(&mut g, &p, x)?;
        let logits = out.logits.map(|v| g.take(v));
        let recon = out.reconstruction.map(|v| g.take(v));
        Ok((logits, recon))
    }

    /// Pooled latent features `[N, latent_channels]`.
    pub fn pooled_latent(&self, images: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let x = g.constant(images);
        let out = self.forward(&mut g, &p, x)?;
        let pooled = g.global_avg_pool(out.latent)?;
        Ok(g.take(pooled))
    }

    pub fn ensure_trained(&self) -> Result<()> {
        if self.trained_epochs == 0 {
            return Err(NetError::Untrained(self.learner));
        }
        Ok(())
    }

    /// Replaces every parameter with the tensor of the same name from `tensors`.
    pub(crate) fn load_params(&mut self, tensors: Vec<(String, Tensor<T>)>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(NetError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (name, t) in tensors {
            let id = self
                .params
                .find(&name)
                .ok_or_else(|| NetError::Checkpoint(format!("unexpected tensor `{name}`")))?;
            let slot = self.params.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(NetError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, network expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.with_grad(true);
        }
        Ok(())
    }
}

/// The three learners over one shared preset.
#[derive(Debug, Clone)]
pub struct ModelBundle<T> {
    pub classifier: Network<T>,
    pub autoencoder: Network<T>,
    pub semi: Network<T>,
}

impl<T: Element> ModelBundle<T> {
    pub fn new(preset: EncoderPreset, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        Ok(Self {
            classifier: Network::new(Learner::Classifier, preset.clone(), input_shape, seed)?,
            autoencoder: Network::new(Learner::Autoencoder, preset.clone(), input_shape, seed)?,
            semi: Network::new(Learner::Semi, preset, input_shape, seed)?,
        })
    }

    /// Assembles a bundle from separately trained networks, checking that
    /// they agree on preset and input shape.
    pub fn from_parts(classifier: Network<T>, autoencoder: Network<T>, semi: Network<T>) -> Result<Self> {
        for (want, net) in [(Learner::Classifier, &classifier), (Learner::Autoencoder, &autoencoder), (Learner::Semi, &semi)] {
            if net.learner != want {
                return Err(NetError::BundleMismatch(format!("expected a {want} network, got {}", net.learner)));
            }
        }
        for net in [&autoencoder, &semi] {
            if net.preset != classifier.preset {
                return Err(NetError::BundleMismatch(format!(
                    "{} uses preset `{}` but clf uses `{}`",
                    net.learner, net.preset.name, classifier.preset.name
                )));
            }
            if net.input_shape != classifier.input_shape {
                return Err(NetError::BundleMismatch(format!(
                    "{} expects input {:?} but clf expects {:?}",
                    net.learner, net.input_shape, classifier.input_shape
                )));
            }
        }
        Ok(Self { classifier, autoencoder, semi })
    }

    pub fn preset_name(&self) -> &str {
        &self.classifier.preset.name
    }

    /// `[N, 2]` classifier logits.
    pub fn classifier_forward(&self, images: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.classifier.infer(images)?.0.expect("classifier has a head"))
    }

    /// Reconstruction with the input's shape.
    pub fn ae_forward(&self, images: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.autoencoder.infer(images)?.1.expect("autoencoder has a decoder"))
    }

    /// `[N, 2]` logits of the semi-supervised head.
    pub fn semi_forward(&self, images: Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.semi.infer(images)?.0.expect("semi network has a head"))
    }
}

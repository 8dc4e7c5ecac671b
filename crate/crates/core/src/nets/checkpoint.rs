//! JSON checkpoints with base64 little-endian weight payloads. Weights are
//! stored at the network's precision, so a load reproduces them bit for bit.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{EncoderPreset, Learner, NetError, Network, Result};
use crate::tensor::{Element, Precision, Tensor};

pub const FORMAT: &str = "edgescope-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

/// Everything in a checkpoint except the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub learner: Learner,
    pub preset: EncoderPreset,
    pub input_shape: [usize; 3],
    pub precision: Precision,
    pub trained_epochs: usize,
    pub seed: u64,
    pub layer_order: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    #[serde(flatten)]
    header: Header,
    tensors: Vec<StoredTensor>,
}

pub fn to_json<T: Element>(net: &Network<T>) -> Result<String> {
    let tensors = net
        .params
        .iter()
        .map(|(name, t)| {
            let mut bytes = Vec::with_capacity(t.len() * T::PRECISION.byte_width());
            t.data().iter().for_each(|v| v.write_le(&mut bytes));
            StoredTensor { name: name.to_string(), shape: t.shape().to_vec(), data: B64.encode(bytes) }
        })
        .collect();
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        learner: net.learner,
        preset: net.preset.clone(),
        input_shape: net.input_shape,
        precision: T::PRECISION,
        trained_epochs: net.trained_epochs,
        seed: net.seed,
        layer_order: net.layer_parameter_counts().into_iter().map(|(l, _)| l).collect(),
    };
    Ok(serde_json::to_string(&Stored { header, tensors })?)
}

pub fn from_json<T: Element>(json: &str) -> Result<Network<T>> {
    let stored: Stored = serde_json::from_str(json)?;
    let h = stored.header;
    check_header(&h)?;
    if h.precision != T::PRECISION {
        return Err(NetError::PrecisionMismatch { stored: h.precision, requested: T::PRECISION });
    }
    let mut net = Network::<T>::new(h.learner, h.preset, h.input_shape, h.seed)?;
    let width = T::PRECISION.byte_width();
    let tensors = stored
        .tensors
        .into_iter()
        .map(|st| {
            let bytes = B64
                .decode(st.data.as_bytes())
                .map_err(|e| NetError::Checkpoint(format!("tensor `{}`: {e}", st.name)))?;
            if bytes.len() % width != 0 {
                return Err(NetError::Checkpoint(format!("tensor `{}`: truncated payload", st.name)));
            }
            let data = bytes.chunks_exact(width).map(T::read_le).collect();
            let t = Tensor::new(st.shape, data)
                .map_err(|e| NetError::Checkpoint(format!("tensor `{}`: {e}", st.name)))?;
            Ok((st.name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    net.load_params(tensors)?;
    net.trained_epochs = h.trained_epochs;
    Ok(net)
}

fn check_header(h: &Header) -> Result<()> {
    if h.format != FORMAT {
        return Err(NetError::Checkpoint(format!("not a checkpoint (format `{}`)", h.format)));
    }
    if h.version != VERSION {
        return Err(NetError::Checkpoint(format!("unsupported version {}", h.version)));
    }
    Ok(())
}

pub fn save<T: Element>(net: &Network<T>, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)?)?;
    Ok(())
}

pub fn load<T: Element>(path: &Path) -> Result<Network<T>> {
    from_json(&fs::read_to_string(path)?)
}

/// Reads only the header, e.g. to pick the precision to load at.
pub fn peek(path: &Path) -> Result<Header> {
    #[derive(Deserialize)]
    struct HeaderOnly {
        #[serde(flatten)]
        header: Header,
    }
    let h: HeaderOnly = serde_json::from_str(&fs::read_to_string(path)?)?;
    check_header(&h.header)?;
    Ok(h.header)
}

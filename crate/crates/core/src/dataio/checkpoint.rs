use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::binary::Reader;
use super::FormatError;
use crate::nn::{LayerSpec, Network};
use crate::pipeline::NormStats;

const MAGIC: &[u8; 4] = b"NNW1";
const PARAMETER_ORDER: &str = "layers in order; per layer weights then bias; \
dense weights outputs x inputs row-major; conv kernels [ky][kx][in][out]";

/// A trained network plus everything needed to apply it to raw spectra.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    /// Per input channel, after band selection.
    pub norm: NormStats,
    /// Original band indices feeding the network, sorted and unique.
    pub retained: Vec<usize>,
    pub original_bands: usize,
    pub params: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    seed: u64,
    normalization: HeaderNorm,
    retained_features: Vec<usize>,
    original_bands: usize,
    parameter_count: usize,
    parameter_order: String,
}

// f32 -> f64 widening is exact and the JSON layer round-trips f64 exactly.
#[derive(Serialize, Deserialize)]
struct HeaderNorm {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        net: &Network<f32>,
        norm: NormStats,
        retained: Vec<usize>,
        original_bands: usize,
    ) -> Result<Self, FormatError> {
        let ck = Checkpoint {
            input_shape: net.input_shape().to_vec(),
            layers: net.specs(),
            seed: net.seed(),
            norm,
            retained,
            original_bands,
            params: net.params().concat(),
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn input_channels(&self) -> usize {
        *self.input_shape.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let expected = self.param_count();
        if self.params.len() != expected {
            return Err(FormatError::BlobLength {
                expected,
                found: self.params.len(),
            });
        }
        if self.retained.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FormatError::Header(
                "retained feature list must be sorted and unique".into(),
            ));
        }
        if self.retained.iter().any(|&j| j >= self.original_bands) {
            return Err(FormatError::Header(format!(
                "retained feature index out of range for {} bands",
                self.original_bands
            )));
        }
        let channels = self.input_channels();
        if self.retained.len() != channels {
            return Err(FormatError::Header(format!(
                "{} retained features but the network takes {channels} input channels",
                self.retained.len()
            )));
        }
        if self.norm.mean.len() != channels || self.norm.std.len() != channels {
            return Err(FormatError::Header(format!(
                "normalisation stats do not cover {channels} input channels"
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::InvalidValue("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Rebuilds the network; logits are bit-identical to the saved one.
    pub fn network(&self) -> Result<Network<f32>, FormatError> {
        self.validate()?;
        let mut net = Network::new(self.input_shape.clone(), &self.layers, self.seed)
            .map_err(|e| FormatError::Header(e.to_string()))?;
        let mut offset = 0;
        for p in net.params_mut() {
            let n = p.len();
            p.copy_from_slice(&self.params[offset..offset + n]);
            offset += n;
        }
        Ok(net)
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>, FormatError> {
    ck.validate()?;
    let header = Header {
        format: "NNW1".into(),
        input_shape: ck.input_shape.clone(),
        layers: ck.layers.clone(),
        seed: ck.seed,
        normalization: HeaderNorm {
            mean: ck.norm.mean.iter().map(|&v| v as f64).collect(),
            std: ck.norm.std.iter().map(|&v| v as f64).collect(),
        },
        retained_features: ck.retained.clone(),
        original_bands: ck.original_bands,
        parameter_count: ck.params.len(),
        parameter_order: PARAMETER_ORDER.into(),
    };
    let text =
        serde_json::to_string_pretty(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    let len = u32::try_from(text.len())
        .map_err(|_| FormatError::Header("header longer than u32::MAX".into()))?;
    let mut out = Vec::with_capacity(8 + text.len() + ck.params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for v in &ck.params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader::new(bytes, MAGIC)?;
    let len = r.u32()?;
    let text = std::str::from_utf8(r.take(len)?)
        .map_err(|e| FormatError::Header(format!("header is not UTF-8: {e}")))?;
    let header: Header =
        serde_json::from_str(text).map_err(|e| FormatError::Header(e.to_string()))?;
    if header.format != "NNW1" {
        return Err(FormatError::Header(format!(
            "unknown format tag {}",
            header.format
        )));
    }
    let expected: usize = header.layers.iter().map(LayerSpec::param_count).sum();
    if header.parameter_count != expected {
        return Err(FormatError::BlobLength {
            expected,
            found: header.parameter_count,
        });
    }
    r.expect_remaining(expected, 4)?;
    let params = r.f32s(expected)?;
    r.finish()?;
    let ck = Checkpoint {
        input_shape: header.input_shape,
        layers: header.layers,
        seed: header.seed,
        norm: NormStats {
            mean: header
                .normalization
                .mean
                .iter()
                .map(|&v| v as f32)
                .collect(),
            std: header.normalization.std.iter().map(|&v| v as f32).collect(),
        },
        retained: header.retained_features,
        original_bands: header.original_bands,
        params,
    };
    ck.validate()?;
    Ok(ck)
}

pub fn write_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<(), FormatError> {
    Ok(fs::write(path, encode_checkpoint(ck)?)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, FormatError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let specs = [
            LayerSpec::Dense {
                inputs: 2,
                outputs: 3,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 3,
                outputs: 3,
            },
            LayerSpec::Softmax,
        ];
        let net = Network::<f32>::new(vec![2], &specs, 11).unwrap();
        let norm = NormStats {
            mean: vec![0.1, 0.2],
            std: vec![1.5, 1e-3],
        };
        Checkpoint::new(&net, norm, vec![1, 4], 6).unwrap()
    }

    #[test]
    fn round_trip_and_rebuild() {
        let ck = small();
        let bytes = encode_checkpoint(&ck).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.network().unwrap().params().concat(), ck.params);
    }

    #[test]
    fn truncated_blob() {
        let bytes = encode_checkpoint(&small()).unwrap();
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 4]),
            Err(FormatError::Truncated { .. })
        ));
    }

    #[test]
    fn blob_length_mismatch() {
        let mut ck = small();
        ck.params.pop();
        assert!(matches!(ck.validate(), Err(FormatError::BlobLength { .. })));
    }

    #[test]
    fn unsorted_retained_list_is_rejected() {
        let mut ck = small();
        ck.retained = vec![4, 1];
        assert!(ck.validate().is_err());
        ck.retained = vec![1, 6];
        assert!(ck.validate().is_err());
    }
}

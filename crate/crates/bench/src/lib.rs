//! Benchmark fixtures shared by the criterion targets.

use hsfs_core::classifier::{self, MlpConfig};
use hsfs_core::masker::{self, CnnConfig};
use hsfs_core::{Network, Tensor};

/// Default dense classifier for `input_dim` bands.
pub fn mlp(input_dim: usize) -> Network {
    let cfg = MlpConfig {
        input_dim,
        ..MlpConfig::default()
    };
    classifier::build_mlp(&cfg).expect("valid default classifier")
}

/// Desk-scale masker network.
pub fn cnn() -> Network {
    masker::build_cnn(&CnnConfig::default()).expect("valid default masker")
}

/// Deterministic pseudo-random batch with the given shape.
pub fn batch(shape: Vec<usize>) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|i| {
            ((i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 40) as f32 / (1u64 << 24) as f32
                - 0.5
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

//! Convolutional encoder-decoder that regresses the coded mask
//! (BG = 0, N+ = 1, N- = 2) of a hyperspectral chip.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Checkpoint, FormatError, HyperCube};
use crate::nn::{mse, LayerSpec, Mode, Network, NnError, Optimizer, OptimizerKind, Tensor};
use crate::pipeline::{ChipSet, NormStats};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Error)]
pub enum MaskerError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error(
        "chip is {found_size}x{found_size}x{found_bands}, model expects {size}x{size}x{bands}"
    )]
    DimMismatch {
        size: usize,
        bands: usize,
        found_size: usize,
        found_bands: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub chip_size: usize,
    pub bands: usize,
    /// Output channels of the five convolutions; the last must be 1.
    pub widths: [usize; 5],
    pub dropout: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Fraction of chips held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            chip_size: 16,
            bands: 16,
            widths: [32, 32, 16, 16, 1],
            dropout: 0.1,
            epochs: 60,
            batch_size: 16,
            optimizer: OptimizerKind::adadelta(),
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

impl CnnConfig {
    /// 48×48×512 input with 128/128/64/64/1 channels.
    pub fn full_scale() -> Self {
        CnnConfig {
            chip_size: 48,
            bands: 512,
            widths: [128, 128, 64, 64, 1],
            ..CnnConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), MaskerError> {
        if self.chip_size == 0 || !self.chip_size.is_multiple_of(4) {
            return Err(MaskerError::InvalidConfig(format!(
                "chip size {} must be a positive multiple of 4",
                self.chip_size
            )));
        }
        if self.bands == 0 || self.widths.contains(&0) {
            return Err(MaskerError::InvalidConfig(
                "band count and widths must be positive".into(),
            ));
        }
        if self.widths[4] != 1 {
            return Err(MaskerError::InvalidConfig(
                "the output convolution must have one channel".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(MaskerError::InvalidConfig(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.batch_size == 0 {
            return Err(MaskerError::InvalidConfig(
                "bad validation fraction or batch size".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let [w0, w1, w2, w3, w4] = self.widths;
        let conv = |in_channels, out_channels| LayerSpec::Conv2d {
            in_channels,
            out_channels,
        };
        let dropout = LayerSpec::Dropout { rate: self.dropout };
        vec![
            conv(self.bands, w0),
            LayerSpec::Relu,
            dropout,
            LayerSpec::MaxPool2,
            conv(w0, w1),
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            conv(w1, w2),
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            dropout,
            conv(w2, w3),
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            conv(w3, w4),
        ]
    }
}

/// Conv·Dropout·MaxPool·Conv·MaxPool·Conv·UpSample·Dropout·Conv·UpSample·Conv,
/// ReLU after every convolution except the linear output.
pub fn build_cnn(cfg: &CnnConfig) -> Result<Network, MaskerError> {
    cfg.validate()?;
    let s = cfg.chip_size;
    let net = Network::new(vec![s, s, cfg.bands], &cfg.layer_specs(), cfg.seed)?;
    // same-padding convolutions keep dims, pools halve, upsamples double
    let mut side = s;
    for (spec, shape) in cfg.layer_specs().iter().zip(net.layer_shapes()) {
        match spec {
            LayerSpec::MaxPool2 => side /= 2,
            LayerSpec::Upsample2 => side *= 2,
            _ => {}
        }
        debug_assert_eq!(&shape[..2], &[side, side]);
    }
    Ok(net)
}

fn check_chip(net: &Network, cube: &HyperCube) -> Result<(), MaskerError> {
    let shape = net.input_shape();
    if cube.height() != shape[0] || cube.width() != shape[1] || cube.bands() != shape[2] {
        return Err(MaskerError::DimMismatch {
            size: shape[0],
            bands: shape[2],
            found_size: cube.height(),
            found_bands: cube.bands(),
        });
    }
    Ok(())
}

/// Normalised inputs and coded targets for the selected chips.
pub fn chip_tensors(
    set: &ChipSet,
    indices: &[usize],
    norm: &NormStats,
) -> Result<(Tensor, Tensor), MaskerError> {
    let (s, b) = (set.size, set.bands);
    let mut x = Vec::with_capacity(indices.len() * s * s * b);
    let mut y = Vec::with_capacity(indices.len() * s * s);
    for &i in indices {
        let chip = &set.chips[i];
        let start = x.len();
        x.extend_from_slice(chip.cube.data());
        norm.apply_rows(&mut x[start..]);
        y.extend(chip.mask.labels().iter().map(|&l| l as f32));
    }
    Ok((
        Tensor::new(vec![indices.len(), s, s, b], x)?,
        Tensor::new(vec![indices.len(), s, s, 1], y)?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaskEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub val_l1: f64,
}

#[derive(Clone, Debug)]
pub struct MaskerOutcome {
    /// Parameters from the epoch with the lowest validation MSE.
    pub net: Network,
    pub history: Vec<MaskEpoch>,
    pub best_epoch: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Held-out chip indices: a seeded shuffle, the first `floor(n · frac)` go to validation.
pub fn holdout_split(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, 0x4A11));
    let n_val = (n as f64 * frac + 1e-9).floor() as usize;
    let val = order[..n_val].to_vec();
    let train = order[n_val..].to_vec();
    (train, val)
}

/// MSE regression of coded masks. When the held-out split is empty the
/// training MSE selects the best epoch instead.
pub fn train_masker(
    net: Network,
    chips: &ChipSet,
    norm: &NormStats,
    cfg: &CnnConfig,
) -> Result<MaskerOutcome, MaskerError> {
    cfg.validate()?;
    if chips.is_empty() {
        return Err(MaskerError::InvalidConfig("no chips to train on".into()));
    }
    for chip in &chips.chips {
        check_chip(&net, &chip.cube)?;
    }
    let (mut train_idx, val_idx) = holdout_split(chips.len(), cfg.val_fraction, cfg.seed);
    if train_idx.is_empty() {
        return Err(MaskerError::InvalidConfig(
            "validation fraction leaves no training chips".into(),
        ));
    }
    let mut net = net;
    let mut opt = Optimizer::new(cfg.optimizer, &net);
    let dropout_master = derive_seed(cfg.seed, 0xD6);
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Network, f64, usize)> = None;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut stream(cfg.seed, 0x2000 + epoch as u64));
        let mut sum = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let (x, y) = chip_tensors(chips, batch, norm)?;
            let mode = Mode::Train {
                seed: derive_seed(dropout_master, step),
            };
            step += 1;
            let acts = net.forward(&x, mode).map_err(|e| diverged(epoch, e))?;
            let (loss, grad) = mse(acts.output(), &y)?;
            if !loss.is_finite() {
                return Err(MaskerError::Divergence {
                    epoch,
                    detail: format!("non-finite loss {loss}"),
                });
            }
            sum += loss as f64 * batch.len() as f64;
            let grads = net.backward(&acts, &grad)?;
            opt.step(&mut net, &grads).map_err(|e| diverged(epoch, e))?;
        }
        let train_mse = sum / train_idx.len() as f64;
        let (val_mse, val_l1) = if val_idx.is_empty() {
            (train_mse, f64::NAN)
        } else {
            let e = errors(&net, chips, &val_idx, norm)?;
            (e.mse, e.l1)
        };
        log::debug!(
            "epoch {epoch}: train mse {train_mse:.5} val mse {val_mse:.5} val l1 {val_l1:.5}"
        );
        history.push(MaskEpoch {
            epoch,
            train_mse,
            val_mse,
            val_l1,
        });
        if best.as_ref().is_none_or(|b| val_mse < b.1) {
            best = Some((net.clone(), val_mse, epoch));
        }
    }
    let (net, _, best_epoch) = best.unwrap_or((net, f64::NAN, 0));
    Ok(MaskerOutcome {
        net,
        history,
        best_epoch,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

fn diverged(epoch: usize, e: NnError) -> MaskerError {
    match e {
        NnError::NonFinite { .. } => MaskerError::Divergence {
            epoch,
            detail: e.to_string(),
        },
        other => MaskerError::Nn(other),
    }
}

/// Continuous per-pixel codes plus their rounded, clamped labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPrediction {
    pub size: usize,
    pub values: Vec<f32>,
    pub labels: Vec<u8>,
}

impl MaskPrediction {
    pub fn from_values(size: usize, values: Vec<f32>) -> Self {
        let labels = values.iter().map(|&v| round_code(v)).collect();
        MaskPrediction {
            size,
            values,
            labels,
        }
    }
}

pub fn round_code(v: f32) -> u8 {
    v.round().clamp(0.0, 2.0) as u8
}

pub fn predict_mask(
    net: &Network,
    norm: &NormStats,
    cube: &HyperCube,
) -> Result<MaskPrediction, MaskerError> {
    check_chip(net, cube)?;
    let mut x = cube.data().to_vec();
    norm.apply_rows(&mut x);
    let s = cube.height();
    let out = net.predict(&Tensor::new(vec![1, s, s, cube.bands()], x)?)?;
    Ok(MaskPrediction::from_values(s, out.into_data()))
}

/// Mean `|prediction - target|` over all pixels.
pub fn l1_error(prediction: &[f32], target: &[u8]) -> f64 {
    assert_eq!(prediction.len(), target.len());
    if prediction.is_empty() {
        return 0.0;
    }
    prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum::<f64>()
        / prediction.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaskErrors {
    pub l1: f64,
    pub mse: f64,
    pub pixels: usize,
}

const EVAL_CHUNK: usize = 16;

fn errors(
    net: &Network,
    set: &ChipSet,
    indices: &[usize],
    norm: &NormStats,
) -> Result<MaskErrors, MaskerError> {
    let parts: Vec<Result<(f64, f64, usize), MaskerError>> = indices
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let (x, y) = chip_tensors(set, chunk, norm)?;
            let p = net.predict(&x)?;
            let (mut l1, mut sq) = (0.0, 0.0);
            for (a, b) in p.data().iter().zip(y.data()) {
                let d = (*a - *b) as f64;
                l1 += d.abs();
                sq += d * d;
            }
            Ok((l1, sq, y.len()))
        })
        .collect();
    let (mut l1, mut sq, mut n) = (0.0, 0.0, 0);
    for p in parts {
        let (a, b, c) = p?;
        l1 += a;
        sq += b;
        n += c;
    }
    let n_f = n.max(1) as f64;
    Ok(MaskErrors {
        l1: l1 / n_f,
        mse: sq / n_f,
        pixels: n,
    })
}

/// Mean per-pixel L1 (and MSE) of the continuous prediction over every chip.
pub fn eval_l1(
    net: &Network,
    norm: &NormStats,
    chips: &ChipSet,
) -> Result<MaskErrors, MaskerError> {
    if let Some(c) = chips.chips.first() {
        check_chip(net, &c.cube)?;
    }
    let all: Vec<usize> = (0..chips.len()).collect();
    errors(net, chips, &all, norm)
}

/// Checkpoint for a masker; every band is retained.
pub fn masker_checkpoint(net: &Network, norm: &NormStats) -> Result<Checkpoint, MaskerError> {
    let bands = norm.dim();
    Ok(Checkpoint::new(
        net,
        norm.clone(),
        (0..bands).collect(),
        bands,
    )?)
}

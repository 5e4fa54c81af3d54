//! Dense per-pixel classifier: construction, training, evaluation and whole-cube
//! classification.

mod metrics;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{ClassMetrics, EvalReport};

use crate::dataio::{Checkpoint, FormatError, HyperCube, LabelMask, PixelDataset};
use crate::nn::{
    cross_entropy, LayerSpec, Mode, Network, NnError, Optimizer, OptimizerKind, Tensor,
};
use crate::pipeline::NormStats;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },
    #[error("dataset is empty")]
    Empty,
    #[error("model expects {expected} input features, data has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("cube has {found} bands; model accepts {original} (full) or {retained} (retained)")]
    BandMismatch {
        found: usize,
        original: usize,
        retained: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: [usize; 2],
    pub dropout: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 512,
            hidden: [128, 256],
            dropout: 0.5,
            epochs: 30,
            batch_size: 128,
            optimizer: OptimizerKind::adam(1e-3),
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(ClassifierError::InvalidConfig(
                "layer sizes must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ClassifierError::InvalidConfig(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        if self.batch_size == 0 {
            return Err(ClassifierError::InvalidConfig(
                "batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let [h0, h1] = self.hidden;
        vec![
            LayerSpec::Dense {
                inputs: self.input_dim,
                outputs: h0,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Dense {
                inputs: h0,
                outputs: h1,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: h1,
                outputs: 3,
            },
            LayerSpec::Softmax,
        ]
    }
}

/// Dense(in→h0)·ReLU·Dropout·Dense(h0→h1)·ReLU·Dense(h1→3)·Softmax.
pub fn build_mlp(cfg: &MlpConfig) -> Result<Network, ClassifierError> {
    cfg.validate()?;
    Ok(Network::new(
        vec![cfg.input_dim],
        &cfg.layer_specs(),
        cfg.seed,
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub net: Network,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

fn batch_tensor(ds: &PixelDataset, indices: &[usize]) -> Result<(Tensor, Vec<usize>), NnError> {
    let d = ds.dim();
    let mut data = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let (label, x) = ds.record(i);
        data.extend_from_slice(x);
        labels.push(label as usize);
    }
    Ok((Tensor::new(vec![indices.len(), d], data)?, labels))
}

fn check_dim(net: &Network, dim: usize) -> Result<(), ClassifierError> {
    let expected = net.input_shape().iter().product();
    if dim != expected {
        return Err(ClassifierError::DimMismatch {
            expected,
            found: dim,
        });
    }
    Ok(())
}

/// Minibatch cross-entropy training; keeps the best-on-validation parameters.
/// With an empty validation set the training accuracy is used instead.
pub fn train(
    net: Network,
    train_ds: &PixelDataset,
    val_ds: &PixelDataset,
    cfg: &MlpConfig,
) -> Result<TrainOutcome, ClassifierError> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(ClassifierError::Empty);
    }
    check_dim(&net, train_ds.dim())?;
    let monitor = if val_ds.is_empty() { train_ds } else { val_ds };
    check_dim(&net, monitor.dim())?;

    let mut net = net;
    let mut opt = Optimizer::new(cfg.optimizer, &net);
    let mut order: Vec<usize> = (0..train_ds.len()).collect();
    let dropout_master = derive_seed(cfg.seed, 0xD5);
    let mut best = (net.clone(), f64::NEG_INFINITY, 0);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, 0x1000 + epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch_tensor(train_ds, chunk)?;
            let mode = Mode::Train {
                seed: derive_seed(dropout_master, step),
            };
            step += 1;
            let acts = net.forward(&x, mode).map_err(|e| diverged(epoch, e))?;
            let (loss, grad) = cross_entropy(acts.output(), &labels)?;
            if !loss.is_finite() {
                return Err(ClassifierError::Divergence {
                    epoch,
                    detail: format!("non-finite loss {loss}"),
                });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            let grads = net.backward(&acts, &grad)?;
            opt.step(&mut net, &grads).map_err(|e| diverged(epoch, e))?;
        }
        let val_accuracy = accuracy(&net, monitor)?;
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / train_ds.len() as f64,
            val_accuracy,
        });
        log::debug!(
            "epoch {epoch}: loss {:.5} val acc {val_accuracy:.4}",
            loss_sum / train_ds.len() as f64
        );
        if val_accuracy > best.1 {
            best = (net.clone(), val_accuracy, epoch);
        }
    }
    if cfg.epochs == 0 {
        best.1 = accuracy(&net, monitor)?;
    }
    Ok(TrainOutcome {
        net: best.0,
        history,
        best_epoch: best.2,
        best_val_accuracy: best.1,
    })
}

fn diverged(epoch: usize, e: NnError) -> ClassifierError {
    match e {
        NnError::NonFinite { .. } => ClassifierError::Divergence {
            epoch,
            detail: e.to_string(),
        },
        other => ClassifierError::Nn(other),
    }
}

const EVAL_CHUNK: usize = 512;

/// Argmax class per record. Chunks run in parallel; every record's result is
/// independent of the chunking.
pub fn predict_labels(net: &Network, ds: &PixelDataset) -> Result<Vec<u8>, ClassifierError> {
    check_dim(net, ds.dim())?;
    let d = ds.dim();
    let chunks: Vec<Result<Vec<u8>, NnError>> = ds
        .features()
        .par_chunks(EVAL_CHUNK * d)
        .map(|rows| {
            let x = Tensor::new(vec![rows.len() / d, d], rows.to_vec())?;
            Ok(net
                .predict(&x)?
                .argmax_rows()
                .into_iter()
                .map(|k| k as u8)
                .collect())
        })
        .collect();
    let mut out = Vec::with_capacity(ds.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn accuracy(net: &Network, ds: &PixelDataset) -> Result<f64, ClassifierError> {
    if ds.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let pred = predict_labels(net, ds)?;
    let correct = pred.iter().zip(ds.labels()).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / ds.len() as f64)
}

pub fn evaluate(net: &Network, ds: &PixelDataset) -> Result<EvalReport, ClassifierError> {
    if ds.is_empty() {
        return Err(ClassifierError::Empty);
    }
    Ok(EvalReport::from_predictions(
        ds.labels(),
        &predict_labels(net, ds)?,
    ))
}

/// Scores a constant prediction of the most frequent class in `train`
/// (lowest code on ties) against `eval`.
pub fn majority_baseline(
    train: &PixelDataset,
    eval: &PixelDataset,
) -> Result<EvalReport, ClassifierError> {
    if train.is_empty() || eval.is_empty() {
        return Err(ClassifierError::Empty);
    }
    let counts = train.class_counts();
    let mut majority = 0;
    for k in 1..3 {
        if counts[k] > counts[majority] {
            majority = k;
        }
    }
    Ok(EvalReport::from_predictions(
        eval.labels(),
        &vec![majority as u8; eval.len()],
    ))
}

/// A network bundled with the band selection and normalisation it was trained with.
#[derive(Clone, Debug)]
pub struct PixelModel {
    pub net: Network,
    /// Statistics per network input channel.
    pub norm: NormStats,
    /// Original band indices feeding the network.
    pub retained: Vec<usize>,
    pub original_bands: usize,
}

impl PixelModel {
    /// Model over every band of a `bands`-channel cube.
    pub fn full(net: Network, norm: NormStats) -> Self {
        let bands = norm.dim();
        PixelModel {
            net,
            norm,
            retained: (0..bands).collect(),
            original_bands: bands,
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, ClassifierError> {
        Ok(Checkpoint::new(
            &self.net,
            self.norm.clone(),
            self.retained.clone(),
            self.original_bands,
        )?)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ClassifierError> {
        Ok(PixelModel {
            net: ck.network()?,
            norm: ck.norm.clone(),
            retained: ck.retained.clone(),
            original_bands: ck.original_bands,
        })
    }

    /// Restricts raw records to the retained bands (when given all original
    /// bands) and normalises them.
    pub fn prepare(&self, raw: &PixelDataset) -> Result<PixelDataset, ClassifierError> {
        let selected = if raw.dim() == self.original_bands {
            if self.retained.len() == self.original_bands {
                raw.clone()
            } else {
                raw.select_features(&self.retained)?
            }
        } else if raw.dim() == self.retained.len() {
            raw.clone()
        } else {
            return Err(ClassifierError::BandMismatch {
                found: raw.dim(),
                original: self.original_bands,
                retained: self.retained.len(),
            });
        };
        crate::pipeline::normalize_apply(&self.norm, &selected)
            .map_err(|e| ClassifierError::InvalidConfig(e.to_string()))
    }

    pub fn predict_raw(&self, raw: &PixelDataset) -> Result<Vec<u8>, ClassifierError> {
        predict_labels(&self.net, &self.prepare(raw)?)
    }

    pub fn evaluate_raw(&self, raw: &PixelDataset) -> Result<EvalReport, ClassifierError> {
        evaluate(&self.net, &self.prepare(raw)?)
    }
}

/// Per-pixel predicted labels plus a PPM rendering.
#[derive(Clone, Debug)]
pub struct CubeClassification {
    pub mask: LabelMask,
    pub overlay_ppm: Vec<u8>,
}

/// Accepts cubes carrying either all original bands or exactly the retained ones.
pub fn classify_cube(
    model: &PixelModel,
    cube: &HyperCube,
) -> Result<CubeClassification, ClassifierError> {
    let raw = PixelDataset::new(
        cube.bands(),
        vec![0; cube.height() * cube.width()],
        cube.data().to_vec(),
    )?;
    let labels = model.predict_raw(&raw)?;
    let mask = LabelMask::new(cube.height(), cube.width(), labels)?;
    let overlay_ppm = overlay_ppm(cube, &mask);
    Ok(CubeClassification { mask, overlay_ppm })
}

pub const NPLUS_COLOR: [u8; 3] = [255, 128, 0];
pub const NMINUS_COLOR: [u8; 3] = [255, 230, 0];

/// Binary PPM of the band-mean image in gray; N+ and N- pixels are blended
/// half-way towards orange and yellow, background pixels are left untouched.
pub fn overlay_ppm(cube: &HyperCube, mask: &LabelMask) -> Vec<u8> {
    let mean = cube.mean_image();
    let lo = mean.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = mean.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P6\n{} {}\n255\n", cube.width(), cube.height()).into_bytes();
    for (m, &label) in mean.iter().zip(mask.labels()) {
        let g = ((m - lo) / span * 255.0).round() as u16;
        let px = match label {
            1 => NPLUS_COLOR.map(|c| ((g + c as u16) / 2) as u8),
            2 => NMINUS_COLOR.map(|c| ((g + c as u16) / 2) as u8),
            _ => [g as u8; 3],
        };
        out.extend_from_slice(&px);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_parameter_count() {
        let net = build_mlp(&MlpConfig::default()).unwrap();
        assert_eq!(
            net.param_count(),
            512 * 128 + 128 + 128 * 256 + 256 + 256 * 3 + 3
        );
        assert_eq!(net.param_count(), 99_459);
    }

    #[test]
    fn single_input_is_valid_and_seeded() {
        let cfg = MlpConfig {
            input_dim: 1,
            ..MlpConfig::default()
        };
        let a = build_mlp(&cfg).unwrap();
        let b = build_mlp(&cfg).unwrap();
        let x = Tensor::new(vec![2, 1], vec![0.3, -1.2]).unwrap();
        assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    }

    #[test]
    fn memorises_three_samples() {
        let ds = PixelDataset::new(2, vec![0, 1, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, -1.0]).unwrap();
        let cfg = MlpConfig {
            input_dim: 2,
            hidden: [16, 16],
            dropout: 0.0,
            epochs: 200,
            batch_size: 3,
            optimizer: OptimizerKind::adam(1e-2),
            seed: 1,
        };
        let out = train(build_mlp(&cfg).unwrap(), &ds, &ds, &cfg).unwrap();
        assert_eq!(accuracy(&out.net, &ds).unwrap(), 1.0);
        assert_eq!(out.history.len(), 200);
    }

    #[test]
    fn majority_baseline_cases() {
        let balanced = PixelDataset::new(1, vec![0, 1, 2], vec![0.0; 3]).unwrap();
        let r = majority_baseline(&balanced, &balanced).unwrap();
        assert!((r.accuracy - 1.0 / 3.0).abs() < 1e-12);
        let single = PixelDataset::new(1, vec![2, 2], vec![0.0; 2]).unwrap();
        assert_eq!(majority_baseline(&single, &single).unwrap().accuracy, 1.0);
        assert!(majority_baseline(&PixelDataset::empty(1), &single).is_err());
    }

    #[test]
    fn single_pixel_cube() {
        let cfg = MlpConfig {
            input_dim: 3,
            hidden: [4, 4],
            ..MlpConfig::default()
        };
        let model = PixelModel::full(build_mlp(&cfg).unwrap(), NormStats::identity(3));
        let cube = HyperCube::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let out = classify_cube(&model, &cube).unwrap();
        assert_eq!(out.mask.labels().len(), 1);
        assert!(out.overlay_ppm.starts_with(b"P6\n1 1\n255\n"));
        let wrong = HyperCube::new(1, 1, 2, vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            classify_cube(&model, &wrong),
            Err(ClassifierError::BandMismatch { .. })
        ));
    }
}

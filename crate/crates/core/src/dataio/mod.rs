//! Spectral data types and their on-disk formats.
//!
//! Binary layouts (all integers and floats little-endian):
//!
//! | magic  | header                    | payload                                  |
//! |--------|---------------------------|------------------------------------------|
//! | `HSC1` | `u32 H, u32 W, u32 B`     | `H·W·B` × f32, `(row, col, band)` order  |
//! | `MSK1` | `u32 H, u32 W`            | `H·W` × u8 labels, row-major             |
//! | `PXD1` | `u32 N, u32 D`            | `N` × (u8 label, `D` × f32)              |
//! | `NNW1` | `u32 len`, `len` bytes JSON | f32 parameter blob in declared order   |

mod binary;
mod checkpoint;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binary::{
    decode_cube, decode_mask, decode_pixels, decode_raw_grid, encode_cube, encode_mask,
    encode_pixels, encode_raw_grid, read_cube, read_mask, read_pixels, read_raw_grid, write_cube,
    write_mask, write_pixels, write_raw_grid, RawGrid,
};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint,
};
pub use report::{
    curve_csv, parse_removal_order, removal_order_text, write_prune_report, PRUNE_CURVE_FILE,
    REMOVAL_ORDER_FILE,
};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected}, found {found:?}")]
    BadMagic {
        expected: &'static str,
        found: String,
    },
    #[error("truncated file: need {needed} bytes, have {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("inconsistent sizes: {0}")]
    Inconsistent(String),
    #[error("label byte {value} at index {index} is not one of 0, 1, 2")]
    InvalidLabel { value: u8, index: usize },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("checkpoint header: {0}")]
    Header(String),
    #[error("parameter blob holds {found} floats, architecture needs {expected}")]
    BlobLength { expected: usize, found: usize },
}

/// Per-pixel class. The discriminant is the on-disk label byte and the
/// regression code used by the cell masker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    NPlus = 1,
    NMinus = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Background, Class::NPlus, Class::NMinus];
    pub const COUNT: usize = 3;

    pub fn from_code(code: u8) -> Option<Class> {
        match code {
            0 => Some(Class::Background),
            1 => Some(Class::NPlus),
            2 => Some(Class::NMinus),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Class::Background => "BG",
            Class::NPlus => "N+",
            Class::NMinus => "N-",
        })
    }
}

/// `H × W × B` spectral image stored in `(row, col, band)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f32>,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f32>,
    ) -> Result<Self, FormatError> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(FormatError::Inconsistent(format!(
                "cube dimensions must be positive, got {height}x{width}x{bands}"
            )));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(bands))
            .ok_or_else(|| FormatError::Inconsistent("cube dimensions overflow".into()))?;
        if n != data.len() {
            return Err(FormatError::Inconsistent(format!(
                "cube {height}x{width}x{bands} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(FormatError::InvalidValue(format!(
                "cube value {} at index {i} is not a finite non-negative intensity",
                data[i]
            )));
        }
        Ok(HyperCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.data[(row * self.width + col) * self.bands + band]
    }

    /// Keeps only the listed bands, in the given order.
    pub fn select_bands(&self, bands: &[usize]) -> Result<HyperCube, FormatError> {
        if bands.is_empty() || bands.iter().any(|&b| b >= self.bands) {
            return Err(FormatError::Inconsistent(format!(
                "band selection {bands:?} invalid for a {}-band cube",
                self.bands
            )));
        }
        let mut data = Vec::with_capacity(self.height * self.width * bands.len());
        for px in self.data.chunks_exact(self.bands) {
            data.extend(bands.iter().map(|&b| px[b]));
        }
        Ok(HyperCube {
            height: self.height,
            width: self.width,
            bands: bands.len(),
            data,
        })
    }

    /// Mean over bands of every pixel, row-major.
    pub fn mean_image(&self) -> Vec<f32> {
        self.data
            .chunks_exact(self.bands)
            .map(|px| px.iter().sum::<f32>() / self.bands as f32)
            .collect()
    }
}

/// `H × W` per-pixel class labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, FormatError> {
        if height == 0 || width == 0 {
            return Err(FormatError::Inconsistent(format!(
                "mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if height.checked_mul(width) != Some(labels.len()) {
            return Err(FormatError::Inconsistent(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        validate_labels(&labels)?;
        Ok(LabelMask {
            height,
            width,
            labels,
        })
    }

    pub fn from_classes(
        height: usize,
        width: usize,
        classes: &[Class],
    ) -> Result<Self, FormatError> {
        LabelMask::new(height, width, classes.iter().map(|c| c.code()).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> Class {
        Class::from_code(self.labels[row * self.width + col]).expect("validated on construction")
    }

    /// Pixel counts per class code.
    pub fn histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

fn validate_labels(labels: &[u8]) -> Result<(), FormatError> {
    match labels.iter().position(|&l| l > 2) {
        Some(index) => Err(FormatError::InvalidLabel {
            value: labels[index],
            index,
        }),
        None => Ok(()),
    }
}

/// `N` labelled spectra of dimension `D`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelDataset {
    dim: usize,
    labels: Vec<u8>,
    features: Vec<f32>,
}

impl PixelDataset {
    pub fn new(dim: usize, labels: Vec<u8>, features: Vec<f32>) -> Result<Self, FormatError> {
        if dim == 0 {
            return Err(FormatError::Inconsistent(
                "pixel dimension must be positive".into(),
            ));
        }
        if labels.len().checked_mul(dim) != Some(features.len()) {
            return Err(FormatError::Inconsistent(format!(
                "{} records of dimension {dim} need {} features, got {}",
                labels.len(),
                labels.len() * dim,
                features.len()
            )));
        }
        validate_labels(&labels)?;
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::InvalidValue(format!(
                "non-finite feature at index {i}"
            )));
        }
        Ok(PixelDataset {
            dim,
            labels,
            features,
        })
    }

    pub fn empty(dim: usize) -> Self {
        PixelDataset {
            dim,
            labels: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn record(&self, i: usize) -> (u8, &[f32]) {
        (
            self.labels[i],
            &self.features[i * self.dim..(i + 1) * self.dim],
        )
    }

    /// Records at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> PixelDataset {
        let mut labels = Vec::with_capacity(indices.len());
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            let (l, f) = self.record(i);
            labels.push(l);
            features.extend_from_slice(f);
        }
        PixelDataset {
            dim: self.dim,
            labels,
            features,
        }
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Result<PixelDataset, FormatError> {
        if columns.is_empty() || columns.iter().any(|&c| c >= self.dim) {
            return Err(FormatError::Inconsistent(format!(
                "feature selection {columns:?} invalid for dimension {}",
                self.dim
            )));
        }
        let mut features = Vec::with_capacity(self.len() * columns.len());
        for row in self.features.chunks_exact(self.dim) {
            features.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(PixelDataset {
            dim: columns.len(),
            labels: self.labels.clone(),
            features,
        })
    }

    pub fn class_counts(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    pub(crate) fn from_parts_unchecked(dim: usize, labels: Vec<u8>, features: Vec<f32>) -> Self {
        debug_assert_eq!(labels.len() * dim, features.len());
        PixelDataset {
            dim,
            labels,
            features,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_rejects_label_three() {
        let err = LabelMask::new(1, 3, vec![0, 3, 1]).unwrap_err();
        assert!(matches!(
            err,
            FormatError::InvalidLabel { value: 3, index: 1 }
        ));
    }

    #[test]
    fn cube_rejects_negative_and_nan() {
        assert!(HyperCube::new(1, 1, 2, vec![0.0, -1.0]).is_err());
        assert!(HyperCube::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(HyperCube::new(1, 1, 0, vec![]).is_err());
    }

    #[test]
    fn band_selection_keeps_order() {
        let cube = HyperCube::new(1, 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let sel = cube.select_bands(&[2, 0]).unwrap();
        assert_eq!(sel.data(), &[2.0, 0.0, 5.0, 3.0]);
        assert!(cube.select_bands(&[3]).is_err());
    }

    #[test]
    fn dataset_feature_selection() {
        let ds = PixelDataset::new(3, vec![0, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let sel = ds.select_features(&[1, 2]).unwrap();
        assert_eq!(sel.features(), &[2.0, 3.0, 5.0, 6.0]);
        assert_eq!(sel.labels(), ds.labels());
        assert_eq!(ds.class_counts(), [1, 0, 1]);
    }
}

//! Dataset construction: pixelisation, class balancing, splits, per-channel
//! normalisation and augmented chip sampling.

use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{self, Class, FormatError, HyperCube, LabelMask, PixelDataset};
use crate::rng;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cube is {cube_h}x{cube_w} but mask is {mask_h}x{mask_w}")]
    DimMismatch {
        cube_h: usize,
        cube_w: usize,
        mask_h: usize,
        mask_w: usize,
    },
    #[error("class {0} has no samples")]
    MissingClass(Class),
    #[error("cannot split {0} records (need at least 10)")]
    DegenerateSplit(usize),
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
    #[error("dataset is empty")]
    Empty,
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// One record per pixel, row-major.
pub fn pixelize(cube: &HyperCube, mask: &LabelMask) -> Result<PixelDataset, PipelineError> {
    if cube.height() != mask.height() || cube.width() != mask.width() {
        return Err(PipelineError::DimMismatch {
            cube_h: cube.height(),
            cube_w: cube.width(),
            mask_h: mask.height(),
            mask_w: mask.width(),
        });
    }
    Ok(PixelDataset::new(
        cube.bands(),
        mask.labels().to_vec(),
        cube.data().to_vec(),
    )?)
}

/// Downsamples every class, without replacement, to the smallest class count.
/// Surviving records keep their original relative order.
pub fn undersample_uniform(ds: &PixelDataset, seed: u64) -> Result<PixelDataset, PipelineError> {
    let counts = ds.class_counts();
    for class in Class::ALL {
        if counts[class.index()] == 0 {
            return Err(PipelineError::MissingClass(class));
        }
    }
    let target = *counts.iter().min().expect("three classes");
    let mut keep = Vec::with_capacity(target * Class::COUNT);
    for class in Class::ALL {
        let members: Vec<usize> = ds
            .labels()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class.code())
            .map(|(i, _)| i)
            .collect();
        let mut rng = rng::stream(seed, class.code() as u64);
        let mut chosen = index::sample(&mut rng, members.len(), target).into_vec();
        chosen.sort_unstable();
        keep.extend(chosen.into_iter().map(|k| members[k]));
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Train/validation/test fractions plus the shuffle seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, f) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(PipelineError::InvalidSplit(format!(
                    "{name} fraction {f} not in (0, 1)"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::InvalidSplit(format!(
                "fractions sum to {sum}"
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: `floor(N·f)` for val and test, the rest to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // The small offset keeps e.g. 0.1 * 30 = 3.0000000000000004 and
        // 0.7 * 10 = 6.999999999999999 from flipping across an integer.
        let val = (n as f64 * self.val + 1e-9).floor() as usize;
        let test = (n as f64 * self.test + 1e-9).floor() as usize;
        (n - val - test, val, test)
    }
}

/// Disjoint shuffled partition into (train, val, test).
pub fn split(
    ds: &PixelDataset,
    spec: &SplitSpec,
) -> Result<(PixelDataset, PixelDataset, PixelDataset), PipelineError> {
    spec.validate()?;
    let n = ds.len();
    if n < 10 {
        return Err(PipelineError::DegenerateSplit(n));
    }
    let perm = split_indices(n, spec);
    let (train, val, test) = spec.sizes(n);
    Ok((
        ds.subset(&perm[..train]),
        ds.subset(&perm[train..train + val]),
        ds.subset(&perm[train + val..train + val + test]),
    ))
}

/// The shuffled index order used by [`split`].
pub fn split_indices(n: usize, spec: &SplitSpec) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(spec.seed, 0x5971));
    perm
}

/// Channels whose training std falls below this pass through unchanged.
pub const CONSTANT_CHANNEL_STD: f32 = 1e-8;

/// Per-channel z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    /// Identity statistics (mean 0, std 1) for `dim` channels.
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits on rows of `dim` interleaved channels. Population std, accumulated in f64.
    pub fn fit_rows(values: &[f32], dim: usize) -> Result<Self, PipelineError> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(PipelineError::Empty);
        }
        let n = (values.len() / dim) as f64;
        let mut sum = vec![0f64; dim];
        for row in values.chunks_exact(dim) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0f64; dim];
        for row in values.chunks_exact(dim) {
            for ((s, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = *v as f64 - m;
                *s += d * d;
            }
        }
        Ok(NormStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: sq.iter().map(|s| (s / n).sqrt() as f32).collect(),
        })
    }

    pub fn apply_rows(&self, values: &mut [f32]) {
        let dim = self.dim();
        for row in values.chunks_exact_mut(dim) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                if *s >= CONSTANT_CHANNEL_STD {
                    *v = (*v - m) / s;
                }
            }
        }
    }

    /// Statistics restricted to the listed channels.
    pub fn select(&self, channels: &[usize]) -> NormStats {
        NormStats {
            mean: channels.iter().map(|&c| self.mean[c]).collect(),
            std: channels.iter().map(|&c| self.std[c]).collect(),
        }
    }
}

pub fn normalize_fit(train: &PixelDataset) -> Result<NormStats, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::Empty);
    }
    NormStats::fit_rows(train.features(), train.dim())
}

pub fn normalize_apply(
    stats: &NormStats,
    ds: &PixelDataset,
) -> Result<PixelDataset, PipelineError> {
    if stats.dim() != ds.dim() {
        return Err(PipelineError::InvalidConfig(format!(
            "stats cover {} channels, dataset has {}",
            stats.dim(),
            ds.dim()
        )));
    }
    let mut features = ds.features().to_vec();
    stats.apply_rows(&mut features);
    Ok(PixelDataset::from_parts_unchecked(
        ds.dim(),
        ds.labels().to_vec(),
        features,
    ))
}

/// Geometric transform applied to a raw square crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// Crop only.
    Crop,
    /// Mirror left-right.
    FlipHorizontal,
    /// Mirror top-bottom.
    FlipVertical,
    /// Counter-clockwise rotation by `quarter_turns · 90°`, in 1..=3.
    Rotate { quarter_turns: u8 },
}

impl Transform {
    pub const ALL: [Transform; 6] = [
        Transform::Crop,
        Transform::FlipHorizontal,
        Transform::FlipVertical,
        Transform::Rotate { quarter_turns: 1 },
        Transform::Rotate { quarter_turns: 2 },
        Transform::Rotate { quarter_turns: 3 },
    ];

    /// Source coordinate in an `s × s` crop for destination `(r, c)`.
    pub fn source(self, s: usize, r: usize, c: usize) -> (usize, usize) {
        match self {
            Transform::Crop => (r, c),
            Transform::FlipHorizontal => (r, s - 1 - c),
            Transform::FlipVertical => (s - 1 - r, c),
            Transform::Rotate { quarter_turns } => {
                let (mut r, mut c) = (r, c);
                for _ in 0..quarter_turns % 4 {
                    // out[r][c] = in[c][s-1-r]
                    (r, c) = (c, s - 1 - r);
                }
                (r, c)
            }
        }
    }

    /// Applies the transform to an `s × s × depth` row-major grid.
    pub fn apply<T: Copy>(self, s: usize, depth: usize, grid: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(grid.len());
        for r in 0..s {
            for c in 0..s {
                let (sr, sc) = self.source(s, r, c);
                let start = (sr * s + sc) * depth;
                out.extend_from_slice(&grid[start..start + depth]);
            }
        }
        out
    }
}

/// A cube/mask chip pair with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Chip {
    pub cube: HyperCube,
    pub mask: LabelMask,
    pub row: usize,
    pub col: usize,
    pub transform: Transform,
    /// Index of the source scene when chips from several scenes are pooled.
    pub source: usize,
}

impl Chip {
    pub fn is_nontrivial(&self) -> bool {
        self.mask.labels().iter().any(|&l| l != 0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChipSet {
    pub size: usize,
    pub bands: usize,
    pub chips: Vec<Chip>,
}

impl ChipSet {
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn nontrivial_fraction(&self) -> f64 {
        if self.chips.is_empty() {
            return 0.0;
        }
        self.chips.iter().filter(|c| c.is_nontrivial()).count() as f64 / self.chips.len() as f64
    }

    /// Appends another set, tagging its chips with `source`.
    pub fn append(&mut self, other: ChipSet, source: usize) -> Result<(), PipelineError> {
        if other.size != self.size || other.bands != self.bands {
            return Err(PipelineError::InvalidConfig(
                "cannot pool chip sets of different geometry".into(),
            ));
        }
        self.chips.extend(other.chips.into_iter().map(|mut c| {
            c.source = source;
            c
        }));
        Ok(())
    }

    /// Per-band statistics over every pixel of every chip.
    pub fn fit_norm(&self) -> Result<NormStats, PipelineError> {
        let values: Vec<f32> = self
            .chips
            .iter()
            .flat_map(|c| c.cube.data().iter().copied())
            .collect();
        NormStats::fit_rows(&values, self.bands)
    }
}

/// Crops `(row, col, size)` from the scene and applies `t` to both layers.
pub fn extract_chip(
    cube: &HyperCube,
    mask: &LabelMask,
    row: usize,
    col: usize,
    size: usize,
    t: Transform,
) -> Result<Chip, PipelineError> {
    let b = cube.bands();
    let mut raw_cube = Vec::with_capacity(size * size * b);
    let mut raw_mask = Vec::with_capacity(size * size);
    for r in row..row + size {
        for c in col..col + size {
            raw_cube.extend_from_slice(cube.pixel(r, c));
            raw_mask.push(mask.labels()[r * mask.width() + c]);
        }
    }
    Ok(Chip {
        cube: HyperCube::new(size, size, b, t.apply(size, b, &raw_cube))?,
        mask: LabelMask::new(size, size, t.apply(size, 1, &raw_mask))?,
        row,
        col,
        transform: t,
        source: 0,
    })
}

/// Samples `count` augmented `size × size` chips, at least
/// `min_nontrivial_frac` of which contain a non-background pixel.
pub fn make_chips(
    cube: &HyperCube,
    mask: &LabelMask,
    size: usize,
    count: usize,
    min_nontrivial_frac: f64,
    seed: u64,
) -> Result<ChipSet, PipelineError> {
    if cube.height() != mask.height() || cube.width() != mask.width() {
        return Err(PipelineError::DimMismatch {
            cube_h: cube.height(),
            cube_w: cube.width(),
            mask_h: mask.height(),
            mask_w: mask.width(),
        });
    }
    if size == 0 || !size.is_multiple_of(2) {
        return Err(PipelineError::InvalidConfig(format!(
            "chip size {size} must be even and positive"
        )));
    }
    if size > cube.height().min(cube.width()) {
        return Err(PipelineError::Infeasible(format!(
            "chip size {size} exceeds the {}x{} scene",
            cube.height(),
            cube.width()
        )));
    }
    if !(0.0..=1.0).contains(&min_nontrivial_frac) {
        return Err(PipelineError::InvalidConfig(format!(
            "non-trivial fraction {min_nontrivial_frac} outside [0, 1]"
        )));
    }
    if min_nontrivial_frac > 0.0 && count > 0 && mask.histogram()[0] == mask.labels().len() {
        return Err(PipelineError::Infeasible(
            "mask has no cells, so no chip can be non-trivial".into(),
        ));
    }
    let required = (min_nontrivial_frac * count as f64 - 1e-9).ceil().max(0.0) as usize;
    let max_trivial = count - required.min(count);
    let mut rng = rng::stream(seed, 0xC41F);
    let mut chips = Vec::with_capacity(count);
    let mut trivial = 0;
    let max_attempts = 100 * count;
    let mut attempts = 0;
    while chips.len() < count {
        if attempts == max_attempts {
            return Err(PipelineError::Infeasible(format!(
                "only {} of {count} chips accepted after {max_attempts} attempts",
                chips.len()
            )));
        }
        attempts += 1;
        let row = rng.random_range(0..=cube.height() - size);
        let col = rng.random_range(0..=cube.width() - size);
        let t = Transform::ALL[rng.random_range(0..Transform::ALL.len())];
        let has_cells = (row..row + size).any(|r| {
            mask.labels()[r * mask.width() + col..r * mask.width() + col + size]
                .iter()
                .any(|&l| l != 0)
        });
        if !has_cells {
            if trivial >= max_trivial {
                continue;
            }
            trivial += 1;
        }
        chips.push(extract_chip(cube, mask, row, col, size, t)?);
    }
    Ok(ChipSet {
        size,
        bands: cube.bands(),
        chips,
    })
}

pub const CHIP_MANIFEST: &str = "manifest.toml";

#[derive(Serialize, Deserialize)]
struct Manifest {
    size: usize,
    bands: usize,
    chips: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    cube: String,
    mask: String,
    row: usize,
    col: usize,
    source: usize,
    transform: Transform,
}

/// Writes paired HSC1/MSK1 files plus a TOML manifest into `dir`.
pub fn write_chipset(dir: impl AsRef<Path>, set: &ChipSet) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(FormatError::from)?;
    let mut entries = Vec::with_capacity(set.len());
    for (i, chip) in set.chips.iter().enumerate() {
        let cube = format!("chip_{i:05}.hsc");
        let mask = format!("chip_{i:05}.msk");
        dataio::write_cube(dir.join(&cube), &chip.cube)?;
        dataio::write_mask(dir.join(&mask), &chip.mask)?;
        entries.push(ManifestEntry {
            cube,
            mask,
            row: chip.row,
            col: chip.col,
            source: chip.source,
            transform: chip.transform,
        });
    }
    let manifest = Manifest {
        size: set.size,
        bands: set.bands,
        chips: entries,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| PipelineError::InvalidConfig(format!("manifest: {e}")))?;
    fs::write(dir.join(CHIP_MANIFEST), text).map_err(FormatError::from)?;
    Ok(())
}

pub fn read_chipset(dir: impl AsRef<Path>) -> Result<ChipSet, PipelineError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(CHIP_MANIFEST)).map_err(FormatError::from)?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| FormatError::Header(format!("chip manifest: {e}")))?;
    let mut chips = Vec::with_capacity(manifest.chips.len());
    for e in manifest.chips {
        let cube = dataio::read_cube(dir.join(&e.cube))?;
        let mask = dataio::read_mask(dir.join(&e.mask))?;
        if cube.height() != manifest.size
            || cube.width() != manifest.size
            || cube.bands() != manifest.bands
            || mask.height() != manifest.size
            || mask.width() != manifest.size
        {
            return Err(FormatError::Inconsistent(format!(
                "chip {} does not match manifest geometry",
                e.cube
            ))
            .into());
        }
        chips.push(Chip {
            cube,
            mask,
            row: e.row,
            col: e.col,
            transform: e.transform,
            source: e.source,
        });
    }
    Ok(ChipSet {
        size: manifest.size,
        bands: manifest.bands,
        chips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset_with_counts(counts: [usize; 3]) -> PixelDataset {
        let mut labels = Vec::new();
        let mut features = Vec::new();
        // interleave classes so order preservation is meaningful
        let total: usize = counts.iter().sum();
        let mut left = counts;
        let mut i = 0;
        while labels.len() < total {
            let c = i % 3;
            if left[c] > 0 {
                left[c] -= 1;
                labels.push(c as u8);
                features.extend([labels.len() as f32, c as f32]);
            }
            i += 1;
        }
        PixelDataset::new(2, labels, features).unwrap()
    }

    #[test]
    fn pixelize_small_cube() {
        let cube = HyperCube::new(2, 2, 3, (0..12).map(|v| v as f32).collect()).unwrap();
        let mask = LabelMask::new(2, 2, vec![0, 1, 2, 1]).unwrap();
        let ds = pixelize(&cube, &mask).unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 3);
        assert_eq!(ds.record(2), (2, &[6.0f32, 7.0, 8.0][..]));
        assert_eq!(ds.class_counts(), mask.histogram());
    }

    #[test]
    fn pixelize_dim_mismatch() {
        let cube = HyperCube::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let mask = LabelMask::new(2, 1, vec![0, 0]).unwrap();
        assert!(matches!(
            pixelize(&cube, &mask),
            Err(PipelineError::DimMismatch { .. })
        ));
    }

    #[test]
    fn undersample_to_min_count() {
        let ds = dataset_with_counts([100, 40, 60]);
        let out = undersample_uniform(&ds, 3).unwrap();
        assert_eq!(out.class_counts(), [40, 40, 40]);
        // records are untouched copies, in original order
        let ids: Vec<f32> = (0..out.len()).map(|i| out.record(i).1[0]).collect();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(out, undersample_uniform(&ds, 3).unwrap());
        assert_ne!(out, undersample_uniform(&ds, 4).unwrap());
    }

    #[test]
    fn undersample_needs_every_class() {
        let ds = dataset_with_counts([10, 0, 5]);
        assert!(matches!(
            undersample_uniform(&ds, 0),
            Err(PipelineError::MissingClass(Class::NPlus))
        ));
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(100), (80, 10, 10));
        assert_eq!(spec.sizes(101), (81, 10, 10));
        let ds = dataset_with_counts([34, 34, 33]);
        let (a, b, c) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (81, 10, 10));
        let small = dataset_with_counts([3, 3, 3]);
        assert!(matches!(
            split(&small, &spec),
            Err(PipelineError::DegenerateSplit(9))
        ));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let spec = SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.2,
            seed: 0,
        };
        assert!(spec.validate().is_err());
        let spec = SplitSpec {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 0,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn constant_channel_passes_through() {
        let ds = PixelDataset::new(2, vec![0, 1, 2], vec![5.0, 1.0, 5.0, 2.0, 5.0, 3.0]).unwrap();
        let stats = normalize_fit(&ds).unwrap();
        let out = normalize_apply(&stats, &ds).unwrap();
        for i in 0..3 {
            assert_eq!(out.record(i).1[0], 5.0);
        }
        assert!(normalize_fit(&PixelDataset::empty(2)).is_err());
    }

    #[test]
    fn fitted_set_is_standardised() {
        let features: Vec<f32> = (0..300)
            .map(|i| ((i * 37) % 101) as f32 * 0.3 + (i % 3) as f32)
            .collect();
        let ds = PixelDataset::new(3, vec![0; 100], features).unwrap();
        let stats = normalize_fit(&ds).unwrap();
        let out = normalize_apply(&stats, &ds).unwrap();
        let refit = normalize_fit(&out).unwrap();
        for c in 0..3 {
            assert!(refit.mean[c].abs() < 1e-5, "mean {}", refit.mean[c]);
            assert!((refit.std[c] - 1.0).abs() < 1e-5, "std {}", refit.std[c]);
        }
    }

    #[test]
    fn rotation_matches_hand_rotated_mask() {
        // 4x4 toy mask, rotated 90 degrees counter-clockwise by hand.
        let mask = [
            0, 1, 2, 0, //
            0, 0, 2, 0, //
            1, 0, 0, 0, //
            0, 0, 0, 2,
        ];
        let rotated = [
            0, 0, 0, 2, //
            2, 2, 0, 0, //
            1, 0, 0, 0, //
            0, 0, 1, 0,
        ];
        let t = Transform::Rotate { quarter_turns: 1 };
        assert_eq!(t.apply(4, 1, &mask), rotated.to_vec());
        // four quarter turns compose to the identity
        let mut m = mask.to_vec();
        for _ in 0..4 {
            m = t.apply(4, 1, &m);
        }
        assert_eq!(m, mask.to_vec());
        let flipped = Transform::FlipHorizontal.apply(4, 1, &mask);
        assert_eq!(&flipped[..4], &[0, 2, 1, 0]);
        let flipped = Transform::FlipVertical.apply(4, 1, &mask);
        assert_eq!(&flipped[..4], &[0, 0, 0, 2]);
    }

    #[test]
    fn all_background_mask_is_infeasible() {
        let cube = HyperCube::new(8, 8, 1, vec![1.0; 64]).unwrap();
        let mask = LabelMask::new(8, 8, vec![0; 64]).unwrap();
        assert!(matches!(
            make_chips(&cube, &mask, 4, 10, 0.5, 0),
            Err(PipelineError::Infeasible(_))
        ));
        assert_eq!(make_chips(&cube, &mask, 4, 10, 0.0, 0).unwrap().len(), 10);
        assert!(make_chips(&cube, &mask, 10, 1, 0.0, 0).is_err());
        assert!(make_chips(&cube, &mask, 3, 1, 0.0, 0).is_err());
    }

    #[test]
    fn chips_meet_quota_and_are_transform_consistent() {
        let (h, w, b) = (12, 12, 2);
        let data: Vec<f32> = (0..h * w * b).map(|v| v as f32).collect();
        let cube = HyperCube::new(h, w, b, data).unwrap();
        let mut labels = vec![0u8; h * w];
        labels[5 * w + 5] = 1;
        labels[5 * w + 6] = 2;
        let mask = LabelMask::new(h, w, labels).unwrap();
        let set = make_chips(&cube, &mask, 4, 40, 0.9, 7).unwrap();
        assert_eq!(set.len(), 40);
        assert!(set.nontrivial_fraction() >= 0.9);
        for chip in &set.chips {
            let again = extract_chip(&cube, &mask, chip.row, chip.col, 4, chip.transform).unwrap();
            assert_eq!(&again, chip);
            // cube value encodes its source pixel, so the mask can be re-derived
            for r in 0..4 {
                for c in 0..4 {
                    let v = chip.cube.get(r, c, 0) as usize / b;
                    assert_eq!(chip.mask.get(r, c).code(), mask.labels()[v]);
                }
            }
        }
    }

    #[test]
    fn chipset_directory_round_trip() {
        let cube = HyperCube::new(8, 8, 2, (0..128).map(|v| v as f32).collect()).unwrap();
        let mut labels = vec![0u8; 64];
        labels[27] = 1;
        let mask = LabelMask::new(8, 8, labels).unwrap();
        let set = make_chips(&cube, &mask, 4, 5, 0.5, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_chipset(dir.path(), &set).unwrap();
        assert_eq!(read_chipset(dir.path()).unwrap(), set);
    }
}

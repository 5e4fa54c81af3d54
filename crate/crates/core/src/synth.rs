//! Synthetic hyperspectral scenes: elliptical cells on a dim background, with
//! class spectra built from Gaussian peaks and a known set of channels where
//! the two cell classes differ.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{Class, FormatError, HyperCube, LabelMask};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("placed only {placed} of {requested} cells without overlap")]
    Placement { placed: usize, requested: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Channel position; fractional values are allowed.
    pub center: f64,
    /// Standard deviation in channels.
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpectrum {
    pub class: Class,
    pub baseline: f64,
    pub peaks: Vec<Peak>,
}

impl ClassSpectrum {
    /// Noise-free spectrum sampled at integer channels.
    pub fn render(&self, bands: usize) -> Vec<f64> {
        (0..bands)
            .map(|b| {
                let x = b as f64;
                self.baseline
                    + self
                        .peaks
                        .iter()
                        .map(|p| {
                            let z = (x - p.center) / p.width;
                            p.amplitude * (-0.5 * z * z).exp()
                        })
                        .sum::<f64>()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub cells: usize,
    /// Semi-axis range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Intensity multiplier at the cell boundary (1.0 at the centre).
    pub edge_intensity: f64,
    pub noise_std: f64,
    /// Fraction of cells drawn as N+; the rest are N-.
    pub nplus_fraction: f64,
    pub seed: u64,
    pub background: ClassSpectrum,
    pub nplus: ClassSpectrum,
    pub nminus: ClassSpectrum,
}

/// Amplitude gap between N+ and N- at every planted channel, in noise std units.
pub const PLANTED_SEPARATION: f64 = 5.0;

pub const DEFAULT_NOISE_STD: f64 = 0.05;

/// Amplitude of the weaker class's narrow peak at each planted channel.
pub const PLANTED_BASE: f64 = 1.0;

/// `bands` channels with `n_informative` planted discriminative channels, on a
/// 64×64 frame with 16 cells.
pub fn default_spec(bands: usize, n_informative: usize) -> Result<SceneSpec, SynthError> {
    default_spec_with_noise(bands, n_informative, DEFAULT_NOISE_STD)
}

/// As [`default_spec`], with the planted amplitude gap scaled to `noise_std`.
pub fn default_spec_with_noise(
    bands: usize,
    n_informative: usize,
    noise_std: f64,
) -> Result<SceneSpec, SynthError> {
    if bands < 2 {
        return Err(SynthError::InvalidSpec("need at least 2 bands".into()));
    }
    if n_informative >= bands {
        return Err(SynthError::InvalidSpec(format!(
            "{n_informative} informative channels requested for {bands} bands"
        )));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("noise std {noise_std}")));
    }
    let b = bands as f64;
    let shared: Vec<Peak> = [(0.2, 1.0), (0.5, 0.7), (0.8, 0.9)]
        .iter()
        .map(|&(pos, amp)| Peak {
            center: pos * (b - 1.0),
            width: (b / 10.0).max(1.0),
            amplitude: amp,
        })
        .collect();
    let mut nplus = shared.clone();
    let mut nminus = shared;
    // planted peaks are as bright as the shared ones so they alone separate cells from background
    let lo = PLANTED_BASE;
    // a noiseless scene keeps the default gap rather than collapsing it to zero
    let unit = if noise_std > 0.0 {
        noise_std
    } else {
        DEFAULT_NOISE_STD
    };
    let hi = lo + PLANTED_SEPARATION * unit;
    for (k, c) in informative_layout(bands, n_informative)
        .into_iter()
        .enumerate()
    {
        // alternate which class carries the stronger peak
        let (p, m) = if k % 2 == 0 { (hi, lo) } else { (lo, hi) };
        let narrow = |amplitude| Peak {
            center: c as f64,
            width: 0.35,
            amplitude,
        };
        nplus.push(narrow(p));
        nminus.push(narrow(m));
    }
    Ok(SceneSpec {
        height: 64,
        width: 64,
        bands,
        cells: 16,
        radius_min: 4.0,
        radius_max: 7.0,
        edge_intensity: 0.12,
        noise_std,
        nplus_fraction: 0.5,
        seed: 0,
        background: ClassSpectrum {
            class: Class::Background,
            baseline: 0.1,
            peaks: vec![Peak {
                center: 0.5 * (b - 1.0),
                width: b,
                amplitude: 0.05,
            }],
        },
        nplus: ClassSpectrum {
            class: Class::NPlus,
            baseline: 0.2,
            peaks: nplus,
        },
        nminus: ClassSpectrum {
            class: Class::NMinus,
            baseline: 0.2,
            peaks: nminus,
        },
    })
}

/// Evenly spaced channels, offset so they do not sit on the frame edge.
fn informative_layout(bands: usize, n: usize) -> Vec<usize> {
    (0..n).map(|k| ((2 * k + 1) * bands) / (2 * n)).collect()
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return bad("dimensions must be positive".into());
        }
        if !(self.radius_min >= 1.0 && self.radius_max >= self.radius_min) {
            return bad(format!(
                "radius range [{}, {}]",
                self.radius_min, self.radius_max
            ));
        }
        if 2.0 * self.radius_max + 1.0 > self.height.min(self.width) as f64 {
            return bad("cells do not fit in the frame".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {}", self.noise_std));
        }
        if !(0.0..=1.0).contains(&self.nplus_fraction) {
            return bad(format!("N+ fraction {}", self.nplus_fraction));
        }
        if !(self.edge_intensity > 0.0 && self.edge_intensity <= 1.0) {
            return bad(format!("edge intensity {}", self.edge_intensity));
        }
        for (s, class) in [
            (&self.background, Class::Background),
            (&self.nplus, Class::NPlus),
            (&self.nminus, Class::NMinus),
        ] {
            if s.class != class {
                return bad(format!("spectrum for {class} is labelled {}", s.class));
            }
            if s.baseline < 0.0 {
                return bad(format!("{class} baseline is negative"));
            }
            for p in &s.peaks {
                if p.amplitude < 0.0
                    || p.width <= 0.0
                    || p.center < 0.0
                    || p.center >= self.bands as f64
                {
                    return bad(format!("{class} peak {p:?} out of range"));
                }
            }
        }
        Ok(())
    }

    /// Channels where the noise-free N+ and N- spectra differ by more than 3 noise std.
    pub fn informative_channels(&self) -> Vec<usize> {
        let p = self.nplus.render(self.bands);
        let m = self.nminus.render(self.bands);
        (0..self.bands)
            .filter(|&b| (p[b] - m[b]).abs() > 3.0 * self.noise_std)
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellInfo {
    pub class: Class,
    pub center: (f64, f64),
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub cube: HyperCube,
    pub mask: LabelMask,
    pub informative_channels: Vec<usize>,
    pub cells: Vec<CellInfo>,
}

const PLACEMENT_RETRIES: usize = 1000;
const LAYOUT_RESTARTS: usize = 20;

pub fn render_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (h, w, bands) = (spec.height, spec.width, spec.bands);
    let mut place_rng = rng::stream(spec.seed, 1);
    let n_plus = (spec.cells as f64 * spec.nplus_fraction).round() as usize;
    let mut classes: Vec<Class> = (0..spec.cells)
        .map(|i| {
            if i < n_plus {
                Class::NPlus
            } else {
                Class::NMinus
            }
        })
        .collect();
    classes.shuffle(&mut place_rng);

    // a jammed layout is discarded and redrawn from the same stream
    let mut best_placed = 0;
    let mut layout = None;
    for _ in 0..LAYOUT_RESTARTS {
        match place_cells(spec, &classes, &mut place_rng) {
            Ok(l) => {
                layout = Some(l);
                break;
            }
            Err(placed) => best_placed = best_placed.max(placed),
        }
    }
    let (labels, intensity, cells) = layout.ok_or(SynthError::Placement {
        placed: best_placed,
        requested: spec.cells,
    })?;

    let spectra = [
        spec.background.render(bands),
        spec.nplus.render(bands),
        spec.nminus.render(bands),
    ];
    let mut noise_rng = rng::stream(spec.seed, 2);
    let noise =
        Normal::new(0.0, spec.noise_std).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut data = Vec::with_capacity(h * w * bands);
    for i in 0..h * w {
        let label = labels[i] as usize;
        let scale = if label == 0 { 1.0 } else { intensity[i] };
        for &s in &spectra[label] {
            let v = s * scale + noise.sample(&mut noise_rng);
            data.push(v.max(0.0) as f32);
        }
    }
    Ok(Scene {
        cube: HyperCube::new(h, w, bands, data)?,
        mask: LabelMask::new(h, w, labels)?,
        informative_channels: spec.informative_channels(),
        cells,
    })
}

type Layout = (Vec<u8>, Vec<f64>, Vec<CellInfo>);

/// Labels, in-cell intensity multipliers and cell records for one layout
/// attempt, or the number of cells placed before it jammed.
fn place_cells(
    spec: &SceneSpec,
    classes: &[Class],
    place_rng: &mut ChaCha8Rng,
) -> Result<Layout, usize> {
    let (h, w) = (spec.height, spec.width);
    let mut labels = vec![0u8; h * w];
    let mut intensity = vec![0f64; h * w];
    let mut cells = Vec::with_capacity(spec.cells);
    for (placed, &class) in classes.iter().enumerate() {
        let mut done = false;
        for _ in 0..PLACEMENT_RETRIES {
            let a = place_rng.random_range(spec.radius_min..=spec.radius_max);
            let b = place_rng.random_range(spec.radius_min..=spec.radius_max);
            let theta = place_rng.random_range(0.0..std::f64::consts::PI);
            let r = a.max(b);
            let cy = place_rng.random_range(r..=(h as f64 - 1.0 - r));
            let cx = place_rng.random_range(r..=(w as f64 - 1.0 - r));
            let support = ellipse_support(h, w, (cy, cx), (a, b), theta);
            if support.is_empty() || support.iter().any(|&(i, _)| touches(&labels, h, w, i)) {
                continue;
            }
            for &(i, rho2) in &support {
                labels[i] = class.code();
                intensity[i] = 1.0 - (1.0 - spec.edge_intensity) * rho2;
            }
            cells.push(CellInfo {
                class,
                center: (cy, cx),
                area: support.len(),
            });
            done = true;
            break;
        }
        if !done {
            return Err(placed);
        }
    }
    Ok((labels, intensity, cells))
}

/// Pixels inside the rotated ellipse, with their squared normalised radius.
fn ellipse_support(
    h: usize,
    w: usize,
    (cy, cx): (f64, f64),
    (a, b): (f64, f64),
    theta: f64,
) -> Vec<(usize, f64)> {
    let (sin, cos) = theta.sin_cos();
    let r = a.max(b).ceil() as isize + 1;
    let mut out = Vec::new();
    for y in (cy.round() as isize - r)..=(cy.round() as isize + r) {
        for x in (cx.round() as isize - r)..=(cx.round() as isize + r) {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                continue;
            }
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let rho2 = (u / a).powi(2) + (v / b).powi(2);
            if rho2 <= 1.0 {
                out.push((y as usize * w + x as usize, rho2));
            }
        }
    }
    out
}

/// True if pixel `i` or one of its 8 neighbours is already a cell.
fn touches(labels: &[u8], h: usize, w: usize, i: usize) -> bool {
    let (y, x) = ((i / w) as isize, (i % w) as isize);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (ny, nx) = (y + dy, x + dx);
            if ny >= 0
                && nx >= 0
                && ny < h as isize
                && nx < w as isize
                && labels[ny as usize * w + nx as usize] != 0
            {
                return true;
            }
        }
    }
    false
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    informative_channels: Vec<usize>,
    spec: SceneSpec,
}

pub fn sidecar_text(spec: &SceneSpec, informative: &[usize]) -> String {
    toml::to_string(&Sidecar {
        informative_channels: informative.to_vec(),
        spec: spec.clone(),
    })
    .expect("scene spec serialises")
}

pub fn write_sidecar(
    path: impl AsRef<Path>,
    spec: &SceneSpec,
    informative: &[usize],
) -> Result<(), SynthError> {
    fs::write(path, sidecar_text(spec, informative)).map_err(FormatError::from)?;
    Ok(())
}

/// Returns the recorded spec and informative channel list.
pub fn read_sidecar(path: impl AsRef<Path>) -> Result<(SceneSpec, Vec<usize>), SynthError> {
    let text = fs::read_to_string(path).map_err(FormatError::from)?;
    let s: Sidecar = toml::from_str(&text).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok((s.spec, s.informative_channels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_plants_requested_channels() {
        let spec = default_spec(64, 8).unwrap();
        let inf = spec.informative_channels();
        assert_eq!(inf.len(), 8);
        assert_eq!(inf, informative_layout(64, 8));
        assert!(default_spec(64, 0)
            .unwrap()
            .informative_channels()
            .is_empty());
        assert_eq!(
            default_spec(64, 0).unwrap().nplus.render(64),
            default_spec(64, 0).unwrap().nminus.render(64)
        );
        assert!(default_spec(8, 8).is_err());
    }

    #[test]
    fn planted_gap_is_at_least_five_noise_std() {
        let spec = default_spec(64, 8).unwrap();
        let p = spec.nplus.render(64);
        let m = spec.nminus.render(64);
        for c in spec.informative_channels() {
            assert!((p[c] - m[c]).abs() >= 5.0 * spec.noise_std);
        }
    }

    #[test]
    fn shared_spectrum_is_smooth_multi_peak() {
        let spec = default_spec(64, 0).unwrap();
        let s = spec.nplus.render(64);
        let maxima = (1..63)
            .filter(|&i| s[i] > s[i - 1] && s[i] > s[i + 1])
            .count();
        assert!(maxima >= 2, "{maxima} local maxima");
        let curvature = (1..63)
            .map(|i| (s[i - 1] - 2.0 * s[i] + s[i + 1]).abs())
            .fold(0.0, f64::max);
        assert!(curvature < 0.1, "max second difference {curvature}");
    }

    #[test]
    fn zero_cells_is_background_only() {
        let mut spec = default_spec(8, 2).unwrap();
        spec.cells = 0;
        let scene = render_scene(&spec).unwrap();
        assert_eq!(scene.mask.histogram(), [64 * 64, 0, 0]);
        let bg = spec.background.render(8);
        let mean = scene.cube.data().iter().map(|&v| v as f64).sum::<f64>()
            / scene.cube.data().len() as f64;
        let expected = bg.iter().sum::<f64>() / 8.0;
        assert!((mean - expected).abs() < 0.01);
    }

    #[test]
    fn noiseless_cell_is_proportional_to_class_spectrum() {
        let mut spec = default_spec(16, 4).unwrap();
        spec.cells = 1;
        spec.noise_std = 0.0;
        let scene = render_scene(&spec).unwrap();
        let class = scene.cells[0].class;
        let reference = match class {
            Class::NPlus => spec.nplus.render(16),
            _ => spec.nminus.render(16),
        };
        for r in 0..64 {
            for c in 0..64 {
                if scene.mask.get(r, c) == Class::Background {
                    continue;
                }
                let px = scene.cube.pixel(r, c);
                let k = px[0] as f64 / reference[0];
                for (v, s) in px.iter().zip(&reference) {
                    assert!((*v as f64 - k * s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn deterministic_and_areas_match() {
        let spec = SceneSpec {
            seed: 9,
            ..default_spec(16, 4).unwrap()
        };
        let a = render_scene(&spec).unwrap();
        let b = render_scene(&spec).unwrap();
        assert_eq!(a, b);
        let hist = a.mask.histogram();
        let area = |c| {
            a.cells
                .iter()
                .filter(|x| x.class == c)
                .map(|x| x.area)
                .sum::<usize>()
        };
        assert_eq!(hist[1], area(Class::NPlus));
        assert_eq!(hist[2], area(Class::NMinus));
        assert_eq!(a.cells.len(), 16);
    }

    #[test]
    fn crowded_scene_fails_placement() {
        let mut spec = default_spec(4, 1).unwrap();
        spec.height = 16;
        spec.width = 16;
        spec.cells = 50;
        assert!(matches!(
            render_scene(&spec),
            Err(SynthError::Placement { .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let spec = default_spec(16, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.toml");
        write_sidecar(&path, &spec, &spec.informative_channels()).unwrap();
        let (back, inf) = read_sidecar(&path).unwrap();
        assert_eq!(back, spec);
        assert_eq!(inf, spec.informative_channels());
    }
}

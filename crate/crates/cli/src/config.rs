//! Run configuration: a TOML file whose values are overridden by flags.

use std::path::Path;

use anyhow::Context;
use hsfs_core::classifier::MlpConfig;
use hsfs_core::masker::CnnConfig;
use hsfs_core::pruner::PruneConfig;
use hsfs_core::rng::derive_seed;
use hsfs_core::synth::{self, SceneSpec, SynthError};
use hsfs_core::SplitSpec;
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "HSFS_SEED";
pub const DEFAULT_SEED: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub bands: usize,
    pub informative: usize,
    pub height: usize,
    pub width: usize,
    pub cells: usize,
    pub radius_min: f64,
    pub radius_max: f64,
    pub edge_intensity: f64,
    pub noise_std: f64,
    pub nplus_fraction: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let s = synth::default_spec(64, 8).expect("default scene is valid");
        SceneConfig {
            bands: s.bands,
            informative: 8,
            height: s.height,
            width: s.width,
            cells: s.cells,
            radius_min: s.radius_min,
            radius_max: s.radius_max,
            edge_intensity: s.edge_intensity,
            noise_std: s.noise_std,
            nplus_fraction: s.nplus_fraction,
        }
    }
}

impl SceneConfig {
    pub fn spec(&self, seed: u64) -> Result<SceneSpec, SynthError> {
        // spectra are built against the configured noise level
        let mut spec =
            synth::default_spec_with_noise(self.bands, self.informative, self.noise_std)?;
        spec.height = self.height;
        spec.width = self.width;
        spec.cells = self.cells;
        spec.radius_min = self.radius_min;
        spec.radius_max = self.radius_max;
        spec.edge_intensity = self.edge_intensity;
        spec.nplus_fraction = self.nplus_fraction;
        spec.seed = seed;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSpec::default();
        SplitConfig {
            train: s.train,
            val: s.val,
            test: s.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipConfig {
    pub size: usize,
    pub count: usize,
    pub min_nontrivial: f64,
}

impl Default for ChipConfig {
    fn default() -> Self {
        ChipConfig {
            size: 16,
            count: 2000,
            min_nontrivial: 0.9,
        }
    }
}

/// Everything a subcommand may read. Sub-configuration `seed` fields are
/// always derived from the top-level seed when the config is resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scene: SceneConfig,
    pub split: SplitConfig,
    pub mlp: MlpConfig,
    pub prune: PruneConfig,
    pub chips: ChipConfig,
    pub cnn: CnnConfig,
}

/// Stream ids for per-stage seeds.
pub mod stream {
    pub const SCENE: u64 = 1;
    pub const BALANCE: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const MLP: u64 = 4;
    pub const PRUNE: u64 = 5;
    pub const CHIPS: u64 = 6;
    pub const CNN: u64 = 7;
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<RunConfig> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| crate::InvalidInput(format!("config {}: {e}", p.display())).into())
            }
        }
    }

    /// Seed precedence: flag, config file, `HSFS_SEED`, built-in default.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let seed = match (flag, self.seed) {
            (Some(s), _) | (None, Some(s)) => s,
            (None, None) => match std::env::var(SEED_ENV) {
                Ok(v) => v.trim().parse().map_err(|_| {
                    crate::InvalidInput(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
                })?,
                Err(_) => DEFAULT_SEED,
            },
        };
        self.seed = Some(seed);
        self.mlp.seed = derive_seed(seed, stream::MLP);
        self.prune.retrain.seed = derive_seed(seed, stream::PRUNE);
        self.cnn.seed = derive_seed(seed, stream::CNN);
        Ok(seed)
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
            seed: derive_seed(self.seed.unwrap_or(DEFAULT_SEED), stream::SPLIT),
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}

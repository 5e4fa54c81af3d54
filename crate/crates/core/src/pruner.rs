//! Greedy input-feature pruning driven by first-layer weight magnitudes.
//!
//! Each step drops the retained feature whose first-layer weight column has
//! the smallest absolute sum, then measures validation accuracy without
//! retraining. When accuracy falls more than `tau` below the value recorded
//! after the latest (re)training, a fresh network is trained on the surviving
//! features.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{self, ClassifierError, MlpConfig};
use crate::dataio::PixelDataset;
use crate::nn::{Layer, Network, NnError, OptimizerKind};
use crate::rng::derive_seed;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("already at the floor of {0} features")]
    AtFloor(usize),
    #[error("retraining failed after {} removals: {source}", history.len())]
    Retrain {
        source: ClassifierError,
        /// Steps completed before the failure.
        history: Vec<PruneStep>,
    },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Hidden widths of networks retrained on a reduced feature set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenPolicy {
    /// Keep the template widths.
    Fixed,
    /// `max(16, round(width · |Ω| / B))`.
    Rescale,
}

impl HiddenPolicy {
    pub fn widths(self, template: [usize; 2], retained: usize, original: usize) -> [usize; 2] {
        match self {
            HiddenPolicy::Fixed => template,
            HiddenPolicy::Rescale => template.map(|w| {
                let scaled = (w as f64 * retained as f64 / original as f64).round() as usize;
                scaled.max(16)
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub tau: f64,
    pub max_retrains: usize,
    pub min_features: usize,
    /// Template for retraining; `input_dim` and `seed` are overridden per retrain.
    pub retrain: MlpConfig,
    pub hidden_policy: HiddenPolicy,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            tau: 0.005,
            max_retrains: 20,
            min_features: 4,
            retrain: MlpConfig {
                optimizer: OptimizerKind::adadelta(),
                ..MlpConfig::default()
            },
            hidden_policy: HiddenPolicy::Rescale,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(PruneError::InvalidConfig(format!(
                "tau {} must be positive",
                self.tau
            )));
        }
        if self.max_retrains == 0 {
            return Err(PruneError::InvalidConfig(
                "max_retrains must be positive".into(),
            ));
        }
        if self.min_features == 0 {
            return Err(PruneError::InvalidConfig(
                "min_features must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One removal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneStep {
    pub step: usize,
    /// Original feature index.
    pub removed_feature: usize,
    /// Validation accuracy right after the removal, before any retraining.
    pub val_accuracy: f64,
    pub retrained: bool,
    pub post_retrain_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneState {
    pub original_features: usize,
    /// Retained original indices, ascending.
    pub omega: Vec<usize>,
    /// Worthiness of each retained feature under the current network.
    pub gamma: Vec<f32>,
    pub baseline_acc: f64,
    pub retrain_count: usize,
    pub history: Vec<PruneStep>,
}

impl PruneState {
    pub fn new(net: &Network, baseline_acc: f64) -> Result<Self, PruneError> {
        let gamma = worthiness(net)?;
        Ok(PruneState {
            original_features: gamma.len(),
            omega: (0..gamma.len()).collect(),
            gamma,
            baseline_acc,
            retrain_count: 0,
            history: Vec::new(),
        })
    }
}

/// `γ_j = Σ_o |W[o][j]|` over the first dense layer.
pub fn worthiness(net: &Network) -> Result<Vec<f32>, PruneError> {
    let d = net.input_layer()?;
    let mut gamma = vec![0f32; d.inputs];
    for row in d.weights.chunks_exact(d.inputs) {
        for (g, w) in gamma.iter_mut().zip(row) {
            *g += w.abs();
        }
    }
    Ok(gamma)
}

/// Position of the smallest value; the first one wins ties.
pub fn argmin_first(values: &[f32]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Removes the minimal-γ feature. Returns its original index.
pub fn remove_min(
    state: &mut PruneState,
    net: &Network,
    min_features: usize,
) -> Result<(Network, usize), PruneError> {
    if state.omega.len() <= min_features {
        return Err(PruneError::AtFloor(min_features));
    }
    let pos = argmin_first(&state.gamma).expect("omega is non-empty");
    let reduced = net.drop_input(pos)?;
    let removed = state.omega.remove(pos);
    state.gamma = worthiness(&reduced)?;
    Ok((reduced, removed))
}

/// Validation accuracy of `net` on `val` (all original features) restricted to `omega`.
pub fn eval_without_retrain(
    net: &Network,
    val: &PixelDataset,
    omega: &[usize],
) -> Result<f64, PruneError> {
    let restricted = val
        .select_features(omega)
        .map_err(|e| PruneError::InvalidConfig(e.to_string()))?;
    Ok(classifier::accuracy(net, &restricted)?)
}

#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub state: PruneState,
    pub net: Network,
    /// Validation accuracy of the starting network.
    pub initial_accuracy: f64,
    /// Validation accuracy of `net` on the final feature set.
    pub final_accuracy: f64,
}

/// Prunes starting from `initial`, a network trained on every feature of
/// `train`/`val` (which must already be normalised).
pub fn run_prune(
    train: &PixelDataset,
    val: &PixelDataset,
    initial: Network,
    cfg: &PruneConfig,
) -> Result<PruneOutcome, PruneError> {
    cfg.validate()?;
    if val.is_empty() || train.is_empty() {
        return Err(ClassifierError::Empty.into());
    }
    let all: Vec<usize> = (0..val.dim()).collect();
    let initial_accuracy = eval_without_retrain(&initial, val, &all)?;
    let mut state = PruneState::new(&initial, initial_accuracy)?;
    let mut net = initial;
    let mut current = initial_accuracy;

    while state.omega.len() > cfg.min_features && state.retrain_count <= cfg.max_retrains {
        let (reduced, removed) = remove_min(&mut state, &net, cfg.min_features)?;
        net = reduced;
        let acc = eval_without_retrain(&net, val, &state.omega)?;
        let mut entry = PruneStep {
            step: state.history.len(),
            removed_feature: removed,
            val_accuracy: acc,
            retrained: false,
            post_retrain_accuracy: None,
        };
        current = acc;
        if state.baseline_acc - acc > cfg.tau {
            state.retrain_count += 1;
            let (fresh, fresh_acc) = match retrain(train, val, &state, cfg) {
                Ok(r) => r,
                Err(source) => {
                    return Err(PruneError::Retrain {
                        source,
                        history: state.history,
                    })
                }
            };
            log::info!(
                "retrain {} at |omega| = {}: {acc:.4} -> {fresh_acc:.4}",
                state.retrain_count,
                state.omega.len()
            );
            net = fresh;
            state.gamma = worthiness(&net)?;
            state.baseline_acc = fresh_acc;
            current = fresh_acc;
            entry.retrained = true;
            entry.post_retrain_accuracy = Some(fresh_acc);
        }
        state.history.push(entry);
    }
    Ok(PruneOutcome {
        state,
        net,
        initial_accuracy,
        final_accuracy: current,
    })
}

fn retrain(
    train: &PixelDataset,
    val: &PixelDataset,
    state: &PruneState,
    cfg: &PruneConfig,
) -> Result<(Network, f64), ClassifierError> {
    let omega = &state.omega;
    let train_r = train.select_features(omega)?;
    let val_r = val.select_features(omega)?;
    let mlp = MlpConfig {
        input_dim: omega.len(),
        hidden: cfg
            .hidden_policy
            .widths(cfg.retrain.hidden, omega.len(), state.original_features),
        seed: derive_seed(cfg.retrain.seed, state.retrain_count as u64),
        ..cfg.retrain.clone()
    };
    let out = classifier::train(classifier::build_mlp(&mlp)?, &train_r, &val_r, &mlp)?;
    let acc = classifier::accuracy(&out.net, &val_r)?;
    Ok((out.net, acc))
}

/// Entry `j` is the step at which original feature `j` was removed, or
/// `bands` if it was never removed.
pub fn removal_order_map(history: &[PruneStep], bands: usize) -> Vec<usize> {
    let mut order = vec![bands; bands];
    for s in history {
        order[s.removed_feature] = s.step;
    }
    order
}

/// Inverse of [`removal_order_map`]: the features still retained.
pub fn retained_from_order(order: &[usize]) -> Vec<usize> {
    let bands = order.len();
    (0..bands).filter(|&j| order[j] == bands).collect()
}

/// True if `net`'s first layer is dense, the precondition for pruning.
pub fn is_prunable(net: &Network) -> bool {
    matches!(net.layers().first(), Some(Layer::Dense(_)))
}

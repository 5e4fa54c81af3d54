//! Pruning oracles: drop/zero equivalence, greedy order and history invariants.

use hsfs_core::classifier::{self, MlpConfig};
use hsfs_core::dataio::PixelDataset;
use hsfs_core::nn::{LayerSpec, Network, Tensor};
use hsfs_core::pipeline::{self, SplitSpec};
use hsfs_core::pruner::{self, HiddenPolicy, PruneConfig};
use hsfs_core::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn random_mlp(rng: &mut ChaCha8Rng, inputs: usize) -> Network {
    let h1 = rng.random_range(1..24);
    let h2 = rng.random_range(1..24);
    let specs = [
        LayerSpec::Dense {
            inputs,
            outputs: h1,
        },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Dense {
            inputs: h1,
            outputs: h2,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: h2,
            outputs: 3,
        },
        LayerSpec::Softmax,
    ];
    Network::new(vec![inputs], &specs, rng.random()).unwrap()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    (0..n * dim)
        .map(|_| rng.random_range(-3.0f32..3.0))
        .collect()
}

fn without_column(x: &[f32], dim: usize, j: usize) -> Vec<f32> {
    x.chunks_exact(dim)
        .flat_map(|row| row[..j].iter().chain(&row[j + 1..]).copied())
        .collect()
}

#[test]
fn dropping_a_feature_equals_zeroing_its_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let dim = rng.random_range(2..40);
        let net = random_mlp(&mut rng, dim);
        let j = rng.random_range(0..dim);
        let x = random_batch(&mut rng, 100, dim);
        let mut zeroed = net.clone();
        zeroed.zero_input_column(j).unwrap();
        let full = zeroed
            .predict(&Tensor::new(vec![100, dim], x.clone()).unwrap())
            .unwrap();
        let dropped = net.drop_input(j).unwrap();
        let reduced = Tensor::new(vec![100, dim - 1], without_column(&x, dim, j)).unwrap();
        assert_eq!(bits(&dropped.predict(&reduced).unwrap()), bits(&full));
    }
}

#[test]
fn restricting_equals_zero_filling_removed_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let dim = rng.random_range(3..16);
        let net = random_mlp(&mut rng, dim);
        let x = random_batch(&mut rng, 50, dim);
        let j = rng.random_range(0..dim);
        let mut filled = x.clone();
        for row in filled.chunks_exact_mut(dim) {
            row[j] = 0.0;
        }
        let a = net
            .predict(&Tensor::new(vec![50, dim], filled).unwrap())
            .unwrap();
        let restricted = net.drop_input(j).unwrap();
        let b = restricted
            .predict(&Tensor::new(vec![50, dim - 1], without_column(&x, dim, j)).unwrap())
            .unwrap();
        assert_eq!(a.data(), b.data());
    }
}

/// Tiny labelled set, enough for the accuracy evaluations the loop performs.
fn toy_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PixelDataset {
    let labels = (0..n).map(|i| (i % 3) as u8).collect();
    PixelDataset::new(dim, labels, random_batch(rng, n, dim)).unwrap()
}

/// Indices sorted by value, ties to the lower index.
fn argsort(values: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx
}

fn greedy_config() -> PruneConfig {
    PruneConfig {
        tau: 1.0,
        min_features: 1,
        ..PruneConfig::default()
    }
}

#[test]
fn without_retraining_removal_follows_initial_worthiness() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let dim = rng.random_range(2..=16);
        let net = random_mlp(&mut rng, dim);
        let gamma = pruner::worthiness(&net).unwrap();
        let data = toy_data(&mut rng, 30, dim);
        let out = pruner::run_prune(&data, &data, net, &greedy_config()).unwrap();
        let order: Vec<usize> = out
            .state
            .history
            .iter()
            .map(|s| s.removed_feature)
            .collect();
        assert_eq!(order, argsort(&gamma)[..dim - 1].to_vec());
        assert_eq!(out.state.retrain_count, 0);
        assert_eq!(out.state.omega, vec![argsort(&gamma)[dim - 1]]);
    }
}

#[test]
fn tied_worthiness_removes_lowest_index_first() {
    let specs = [
        LayerSpec::Dense {
            inputs: 6,
            outputs: 2,
        },
        LayerSpec::Softmax,
    ];
    let mut net = Network::new(vec![6], &specs, 0).unwrap();
    if let hsfs_core::nn::Layer::Dense(d) = &mut net.layers_mut()[0] {
        // column sums: 2, 1, 2, 1, 3, 1
        let cols = [1.0, 0.5, 1.0, -0.5, 1.5, 0.5];
        for o in 0..2 {
            for (j, c) in cols.iter().enumerate() {
                d.weights[o * 6 + j] = if o == 0 { *c } else { -c };
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = toy_data(&mut rng, 12, 6);
    let out = pruner::run_prune(&data, &data, net, &greedy_config()).unwrap();
    let order: Vec<usize> = out
        .state
        .history
        .iter()
        .map(|s| s.removed_feature)
        .collect();
    assert_eq!(order, vec![1, 3, 5, 0, 2]);
}

#[test]
fn history_invariants_on_a_small_scene() {
    let mut spec = synth::default_spec(16, 4).unwrap();
    spec.height = 40;
    spec.width = 40;
    spec.cells = 6;
    spec.seed = 11;
    let scene = synth::render_scene(&spec).unwrap();
    let ds = pipeline::pixelize(&scene.cube, &scene.mask).unwrap();
    let bal = pipeline::undersample_uniform(&ds, 1).unwrap();
    let (train, val, _) = pipeline::split(
        &bal,
        &SplitSpec {
            seed: 2,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let stats = pipeline::normalize_fit(&train).unwrap();
    let train = pipeline::normalize_apply(&stats, &train).unwrap();
    let val = pipeline::normalize_apply(&stats, &val).unwrap();
    let mlp = MlpConfig {
        input_dim: 16,
        hidden: [16, 16],
        epochs: 8,
        seed: 3,
        ..MlpConfig::default()
    };
    let initial = classifier::train(classifier::build_mlp(&mlp).unwrap(), &train, &val, &mlp)
        .unwrap()
        .net;
    let cfg = PruneConfig {
        tau: 0.01,
        max_retrains: 3,
        min_features: 2,
        retrain: MlpConfig {
            epochs: 4,
            seed: 9,
            ..PruneConfig::default().retrain
        },
        hidden_policy: HiddenPolicy::Rescale,
    };
    let out = pruner::run_prune(&train, &val, initial, &cfg).unwrap();
    let s = &out.state;
    assert_eq!(s.history.len() + s.omega.len(), 16);
    assert_eq!(s.gamma.len(), s.omega.len());
    assert!(s.omega.windows(2).all(|w| w[0] < w[1]));
    let retrains = s.history.iter().filter(|h| h.retrained).count();
    assert_eq!(retrains, s.retrain_count);
    assert!(retrains <= cfg.max_retrains + 1);
    assert!(s.omega.len() == cfg.min_features || s.retrain_count > cfg.max_retrains);
    // between retrains accuracy stays within tau of the baseline
    let mut baseline = out.initial_accuracy;
    for (i, h) in s.history.iter().enumerate() {
        assert_eq!(h.step, i);
        if h.retrained {
            assert!(baseline - h.val_accuracy > cfg.tau);
            baseline = h.post_retrain_accuracy.unwrap();
        } else {
            assert!(baseline - h.val_accuracy <= cfg.tau);
            assert!(h.post_retrain_accuracy.is_none());
        }
    }
    let order = pruner::removal_order_map(&s.history, 16);
    assert_eq!(pruner::retained_from_order(&order), s.omega);
    let mut removed: Vec<usize> = s.history.iter().map(|h| h.removed_feature).collect();
    removed.extend(&s.omega);
    removed.sort_unstable();
    assert_eq!(removed, (0..16).collect::<Vec<_>>());
}

#[test]
fn losing_every_planted_channel_collapses_the_cell_classes() {
    let mut spec = synth::default_spec(24, 4).unwrap();
    spec.seed = 5;
    let scene = synth::render_scene(&spec).unwrap();
    let ds = pipeline::pixelize(&scene.cube, &scene.mask).unwrap();
    let bal = pipeline::undersample_uniform(&ds, 1).unwrap();
    let (train, val, _) = pipeline::split(
        &bal,
        &SplitSpec {
            seed: 2,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let stats = pipeline::normalize_fit(&train).unwrap();
    let train = pipeline::normalize_apply(&stats, &train).unwrap();
    let val = pipeline::normalize_apply(&stats, &val).unwrap();
    let keep: Vec<usize> = (0..24)
        .filter(|c| !scene.informative_channels.contains(c))
        .collect();
    let (train, val) = (
        train.select_features(&keep).unwrap(),
        val.select_features(&keep).unwrap(),
    );
    let mlp = MlpConfig {
        input_dim: keep.len(),
        hidden: [32, 32],
        epochs: 15,
        seed: 1,
        ..MlpConfig::default()
    };
    let net = classifier::train(classifier::build_mlp(&mlp).unwrap(), &train, &val, &mlp)
        .unwrap()
        .net;
    let report = classifier::evaluate(&net, &val).unwrap();
    // background stays separable; N+ against N- is near a coin flip
    let c = report.confusion;
    let cells = (c[1][1] + c[1][2] + c[2][1] + c[2][2]) as f64;
    let right = (c[1][1] + c[2][2]) as f64;
    assert!(right / cells < 0.7, "cell-class accuracy {}", right / cells);
    assert!(report.per_class[0].recall > 0.9);
}

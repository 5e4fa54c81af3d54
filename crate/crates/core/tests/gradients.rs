//! Analytic gradients against central finite differences.

use hsfs_core::nn::{grad_check, GradCheckOptions, LayerSpec, Mode, Network, Objective, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

fn assert_passes(
    name: &str,
    seed: u64,
    net: &Network,
    x: &Tensor,
    objective: Objective<'_>,
    mode: Mode,
) {
    let opts = GradCheckOptions {
        mode,
        ..GradCheckOptions::default()
    };
    let r = grad_check(net, x, objective, opts).unwrap();
    assert!(r.checked > 0, "{name} seed {seed}: nothing checked");
    assert!(
        r.passed(),
        "{name} seed {seed}: max rel error {:.3e}",
        r.max_rel_error
    );
}

#[test]
fn two_layer_dense_with_five_inputs() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = [
            LayerSpec::Dense {
                inputs: 5,
                outputs: 7,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 7,
                outputs: 3,
            },
            LayerSpec::Softmax,
        ];
        let net = Network::new(vec![5], &specs, seed).unwrap();
        let x = random(vec![4, 5], &mut rng);
        let labels = [0, 1, 2, 1];
        assert_passes(
            "dense",
            seed,
            &net,
            &x,
            Objective::CrossEntropy(&labels),
            Mode::Eval,
        );
    }
}

#[test]
fn dense_relu_dropout_softmax_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let specs = [
            LayerSpec::Dense {
                inputs: 8,
                outputs: 16,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.5 },
            LayerSpec::Dense {
                inputs: 16,
                outputs: 12,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 12,
                outputs: 3,
            },
            LayerSpec::Softmax,
        ];
        let net = Network::new(vec![8], &specs, seed).unwrap();
        let x = random(vec![6, 8], &mut rng);
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        assert_passes(
            "mlp eval",
            seed,
            &net,
            &x,
            Objective::CrossEntropy(&labels),
            Mode::Eval,
        );
        // a fixed dropout mask is a constant linear map, so training mode checks too
        assert_passes(
            "mlp train",
            seed,
            &net,
            &x,
            Objective::CrossEntropy(&labels),
            Mode::Train { seed },
        );
    }
}

#[test]
fn conv_pool_upsample_mse() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let specs = [
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 3,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::MaxPool2,
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::Conv2d {
                in_channels: 3,
                out_channels: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 2,
            },
            LayerSpec::Relu,
            LayerSpec::Upsample2,
            LayerSpec::Conv2d {
                in_channels: 2,
                out_channels: 1,
            },
        ];
        let net = Network::new(vec![8, 8, 2], &specs, seed).unwrap();
        let x = random(vec![2, 8, 8, 2], &mut rng);
        let t = random(vec![2, 8, 8, 1], &mut rng);
        assert_passes("cnn", seed, &net, &x, Objective::Mse(&t), Mode::Eval);
    }
}

#[test]
fn dense_regression_mse() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let specs = [
            LayerSpec::Dense {
                inputs: 6,
                outputs: 4,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 4,
                outputs: 2,
            },
        ];
        let net = Network::new(vec![6], &specs, seed).unwrap();
        let x = random(vec![5, 6], &mut rng);
        let t = random(vec![5, 2], &mut rng);
        assert_passes("dense mse", seed, &net, &x, Objective::Mse(&t), Mode::Eval);
    }
}

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{self, Layer, LayerSpec};
use super::tensor::{Real, Tensor};
use super::NnError;
use crate::rng::derive_seed;

/// Whether stochastic layers are active for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks are drawn from a stream derived from `seed` and the layer index.
    Train {
        seed: u64,
    },
}

/// Ordered layer stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    seed: u64,
}

#[derive(Clone, Debug)]
enum Cache {
    None,
    Relu,
    Dropout(Vec<bool>),
    Pool(Vec<u32>),
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    /// `values[0]` is the input batch; `values[i + 1]` is the output of layer `i`.
    values: Vec<Tensor<T>>,
    caches: Vec<Cache>,
    signature: u64,
}

impl<T: Real> Activations<T> {
    pub fn output(&self) -> &Tensor<T> {
        self.values
            .last()
            .expect("activations always hold the input")
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.values
            .pop()
            .expect("activations always hold the input")
    }

    /// Output of layer `i`.
    pub fn layer_output(&self, i: usize) -> &Tensor<T> {
        &self.values[i + 1]
    }

    /// Hash of every piecewise decision taken in this pass (ReLU on/off,
    /// pooling argmax). Two passes with equal hashes lie on the same smooth piece.
    pub fn decision_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, cache) in self.caches.iter().enumerate() {
            match cache {
                Cache::Pool(idx) => idx.hash(&mut h),
                Cache::Relu => {
                    for v in self.values[i].data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Cache::None => {}
                Cache::Dropout(mask) => mask.hash(&mut h),
            }
        }
        h.finish()
    }
}

/// Parameter gradients, in the same order as [`Network::params`], plus the
/// gradient with respect to the input batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> Network<T> {
    /// Builds a freshly initialised network, validating that shapes compose.
    pub fn new(input_shape: Vec<usize>, specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        validate(&input_shape, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x1417));
        let layers = specs.iter().map(|s| Layer::init(*s, &mut rng)).collect();
        Ok(Network {
            input_shape,
            layers,
            seed,
        })
    }

    /// Assembles a network from existing layers.
    pub fn from_layers(
        input_shape: Vec<usize>,
        layers: Vec<Layer<T>>,
        seed: u64,
    ) -> Result<Self, NnError> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        validate(&input_shape, &specs)?;
        Ok(Network {
            input_shape,
            layers,
            seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layer_shapes()
            .pop()
            .unwrap_or_else(|| self.input_shape.clone())
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        self.layers
            .iter()
            .map(|l| {
                shape = l.spec().output_shape(&shape).expect("validated at build");
                shape.clone()
            })
            .collect()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.iter().map(|l| l.cast()).collect(),
            seed: self.seed,
        }
    }

    fn signature(&self, batch_shape: &[usize]) -> u64 {
        let mut h = DefaultHasher::new();
        batch_shape.hash(&mut h);
        for spec in self.specs() {
            format!("{spec:?}").hash(&mut h);
        }
        h.finish()
    }

    pub fn forward(&self, batch: &Tensor<T>, mode: Mode) -> Result<Activations<T>, NnError> {
        if batch.sample_shape() != self.input_shape.as_slice() {
            let mut expected = vec![batch.batch()];
            expected.extend_from_slice(&self.input_shape);
            return Err(NnError::ShapeMismatch {
                expected,
                found: batch.shape().to_vec(),
            });
        }
        let n = batch.batch();
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        let mut caches = Vec::with_capacity(self.layers.len());
        values.push(batch.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            let x = values.last().expect("non-empty");
            let in_shape = x.sample_shape().to_vec();
            let out_sample = layer.spec().output_shape(&in_shape)?;
            let mut shape = vec![n];
            shape.extend_from_slice(&out_sample);
            let len: usize = shape.iter().product();
            let mut out = vec![T::zero(); len];
            let cache = match layer {
                Layer::Dense(d) => {
                    d.forward(x.data(), n, &mut out);
                    Cache::None
                }
                Layer::Conv2d(c) => {
                    c.forward(x.data(), n, in_shape[0], in_shape[1], &mut out);
                    Cache::None
                }
                Layer::Relu => {
                    for (o, v) in out.iter_mut().zip(x.data()) {
                        *o = if *v > T::zero() { *v } else { T::zero() };
                    }
                    Cache::Relu
                }
                Layer::Dropout { rate } => match mode {
                    Mode::Train { seed } if *rate > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, li as u64 + 1));
                        let scale = T::lit(1.0 / (1.0 - *rate as f64));
                        let mut keep = Vec::with_capacity(len);
                        for (o, v) in out.iter_mut().zip(x.data()) {
                            let k = rng.random::<f32>() >= *rate;
                            *o = if k { *v * scale } else { T::zero() };
                            keep.push(k);
                        }
                        Cache::Dropout(keep)
                    }
                    _ => {
                        out.copy_from_slice(x.data());
                        Cache::None
                    }
                },
                Layer::MaxPool2 => {
                    let mut arg = vec![0u32; len];
                    layer::maxpool_forward(
                        x.data(),
                        n,
                        in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        &mut out,
                        &mut arg,
                    );
                    Cache::Pool(arg)
                }
                Layer::Upsample2 => {
                    layer::upsample_forward(
                        x.data(),
                        n,
                        in_shape[0],
                        in_shape[1],
                        in_shape[2],
                        &mut out,
                    );
                    Cache::None
                }
                Layer::Softmax => {
                    let width = *in_shape.last().expect("non-empty shape");
                    layer::softmax_forward(x.data(), width, &mut out);
                    Cache::None
                }
            };
            if out.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite {
                    context: format!("output of layer {li} ({:?})", layer.spec()),
                });
            }
            values.push(Tensor::from_parts(shape, out));
            caches.push(cache);
        }
        Ok(Activations {
            values,
            caches,
            signature: self.signature(batch.shape()),
        })
    }

    /// Inference-mode output only.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(self.forward(batch, Mode::Eval)?.into_output())
    }

    pub fn backward(
        &self,
        acts: &Activations<T>,
        loss_grad: &Tensor<T>,
    ) -> Result<Gradients<T>, NnError> {
        if acts.signature != self.signature(acts.values[0].shape())
            || acts.caches.len() != self.layers.len()
        {
            return Err(NnError::StaleActivations);
        }
        if loss_grad.shape() != acts.output().shape() {
            return Err(NnError::ShapeMismatch {
                expected: acts.output().shape().to_vec(),
                found: loss_grad.shape().to_vec(),
            });
        }
        let n = loss_grad.batch();
        let mut param_grads: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut g = loss_grad.data().to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &acts.values[li];
            let y = &acts.values[li + 1];
            let in_shape = x.sample_shape();
            let mut gx = vec![T::zero(); x.len()];
            let mut pg = Vec::new();
            match layer {
                Layer::Dense(d) => {
                    let mut gw = vec![T::zero(); d.weights.len()];
                    let mut gb = vec![T::zero(); d.bias.len()];
                    d.backward(x.data(), &g, n, &mut gw, &mut gb, &mut gx);
                    pg = vec![gw, gb];
                }
                Layer::Conv2d(c) => {
                    let mut gk = vec![T::zero(); c.kernels.len()];
                    let mut gb = vec![T::zero(); c.bias.len()];
                    c.backward(
                        x.data(),
                        &g,
                        n,
                        in_shape[0],
                        in_shape[1],
                        &mut gk,
                        &mut gb,
                        &mut gx,
                    );
                    pg = vec![gk, gb];
                }
                Layer::Relu => {
                    for ((o, v), gv) in gx.iter_mut().zip(x.data()).zip(&g) {
                        if *v > T::zero() {
                            *o = *gv;
                        }
                    }
                }
                Layer::Dropout { rate } => match &acts.caches[li] {
                    Cache::Dropout(keep) => {
                        let scale = T::lit(1.0 / (1.0 - *rate as f64));
                        for ((o, k), gv) in gx.iter_mut().zip(keep).zip(&g) {
                            if *k {
                                *o = *gv * scale;
                            }
                        }
                    }
                    _ => gx.copy_from_slice(&g),
                },
                Layer::MaxPool2 => {
                    let Cache::Pool(arg) = &acts.caches[li] else {
                        return Err(NnError::StaleActivations);
                    };
                    for (a, gv) in arg.iter().zip(&g) {
                        let a = *a as usize;
                        gx[a] = gx[a] + *gv;
                    }
                }
                Layer::Upsample2 => {
                    layer::upsample_backward(&g, n, in_shape[0], in_shape[1], in_shape[2], &mut gx);
                }
                Layer::Softmax => {
                    let width = *in_shape.last().expect("non-empty shape");
                    layer::softmax_backward(y.data(), &g, width, &mut gx);
                }
            }
            param_grads.push(pg);
            g = gx;
        }
        param_grads.reverse();
        Ok(Gradients {
            params: param_grads.into_iter().flatten().collect(),
            input: Tensor::from_parts(acts.values[0].shape().to_vec(), g),
        })
    }

    fn first_dense(&self) -> Result<&super::layer::Dense<T>, NnError> {
        match self.layers.first() {
            Some(Layer::Dense(d)) => Ok(d),
            _ => Err(NnError::FirstLayerNotDense),
        }
    }

    /// First-layer dense weights, for column-wise inspection.
    pub fn input_layer(&self) -> Result<&super::layer::Dense<T>, NnError> {
        self.first_dense()
    }

    /// Zeroes the first-layer weights leaving input `j`.
    pub fn zero_input_column(&mut self, j: usize) -> Result<(), NnError> {
        let d = match self.layers.first_mut() {
            Some(Layer::Dense(d)) => d,
            _ => return Err(NnError::FirstLayerNotDense),
        };
        if j >= d.inputs {
            return Err(NnError::FeatureIndex {
                index: j,
                inputs: d.inputs,
            });
        }
        for o in 0..d.outputs {
            d.weights[o * d.inputs + j] = T::zero();
        }
        Ok(())
    }

    /// Removes input `j`: drops its first-layer column and shrinks the input by one.
    pub fn drop_input(&self, j: usize) -> Result<Network<T>, NnError> {
        let d = self.first_dense()?;
        if j >= d.inputs {
            return Err(NnError::FeatureIndex {
                index: j,
                inputs: d.inputs,
            });
        }
        if d.inputs == 1 {
            return Err(NnError::InvalidConfig("cannot drop the only input".into()));
        }
        let inputs = d.inputs - 1;
        let mut weights = Vec::with_capacity(inputs * d.outputs);
        for o in 0..d.outputs {
            let row = &d.weights[o * d.inputs..(o + 1) * d.inputs];
            weights.extend_from_slice(&row[..j]);
            weights.extend_from_slice(&row[j + 1..]);
        }
        let mut layers = self.layers.clone();
        layers[0] = Layer::Dense(super::layer::Dense {
            inputs,
            outputs: d.outputs,
            weights,
            bias: d.bias.clone(),
        });
        Ok(Network {
            input_shape: vec![inputs],
            layers,
            seed: self.seed,
        })
    }
}

fn validate(input_shape: &[usize], specs: &[LayerSpec]) -> Result<(), NnError> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(NnError::InvalidShape(input_shape.to_vec()));
    }
    let mut shape = input_shape.to_vec();
    for (i, spec) in specs.iter().enumerate() {
        if *spec == LayerSpec::Softmax && i + 1 != specs.len() {
            return Err(NnError::InvalidConfig(
                "softmax is only allowed as the terminal layer".into(),
            ));
        }
        shape = spec.output_shape(&shape)?;
    }
    Ok(())
}

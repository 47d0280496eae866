use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::layers::{Cache, Layer, LayerKind, Mode};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameter gradients, one entry per layer in [`Layer::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub per_layer: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.per_layer.iter().flatten().all(Tensor::is_finite)
    }
}

/// Forward caches of one pass together with the parameter versions they were
/// computed against.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
    versions: Vec<u64>,
}

/// A feed-forward stack of layers.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    versions: Vec<u64>,
}

fn layer_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        let versions = vec![0; layers.len()];
        Self { layers, versions }
    }

    pub fn from_kinds(kinds: &[LayerKind], rng: &mut impl Rng) -> Result<Self> {
        let layers = kinds.iter().map(|&k| Layer::from_kind(k, rng)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(layers))
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to one layer. Any forward trace recorded before this
    /// call becomes stale for that layer.
    pub fn layer_mut(&mut self, index: usize) -> &mut Layer<T> {
        self.versions[index] += 1;
        &mut self.layers[index]
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(Layer::kind).collect()
    }

    /// Number of trainable scalars (conv/linear weights and biases, batch-norm
    /// scale and shift).
    pub fn count_params(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(Tensor::len).sum()
    }

    /// Shape after the last layer, `None` if some layer cannot be applied.
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        self.layers.iter().try_fold(input.to_vec(), |shape, l| l.output_shape(&shape))
    }

    /// Per-sample multiply-accumulates of a forward pass; `input` is a full
    /// `[batch, channels, height, width]` shape.
    pub fn forward_macs(&self, input: &[usize]) -> u64 {
        let mut shape = input.to_vec();
        let mut total = 0;
        for l in &self.layers {
            total += l.forward_macs(&shape);
            match l.output_shape(&shape) {
                Some(s) => shape = s,
                None => break,
            }
        }
        total
    }

    /// Full forward pass. In train mode batch-norm running statistics are
    /// updated and dropout masks are drawn from `seed`.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, Trace<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (out, cache) = layer.forward(&h, mode, layer_seed(seed, i))?;
            if let (Layer::BatchNorm2d(bn), Mode::Train) = (&mut *layer, mode) {
                bn.update_running(&cache);
            }
            caches.push(cache);
            h = out;
        }
        Ok((
            h,
            Trace {
                caches,
                versions: self.versions.clone(),
            },
        ))
    }

    /// Eval-mode forward; takes `&self` and has no side effects.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, Mode::Eval, 0)?.0;
        }
        Ok(h)
    }

    /// Backpropagates `grad` (gradient w.r.t. the network output) through a
    /// trace recorded by [`Sequential::forward`].
    pub fn backward(&self, grad: &Tensor<T>, trace: &Trace<T>) -> Result<(Tensor<T>, Gradients<T>)> {
        if trace.caches.len() != self.layers.len() {
            return Err(Error::StaleCache {
                layer: 0,
                detail: format!("trace has {} caches for {} layers", trace.caches.len(), self.layers.len()),
            });
        }
        for (i, (a, b)) in trace.versions.iter().zip(&self.versions).enumerate() {
            if a != b {
                return Err(Error::StaleCache {
                    layer: i,
                    detail: format!("parameters changed since forward (version {} -> {})", a, b),
                });
            }
        }
        let mut per_layer = vec![Vec::new(); self.layers.len()];
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (dx, pg) = layer.backward(&g, &trace.caches[i])?;
            per_layer[i] = pg;
            g = dx;
        }
        Ok((g, Gradients { per_layer }))
    }

    /// Plain SGD: `param -= lr * grad`. No momentum, no weight decay.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        if grads.per_layer.len() != self.layers.len() {
            return Err(dim_err("sgd", "gradient layer count mismatch"));
        }
        for (i, (layer, lg)) in self.layers.iter_mut().zip(&grads.per_layer).enumerate() {
            let params = layer.params_mut();
            if params.len() != lg.len() {
                return Err(dim_err("sgd_step", format!("layer {}: gradient tensor count mismatch", i)));
            }
            for (p, g) in params.into_iter().zip(lg) {
                if p.shape() != g.shape() {
                    return Err(dim_err("sgd_step", format!("layer {}: {:?} vs {:?}", i, p.shape(), g.shape())));
                }
                for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
                    *v = *v - lr * d;
                }
            }
            if !lg.is_empty() {
                self.versions[i] += 1;
            }
        }
        Ok(())
    }

    /// Converts every parameter and running statistic to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        let conv = |t: &Tensor<T>| t.map(|v| U::from_f64_lossy(v.to_f64().unwrap()));
        let convv = |v: &[T]| v.iter().map(|x| U::from_f64_lossy(x.to_f64().unwrap())).collect();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(crate::layers::Conv2d {
                    in_channels: c.in_channels,
                    out_channels: c.out_channels,
                    kernel: c.kernel,
                    stride: c.stride,
                    padding: c.padding,
                    weight: conv(&c.weight),
                    bias: conv(&c.bias),
                }),
                Layer::BatchNorm2d(bn) => Layer::BatchNorm2d(crate::layers::BatchNorm2d {
                    channels: bn.channels,
                    eps: bn.eps,
                    momentum: bn.momentum,
                    gamma: conv(&bn.gamma),
                    beta: conv(&bn.beta),
                    running_mean: convv(&bn.running_mean),
                    running_var: convv(&bn.running_var),
                }),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d { kernel, stride } => Layer::MaxPool2d {
                    kernel: *kernel,
                    stride: *stride,
                },
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Linear(lin) => Layer::Linear(crate::layers::Linear {
                    in_features: lin.in_features,
                    out_features: lin.out_features,
                    weight: conv(&lin.weight),
                    bias: conv(&lin.bias),
                }),
                Layer::Dropout { rate } => Layer::Dropout { rate: *rate },
            })
            .collect();
        Sequential::new(layers)
    }

    /// Bitwise comparison of architecture, parameters and running statistics.
    pub fn same_state(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

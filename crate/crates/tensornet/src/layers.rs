//! Layer implementations with explicit forward caches and backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values saved by a forward call and consumed by the matching backward call.
#[derive(Debug, Clone)]
pub enum Cache<T> {
    Conv {
        input: Tensor<T>,
        out_shape: Vec<usize>,
    },
    BatchNorm {
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: Mode,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    Relu {
        output: Tensor<T>,
    },
    MaxPool {
        input_shape: Vec<usize>,
        out_shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        input_shape: Vec<usize>,
    },
    Linear {
        input: Tensor<T>,
    },
    Dropout {
        shape: Vec<usize>,
        mask: Option<Vec<T>>,
    },
}

fn check_grad_shape(layer: &str, grad: &[usize], expected: &[usize]) -> Result<()> {
    if grad != expected {
        return Err(dim_err(
            layer,
            format!("gradient shape {:?} does not match forward output {:?}", grad, expected),
        ));
    }
    Ok(())
}

/// He-uniform bound `sqrt(6 / fan_in)`, the ReLU-gain fan-in scaling.
fn he_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

fn bias_uniform<T: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

fn uniform<T: Scalar>(shape: Vec<usize>, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..bound)))
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out, in, k, k)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output length of a strided window sweep, `None` if the window never fits.
pub fn sweep_len(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel == 0 || stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl<T: Scalar> Conv2d<T> {
    /// Zero padding of `kernel / 2`. Weights are He-uniform, biases uniform
    /// in `±1/sqrt(fan_in)`.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            weight: he_uniform(vec![out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: bias_uniform(vec![out_channels], fan_in, rng),
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            sweep_len(h, self.padding, self.kernel, self.stride)?,
            sweep_len(w, self.padding, self.kernel, self.stride)?,
        ))
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize, usize, usize)> {
        let (b, c, h, w) = x.dims4("conv2d")?;
        if c != self.in_channels {
            return Err(dim_err("conv2d", format!("expected {} input channels, got {}", self.in_channels, c)));
        }
        let (ho, wo) = self
            .output_hw(h, w)
            .ok_or_else(|| dim_err("conv2d", format!("{}x{} input smaller than kernel {}", h, w, self.kernel)))?;
        Ok((b, c, h, w, ho, wo))
    }

    #[allow(clippy::too_many_arguments)]
    fn im2col(&self, x: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize, col: &mut [T]) {
        let k = self.kernel;
        let p = ho * wo;
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn col2im(&self, col: &[T], c: usize, h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let k = self.kernel;
        let p = ho * wo;
        for ci in 0..c {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((ci * k + ky) * k + kx) * p..][..p];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let (b, c, h, w, ho, wo) = self.geometry(x)?;
        let p = ho * wo;
        let ckk = c * self.kernel * self.kernel;
        let oc = self.out_channels;
        let mut out = vec![T::zero(); b * oc * p];
        out.par_chunks_mut(oc * p).enumerate().for_each(|(i, y)| {
            let mut col = vec![T::zero(); ckk * p];
            self.im2col(x.sample(i), c, h, w, ho, wo, &mut col);
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.fill(self.bias.data()[o]);
            }
            T::gemm(
                oc,
                ckk,
                p,
                T::one(),
                self.weight.data(),
                ckk as isize,
                1,
                &col,
                p as isize,
                1,
                T::one(),
                y,
                p as isize,
                1,
            );
        });
        let out_shape = vec![b, oc, ho, wo];
        let y = Tensor::new(out_shape.clone(), out)?;
        Ok((
            y,
            Cache::Conv {
                input: x.clone(),
                out_shape,
            },
        ))
    }

    /// Returns `(dx, [dweight, dbias])`.
    pub fn backward(&self, grad: &Tensor<T>, cache: &Cache<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let Cache::Conv { input, out_shape } = cache else {
            return Err(dim_err("conv2d", "cache was not produced by a convolution"));
        };
        check_grad_shape("conv2d", grad.shape(), out_shape)?;
        let (b, c, h, w, ho, wo) = self.geometry(input)?;
        let p = ho * wo;
        let ckk = c * self.kernel * self.kernel;
        let oc = self.out_channels;

        let per_sample: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let g = grad.sample(i);
                let mut col = vec![T::zero(); ckk * p];
                self.im2col(input.sample(i), c, h, w, ho, wo, &mut col);
                let mut dw = vec![T::zero(); oc * ckk];
                // dW = g (oc x p) * col^T (p x ckk)
                T::gemm(oc, p, ckk, T::one(), g, p as isize, 1, &col, 1, p as isize, T::zero(), &mut dw, ckk as isize, 1);
                // dcol = W^T (ckk x oc) * g (oc x p)
                let mut dcol = vec![T::zero(); ckk * p];
                T::gemm(
                    ckk,
                    oc,
                    p,
                    T::one(),
                    self.weight.data(),
                    1,
                    ckk as isize,
                    g,
                    p as isize,
                    1,
                    T::zero(),
                    &mut dcol,
                    p as isize,
                    1,
                );
                let mut dx = vec![T::zero(); c * h * w];
                self.col2im(&dcol, c, h, w, ho, wo, &mut dx);
                let db: Vec<T> = g.chunks(p).map(|row| row.iter().copied().sum()).collect();
                (dx, dw, db)
            })
            .collect();

        let mut dx = Vec::with_capacity(b * c * h * w);
        let mut dw = vec![T::zero(); oc * ckk];
        let mut db = vec![T::zero(); oc];
        for (sdx, sdw, sdb) in per_sample {
            dx.extend_from_slice(&sdx);
            for (a, v) in dw.iter_mut().zip(sdw) {
                *a = *a + v;
            }
            for (a, v) in db.iter_mut().zip(sdb) {
                *a = *a + v;
            }
        }
        Ok((
            Tensor::new(vec![b, c, h, w], dx)?,
            vec![
                Tensor::new(self.weight.shape().to_vec(), dw)?,
                Tensor::new(vec![oc], db)?,
            ],
        ))
    }
}

// ---------------------------------------------------------------------------
// Batch normalization

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
            gamma: Tensor::from_fn(vec![channels], |_| T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    /// Normalizes with batch statistics in train mode and running statistics
    /// in eval mode. Running statistics are *not* touched here; see
    /// [`BatchNorm2d::forward_train`] and [`BatchNorm2d::update_running`].
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, Cache<T>)> {
        let (b, c, h, w) = x.dims4("batchnorm2d")?;
        if c != self.channels {
            return Err(dim_err("batchnorm2d", format!("expected {} channels, got {}", self.channels, c)));
        }
        if mode == Mode::Train && b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let hw = h * w;
        let count = (b * hw) as f64;
        let xd = x.data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        let inv_std: Vec<f64> = match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..b {
                        s += xd[(i * c + ch) * hw..][..hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                    }
                    mean[ch] = s / count;
                    let mut ss = 0.0;
                    for i in 0..b {
                        ss += xd[(i * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| {
                                let d = v.to_f64().unwrap() - mean[ch];
                                d * d
                            })
                            .sum::<f64>();
                    }
                    var[ch] = ss / count;
                }
                var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
            }
            Mode::Eval => {
                for ch in 0..c {
                    mean[ch] = self.running_mean[ch].to_f64().unwrap();
                    var[ch] = self.running_var[ch].to_f64().unwrap();
                }
                var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect()
            }
        };
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for i in 0..b {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let m = T::from_f64_lossy(mean[ch]);
                let is = T::from_f64_lossy(inv_std[ch]);
                let g = self.gamma.data()[ch];
                let be = self.beta.data()[ch];
                for j in off..off + hw {
                    let xh = (xd[j] - m) * is;
                    xhat[j] = xh;
                    y[j] = g * xh + be;
                }
            }
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::new(shape.clone(), y)?,
            Cache::BatchNorm {
                xhat: Tensor::new(shape, xhat)?,
                inv_std: inv_std.into_iter().map(T::from_f64_lossy).collect(),
                mode,
                batch_mean: mean,
                batch_var: var,
            },
        ))
    }

    /// Folds the batch statistics of a train-mode cache into the running
    /// estimates: `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running(&mut self, cache: &Cache<T>) {
        if let Cache::BatchNorm {
            mode: Mode::Train,
            batch_mean,
            batch_var,
            ..
        } = cache
        {
            let m = self.momentum;
            for ch in 0..self.channels {
                let rm = self.running_mean[ch].to_f64().unwrap();
                let rv = self.running_var[ch].to_f64().unwrap();
                self.running_mean[ch] = T::from_f64_lossy((1.0 - m) * rm + m * batch_mean[ch]);
                self.running_var[ch] = T::from_f64_lossy((1.0 - m) * rv + m * batch_var[ch]);
            }
        }
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let (y, cache) = self.forward(x, Mode::Train)?;
        self.update_running(&cache);
        Ok((y, cache))
    }

    /// Returns `(dx, [dgamma, dbeta])`.
    pub fn backward(&self, grad: &Tensor<T>, cache: &Cache<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let Cache::BatchNorm { xhat, inv_std, mode, .. } = cache else {
            return Err(dim_err("batchnorm2d", "cache was not produced by batch normalization"));
        };
        check_grad_shape("batchnorm2d", grad.shape(), xhat.shape())?;
        let (b, c, h, w) = xhat.dims4("batchnorm2d")?;
        let hw = h * w;
        let n = T::from_usize(b * hw).unwrap();
        let g = grad.data();
        let xh = xhat.data();
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for i in 0..b {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dgamma[ch] = dgamma[ch] + g[j] * xh[j];
                    dbeta[ch] = dbeta[ch] + g[j];
                }
            }
        }
        let mut dx = vec![T::zero(); g.len()];
        for ch in 0..c {
            let gam = self.gamma.data()[ch];
            let is = inv_std[ch];
            for i in 0..b {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx[j] = match mode {
                        // dxhat = g * gamma; dx = is/n * (n*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                        Mode::Train => gam * is / n * (n * g[j] - dbeta[ch] - xh[j] * dgamma[ch]),
                        Mode::Eval => g[j] * gam * is,
                    };
                }
            }
        }
        Ok((
            Tensor::new(xhat.shape().to_vec(), dx)?,
            vec![Tensor::new(vec![c], dgamma)?, Tensor::new(vec![c], dbeta)?],
        ))
    }
}

// ---------------------------------------------------------------------------
// Stateless layers

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Cache<T>) {
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y.clone(), Cache::Relu { output: y })
}

pub fn relu_backward<T: Scalar>(grad: &Tensor<T>, cache: &Cache<T>) -> Result<Tensor<T>> {
    let Cache::Relu { output } = cache else {
        return Err(dim_err("relu", "cache was not produced by relu"));
    };
    check_grad_shape("relu", grad.shape(), output.shape())?;
    let data = grad
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(grad.shape().to_vec(), data)
}

/// Windowed max without padding. Ties go to the lowest linear index.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Tensor<T>, Cache<T>)> {
    let (b, c, h, w) = x.dims4("maxpool2d")?;
    let (ho, wo) = match (sweep_len(h, 0, kernel, stride), sweep_len(w, 0, kernel, stride)) {
        (Some(ho), Some(wo)) => (ho, wo),
        _ => {
            return Err(dim_err(
                "maxpool2d",
                format!("{}x{} input smaller than pool kernel {}", h, w, kernel),
            ))
        }
    };
    let xd = x.data();
    let mut y = Vec::with_capacity(b * c * ho * wo);
    let mut argmax = Vec::with_capacity(b * c * ho * wo);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                y.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let out_shape = vec![b, c, ho, wo];
    Ok((
        Tensor::new(out_shape.clone(), y)?,
        Cache::MaxPool {
            input_shape: x.shape().to_vec(),
            out_shape,
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(grad: &Tensor<T>, cache: &Cache<T>) -> Result<Tensor<T>> {
    let Cache::MaxPool {
        input_shape,
        out_shape,
        argmax,
    } = cache
    else {
        return Err(dim_err("maxpool2d", "cache was not produced by max pooling"));
    };
    check_grad_shape("maxpool2d", grad.shape(), out_shape)?;
    let mut dx = Tensor::zeros(input_shape.clone());
    let d = dx.data_mut();
    for (&g, &idx) in grad.data().iter().zip(argmax) {
        d[idx] = d[idx] + g;
    }
    Ok(dx)
}

/// Mean over the spatial axes: `(b, c, h, w) -> (b, c)`.
pub fn global_avg_pool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
    let (b, c, h, w) = x.dims4("global_avg_pool")?;
    let hw = h * w;
    let scale = T::one() / T::from_usize(hw).unwrap();
    let y: Vec<T> = x
        .data()
        .chunks(hw)
        .map(|plane| plane.iter().copied().sum::<T>() * scale)
        .collect();
    Ok((
        Tensor::new(vec![b, c], y)?,
        Cache::GlobalAvgPool {
            input_shape: x.shape().to_vec(),
        },
    ))
}

pub fn global_avg_pool_backward<T: Scalar>(grad: &Tensor<T>, cache: &Cache<T>) -> Result<Tensor<T>> {
    let Cache::GlobalAvgPool { input_shape } = cache else {
        return Err(dim_err("global_avg_pool", "cache was not produced by global average pooling"));
    };
    check_grad_shape("global_avg_pool", grad.shape(), &input_shape[..2])?;
    let hw = input_shape[2] * input_shape[3];
    let scale = T::one() / T::from_usize(hw).unwrap();
    let mut data = Vec::with_capacity(grad.len() * hw);
    for &g in grad.data() {
        data.extend(std::iter::repeat_n(g * scale, hw));
    }
    Tensor::new(input_shape.clone(), data)
}

/// Inverted dropout: survivors are scaled by `1 / (1 - rate)` so eval mode is
/// the identity. The mask is a pure function of `seed`.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, rate: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, Cache<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidParameter(format!("dropout rate {} outside [0, 1)", rate)));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((
            x.clone(),
            Cache::Dropout {
                shape: x.shape().to_vec(),
                mask: None,
            },
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64_lossy(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { scale })
        .collect();
    let y = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        Cache::Dropout {
            shape: x.shape().to_vec(),
            mask: Some(mask),
        },
    ))
}

pub fn dropout_backward<T: Scalar>(grad: &Tensor<T>, cache: &Cache<T>) -> Result<Tensor<T>> {
    let Cache::Dropout { shape, mask } = cache else {
        return Err(dim_err("dropout", "cache was not produced by dropout"));
    };
    check_grad_shape("dropout", grad.shape(), shape)?;
    match mask {
        None => Ok(grad.clone()),
        Some(mask) => Tensor::new(shape.clone(), grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect()),
    }
}

// ---------------------------------------------------------------------------
// Fully connected

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `(out, in)`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: he_uniform(vec![out_features, in_features], in_features, rng),
            bias: bias_uniform(vec![out_features], in_features, rng),
        }
    }

    /// Accepts `(b, in)` or any rank-4 input whose per-sample size is `in`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        let b = x.batch();
        if x.sample_len() != self.in_features {
            return Err(dim_err(
                "linear",
                format!("expected {} input features, got {}", self.in_features, x.sample_len()),
            ));
        }
        let (i, o) = (self.in_features, self.out_features);
        let mut y = Vec::with_capacity(b * o);
        for _ in 0..b {
            y.extend_from_slice(self.bias.data());
        }
        // y = x (b x i) * W^T (i x o)
        T::gemm(b, i, o, T::one(), x.data(), i as isize, 1, self.weight.data(), 1, i as isize, T::one(), &mut y, o as isize, 1);
        Ok((Tensor::new(vec![b, o], y)?, Cache::Linear { input: x.clone() }))
    }

    /// Returns `(dx, [dweight, dbias])`; `dx` has the shape of the forward input.
    pub fn backward(&self, grad: &Tensor<T>, cache: &Cache<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let Cache::Linear { input } = cache else {
            return Err(dim_err("linear", "cache was not produced by a linear layer"));
        };
        let b = input.batch();
        let (i, o) = (self.in_features, self.out_features);
        check_grad_shape("linear", grad.shape(), &[b, o])?;
        let g = grad.data();
        let mut dw = vec![T::zero(); o * i];
        T::gemm(o, b, i, T::one(), g, 1, o as isize, input.data(), i as isize, 1, T::zero(), &mut dw, i as isize, 1);
        let mut dx = vec![T::zero(); b * i];
        T::gemm(b, o, i, T::one(), g, o as isize, 1, self.weight.data(), i as isize, 1, T::zero(), &mut dx, i as isize, 1);
        let mut db = vec![T::zero(); o];
        for row in g.chunks(o) {
            for (a, &v) in db.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        Ok((
            Tensor::new(input.shape().to_vec(), dx)?,
            vec![Tensor::new(vec![o, i], dw)?, Tensor::new(vec![o], db)?],
        ))
    }
}

// ---------------------------------------------------------------------------

/// Descriptor of a layer without its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm2d {
        channels: usize,
    },
    Relu,
    MaxPool2d {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    Relu,
    MaxPool2d { kernel: usize, stride: usize },
    GlobalAvgPool,
    Linear(Linear<T>),
    Dropout { rate: f64 },
}

impl<T: Scalar> Layer<T> {
    pub fn from_kind(kind: LayerKind, rng: &mut impl Rng) -> Result<Self> {
        Ok(match kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::InvalidParameter("conv kernel and stride must be positive".into()));
                }
                Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, stride, rng))
            }
            LayerKind::BatchNorm2d { channels } => Layer::BatchNorm2d(BatchNorm2d::new(channels)),
            LayerKind::Relu => Layer::Relu,
            LayerKind::MaxPool2d { kernel, stride } => {
                if kernel == 0 || stride == 0 {
                    return Err(Error::InvalidParameter("pool kernel and stride must be positive".into()));
                }
                Layer::MaxPool2d { kernel, stride }
            }
            LayerKind::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerKind::Linear {
                in_features,
                out_features,
            } => Layer::Linear(Linear::new(in_features, out_features, rng)),
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::InvalidParameter(format!("dropout rate {} outside [0, 1)", rate)));
                }
                Layer::Dropout { rate }
            }
        })
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv2d(c) => LayerKind::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            },
            Layer::BatchNorm2d(bn) => LayerKind::BatchNorm2d { channels: bn.channels },
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d { kernel, stride } => LayerKind::MaxPool2d {
                kernel: *kernel,
                stride: *stride,
            },
            Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
            Layer::Linear(l) => LayerKind::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
            },
            Layer::Dropout { rate } => LayerKind::Dropout { rate: *rate },
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::Linear(_) => "linear",
            Layer::Dropout { .. } => "dropout",
        }
    }

    /// Trainable tensors in a fixed order (weight/bias or gamma/beta).
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm2d(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm2d(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            _ => Vec::new(),
        }
    }

    /// Output shape for a given input shape, `None` when the layer cannot be
    /// applied (window larger than input, feature mismatch).
    pub fn output_shape(&self, input: &[usize]) -> Option<Vec<usize>> {
        match (self, input) {
            (Layer::Conv2d(c), &[b, ch, h, w]) if ch == c.in_channels => {
                let (ho, wo) = c.output_hw(h, w)?;
                Some(vec![b, c.out_channels, ho, wo])
            }
            (Layer::BatchNorm2d(bn), &[_, ch, _, _]) if ch == bn.channels => Some(input.to_vec()),
            (Layer::Relu, _) | (Layer::Dropout { .. }, _) => Some(input.to_vec()),
            (Layer::MaxPool2d { kernel, stride }, &[b, ch, h, w]) => {
                Some(vec![b, ch, sweep_len(h, 0, *kernel, *stride)?, sweep_len(w, 0, *kernel, *stride)?])
            }
            (Layer::GlobalAvgPool, &[b, ch, _, _]) => Some(vec![b, ch]),
            (Layer::Linear(l), _) if input[1..].iter().product::<usize>() == l.in_features => {
                Some(vec![input[0], l.out_features])
            }
            _ => None,
        }
    }

    /// Multiply-accumulate count of one forward pass for a single sample.
    pub fn forward_macs(&self, input: &[usize]) -> u64 {
        match (self, self.output_shape(input)) {
            (Layer::Conv2d(c), Some(out)) => {
                (out[1] * out[2] * out[3] * c.in_channels * c.kernel * c.kernel) as u64
            }
            (Layer::Linear(l), Some(_)) => (l.in_features * l.out_features) as u64,
            _ => 0,
        }
    }

    /// Forward without touching any layer state. `seed` drives dropout.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, seed: u64) -> Result<(Tensor<T>, Cache<T>)> {
        match self {
            Layer::Conv2d(c) => c.forward(x),
            Layer::BatchNorm2d(bn) => bn.forward(x, mode),
            Layer::Relu => Ok(relu_forward(x)),
            Layer::MaxPool2d { kernel, stride } => maxpool_forward(x, *kernel, *stride),
            Layer::GlobalAvgPool => global_avg_pool_forward(x),
            Layer::Linear(l) => l.forward(x),
            Layer::Dropout { rate } => dropout_forward(x, *rate, mode, seed),
        }
    }

    /// Returns the input gradient and the parameter gradients (same order as
    /// [`Layer::params`]).
    pub fn backward(&self, grad: &Tensor<T>, cache: &Cache<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        match self {
            Layer::Conv2d(c) => c.backward(grad, cache),
            Layer::BatchNorm2d(bn) => bn.backward(grad, cache),
            Layer::Relu => Ok((relu_backward(grad, cache)?, Vec::new())),
            Layer::MaxPool2d { .. } => Ok((maxpool_backward(grad, cache)?, Vec::new())),
            Layer::GlobalAvgPool => Ok((global_avg_pool_backward(grad, cache)?, Vec::new())),
            Layer::Linear(l) => l.backward(grad, cache),
            Layer::Dropout { .. } => Ok((dropout_backward(grad, cache)?, Vec::new())),
        }
    }
}

//! Layer kernels with explicit backward passes.
//!
//! Activations are `(batch, channels, height, width)`; dense layers see
//! `(batch, features, 1, 1)`. Per-example work in the convolution runs
//! through [`crate::exec`], and per-example weight gradients are summed in
//! example order so results do not depend on the thread count.

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Ix1, Ix2};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerSpec, Shape};
use crate::exec;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `(out_channels, in_channels * kernel * kernel)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv {
    pub fn padding(&self) -> usize {
        self.kernel / 2
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.padding();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(units, inputs)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv),
    Mfm,
    MaxPool { size: usize },
    BatchNorm(BatchNorm),
    Flatten,
    Dense(Dense),
    Dropout { p: f64 },
}

/// Whatever a layer needs from its forward pass to run backward.
#[derive(Debug)]
pub enum Cache {
    None,
    Conv { cols: Vec<Array2<f64>>, in_shape: [usize; 4] },
    Mfm { first_won: Vec<bool>, in_shape: [usize; 4] },
    MaxPool { argmax: Vec<usize>, in_shape: [usize; 4] },
    BatchNorm { xhat: Array4<f64>, inv_std: Array1<f64>, mean: Array1<f64>, var: Array1<f64> },
    Flatten { in_shape: [usize; 4] },
    Dense { input: Array2<f64> },
    Dropout { mask: Array4<f64> },
}

fn dims(x: &Array4<f64>) -> [usize; 4] {
    let (n, c, h, w) = x.dim();
    [n, c, h, w]
}

impl Layer {
    /// Builds a layer for an input of `shape`; weights start at zero,
    /// batch norm at the identity.
    pub fn zeros(spec: &LayerSpec, shape: Shape) -> Layer {
        let (c, h, w) = shape;
        match *spec {
            LayerSpec::Conv { out_channels, kernel, stride } => Layer::Conv(Conv {
                weight: Array2::zeros((out_channels, c * kernel * kernel)),
                bias: Array1::zeros(out_channels),
                in_channels: c,
                kernel,
                stride,
            }),
            LayerSpec::Mfm => Layer::Mfm,
            LayerSpec::MaxPool { size } => Layer::MaxPool { size },
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm {
                gamma: Array1::ones(c),
                beta: Array1::zeros(c),
                running_mean: Array1::zeros(c),
                running_var: Array1::ones(c),
            }),
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { units } => Layer::Dense(Dense {
                weight: Array2::zeros((units, c * h * w)),
                bias: Array1::zeros(units),
            }),
            LayerSpec::Dropout { p } => Layer::Dropout { p },
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let weight = match self {
            Layer::Conv(c) => &mut c.weight,
            Layer::Dense(d) => &mut d.weight,
            _ => return,
        };
        let bound = (6.0 / weight.ncols() as f64).sqrt();
        weight.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
    }

    /// Trainable tensors, in a fixed order.
    pub fn params(&self) -> Vec<ArrayViewD<'_, f64>> {
        match self {
            Layer::Conv(c) => vec![c.weight.view().into_dyn(), c.bias.view().into_dyn()],
            Layer::Dense(d) => vec![d.weight.view().into_dyn(), d.bias.view().into_dyn()],
            Layer::BatchNorm(b) => vec![b.gamma.view().into_dyn(), b.beta.view().into_dyn()],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        match self {
            Layer::Conv(c) => vec![c.weight.view_mut().into_dyn(), c.bias.view_mut().into_dyn()],
            Layer::Dense(d) => vec![d.weight.view_mut().into_dyn(), d.bias.view_mut().into_dyn()],
            Layer::BatchNorm(b) => vec![b.gamma.view_mut().into_dyn(), b.beta.view_mut().into_dyn()],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved with the model.
    pub fn buffers_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        match self {
            Layer::BatchNorm(b) => vec![
                b.running_mean.view_mut().into_dyn(),
                b.running_var.view_mut().into_dyn(),
            ],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&self) -> Vec<ArrayD<f64>> {
        self.params().iter().map(|p| ArrayD::zeros(p.raw_dim())).collect()
    }

    /// `rng` is `Some` in training mode: batch norm then uses batch
    /// statistics, dropout samples a mask, and a backward cache is returned.
    pub fn forward(&self, x: &Array4<f64>, rng: Option<&mut ChaCha8Rng>) -> (Array4<f64>, Cache) {
        let train = rng.is_some();
        match self {
            Layer::Conv(conv) => conv_forward(conv, x, train),
            Layer::Mfm => mfm_forward(x, train),
            Layer::MaxPool { size } => maxpool_forward(x, *size, train),
            Layer::BatchNorm(bn) => batchnorm_forward(bn, x, train),
            Layer::Flatten => {
                let [n, c, h, w] = dims(x);
                let y = x
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((n, c * h * w, 1, 1))
                    .expect("flatten reshape");
                let cache = if train { Cache::Flatten { in_shape: [n, c, h, w] } } else { Cache::None };
                (y, cache)
            }
            Layer::Dense(d) => dense_forward(d, x, train),
            Layer::Dropout { p } => match rng {
                Some(rng) if *p > 0.0 => {
                    let keep = 1.0 - p;
                    let mask = x.mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
                    (x * &mask, Cache::Dropout { mask })
                }
                _ => (x.clone(), Cache::None),
            },
        }
    }

    /// Gradient with respect to the input; parameter gradients are added
    /// into `grads` (same order as [`Layer::params`]).
    pub fn backward(&self, cache: &Cache, dy: &Array4<f64>, grads: &mut [ArrayD<f64>]) -> Array4<f64> {
        match (self, cache) {
            (Layer::Conv(conv), Cache::Conv { cols, in_shape }) => {
                conv_backward(conv, cols, *in_shape, dy, grads)
            }
            (Layer::Mfm, Cache::Mfm { first_won, in_shape }) => mfm_backward(first_won, *in_shape, dy),
            (Layer::MaxPool { .. }, Cache::MaxPool { argmax, in_shape }) => {
                let mut dx = Array4::zeros(to_tuple(*in_shape));
                let flat = dx.as_slice_mut().expect("standard layout");
                for (&i, &g) in argmax.iter().zip(dy.iter()) {
                    flat[i] += g;
                }
                dx
            }
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std, .. }) => {
                batchnorm_backward(bn, xhat, inv_std, dy, grads)
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => dy
                .as_standard_layout()
                .into_owned()
                .into_shape_with_order(to_tuple(*in_shape))
                .expect("unflatten reshape"),
            (Layer::Dense(d), Cache::Dense { input }) => dense_backward(d, input, dy, grads),
            (Layer::Dropout { .. }, Cache::Dropout { mask }) => dy * mask,
            (Layer::Dropout { .. }, Cache::None) => dy.clone(),
            (layer, cache) => panic!("backward through {layer:?} with cache {cache:?}"),
        }
    }

    /// Folds batch statistics from a training forward pass into the
    /// running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &Cache, batch_elems: usize) {
        if let (Layer::BatchNorm(bn), Cache::BatchNorm { mean, var, .. }) = (self, cache) {
            let unbias = if batch_elems > 1 {
                batch_elems as f64 / (batch_elems - 1) as f64
            } else {
                1.0
            };
            bn.running_mean
                .zip_mut_with(mean, |r, &m| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m);
            bn.running_var
                .zip_mut_with(var, |r, &v| *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias);
        }
    }
}

fn to_tuple(s: [usize; 4]) -> (usize, usize, usize, usize) {
    (s[0], s[1], s[2], s[3])
}

/// Output columns `lo..hi` whose input column `ow + shift` lies in `0..w`.
fn valid_cols(shift: isize, w: usize, wo: usize) -> (usize, usize) {
    let lo = (-shift).clamp(0, wo as isize) as usize;
    let hi = (w as isize - shift).clamp(lo as isize, wo as isize) as usize;
    (lo, hi)
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, conv: &Conv, ho: usize, wo: usize) -> Array2<f64> {
    let k = conv.kernel;
    let pad = conv.padding() as isize;
    let stride = conv.stride as isize;
    let mut cols = Array2::zeros((c * k * k, ho * wo));
    let out = cols.as_slice_mut().expect("fresh array");
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                for oh in 0..ho {
                    let ih = oh as isize * stride + ki as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let dst = &mut out[row + oh * wo..row + (oh + 1) * wo];
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kj as isize - pad, w, wo);
                        let off = (lo as isize + kj as isize - pad) as usize;
                        dst[lo..hi].copy_from_slice(&src[off..off + hi - lo]);
                        continue;
                    }
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = ow as isize * stride + kj as isize - pad;
                        if iw >= 0 && iw < w as isize {
                            *d = src[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, c: usize, h: usize, w: usize, conv: &Conv, ho: usize, wo: usize) -> Vec<f64> {
    let k = conv.kernel;
    let pad = conv.padding() as isize;
    let stride = conv.stride as isize;
    let mut x = vec![0.0; c * h * w];
    let src = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * ho * wo;
                for oh in 0..ho {
                    let ih = oh as isize * stride + ki as isize - pad;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + ih as usize * w;
                    if stride == 1 {
                        let (lo, hi) = valid_cols(kj as isize - pad, w, wo);
                        let off = (lo as isize + kj as isize - pad) as usize;
                        let dst = &mut x[base + off..base + off + hi - lo];
                        let src = &src[row + oh * wo + lo..row + oh * wo + hi];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        continue;
                    }
                    for ow in 0..wo {
                        let iw = ow as isize * stride + kj as isize - pad;
                        if iw >= 0 && iw < w as isize {
                            x[base + iw as usize] += src[row + oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward(conv: &Conv, x: &Array4<f64>, train: bool) -> (Array4<f64>, Cache) {
    let x = x.as_standard_layout();
    let [n, c, h, w] = [x.dim().0, x.dim().1, x.dim().2, x.dim().3];
    assert_eq!(c, conv.in_channels, "conv input channels");
    let (ho, wo) = conv.out_hw(h, w);
    let cout = conv.weight.nrows();
    let flat = x.as_slice().expect("standard layout");
    let per_sample = exec::map_range(n, |i| {
        let cols = im2col(&flat[i * c * h * w..(i + 1) * c * h * w], c, h, w, conv, ho, wo);
        let mut y = conv.weight.dot(&cols);
        for (mut row, &b) in y.axis_iter_mut(Axis(0)).zip(&conv.bias) {
            row += b;
        }
        (y, cols)
    });
    let mut data = Vec::with_capacity(n * cout * ho * wo);
    let mut all_cols = Vec::with_capacity(if train { n } else { 0 });
    for (y, cols) in per_sample {
        data.extend(y.iter());
        if train {
            all_cols.push(cols);
        }
    }
    let y = Array4::from_shape_vec((n, cout, ho, wo), data).expect("conv output shape");
    let cache = if train {
        Cache::Conv { cols: all_cols, in_shape: [n, c, h, w] }
    } else {
        Cache::None
    };
    (y, cache)
}

fn conv_backward(
    conv: &Conv,
    cols: &[Array2<f64>],
    in_shape: [usize; 4],
    dy: &Array4<f64>,
    grads: &mut [ArrayD<f64>],
) -> Array4<f64> {
    let [n, c, h, w] = in_shape;
    let (_, cout, ho, wo) = dy.dim();
    let dy = dy.as_standard_layout();
    let flat = dy.as_slice().expect("standard layout");
    let per_sample = exec::map_range(n, |i| {
        let dy_i = ArrayView2::from_shape((cout, ho * wo), &flat[i * cout * ho * wo..(i + 1) * cout * ho * wo])
            .expect("dy slice");
        let dw = dy_i.dot(&cols[i].t());
        let db = dy_i.sum_axis(Axis(1));
        let dcols = conv.weight.t().dot(&dy_i);
        (dw, db, col2im(&dcols, c, h, w, conv, ho, wo))
    });
    let mut dx = Vec::with_capacity(n * c * h * w);
    {
        let (gw, rest) = grads.split_at_mut(1);
        let mut gw = gw[0].view_mut().into_dimensionality::<Ix2>().expect("conv weight grad");
        let mut gb = rest[0].view_mut().into_dimensionality::<Ix1>().expect("conv bias grad");
        for (dw, db, dx_i) in per_sample {
            gw += &dw;
            gb += &db;
            dx.extend(dx_i);
        }
    }
    Array4::from_shape_vec((n, c, h, w), dx).expect("conv input grad shape")
}

fn mfm_forward(x: &Array4<f64>, train: bool) -> (Array4<f64>, Cache) {
    let x = x.as_standard_layout();
    let (n, c, h, w) = x.dim();
    let block = c / 2 * h * w;
    let src = x.as_slice().expect("standard layout");
    let mut y = Vec::with_capacity(n * block);
    let mut first_won = Vec::with_capacity(if train { n * block } else { 0 });
    for sample in src.chunks_exact(2 * block) {
        let (a, b) = sample.split_at(block);
        for (&a, &b) in a.iter().zip(b) {
            // ties go to the first half
            let first = a >= b;
            y.push(if first { a } else { b });
            if train {
                first_won.push(first);
            }
        }
    }
    let y = Array4::from_shape_vec((n, c / 2, h, w), y).expect("mfm output shape");
    let cache = if train { Cache::Mfm { first_won, in_shape: [n, c, h, w] } } else { Cache::None };
    (y, cache)
}

fn mfm_backward(first_won: &[bool], in_shape: [usize; 4], dy: &Array4<f64>) -> Array4<f64> {
    let [n, c, h, w] = in_shape;
    let block = c / 2 * h * w;
    let dy = dy.as_standard_layout();
    let g = dy.as_slice().expect("standard layout");
    let mut dx = vec![0.0; n * c * h * w];
    for ((out, g), won) in dx
        .chunks_exact_mut(2 * block)
        .zip(g.chunks_exact(block))
        .zip(first_won.chunks_exact(block))
    {
        let (a, b) = out.split_at_mut(block);
        for i in 0..block {
            if won[i] {
                a[i] = g[i];
            } else {
                b[i] = g[i];
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), dx).expect("mfm grad shape")
}

fn maxpool_forward(x: &Array4<f64>, size: usize, train: bool) -> (Array4<f64>, Cache) {
    let x = x.as_standard_layout();
    let (n, c, h, w) = x.dim();
    let (ho, wo) = (h / size, w / size);
    let src = x.as_slice().expect("standard layout");
    let mut y = Array4::zeros((n, c, ho, wo));
    let mut argmax = Vec::with_capacity(if train { y.len() } else { 0 });
    let out = y.as_slice_mut().expect("fresh array");
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = base + oh * size * w + ow * size;
                for di in 0..size {
                    let row = base + (oh * size + di) * w + ow * size;
                    for dj in 0..size {
                        let v = src[row + dj];
                        if v > best {
                            best = v;
                            best_idx = row + dj;
                        }
                    }
                }
                out[o] = best;
                o += 1;
                if train {
                    argmax.push(best_idx);
                }
            }
        }
    }
    let cache = if train { Cache::MaxPool { argmax, in_shape: [n, c, h, w] } } else { Cache::None };
    (y, cache)
}

/// Calls `f(channel, plane)` for every `(sample, channel)` plane.
fn planes(x: &[f64], c: usize, hw: usize) -> impl Iterator<Item = (usize, &[f64])> {
    x.chunks_exact(hw).enumerate().map(move |(i, p)| (i % c, p))
}

fn batchnorm_forward(bn: &BatchNorm, x: &Array4<f64>, train: bool) -> (Array4<f64>, Cache) {
    let x = x.as_standard_layout();
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let src = x.as_slice().expect("standard layout");
    let m = (n * hw) as f64;
    let (mean, var) = if train {
        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for (ch, p) in planes(src, c, hw) {
            mean[ch] += p.iter().sum::<f64>();
        }
        mean /= m;
        for (ch, p) in planes(src, c, hw) {
            let mu = mean[ch];
            var[ch] += p.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
        }
        var /= m;
        (mean, var)
    } else {
        (bn.running_mean.clone(), bn.running_var.clone())
    };
    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut xhat = Vec::with_capacity(src.len());
    let mut y = Vec::with_capacity(src.len());
    for (ch, p) in planes(src, c, hw) {
        let (mu, is, g, b) = (mean[ch], inv_std[ch], bn.gamma[ch], bn.beta[ch]);
        for &v in p {
            let xh = (v - mu) * is;
            xhat.push(xh);
            y.push(g * xh + b);
        }
    }
    let y = Array4::from_shape_vec((n, c, h, w), y).expect("batch norm shape");
    let cache = if train {
        let xhat = Array4::from_shape_vec((n, c, h, w), xhat).expect("batch norm shape");
        Cache::BatchNorm { xhat, inv_std, mean, var }
    } else {
        Cache::None
    };
    (y, cache)
}

fn batchnorm_backward(
    bn: &BatchNorm,
    xhat: &Array4<f64>,
    inv_std: &Array1<f64>,
    dy: &Array4<f64>,
    grads: &mut [ArrayD<f64>],
) -> Array4<f64> {
    let (n, c, h, w) = dy.dim();
    let hw = h * w;
    let m = (n * hw) as f64;
    let dy = dy.as_standard_layout();
    let g = dy.as_slice().expect("standard layout");
    let xh = xhat.as_slice().expect("standard layout");
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for ((ch, gp), (_, xp)) in planes(g, c, hw).zip(planes(xh, c, hw)) {
        dgamma[ch] += gp.iter().zip(xp).map(|(g, x)| g * x).sum::<f64>();
        dbeta[ch] += gp.iter().sum::<f64>();
    }
    for ch in 0..c {
        grads[0][[ch]] += dgamma[ch];
        grads[1][[ch]] += dbeta[ch];
    }
    // with dxhat = gamma * dy:
    // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    let mut dx = Vec::with_capacity(g.len());
    for ((ch, gp), (_, xp)) in planes(g, c, hw).zip(planes(xh, c, hw)) {
        let gamma = bn.gamma[ch];
        let sum_dxhat = gamma * dbeta[ch];
        let sum_dxhat_xhat = gamma * dgamma[ch];
        let k = inv_std[ch] / m;
        dx.extend(
            gp.iter()
                .zip(xp)
                .map(|(&gy, &x)| k * (m * gamma * gy - sum_dxhat - x * sum_dxhat_xhat)),
        );
    }
    Array4::from_shape_vec((n, c, h, w), dx).expect("batch norm grad shape")
}

fn flat2(x: &Array4<f64>) -> Array2<f64> {
    let (n, f, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, f * h * w))
        .expect("dense input reshape")
}

fn dense_forward(d: &Dense, x: &Array4<f64>, train: bool) -> (Array4<f64>, Cache) {
    let input = flat2(x);
    let mut y = input.dot(&d.weight.t());
    y += &d.bias;
    let (n, units) = y.dim();
    let y4 = y.into_shape_with_order((n, units, 1, 1)).expect("dense output reshape");
    let cache = if train { Cache::Dense { input } } else { Cache::None };
    (y4, cache)
}

fn dense_backward(d: &Dense, input: &Array2<f64>, dy: &Array4<f64>, grads: &mut [ArrayD<f64>]) -> Array4<f64> {
    let dy2 = flat2(dy);
    {
        let (gw, rest) = grads.split_at_mut(1);
        let mut gw = gw[0].view_mut().into_dimensionality::<Ix2>().expect("dense weight grad");
        gw += &dy2.t().dot(input);
        let mut gb = rest[0].view_mut().into_dimensionality::<Ix1>().expect("dense bias grad");
        gb += &dy2.sum_axis(Axis(0));
    }
    let dx = dy2.dot(&d.weight);
    let (n, f) = dx.dim();
    dx.into_shape_with_order((n, f, 1, 1)).expect("dense input grad reshape")
}

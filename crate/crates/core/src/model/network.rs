//! Forward and backward passes over a flat parameter vector.
//!
//! Activations are kept channel-major (CHW) per sample; batches arrive as
//! `(N, H, W, C)` tensors and are transposed on entry. Parameter layout per
//! layer, in order:
//!
//! * conv: weights `[out][in][kh][kw]`, then `out` biases
//! * se_gate: squeeze weights `[hidden][C]`, `hidden` biases, excite
//!   weights `[C][hidden]`, `C` biases
//! * dense: weights `[units][inputs]` (CHW flatten order), then `units` biases

use super::config::{layer_parameter_count, Activation, LayerSpec, ModelConfig, Volume};
use super::loss::{loss_and_logit_grad, LossConfig};
use super::{ModelError, Tensor};
use crate::rng::Rng;

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    input: Volume,
    output: Volume,
    offset: usize,
    len: usize,
}

/// Compiled layer stack for one [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Network {
    config: ModelConfig,
    layers: Vec<Layer>,
    param_count: usize,
}

/// Per-layer values kept from the forward pass for backprop.
enum Cache {
    Conv { input: Vec<f64>, output: Vec<f64> },
    Pool { argmax: Vec<usize> },
    Se { input: Vec<f64>, hidden: Vec<f64>, gate: Vec<f64> },
    Dense { input: Vec<f64>, output: Vec<f64> },
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self, ModelError> {
        let vols = config.volumes()?;
        let (h, w, c) = config.input;
        let mut prev = Volume { c, h, w };
        let mut offset = 0;
        let mut layers = Vec::with_capacity(vols.len());
        for (spec, out) in config.layers.iter().zip(vols) {
            let len = layer_parameter_count(spec, prev);
            layers.push(Layer {
                spec: spec.clone(),
                input: prev,
                output: out,
                offset,
                len,
            });
            offset += len;
            prev = out;
        }
        Ok(Network {
            config: config.clone(),
            layers,
            param_count: offset,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.param_count
    }

    /// He-normal weights scaled by `sqrt(2 / fan_in)`, zero biases.
    pub fn init_parameters(&self, rng: &mut Rng) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count];
        for layer in &self.layers {
            let p = &mut params[layer.offset..layer.offset + layer.len];
            match layer.spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    let fan_in = layer.input.c * kernel * kernel;
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in &mut p[..out_channels * fan_in] {
                        *v = rng.normal() * std;
                    }
                }
                LayerSpec::MaxPool { .. } => {}
                LayerSpec::SeGate { reduction_ratio } => {
                    let c = layer.input.c;
                    let hidden = c / reduction_ratio;
                    let s1 = (2.0 / c as f64).sqrt();
                    for v in &mut p[..hidden * c] {
                        *v = rng.normal() * s1;
                    }
                    let s2 = (1.0 / hidden as f64).sqrt();
                    let start = hidden * c + hidden;
                    for v in &mut p[start..start + c * hidden] {
                        *v = rng.normal() * s2;
                    }
                }
                LayerSpec::Dense { units, .. } => {
                    let fan_in = layer.input.len();
                    let std = (2.0 / fan_in as f64).sqrt();
                    for v in &mut p[..units * fan_in] {
                        *v = rng.normal() * std;
                    }
                }
            }
        }
        params
    }

    fn check_params(&self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.param_count {
            return Err(ModelError::Shape(format!(
                "parameter vector has {} values, model needs {}",
                params.len(),
                self.param_count
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, ModelError> {
        let (h, w, c) = self.config.input;
        let shape = batch.shape();
        if shape.len() != 4 || shape[1] != h || shape[2] != w || shape[3] != c {
            return Err(ModelError::Shape(format!(
                "batch shape {shape:?} does not match input (N, {h}, {w}, {c})"
            )));
        }
        Ok(shape[0])
    }

    /// HWC sample to CHW.
    fn to_chw(&self, hwc: &[f64]) -> Vec<f64> {
        let (h, w, c) = self.config.input;
        let mut out = vec![0.0; hwc.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[ch * h * w + y * w + x] = hwc[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    /// Logits `(N, num_classes)` for an `(N, H, W, C)` batch.
    pub fn forward(&self, params: &[f64], batch: &Tensor) -> Result<Tensor, ModelError> {
        self.check_params(params)?;
        let n = self.check_batch(batch)?;
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let (logits, _) = self.forward_sample(params, &self.to_chw(batch.row(i)), false);
            rows.push(logits);
        }
        Tensor::stack(&rows, &[self.config.num_classes])
    }

    fn forward_sample(&self, params: &[f64], input: &[f64], keep: bool) -> (Vec<f64>, Vec<Cache>) {
        let mut x = input.to_vec();
        let mut caches = Vec::with_capacity(if keep { self.layers.len() } else { 0 });
        for layer in &self.layers {
            let p = &params[layer.offset..layer.offset + layer.len];
            let (y, cache) = match layer.spec {
                LayerSpec::Conv {
                    kernel,
                    stride,
                    activation,
                    ..
                } => {
                    let mut y = conv_forward(p, &x, layer.input, layer.output, kernel, stride);
                    if activation == Activation::Relu {
                        relu_inplace(&mut y);
                    }
                    let cache = keep.then(|| Cache::Conv {
                        input: std::mem::take(&mut x),
                        output: y.clone(),
                    });
                    (y, cache)
                }
                LayerSpec::MaxPool { window } => {
                    let (y, argmax) = pool_forward(&x, layer.input, layer.output, window);
                    (y, keep.then_some(Cache::Pool { argmax }))
                }
                LayerSpec::SeGate { reduction_ratio } => {
                    let (y, hidden, gate) = se_forward(p, &x, layer.input, reduction_ratio);
                    let cache = keep.then(|| Cache::Se {
                        input: std::mem::take(&mut x),
                        hidden,
                        gate,
                    });
                    (y, cache)
                }
                LayerSpec::Dense { units, activation } => {
                    let fan_in = layer.input.len();
                    let mut y = p[units * fan_in..].to_vec();
                    for (u, out) in y.iter_mut().enumerate() {
                        let row = &p[u * fan_in..(u + 1) * fan_in];
                        *out += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if activation == Activation::Relu {
                        relu_inplace(&mut y);
                    }
                    let cache = keep.then(|| Cache::Dense {
                        input: std::mem::take(&mut x),
                        output: y.clone(),
                    });
                    (y, cache)
                }
            };
            if let Some(c) = cache {
                caches.push(c);
            }
            x = y;
        }
        (x, caches)
    }

    /// Mean batch loss only.
    pub fn loss(&self, params: &[f64], batch: &Tensor, labels: &[usize], loss: &LossConfig) -> Result<f64, ModelError> {
        let logits = self.forward(params, batch)?;
        self.check_labels(labels, logits.rows())?;
        loss.validate(self.config.num_classes)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| loss_and_logit_grad(logits.row(i), y, loss).0)
            .sum();
        Ok(total / labels.len() as f64)
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<(), ModelError> {
        if labels.len() != n || n == 0 {
            return Err(ModelError::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= self.config.num_classes) {
            return Err(ModelError::Shape(format!("label {l} out of range")));
        }
        Ok(())
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        batch: &Tensor,
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        self.loss_gradient_logits(params, batch, labels, loss)
            .map(|(l, g, _)| (l, g))
    }

    /// As [`Network::loss_and_gradient`], also returning each sample's logits.
    pub(crate) fn loss_gradient_logits(
        &self,
        params: &[f64],
        batch: &Tensor,
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>), ModelError> {
        self.check_params(params)?;
        let n = self.check_batch(batch)?;
        self.check_labels(labels, n)?;
        loss.validate(self.config.num_classes)?;
        let mut grad = vec![0.0; self.param_count];
        let mut total = 0.0;
        let scale = 1.0 / n as f64;
        let mut all_logits = Vec::with_capacity(n);
        for (i, &y) in labels.iter().enumerate() {
            let (logits, caches) = self.forward_sample(params, &self.to_chw(batch.row(i)), true);
            let (l, mut g) = loss_and_logit_grad(&logits, y, loss);
            total += l;
            for v in &mut g {
                *v *= scale;
            }
            self.backward_sample(params, caches, g, &mut grad);
            all_logits.push(logits);
        }
        Ok((total * scale, grad, all_logits))
    }

    fn backward_sample(&self, params: &[f64], caches: Vec<Cache>, mut dy: Vec<f64>, grad: &mut [f64]) {
        for (li, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let p = &params[layer.offset..layer.offset + layer.len];
            let g = &mut grad[layer.offset..layer.offset + layer.len];
            let need_dx = li > 0;
            dy = match (&layer.spec, cache) {
                (
                    LayerSpec::Conv {
                        kernel,
                        stride,
                        activation,
                        ..
                    },
                    Cache::Conv { input, output },
                ) => {
                    if *activation == Activation::Relu {
                        for (d, o) in dy.iter_mut().zip(&output) {
                            if *o <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    conv_backward(p, g, &input, &dy, layer.input, layer.output, *kernel, *stride, need_dx)
                }
                (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                    let mut dx = vec![0.0; layer.input.len()];
                    for (d, &src) in dy.iter().zip(&argmax) {
                        dx[src] += d;
                    }
                    dx
                }
                (LayerSpec::SeGate { reduction_ratio }, Cache::Se { input, hidden, gate }) => {
                    se_backward(p, g, &input, &hidden, &gate, &dy, layer.input, *reduction_ratio)
                }
                (LayerSpec::Dense { units, activation }, Cache::Dense { input, output }) => {
                    if *activation == Activation::Relu {
                        for (d, o) in dy.iter_mut().zip(&output) {
                            if *o <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    let fan_in = layer.input.len();
                    let mut dx = vec![0.0; if need_dx { fan_in } else { 0 }];
                    for u in 0..*units {
                        let d = dy[u];
                        if d == 0.0 {
                            continue;
                        }
                        g[units * fan_in + u] += d;
                        let gw = &mut g[u * fan_in..(u + 1) * fan_in];
                        for (gv, xv) in gw.iter_mut().zip(&input) {
                            *gv += d * xv;
                        }
                        if need_dx {
                            let w = &p[u * fan_in..(u + 1) * fan_in];
                            for (dv, wv) in dx.iter_mut().zip(w) {
                                *dv += d * wv;
                            }
                        }
                    }
                    dx
                }
                _ => unreachable!("cache kind follows layer kind"),
            };
        }
    }
}

fn conv_forward(p: &[f64], x: &[f64], inp: Volume, out: Volume, k: usize, stride: usize) -> Vec<f64> {
    let wlen = out.c * inp.c * k * k;
    let (weights, bias) = p.split_at(wlen);
    let plane = out.h * out.w;
    let mut y = vec![0.0; out.len()];
    for oc in 0..out.c {
        let yo = &mut y[oc * plane..(oc + 1) * plane];
        yo.fill(bias[oc]);
        for ic in 0..inp.c {
            let xi = &x[ic * inp.h * inp.w..(ic + 1) * inp.h * inp.w];
            for kh in 0..k {
                for kw in 0..k {
                    let wv = weights[((oc * inp.c + ic) * k + kh) * k + kw];
                    for oy in 0..out.h {
                        let xrow = &xi[(oy * stride + kh) * inp.w + kw..];
                        let yrow = &mut yo[oy * out.w..(oy + 1) * out.w];
                        if stride == 1 {
                            for (yv, xv) in yrow.iter_mut().zip(&xrow[..out.w]) {
                                *yv += wv * xv;
                            }
                        } else {
                            for (ox, yv) in yrow.iter_mut().enumerate() {
                                *yv += wv * xrow[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    p: &[f64],
    g: &mut [f64],
    x: &[f64],
    dy: &[f64],
    inp: Volume,
    out: Volume,
    k: usize,
    stride: usize,
    need_dx: bool,
) -> Vec<f64> {
    let wlen = out.c * inp.c * k * k;
    let (gw, gb) = g.split_at_mut(wlen);
    let weights = &p[..wlen];
    let plane = out.h * out.w;
    let mut dx = vec![0.0; if need_dx { inp.len() } else { 0 }];
    for oc in 0..out.c {
        let dyo = &dy[oc * plane..(oc + 1) * plane];
        gb[oc] += dyo.iter().sum::<f64>();
        for ic in 0..inp.c {
            let base = ic * inp.h * inp.w;
            for kh in 0..k {
                for kw in 0..k {
                    let widx = ((oc * inp.c + ic) * k + kh) * k + kw;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for oy in 0..out.h {
                        let start = base + (oy * stride + kh) * inp.w + kw;
                        let drow = &dyo[oy * out.w..(oy + 1) * out.w];
                        if stride == 1 {
                            let xrow = &x[start..start + out.w];
                            acc += drow.iter().zip(xrow).map(|(d, xv)| d * xv).sum::<f64>();
                            if need_dx {
                                for (dxv, d) in dx[start..start + out.w].iter_mut().zip(drow) {
                                    *dxv += wv * d;
                                }
                            }
                        } else {
                            for (ox, d) in drow.iter().enumerate() {
                                acc += d * x[start + ox * stride];
                                if need_dx {
                                    dx[start + ox * stride] += wv * d;
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], inp: Volume, out: Volume, window: usize) -> (Vec<f64>, Vec<usize>) {
    let mut y = vec![0.0; out.len()];
    let mut argmax = vec![0; out.len()];
    for c in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for dy in 0..window {
                    for dx in 0..window {
                        let idx = c * inp.h * inp.w + (oy * window + dy) * inp.w + ox * window + dx;
                        // first maximum wins on ties
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = c * out.h * out.w + oy * out.w + ox;
                y[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (y, argmax)
}

fn se_forward(p: &[f64], x: &[f64], v: Volume, r: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = v.c;
    let hidden_n = c / r;
    let plane = v.h * v.w;
    let (w1, rest) = p.split_at(hidden_n * c);
    let (b1, rest) = rest.split_at(hidden_n);
    let (w2, b2) = rest.split_at(c * hidden_n);
    let squeezed: Vec<f64> = (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    let hidden: Vec<f64> = (0..hidden_n)
        .map(|j| {
            let pre = b1[j] + w1[j * c..(j + 1) * c].iter().zip(&squeezed).map(|(a, b)| a * b).sum::<f64>();
            pre.max(0.0)
        })
        .collect();
    let gate: Vec<f64> = (0..c)
        .map(|ch| {
            sigmoid(b2[ch] + w2[ch * hidden_n..(ch + 1) * hidden_n].iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    let mut y = x.to_vec();
    for ch in 0..c {
        for v in &mut y[ch * plane..(ch + 1) * plane] {
            *v *= gate[ch];
        }
    }
    (y, hidden, gate)
}

#[allow(clippy::too_many_arguments)]
fn se_backward(
    p: &[f64],
    g: &mut [f64],
    x: &[f64],
    hidden: &[f64],
    gate: &[f64],
    dy: &[f64],
    v: Volume,
    r: usize,
) -> Vec<f64> {
    let c = v.c;
    let hidden_n = c / r;
    let plane = v.h * v.w;
    let w1 = &p[..hidden_n * c];
    let w2 = &p[hidden_n * c + hidden_n..hidden_n * c + hidden_n + c * hidden_n];
    let (gw1, rest) = g.split_at_mut(hidden_n * c);
    let (gb1, rest) = rest.split_at_mut(hidden_n);
    let (gw2, gb2) = rest.split_at_mut(c * hidden_n);

    let mut dx = vec![0.0; x.len()];
    // y = x * s  =>  dx = dy * s, ds = sum(dy * x)
    let mut dpre2 = vec![0.0; c];
    for ch in 0..c {
        let range = ch * plane..(ch + 1) * plane;
        let mut ds = 0.0;
        for ((dxv, dyv), xv) in dx[range.clone()].iter_mut().zip(&dy[range.clone()]).zip(&x[range]) {
            *dxv = dyv * gate[ch];
            ds += dyv * xv;
        }
        dpre2[ch] = ds * gate[ch] * (1.0 - gate[ch]);
    }
    let mut dhidden = vec![0.0; hidden_n];
    for ch in 0..c {
        gb2[ch] += dpre2[ch];
        for j in 0..hidden_n {
            gw2[ch * hidden_n + j] += dpre2[ch] * hidden[j];
            dhidden[j] += dpre2[ch] * w2[ch * hidden_n + j];
        }
    }
    let squeezed: Vec<f64> = (0..c)
        .map(|ch| x[ch * plane..(ch + 1) * plane].iter().sum::<f64>() / plane as f64)
        .collect();
    let mut dsqueezed = vec![0.0; c];
    for j in 0..hidden_n {
        if hidden[j] <= 0.0 {
            continue;
        }
        let d = dhidden[j];
        gb1[j] += d;
        for ch in 0..c {
            gw1[j * c + ch] += d * squeezed[ch];
            dsqueezed[ch] += d * w1[j * c + ch];
        }
    }
    for ch in 0..c {
        let share = dsqueezed[ch] / plane as f64;
        for v in &mut dx[ch * plane..(ch + 1) * plane] {
            *v += share;
        }
    }
    dx
}

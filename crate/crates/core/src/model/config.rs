use super::ModelError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid (unpadded) square convolution.
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    /// Non-overlapping max pooling, stride = window.
    MaxPool { window: usize },
    /// Squeeze-and-excitation style channel gate: global average pool,
    /// bottleneck of `channels / reduction_ratio` with ReLU, sigmoid gate.
    SeGate { reduction_ratio: usize },
    /// Fully connected over the flattened input.
    Dense { units: usize, activation: Activation },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// (height, width, channels)
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

/// Activation volume between layers, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Volume {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Volume {
    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelConfig {
    /// conv(16,3x3)+ReLU, maxpool 2, conv(32,3x3)+ReLU, maxpool 2,
    /// optional SE gate (r=4), dense(num_classes).
    pub fn default_architecture(input: (usize, usize, usize), num_classes: usize, se_gate: bool) -> Self {
        Self::conv_net(input, num_classes, [16, 32], se_gate)
    }

    /// The default layout with configurable conv widths.
    pub fn conv_net(input: (usize, usize, usize), num_classes: usize, channels: [usize; 2], se_gate: bool) -> Self {
        let conv = |out_channels| LayerSpec::Conv {
            out_channels,
            kernel: 3,
            stride: 1,
            activation: Activation::Relu,
        };
        let mut layers = vec![
            conv(channels[0]),
            LayerSpec::MaxPool { window: 2 },
            conv(channels[1]),
            LayerSpec::MaxPool { window: 2 },
        ];
        if se_gate {
            layers.push(LayerSpec::SeGate { reduction_ratio: 4 });
        }
        layers.push(LayerSpec::Dense {
            units: num_classes,
            activation: Activation::Identity,
        });
        ModelConfig {
            input,
            layers,
            num_classes,
        }
    }

    /// Checks the layer stack and returns the volume after every layer.
    pub fn volumes(&self) -> Result<Vec<Volume>, ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        let (h, w, c) = self.input;
        if h == 0 || w == 0 || c == 0 {
            return bad("input dimensions must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        let mut v = Volume { c, h, w };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            v = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    ..
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return bad(format!("layer {i}: conv parameters must be positive"));
                    }
                    if kernel > v.h || kernel > v.w {
                        return bad(format!("layer {i}: kernel {kernel} larger than {}x{}", v.h, v.w));
                    }
                    Volume {
                        c: out_channels,
                        h: (v.h - kernel) / stride + 1,
                        w: (v.w - kernel) / stride + 1,
                    }
                }
                LayerSpec::MaxPool { window } => {
                    if window == 0 || window > v.h || window > v.w {
                        return bad(format!("layer {i}: pool window {window} invalid for {}x{}", v.h, v.w));
                    }
                    Volume {
                        c: v.c,
                        h: v.h / window,
                        w: v.w / window,
                    }
                }
                LayerSpec::SeGate { reduction_ratio } => {
                    if reduction_ratio == 0 || v.c % reduction_ratio != 0 || reduction_ratio > v.c {
                        return bad(format!(
                            "layer {i}: reduction ratio {reduction_ratio} must divide {} channels",
                            v.c
                        ));
                    }
                    v
                }
                LayerSpec::Dense { units, .. } => {
                    if units == 0 {
                        return bad(format!("layer {i}: dense units must be positive"));
                    }
                    Volume { c: units, h: 1, w: 1 }
                }
            };
            out.push(v);
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units, .. }) if *units == self.num_classes => Ok(out),
            _ => bad(format!(
                "final layer must be dense with {} units",
                self.num_classes
            )),
        }
    }

    pub fn input_len(&self) -> usize {
        self.input.0 * self.input.1 * self.input.2
    }

    pub fn parameter_count(&self) -> Result<usize, ModelError> {
        let vols = self.volumes()?;
        let (h, w, c) = self.input;
        let mut prev = Volume { c, h, w };
        let mut total = 0;
        for (layer, v) in self.layers.iter().zip(vols) {
            total += layer_parameter_count(layer, prev);
            prev = v;
        }
        Ok(total)
    }
}

pub(crate) fn layer_parameter_count(layer: &LayerSpec, input: Volume) -> usize {
    match *layer {
        LayerSpec::Conv {
            out_channels,
            kernel,
            ..
        } => out_channels * input.c * kernel * kernel + out_channels,
        LayerSpec::MaxPool { .. } => 0,
        LayerSpec::SeGate { reduction_ratio } => {
            let hidden = input.c / reduction_ratio;
            2 * hidden * input.c + hidden + input.c
        }
        LayerSpec::Dense { units, .. } => units * input.len() + units,
    }
}

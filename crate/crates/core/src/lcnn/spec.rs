use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a light CNN. Convolutions use stride `stride` and
/// `kernel / 2` zero padding on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
    },
    /// Max-feature-map: elementwise max of the two channel halves.
    Mfm,
    MaxPool {
        size: usize,
    },
    BatchNorm,
    Flatten,
    Dense {
        units: usize,
    },
    Dropout {
        p: f64,
    },
}

fn one() -> usize {
    1
}

/// Activation shape `(channels, height, width)` of a single example.
pub type Shape = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcnnSpec {
    /// `(frequency bins, frames)`.
    pub input_shape: (usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl Default for LcnnSpec {
    fn default() -> Self {
        LcnnSpec::standard()
    }
}

impl LcnnSpec {
    /// Four conv-MFM blocks (32, 48, 64, 32 channels after MFM) with 3x3
    /// kernels, 2x2 max pooling after each block and batch norm between
    /// blocks, then an 80-unit dense-MFM layer and a 2-way output.
    pub fn standard() -> Self {
        use LayerSpec::*;
        let block = |c: usize| {
            vec![
                Conv {
                    out_channels: 2 * c,
                    kernel: 3,
                    stride: 1,
                },
                Mfm,
                MaxPool { size: 2 },
            ]
        };
        let mut layers = Vec::new();
        for (i, c) in [32, 48, 64, 32].into_iter().enumerate() {
            if i > 0 {
                layers.push(BatchNorm);
            }
            layers.extend(block(c));
        }
        layers.extend([Flatten, Dense { units: 160 }, Mfm, Dense { units: 2 }]);
        LcnnSpec {
            input_shape: (84, 550),
            layers,
        }
    }

    /// A small network for desk-scale experiments: one 2x2 pool on the raw
    /// input, then three conv-MFM blocks of 4, 8 and 8 channels.
    pub fn compact() -> Self {
        use LayerSpec::*;
        LcnnSpec {
            input_shape: (84, 550),
            layers: vec![
                MaxPool { size: 2 },
                Conv { out_channels: 8, kernel: 3, stride: 1 },
                Mfm,
                MaxPool { size: 2 },
                BatchNorm,
                Conv { out_channels: 16, kernel: 3, stride: 1 },
                Mfm,
                MaxPool { size: 2 },
                BatchNorm,
                Conv { out_channels: 16, kernel: 3, stride: 1 },
                Mfm,
                MaxPool { size: 2 },
                Flatten,
                Dense { units: 32 },
                Mfm,
                Dropout { p: 0.2 },
                Dense { units: 2 },
            ],
        }
    }

    /// Symbolic shapes: element `i` is the input shape of layer `i`, the last
    /// element is the network output. Fails on any inconsistent layer.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let bad = |i: usize, m: String| Err(Error::Shape(format!("layer {i}: {m}")));
        let (h0, w0) = self.input_shape;
        if h0 == 0 || w0 == 0 {
            return Err(Error::Shape("empty input shape".into()));
        }
        let mut shape = (1, h0, w0);
        let mut out = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = shape;
            shape = match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return bad(i, "conv sizes must be positive".into());
                    }
                    let pad = kernel / 2;
                    if h + 2 * pad < kernel || w + 2 * pad < kernel {
                        return bad(i, format!("kernel {kernel} larger than input {h}x{w}"));
                    }
                    (
                        out_channels,
                        (h + 2 * pad - kernel) / stride + 1,
                        (w + 2 * pad - kernel) / stride + 1,
                    )
                }
                LayerSpec::Mfm => {
                    if c % 2 != 0 {
                        return bad(i, format!("max-feature-map needs an even channel count, got {c}"));
                    }
                    (c / 2, h, w)
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || h < size || w < size {
                        return bad(i, format!("pool {size} does not fit {h}x{w}"));
                    }
                    (c, h / size, w / size)
                }
                LayerSpec::BatchNorm => shape,
                LayerSpec::Flatten => (c * h * w, 1, 1),
                LayerSpec::Dense { units } => {
                    if h != 1 || w != 1 {
                        return bad(i, "dense layer needs a flattened input".into());
                    }
                    if units == 0 {
                        return bad(i, "dense layer needs at least one unit".into());
                    }
                    (units, 1, 1)
                }
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(&p) {
                        return bad(i, format!("dropout probability {p} not in [0, 1)"));
                    }
                    shape
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Checks shapes and that the network ends in exactly two logits.
    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        match shapes.last() {
            Some(&(2, 1, 1)) => Ok(()),
            Some(s) => Err(Error::Shape(format!(
                "network must end in 2 logits, ends in {s:?}"
            ))),
            None => unreachable!(),
        }
    }
}

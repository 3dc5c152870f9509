//! Desk-scale dense inference engine.
//!
//! Forwards synthetic images through the graph with seeded
//! pseudo-random weights so that non-zero ReLU probabilities can be
//! measured without a framework checkpoint. Everything is f64 and
//! bit-reproducible: weights and images derive from per-(seed, role,
//! index) ChaCha streams, and accumulation orders are fixed.
//!
//! Weights are zero-mean uniform with fan-in scaling
//! (`limit = sqrt(3 / fan_in)`), which keeps pre-activations symmetric
//! around zero and the measured p near 0.5 at any depth. Images are
//! uniform in (-1, 1).

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::ir::{ConvKind, ConvLayer, InputRef, Layer, ModelGraph, PoolKind, PoolLayer};

/// Channel-major dense activation tensor (`[c][h][w]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Number of elements that are not exactly zero. ReLU produces
    /// exact zeros, so no epsilon is involved.
    pub fn nonzero_count(&self) -> u64 {
        self.data.iter().filter(|v| **v != 0.0).count() as u64
    }
}

/// Convolution weights in `[out][in_per_group][ky][kx]` order.
/// Depthwise layers store one input slice per channel.
#[derive(Debug, Clone)]
pub struct ConvWeights {
    pub out_channels: usize,
    pub in_per_group: usize,
    pub kernel: usize,
    pub data: Vec<f64>,
}

impl ConvWeights {
    #[inline]
    fn at(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_per_group + i) * self.kernel + ky) * self.kernel + kx]
    }
}

fn stream(seed: u64, role: &[u8], index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(role);
    hasher.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn fan_in(layer: &ConvLayer) -> u32 {
    let k = layer.kernel_size;
    match layer.conv_kind {
        ConvKind::Standard => k * k * layer.in_channels / layer.groups,
        ConvKind::Depthwise => k * k,
        ConvKind::Pointwise => layer.in_channels,
    }
}

/// Deterministic weights for every conv layer, keyed by layer id.
/// The same model weights serve all images, mirroring a fixed
/// pre-trained network.
pub fn model_weights(graph: &ModelGraph, seed: u64) -> Vec<Option<ConvWeights>> {
    graph
        .layers
        .iter()
        .map(|layer| {
            let Layer::Conv(conv) = layer else { return None };
            let k = conv.kernel_size as usize;
            let in_per_group = match conv.conv_kind {
                ConvKind::Depthwise => 1,
                _ => (conv.in_channels / conv.groups) as usize,
            };
            let out = conv.out_channels as usize;
            let limit = (3.0 / fan_in(conv) as f64).sqrt();
            let dist = Uniform::new(-limit, limit).expect("positive range");
            let mut rng = stream(seed, b"weights", conv.id as u64);
            let count = out * in_per_group * k * k;
            let data = (0..count).map(|_| dist.sample(&mut rng)).collect();
            Some(ConvWeights {
                out_channels: out,
                in_per_group,
                kernel: k,
                data,
            })
        })
        .collect()
}

/// Deterministic synthetic input image `index` for the given seed.
pub fn synthetic_image(graph: &ModelGraph, seed: u64, index: u64) -> Tensor {
    let c = graph.input_channels as usize;
    let side = graph.input_resolution as usize;
    let dist = Uniform::new(-1.0, 1.0).expect("positive range");
    let mut rng = stream(seed, b"image", index);
    let data = (0..c * side * side).map(|_| dist.sample(&mut rng)).collect();
    Tensor {
        channels: c,
        height: side,
        width: side,
        data,
    }
}

/// Left padding that realizes the declared output size: total padding
/// is `max(0, (out - 1) * stride + k - in)`, split low/high with the
/// smaller half on the low side.
fn pad_before(in_size: usize, out_size: usize, kernel: usize, stride: usize) -> isize {
    let span = (out_size - 1) * stride + kernel;
    let total = span.saturating_sub(in_size);
    (total / 2) as isize
}

/// Dense convolution of `input` with `weights` according to the layer
/// geometry. No bias term. Accumulation order per output element is
/// fixed: input channel, then kernel row, then kernel column.
pub fn conv2d(layer: &ConvLayer, weights: &ConvWeights, input: &Tensor) -> Tensor {
    let out_side = layer.out_spatial as usize;
    let in_side = layer.in_spatial as usize;
    let k = layer.kernel_size as usize;
    let stride = layer.stride as usize;
    let pad = pad_before(in_side, out_side, k, stride);
    let mut out = Tensor::zeros(layer.out_channels as usize, out_side, out_side);

    let groups = match layer.conv_kind {
        ConvKind::Depthwise => layer.out_channels as usize,
        _ => layer.groups as usize,
    };
    let in_per_group = input.channels / groups;
    let out_per_group = out.channels / groups;

    for g in 0..groups {
        for og in 0..out_per_group {
            let o = g * out_per_group + og;
            for y in 0..out_side {
                for x in 0..out_side {
                    let base_y = (y * stride) as isize - pad;
                    let base_x = (x * stride) as isize - pad;
                    let mut acc = 0.0;
                    for ig in 0..in_per_group {
                        let c = g * in_per_group + ig;
                        for ky in 0..k {
                            let sy = base_y + ky as isize;
                            if sy < 0 || sy >= in_side as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let sx = base_x + kx as isize;
                                if sx < 0 || sx >= in_side as isize {
                                    continue;
                                }
                                acc += weights.at(o, ig, ky, kx)
                                    * input.at(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    out.set(o, y, x, acc);
                }
            }
        }
    }
    out
}

/// Pooling with the same output-size-driven padding as convolution.
/// Max pooling ignores out-of-bounds positions; average pooling
/// divides by the count of valid positions.
pub fn pool2d(layer: &PoolLayer, input: &Tensor) -> Tensor {
    let out_side = layer.out_spatial as usize;
    let in_side = layer.in_spatial as usize;
    let w = layer.window as usize;
    let stride = layer.stride as usize;
    let pad = pad_before(in_side, out_side, w, stride);
    let mut out = Tensor::zeros(input.channels, out_side, out_side);
    for c in 0..input.channels {
        for y in 0..out_side {
            for x in 0..out_side {
                let base_y = (y * stride) as isize - pad;
                let base_x = (x * stride) as isize - pad;
                let mut best = f64::NEG_INFINITY;
                let mut sum = 0.0;
                let mut count = 0u32;
                for ky in 0..w {
                    let sy = base_y + ky as isize;
                    if sy < 0 || sy >= in_side as isize {
                        continue;
                    }
                    for kx in 0..w {
                        let sx = base_x + kx as isize;
                        if sx < 0 || sx >= in_side as isize {
                            continue;
                        }
                        let v = input.at(c, sy as usize, sx as usize);
                        best = best.max(v);
                        sum += v;
                        count += 1;
                    }
                }
                let v = match layer.pool_kind {
                    PoolKind::Max => best,
                    PoolKind::Avg => sum / count as f64,
                };
                out.set(c, y, x, v);
            }
        }
    }
    out
}

fn relu(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn gather_input(graph: &ModelGraph, outputs: &[Option<Tensor>], image: &Tensor, id: usize) -> Tensor {
    let inputs = graph.inputs_of(id);
    if inputs.len() == 1 {
        return match inputs[0] {
            InputRef::Image => image.clone(),
            InputRef::Layer(j) => outputs[j].clone().expect("producer computed"),
        };
    }
    // concatenate along channels
    let parts: Vec<&Tensor> = inputs
        .iter()
        .map(|r| match r {
            InputRef::Image => image,
            InputRef::Layer(j) => outputs[*j].as_ref().expect("producer computed"),
        })
        .collect();
    let channels: usize = parts.iter().map(|t| t.channels).sum();
    let (h, w) = (parts[0].height, parts[0].width);
    let mut data = Vec::with_capacity(channels * h * w);
    for part in parts {
        data.extend_from_slice(&part.data);
    }
    Tensor {
        channels,
        height: h,
        width: w,
        data,
    }
}

/// Forward pass of one image; returns each layer's output (post-ReLU
/// where the layer has one).
pub fn forward(graph: &ModelGraph, weights: &[Option<ConvWeights>], image: &Tensor) -> Vec<Option<Tensor>> {
    let mut outputs: Vec<Option<Tensor>> = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let input = gather_input(graph, &outputs, image, i);
        let out = match layer {
            Layer::Conv(conv) => {
                let mut out = conv2d(conv, weights[i].as_ref().expect("conv weights"), &input);
                if conv.has_relu {
                    relu(&mut out);
                }
                out
            }
            Layer::Pool(pool) => pool2d(pool, &input),
        };
        outputs.push(Some(out));
    }
    outputs
}

/// Per-conv-layer non-zero fraction of one image's forward pass, in
/// conv pipeline order. Layers without ReLU report 1 by convention.
pub fn forward_nonzero_fractions(
    graph: &ModelGraph,
    weights: &[Option<ConvWeights>],
    image: &Tensor,
) -> Vec<f64> {
    let outputs = forward(graph, weights, image);
    graph
        .conv_layers()
        .map(|conv| {
            if !conv.has_relu {
                return 1.0;
            }
            let out = outputs[conv.id].as_ref().expect("conv output");
            let elements = (out.channels * out.height * out.width) as f64;
            out.nonzero_count() as f64 / elements
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{ConvKind, GraphBuilder};

    fn one_conv(kernel: u32, stride: u32) -> ModelGraph {
        let mut b = GraphBuilder::new("t", 6).input_channels(2);
        b.conv(ConvKind::Standard, kernel, stride, 3, true, true);
        b.build().unwrap()
    }

    #[test]
    fn weights_and_images_are_reproducible() {
        let graph = one_conv(3, 1);
        let a = model_weights(&graph, 7);
        let b = model_weights(&graph, 7);
        assert_eq!(a[0].as_ref().unwrap().data, b[0].as_ref().unwrap().data);
        assert_ne!(
            model_weights(&graph, 8)[0].as_ref().unwrap().data,
            a[0].as_ref().unwrap().data
        );
        assert_eq!(
            synthetic_image(&graph, 7, 0).data,
            synthetic_image(&graph, 7, 0).data
        );
        assert_ne!(
            synthetic_image(&graph, 7, 0).data,
            synthetic_image(&graph, 7, 1).data
        );
    }

    #[test]
    fn identity_pointwise_preserves_values() {
        let mut b = GraphBuilder::new("id", 4).input_channels(1);
        b.conv(ConvKind::Pointwise, 1, 1, 1, false, true);
        let graph = b.build().unwrap();
        let weights = vec![Some(ConvWeights {
            out_channels: 1,
            in_per_group: 1,
            kernel: 1,
            data: vec![1.0],
        })];
        let image = synthetic_image(&graph, 3, 0);
        let out = forward(&graph, &weights, &image);
        assert_eq!(out[0].as_ref().unwrap().data, image.data);
    }

    #[test]
    fn stride_two_kernel_one_subsamples_corners() {
        let mut b = GraphBuilder::new("s2", 4).input_channels(1);
        b.conv(ConvKind::Standard, 1, 2, 1, false, true);
        let graph = b.build().unwrap();
        let weights = vec![Some(ConvWeights {
            out_channels: 1,
            in_per_group: 1,
            kernel: 1,
            data: vec![2.0],
        })];
        let mut image = Tensor::zeros(1, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                image.set(0, y, x, (y * 4 + x) as f64);
            }
        }
        let out = forward(&graph, &weights, &image);
        assert_eq!(out[0].as_ref().unwrap().data, vec![0.0, 4.0, 16.0, 20.0]);
    }

    #[test]
    fn max_pool_picks_window_maximum() {
        let mut b = GraphBuilder::new("p", 4).input_channels(1);
        b.pool(2, 2, crate::ir::PoolKind::Max);
        let graph = b.build().unwrap();
        let mut image = Tensor::zeros(1, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                image.set(0, y, x, (y * 4 + x) as f64);
            }
        }
        let out = forward(&graph, &[None], &image);
        assert_eq!(out[0].as_ref().unwrap().data, vec![5.0, 7.0, 13.0, 15.0]);
    }
}

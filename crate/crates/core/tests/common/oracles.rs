//! Independent reference implementations the test suites check
//! against. Nothing here reuses the library's computation paths:
//! receptive fields come from brute-force impulse propagation, layer
//! probabilities from a separately coded dense convolution, and plans
//! from a line-by-line walk of the published scaling procedure.

use num::{BigInt, BigRational, FromPrimitive, One, ToPrimitive, Zero};

use mbs_core::ir::{ConvKind, Layer, ModelGraph};
use mbs_core::stats::engine::{ConvWeights, Tensor};
use mbs_core::stats::StatsCollection;

// ─── Impulse-response receptive-field oracle ─────────────────────────────────

/// Kernel/stride geometry of one chain layer.
#[derive(Debug, Clone, Copy)]
pub struct ChainGeom {
    pub kernel: usize,
    pub stride: usize,
}

/// Extracts the chain geometry of a linear graph.
pub fn chain_geometry(graph: &ModelGraph) -> Vec<ChainGeom> {
    graph
        .layers
        .iter()
        .map(|layer| ChainGeom {
            kernel: layer.window() as usize,
            stride: layer.stride() as usize,
        })
        .collect()
}

const IMPULSE_LEN: usize = 192;

fn same_pad(in_len: usize, out_len: usize, kernel: usize, stride: usize) -> isize {
    let span = (out_len - 1) * stride + kernel;
    (span.saturating_sub(in_len) / 2) as isize
}

/// Propagates an all-ones kernel chain over a 1-D impulse at `q` and
/// reports, per layer, whether the probe output positions are reached.
fn impulse_hits(chain: &[ChainGeom], q: usize, probes: &[(usize, usize)]) -> Vec<(bool, bool)> {
    let mut signal = vec![0u64; IMPULSE_LEN];
    signal[q] = 1;
    let mut in_len = IMPULSE_LEN;
    let mut hits = Vec::with_capacity(chain.len());
    for (layer, &(probe_a, probe_b)) in chain.iter().zip(probes) {
        let out_len = in_len.div_ceil(layer.stride);
        let pad = same_pad(in_len, out_len, layer.kernel, layer.stride);
        let mut out = vec![0u64; out_len];
        for (p, slot) in out.iter_mut().enumerate() {
            let base = (p * layer.stride) as isize - pad;
            let mut acc = 0u64;
            for t in 0..layer.kernel {
                let s = base + t as isize;
                if s >= 0 && (s as usize) < in_len {
                    acc += signal[s as usize];
                }
            }
            *slot = acc;
        }
        hits.push((out[probe_a] > 0, out[probe_b] > 0));
        signal = out;
        in_len = out_len;
    }
    hits
}

/// Receptive field and jump of every layer in a linear chain, measured
/// by brute force: mark one input pixel at a time, push it through
/// ones-kernels, and read off which pixels reach a centered output
/// neuron (field width) and its right neighbor (jump).
pub fn impulse_rf(chain: &[ChainGeom]) -> Vec<(u64, u64)> {
    // probe positions per layer: the centered neuron and its neighbor
    let mut probes = Vec::with_capacity(chain.len());
    let mut len = IMPULSE_LEN;
    for layer in chain {
        len = len.div_ceil(layer.stride);
        assert!(len >= 2, "chain shrinks the probe signal too far");
        probes.push((len / 2, len / 2 + 1));
    }
    let mut cov_a: Vec<Vec<usize>> = vec![Vec::new(); chain.len()];
    let mut cov_b: Vec<Vec<usize>> = vec![Vec::new(); chain.len()];
    for q in 0..IMPULSE_LEN {
        for (layer, (hit_a, hit_b)) in impulse_hits(chain, q, &probes).into_iter().enumerate() {
            if hit_a {
                cov_a[layer].push(q);
            }
            if hit_b {
                cov_b[layer].push(q);
            }
        }
    }
    cov_a
        .iter()
        .zip(&cov_b)
        .map(|(a, b)| {
            let rf = (a.last().unwrap() - a.first().unwrap() + 1) as u64;
            let jump = (b.first().unwrap() - a.first().unwrap()) as u64;
            (rf, jump)
        })
        .collect()
}

// ─── Dense convolution oracle ────────────────────────────────────────────────

fn oracle_conv(
    input: &Tensor,
    weights: &ConvWeights,
    out_channels: usize,
    out_side: usize,
    kernel: usize,
    stride: usize,
    groups: usize,
) -> Tensor {
    let in_side = input.height;
    let pad = same_pad(in_side, out_side, kernel, stride);
    let mut out = Tensor::zeros(out_channels, out_side, out_side);
    let in_per_group = input.channels / groups;
    let out_per_group = out_channels / groups;
    // outer loops ordered differently from the engine on purpose; the
    // per-element accumulation order (channel, row, column) matches by
    // convention so sums are reproducible
    for y in 0..out_side {
        for x in 0..out_side {
            for o in 0..out_channels {
                let g = o / out_per_group;
                let mut acc = 0.0f64;
                for i in 0..in_per_group {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let sy = (y * stride) as isize - pad + ky as isize;
                            let sx = (x * stride) as isize - pad + kx as isize;
                            if sy < 0
                                || sx < 0
                                || sy >= in_side as isize
                                || sx >= in_side as isize
                            {
                                continue;
                            }
                            acc += weights.at_raw(o, i, ky, kx)
                                * input.at(g * in_per_group + i, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, x, acc);
            }
        }
    }
    out
}

trait WeightsAt {
    fn at_raw(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64;
}

impl WeightsAt for ConvWeights {
    fn at_raw(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[((o * self.in_per_group + i) * self.kernel + ky) * self.kernel + kx]
    }
}

fn oracle_pool(
    input: &Tensor,
    window: usize,
    stride: usize,
    out_side: usize,
    average: bool,
) -> Tensor {
    let in_side = input.height;
    let pad = same_pad(in_side, out_side, window, stride);
    let mut out = Tensor::zeros(input.channels, out_side, out_side);
    for c in 0..input.channels {
        for y in 0..out_side {
            for x in 0..out_side {
                let mut values = Vec::new();
                for ky in 0..window {
                    for kx in 0..window {
                        let sy = (y * stride) as isize - pad + ky as isize;
                        let sx = (x * stride) as isize - pad + kx as isize;
                        if sy < 0 || sx < 0 || sy >= in_side as isize || sx >= in_side as isize {
                            continue;
                        }
                        values.push(input.at(c, sy as usize, sx as usize));
                    }
                }
                let v = if average {
                    values.iter().sum::<f64>() / values.len() as f64
                } else {
                    values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
                };
                out.set(c, y, x, v);
            }
        }
    }
    out
}

/// Directly coded forward pass computing each conv layer's non-zero
/// fraction for one image. Consumes the same seed-derived weights and
/// image tensors as the engine but shares none of its forward code.
pub fn oracle_nonzero_fractions(
    graph: &ModelGraph,
    weights: &[Option<ConvWeights>],
    image: &Tensor,
) -> Vec<f64> {
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.layers.len());
    let mut fractions = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        let input: Tensor = {
            let refs = graph.inputs_of(i);
            let slices: Vec<&Tensor> = refs
                .iter()
                .map(|r| match r {
                    mbs_core::ir::InputRef::Image => image,
                    mbs_core::ir::InputRef::Layer(j) => &outputs[*j],
                })
                .collect();
            if slices.len() == 1 {
                slices[0].clone()
            } else {
                let channels = slices.iter().map(|t| t.channels).sum();
                let (h, w) = (slices[0].height, slices[0].width);
                let mut data = Vec::new();
                for t in &slices {
                    data.extend_from_slice(&t.data);
                }
                Tensor {
                    channels,
                    height: h,
                    width: w,
                    data,
                }
            }
        };
        let out = match layer {
            Layer::Conv(conv) => {
                let groups = match conv.conv_kind {
                    ConvKind::Depthwise => conv.out_channels as usize,
                    _ => conv.groups as usize,
                };
                let mut out = oracle_conv(
                    &input,
                    weights[i].as_ref().unwrap(),
                    conv.out_channels as usize,
                    conv.out_spatial as usize,
                    conv.kernel_size as usize,
                    conv.stride as usize,
                    groups,
                );
                if conv.has_relu {
                    for v in &mut out.data {
                        *v = v.max(0.0);
                    }
                    let nonzero = out.data.iter().filter(|v| **v != 0.0).count();
                    fractions.push(nonzero as f64 / out.data.len() as f64);
                } else {
                    fractions.push(1.0);
                }
                out
            }
            Layer::Pool(pool) => oracle_pool(
                &input,
                pool.window as usize,
                pool.stride as usize,
                pool.out_spatial as usize,
                matches!(pool.pool_kind, mbs_core::ir::PoolKind::Avg),
            ),
        };
        outputs.push(out);
    }
    fractions
}

// ─── Scaling-procedure transliteration ───────────────────────────────────────

/// One macroblock's outcome from the reference walk.
#[derive(Debug, Clone, PartialEq)]
pub struct OraclePlanRow {
    pub r: f64,
    pub beta: f64,
    pub compact_width: u32,
}

/// Line-by-line walk of the scaling procedure on a linear chain:
/// receptive fields by local recurrence, flops by restated formulas,
/// the boundary as the smallest conv RF above `z`, effective flops
/// `e = p * flop` on exact rationals, then for each macroblock the
/// cumulative totals, `r = 1 - E_base / E_total` (guarded by
/// `E_total > E_base`), `beta = 1 / (1 + r)`, and the ceiled compact
/// width.
pub fn transliterated_plan(
    graph: &ModelGraph,
    stats: &StatsCollection,
    z: f64,
) -> Vec<OraclePlanRow> {
    // receptive fields along the chain
    let mut rf_of = vec![0u64; graph.layers.len()];
    let mut rf = 1u64;
    let mut jump = 1u64;
    for (i, layer) in graph.layers.iter().enumerate() {
        rf += (layer.window() as u64 - 1) * jump;
        jump *= layer.stride() as u64;
        rf_of[i] = rf;
    }

    // per conv layer: flops, membership, exact effective flops
    struct ConvInfo {
        macroblock: usize,
        rf: u64,
        e: BigRational,
    }
    let convs: Vec<ConvInfo> = graph
        .layers
        .iter()
        .filter_map(|layer| match layer {
            Layer::Conv(c) => {
                let area = c.out_spatial as u64 * c.out_spatial as u64;
                let k2 = c.kernel_size as u64 * c.kernel_size as u64;
                let flops = match c.conv_kind {
                    ConvKind::Standard => {
                        area * k2 * c.in_channels as u64 * c.out_channels as u64
                            / c.groups as u64
                    }
                    ConvKind::Depthwise => area * k2 * c.out_channels as u64,
                    ConvKind::Pointwise => {
                        area * c.in_channels as u64 * c.out_channels as u64
                    }
                };
                let p = stats.p_of(c.id).expect("stats cover every conv layer");
                Some(ConvInfo {
                    macroblock: c.macroblock_id.expect("resolved graph"),
                    rf: rf_of[c.id],
                    e: BigRational::from_f64(p).unwrap()
                        * BigRational::from(BigInt::from(flops)),
                })
            }
            Layer::Pool(_) => None,
        })
        .collect();

    let boundary = convs
        .iter()
        .map(|c| c.rf)
        .filter(|&rf| rf as f64 > z)
        .min();
    let is_base = |rf: u64| boundary.map_or(true, |b| rf <= b);

    (0..graph.macroblocks.len())
        .map(|i| {
            let mut e_total = BigRational::zero();
            let mut e_base = BigRational::zero();
            for conv in &convs {
                if conv.macroblock <= i {
                    e_total += &conv.e;
                }
                if is_base(conv.rf) {
                    e_base += &conv.e;
                }
            }
            let (r, beta) = if e_total > e_base {
                let r = BigRational::one() - &e_base / &e_total;
                let beta = (BigRational::one() + &r).recip();
                (r, beta)
            } else {
                (BigRational::zero(), BigRational::one())
            };
            let width = graph.macroblocks[i].base_width;
            let compact = (&beta * BigRational::from(BigInt::from(width)))
                .ceil()
                .to_integer()
                .to_u32()
                .unwrap();
            OraclePlanRow {
                r: r.to_f64().unwrap(),
                beta: beta.to_f64().unwrap(),
                compact_width: compact,
            }
        })
        .collect()
}

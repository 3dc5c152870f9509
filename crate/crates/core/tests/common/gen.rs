//! Seeded random architecture generators for property and oracle
//! tests. All graphs are linear chains (each layer consumes its
//! predecessor), which keeps receptive fields monotone in layer order.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use mbs_core::ir::{ConvKind, GraphBuilder, PoolKind};
use mbs_core::ModelGraph;

/// Random conv/pool chain with up to `max_convs` conv layers.
///
/// Every layer keeps at least 4x4 spatial extent and 2 channels so
/// that simulated non-zero probabilities stay far from the degenerate
/// 0/1 corners.
pub fn random_chain(seed: u64, max_convs: usize) -> ModelGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let resolution = *[12u32, 16, 20].get(rng.random_range(0..3)).unwrap();
    let input_channels = rng.random_range(2..=3);
    let mut b = GraphBuilder::new(&format!("random-{seed}"), resolution)
        .input_channels(input_channels)
        .batch_norm(rng.random_bool(0.5));

    let n_convs = rng.random_range(1..=max_convs);
    let mut convs_added = 0;
    while convs_added < n_convs {
        let spatial = b.current_spatial();
        let can_stride = spatial >= 8;
        if convs_added > 0 && rng.random_bool(0.15) {
            let stride = if can_stride && rng.random_bool(0.7) { 2 } else { 1 };
            b.pool(
                rng.random_range(2..=3),
                stride,
                if rng.random_bool(0.5) { PoolKind::Max } else { PoolKind::Avg },
            );
            continue;
        }
        let stride = if can_stride && rng.random_bool(0.3) { 2 } else { 1 };
        let width = rng.random_range(2..=6);
        match rng.random_range(0..10) {
            0..=5 => {
                let kernel = *[1u32, 3, 3, 5].get(rng.random_range(0..4)).unwrap();
                b.conv(ConvKind::Standard, kernel, stride, width, rng.random_bool(0.85), true);
            }
            6..=7 => {
                b.conv(ConvKind::Pointwise, 1, stride, width, rng.random_bool(0.85), true);
            }
            _ => {
                let current = b.current_width();
                b.conv(ConvKind::Depthwise, 3, stride, current, rng.random_bool(0.85), false);
            }
        }
        convs_added += 1;
    }
    let coupled = rng.random_bool(0.5);
    let graph = b.build().expect("generated graph validates");
    if coupled {
        let last = graph.macroblocks.len() - 1;
        let mut b2 = graph.clone();
        b2.classifier_params = rng.random_range(10..1000);
        b2.classifier_width_coupling = Some(last);
        b2
    } else {
        graph
    }
}

/// Random chain constrained for receptive-field oracle checks: few
/// layers, small kernels, bounded stride product.
pub fn random_rf_chain(seed: u64) -> ModelGraph {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut b = GraphBuilder::new(&format!("rf-random-{seed}"), 96).input_channels(2);
    let layers = rng.random_range(2..=8);
    let mut stride_product = 1u32;
    for i in 0..layers {
        let stride = if stride_product < 8 && rng.random_bool(0.35) { 2 } else { 1 };
        stride_product *= stride;
        if i > 0 && rng.random_bool(0.25) {
            b.pool(rng.random_range(2..=3), stride, PoolKind::Max);
        } else {
            let kernel = *[1u32, 3, 5].get(rng.random_range(0..3)).unwrap();
            b.conv(ConvKind::Standard, kernel, stride, rng.random_range(2..=4), true, true);
        }
    }
    b.build().expect("generated graph validates")
}

//! Per-layer non-zero ReLU probabilities.
//!
//! The planner needs, for every conv layer `j`, the probability `p_j`
//! that an element of the layer's ReLU output is non-zero. Collections
//! either come from a recorded `mbs-stats/1` file (measured on a real
//! pre-trained model elsewhere) or from [`simulate_stats`], which runs
//! the built-in dense engine on synthetic images at desk scale.
//!
//! Per image, `p = NZ(v) / (out_spatial^2 * out_channels)`; the final
//! value is the mean over images, accumulated in image order so any
//! parallel schedule reproduces the sequential result. Zeros are
//! counted exactly — ReLU produces exact zeros, and an epsilon would
//! silently reclassify small activations. Layers without a ReLU carry
//! `p = 1`: their flops are all treated as effective, which never
//! over-prunes.

pub mod engine;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{check_version, ConvKind, ConvLayer, ModelGraph};

/// Stats document version written and accepted by this crate.
pub const STATS_VERSION: &str = "mbs-stats/1";

/// Default cap on activation elements per simulated image.
pub const DEFAULT_ELEMENT_BUDGET: u64 = 16_000_000;

/// How a stats collection was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    Recorded,
    Simulated,
}

/// Non-zero probability record for one conv layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerStats {
    pub layer_id: usize,
    /// Non-zero probability of the ReLU output, in [0, 1].
    pub p: f64,
    /// Number of images contributing.
    pub sample_count: u64,
    /// Elements per image (`out_spatial^2 * out_channels`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_count: Option<u64>,
}

/// A model's complete per-layer statistics, bound to one architecture
/// by fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsCollection {
    pub version: String,
    pub model_name: String,
    /// Fingerprint of the resolved architecture document.
    pub fingerprint: String,
    pub source: StatsSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
    /// Free-form provenance (dataset, augmentation, collection notes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub layers: Vec<LayerStats>,
}

impl StatsCollection {
    /// Serializes to the canonical pretty document form.
    pub fn to_document(&self) -> String {
        let mut doc = serde_json::to_string_pretty(self).expect("stats serialize");
        doc.push('\n');
        doc
    }

    /// p for a given conv layer id, if present.
    pub fn p_of(&self, layer_id: usize) -> Option<f64> {
        self.layers
            .iter()
            .find(|l| l.layer_id == layer_id)
            .map(|l| l.p)
    }

    fn validate_against(&self, graph: &ModelGraph) -> Result<()> {
        let expected = graph.fingerprint();
        if self.fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        for conv in graph.conv_layers() {
            let matches: Vec<&LayerStats> = self
                .layers
                .iter()
                .filter(|l| l.layer_id == conv.id)
                .collect();
            match matches.len() {
                0 => return Err(Error::MissingLayer { layer: conv.id }),
                1 => {
                    if let Some(count) = matches[0].element_count {
                        let expected = element_count(conv);
                        if count != expected {
                            return Err(Error::StatsCoverage(format!(
                                "layer {}: element_count {count} does not match the model ({expected})",
                                conv.id
                            )));
                        }
                    }
                }
                n => {
                    return Err(Error::StatsCoverage(format!(
                        "layer {} appears {n} times",
                        conv.id
                    )))
                }
            }
        }
        let conv_count = graph.conv_layers().count();
        if self.layers.len() != conv_count {
            return Err(Error::StatsCoverage(format!(
                "stats cover {} layers but the model has {conv_count} conv layers",
                self.layers.len()
            )));
        }
        Ok(())
    }
}

/// Elements per image of a conv layer's output tensor.
pub fn element_count(layer: &ConvLayer) -> u64 {
    layer.out_spatial as u64 * layer.out_spatial as u64 * layer.out_channels as u64
}

/// Multiply-add count of one conv layer (a flop is one multiply-add).
pub fn flop_count(layer: &ConvLayer) -> u64 {
    let out_area = layer.out_spatial as u64 * layer.out_spatial as u64;
    let k2 = layer.kernel_size as u64 * layer.kernel_size as u64;
    match layer.conv_kind {
        ConvKind::Standard => {
            out_area * k2 * layer.in_channels as u64 * layer.out_channels as u64
                / layer.groups as u64
        }
        ConvKind::Depthwise => out_area * k2 * layer.out_channels as u64,
        ConvKind::Pointwise => out_area * layer.in_channels as u64 * layer.out_channels as u64,
    }
}

/// Parses and validates a stats document. When a graph is supplied the
/// fingerprint must match and every conv layer must be covered exactly
/// once.
pub fn load_stats(document: &str, graph: Option<&ModelGraph>) -> Result<StatsCollection> {
    let stats: StatsCollection =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    check_version(&stats.version, "mbs-stats")?;
    for layer in &stats.layers {
        if !(0.0..=1.0).contains(&layer.p) || !layer.p.is_finite() {
            return Err(Error::ProbabilityRange {
                layer: layer.layer_id,
                p: layer.p,
            });
        }
        if layer.sample_count == 0 {
            return Err(Error::Schema(format!(
                "layer {}: sample_count must be at least 1",
                layer.layer_id
            )));
        }
    }
    if let Some(graph) = graph {
        stats.validate_against(graph)?;
    }
    Ok(stats)
}

/// Runs seeded dense forward passes over `n_images` synthetic images
/// and records each conv layer's mean non-zero fraction.
///
/// Per-image passes are independent; results are reduced in image
/// order so the outcome is bit-identical to a sequential run.
pub fn simulate_stats(graph: &ModelGraph, n_images: u32, seed: u64) -> Result<StatsCollection> {
    simulate_stats_with_budget(graph, n_images, seed, DEFAULT_ELEMENT_BUDGET)
}

/// [`simulate_stats`] with an explicit activation-element budget.
pub fn simulate_stats_with_budget(
    graph: &ModelGraph,
    n_images: u32,
    seed: u64,
    element_budget: u64,
) -> Result<StatsCollection> {
    if n_images == 0 {
        return Err(Error::NoImages);
    }
    let widths = graph.effective_widths();
    let mut required =
        graph.input_resolution as u64 * graph.input_resolution as u64 * graph.input_channels as u64;
    for (i, layer) in graph.layers.iter().enumerate() {
        let side = layer.out_spatial() as u64;
        required += side * side * widths[i] as u64;
    }
    if required > element_budget {
        return Err(Error::BudgetExceeded {
            required,
            budget: element_budget,
        });
    }

    let weights = engine::model_weights(graph, seed);
    let per_image: Vec<Vec<f64>> = (0..n_images as u64)
        .into_par_iter()
        .map(|index| {
            let image = engine::synthetic_image(graph, seed, index);
            engine::forward_nonzero_fractions(graph, &weights, &image)
        })
        .collect();

    let convs: Vec<&ConvLayer> = graph.conv_layers().collect();
    let mut sums = vec![0.0f64; convs.len()];
    for image_p in &per_image {
        for (sum, p) in sums.iter_mut().zip(image_p) {
            *sum += p;
        }
    }
    let layers = convs
        .iter()
        .zip(&sums)
        .map(|(conv, sum)| LayerStats {
            layer_id: conv.id,
            p: sum / n_images as f64,
            sample_count: n_images as u64,
            element_count: Some(element_count(conv)),
        })
        .collect();

    Ok(StatsCollection {
        version: STATS_VERSION.to_string(),
        model_name: graph.name.clone(),
        fingerprint: graph.fingerprint(),
        source: StatsSource::Simulated,
        rng_seed: Some(seed),
        note: None,
        layers,
    })
}

// ─── Tests ───────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{GraphBuilder, PoolKind};

    fn toy_graph() -> ModelGraph {
        let mut b = GraphBuilder::new("toy", 8).input_channels(2);
        b.conv(ConvKind::Standard, 3, 1, 4, true, true);
        b.pool(2, 2, PoolKind::Max);
        b.conv(ConvKind::Pointwise, 1, 1, 6, true, true);
        b.build().unwrap()
    }

    #[test]
    fn flop_count_formulas() {
        let standard = ConvLayer {
            id: 0,
            conv_kind: ConvKind::Standard,
            kernel_size: 3,
            stride: 1,
            in_channels: 16,
            out_channels: 32,
            in_spatial: 8,
            out_spatial: 8,
            has_relu: true,
            scalable: true,
            macroblock_id: None,
            inputs: None,
            groups: 1,
        };
        assert_eq!(flop_count(&standard), 294_912);

        let pointwise = ConvLayer {
            conv_kind: ConvKind::Pointwise,
            kernel_size: 1,
            ..standard.clone()
        };
        assert_eq!(flop_count(&pointwise), 32_768);

        let depthwise = ConvLayer {
            conv_kind: ConvKind::Depthwise,
            in_channels: 64,
            out_channels: 64,
            in_spatial: 14,
            out_spatial: 14,
            ..standard.clone()
        };
        assert_eq!(flop_count(&depthwise), 112_896);
    }

    #[test]
    fn flop_count_is_linear_in_out_channels() {
        let mut layer = ConvLayer {
            id: 0,
            conv_kind: ConvKind::Standard,
            kernel_size: 3,
            stride: 1,
            in_channels: 16,
            out_channels: 32,
            in_spatial: 8,
            out_spatial: 8,
            has_relu: true,
            scalable: true,
            macroblock_id: None,
            inputs: None,
            groups: 1,
        };
        let single = flop_count(&layer);
        layer.out_channels *= 2;
        assert_eq!(flop_count(&layer), 2 * single);
    }

    #[test]
    fn simulation_is_reproducible() {
        let graph = toy_graph();
        let a = simulate_stats(&graph, 5, 42).unwrap();
        let b = simulate_stats(&graph, 5, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_stats(&graph, 5, 43).unwrap();
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn simulated_p_is_mean_of_per_image_values() {
        let graph = toy_graph();
        let n = 6u32;
        let stats = simulate_stats(&graph, n, 11).unwrap();
        let weights = engine::model_weights(&graph, 11);
        let mut sums = vec![0.0; stats.layers.len()];
        for index in 0..n as u64 {
            let image = engine::synthetic_image(&graph, 11, index);
            let fractions = engine::forward_nonzero_fractions(&graph, &weights, &image);
            for (sum, p) in sums.iter_mut().zip(&fractions) {
                *sum += p;
            }
        }
        for (layer, sum) in stats.layers.iter().zip(&sums) {
            assert!((layer.p - sum / n as f64).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&layer.p));
        }
    }

    #[test]
    fn zero_images_rejected() {
        assert!(matches!(
            simulate_stats(&toy_graph(), 0, 1),
            Err(Error::NoImages)
        ));
    }

    #[test]
    fn budget_guard_triggers() {
        let err = simulate_stats_with_budget(&toy_graph(), 1, 1, 10).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    #[test]
    fn roundtrip_and_validation() {
        let graph = toy_graph();
        let stats = simulate_stats(&graph, 3, 9).unwrap();
        let doc = stats.to_document();
        let loaded = load_stats(&doc, Some(&graph)).unwrap();
        assert_eq!(stats, loaded);
    }

    #[test]
    fn missing_layer_detected() {
        let graph = toy_graph();
        let mut stats = simulate_stats(&graph, 3, 9).unwrap();
        stats.layers.pop();
        let err = load_stats(&stats.to_document(), Some(&graph)).unwrap_err();
        assert!(matches!(err, Error::MissingLayer { layer: 2 }));
    }

    #[test]
    fn out_of_range_probability_detected() {
        let graph = toy_graph();
        let mut stats = simulate_stats(&graph, 3, 9).unwrap();
        stats.layers[0].p = 1.5;
        let err = load_stats(&stats.to_document(), None).unwrap_err();
        assert!(matches!(err, Error::ProbabilityRange { layer: 0, .. }));
    }

    #[test]
    fn fingerprint_mismatch_detected() {
        let graph = toy_graph();
        let mut stats = simulate_stats(&graph, 3, 9).unwrap();
        stats.fingerprint = "0".repeat(64);
        let err = load_stats(&stats.to_document(), Some(&graph)).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));
    }

    #[test]
    fn all_ones_stats_are_valid() {
        let graph = toy_graph();
        let doc = StatsCollection {
            version: STATS_VERSION.into(),
            model_name: graph.name.clone(),
            fingerprint: graph.fingerprint(),
            source: StatsSource::Recorded,
            rng_seed: None,
            note: Some("uniform".into()),
            layers: graph
                .conv_layers()
                .map(|c| LayerStats {
                    layer_id: c.id,
                    p: 1.0,
                    sample_count: 1,
                    element_count: None,
                })
                .collect(),
        }
        .to_document();
        assert!(load_stats(&doc, Some(&graph)).is_ok());
    }
}

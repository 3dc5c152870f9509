//! Shared fixtures for the benchmark suite.

use mbs_core::stats::{LayerStats, StatsCollection, StatsSource, STATS_VERSION};
use mbs_core::ModelGraph;

/// Synthetic recorded stats with a fixed p for every conv layer, bound
/// to the graph by fingerprint. Keeps benchmarks off the simulation
/// path when only planning throughput is measured.
pub fn uniform_stats(graph: &ModelGraph, p: f64) -> StatsCollection {
    StatsCollection {
        version: STATS_VERSION.to_string(),
        model_name: graph.name.clone(),
        fingerprint: graph.fingerprint(),
        source: StatsSource::Recorded,
        rng_seed: None,
        note: Some("uniform benchmark stats".into()),
        layers: graph
            .conv_layers()
            .map(|c| LayerStats {
                layer_id: c.id,
                p,
                sample_count: 1,
                element_count: None,
            })
            .collect(),
    }
}

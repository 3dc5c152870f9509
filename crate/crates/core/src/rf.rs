//! Receptive-field analysis and the base/enhancement split.
//!
//! Walking the pipeline with `rf' = rf + (k - 1) * jump` and
//! `jump' = jump * stride` gives every layer's receptive-field side
//! length in input pixels (`jump` is the accumulated stride product).
//! Multi-branch joins take the maximum over incoming branches, which
//! bounds the union of the branch regions while keeping RF scalar.
//!
//! Conv layers split at the boundary: the smallest *realized* RF value
//! strictly greater than a threshold `z`. Layers at or below the
//! boundary are base layers; layers beyond it are enhancement layers,
//! whose receptive fields extend past the useful input region and are
//! treated as carrying redundant information. Ties sit on the base
//! side: the first layer whose RF exceeds `z` defines the boundary and
//! is itself base.

use crate::error::Result;
use crate::ir::{InputRef, Layer, ModelGraph};

/// Receptive field and accumulated stride of one layer (conv or pool).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfEntry {
    pub layer_id: usize,
    /// Side length, in input pixels, of the square input region
    /// affecting one output neuron.
    pub rf: u64,
    /// Distance, in input pixels, between adjacent output neurons'
    /// regions (product of strides so far).
    pub jump: u64,
}

/// Computes the full receptive-field table in pipeline order.
///
/// Validated graphs are acyclic by construction (every input precedes
/// its consumer), so the walk is a single forward pass.
pub fn compute_rf(graph: &ModelGraph) -> Vec<RfEntry> {
    let mut table: Vec<RfEntry> = Vec::with_capacity(graph.layers.len());
    for (i, layer) in graph.layers.iter().enumerate() {
        let (rf_in, jump_in) = graph
            .inputs_of(i)
            .iter()
            .map(|r| match r {
                InputRef::Image => (1u64, 1u64),
                InputRef::Layer(j) => (table[*j].rf, table[*j].jump),
            })
            .fold((1u64, 1u64), |(rf, jump), (r, j)| (rf.max(r), jump.max(j)));
        let k = layer.window() as u64;
        let stride = layer.stride() as u64;
        table.push(RfEntry {
            layer_id: i,
            rf: rf_in + (k - 1) * jump_in,
            jump: jump_in * stride,
        });
    }
    table
}

/// Classification of one conv layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfClass {
    pub layer_id: usize,
    pub rf: u64,
    pub jump: u64,
    pub is_base: bool,
}

/// Per-layer receptive fields plus the base/enhancement split for a
/// given threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RfProfile {
    /// Conv layers only, in pipeline order.
    pub entries: Vec<RfClass>,
    /// Smallest realized conv RF strictly greater than `z`; `None`
    /// when no layer exceeds `z` (every layer is base).
    pub boundary: Option<u64>,
    /// Threshold in input pixels.
    pub z: f64,
    /// `z / L`.
    pub k_factor: f64,
}

impl RfProfile {
    /// Whether the given conv layer is a base layer.
    pub fn is_base(&self, layer_id: usize) -> bool {
        self.entries
            .iter()
            .find(|e| e.layer_id == layer_id)
            .map(|e| e.is_base)
            .unwrap_or(false)
    }
}

/// Splits conv layers into base and enhancement sets at threshold `z`.
///
/// The boundary is always a realized RF value of some conv layer (or
/// absent): `min { RF(c) | RF(c) > z }`. A conv layer is base iff its
/// RF is at most the boundary, so the boundary layer itself is base.
pub fn classify_layers(graph: &ModelGraph, rf_table: &[RfEntry], z: f64) -> Result<RfProfile> {
    if z <= 0.0 || !z.is_finite() {
        return Err(crate::error::Error::ThresholdRange { z });
    }
    let conv_rfs: Vec<(usize, u64, u64)> = graph
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, Layer::Conv(_)))
        .map(|(i, _)| (i, rf_table[i].rf, rf_table[i].jump))
        .collect();
    let boundary = conv_rfs
        .iter()
        .map(|&(_, rf, _)| rf)
        .filter(|&rf| rf as f64 > z)
        .min();
    let entries = conv_rfs
        .into_iter()
        .map(|(layer_id, rf, jump)| RfClass {
            layer_id,
            rf,
            jump,
            is_base: boundary.map_or(true, |b| rf <= b),
        })
        .collect();
    Ok(RfProfile {
        entries,
        boundary,
        z,
        k_factor: z / graph.input_resolution as f64,
    })
}

// ─── Table rendering (analyze subcommand) ────────────────────────────────────

fn macroblock_of(graph: &ModelGraph, layer_id: usize) -> Option<usize> {
    graph.layers[layer_id]
        .as_conv()
        .and_then(|c| c.macroblock_id)
}

/// RF table as aligned text, one row per layer (pools included).
pub fn table_text(graph: &ModelGraph, rf_table: &[RfEntry], profile: &RfProfile) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "model {}  L={}  z={}  boundary={}\n",
        graph.name,
        graph.input_resolution,
        profile.z,
        profile
            .boundary
            .map_or("unbounded".to_string(), |b| b.to_string())
    ));
    out.push_str(&format!(
        "{:>8} {:>6} {:>6} {:>6} {:>10} {:>8}\n",
        "layer", "kind", "rf", "jump", "macroblock", "base"
    ));
    for entry in rf_table {
        let layer = &graph.layers[entry.layer_id];
        let kind = match layer {
            Layer::Conv(_) => "conv",
            Layer::Pool(_) => "pool",
        };
        let mb = macroblock_of(graph, entry.layer_id)
            .map_or("-".to_string(), |m| m.to_string());
        let base = match layer {
            Layer::Conv(_) => {
                if profile.is_base(entry.layer_id) {
                    "yes"
                } else {
                    "no"
                }
            }
            Layer::Pool(_) => "-",
        };
        out.push_str(&format!(
            "{:>8} {:>6} {:>6} {:>6} {:>10} {:>8}\n",
            entry.layer_id, kind, entry.rf, entry.jump, mb, base
        ));
    }
    out
}

/// RF table as CSV with columns layer_id, rf, jump, macroblock,
/// is_base. Pool rows leave macroblock and is_base empty.
pub fn table_csv(graph: &ModelGraph, rf_table: &[RfEntry], profile: &RfProfile) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer_id", "rf", "jump", "macroblock", "is_base"])
        .expect("csv record");
    for entry in rf_table {
        let is_conv = matches!(graph.layers[entry.layer_id], Layer::Conv(_));
        let mb = macroblock_of(graph, entry.layer_id)
            .map_or(String::new(), |m| m.to_string());
        let base = if is_conv {
            profile.is_base(entry.layer_id).to_string()
        } else {
            String::new()
        };
        w.write_record([
            entry.layer_id.to_string(),
            entry.rf.to_string(),
            entry.jump.to_string(),
            mb,
            base,
        ])
        .expect("csv record");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}

// ─── Tests ───────────────────────────────────────────────────────────────────

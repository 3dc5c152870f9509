//! Parameter/flop accounting, the alpha-scaling baseline, comparison
//! rows, and threshold-sweep tradeoff tables.
//!
//! Counting conventions are explicit report metadata: conv parameters
//! are `k^2 * c_in * c_out / groups` (depthwise `k^2 * c`, pointwise
//! `c_in * c_out`), batch-norm adds `2 * out_channels` per conv layer
//! when the model enables it, conv biases are excluded, and the
//! classifier head is one opaque term that scales linearly with its
//! coupled macroblock's width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{apply_plan, rescale_graph, ConvKind, ModelGraph};
use crate::planner::{run_mbs, PlannerConfig, ScalingPlan};
use crate::stats::{flop_count, StatsCollection};

/// Parameter totals split by origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub conv: u64,
    pub batch_norm: u64,
    pub classifier: u64,
}

impl ParamBreakdown {
    pub fn total(&self) -> u64 {
        self.conv + self.batch_norm + self.classifier
    }
}

/// Per-layer conv parameter count.
pub fn layer_params(layer: &crate::ir::ConvLayer) -> u64 {
    let k2 = layer.kernel_size as u64 * layer.kernel_size as u64;
    match layer.conv_kind {
        ConvKind::Standard => {
            k2 * layer.in_channels as u64 * layer.out_channels as u64 / layer.groups as u64
        }
        ConvKind::Depthwise => k2 * layer.out_channels as u64,
        ConvKind::Pointwise => layer.in_channels as u64 * layer.out_channels as u64,
    }
}

/// Parameter totals under the documented counting conventions.
pub fn param_breakdown(graph: &ModelGraph) -> ParamBreakdown {
    let mut conv = 0u64;
    let mut batch_norm = 0u64;
    for layer in graph.conv_layers() {
        conv += layer_params(layer);
        if graph.batch_norm {
            batch_norm += 2 * layer.out_channels as u64;
        }
    }
    ParamBreakdown {
        conv,
        batch_norm,
        classifier: graph.classifier_params,
    }
}

/// Total parameter count (conv + batch-norm + classifier).
pub fn count_params(graph: &ModelGraph) -> u64 {
    param_breakdown(graph).total()
}

/// Total multiply-add count over all conv layers (pools are free).
pub fn count_flops(graph: &ModelGraph) -> u64 {
    graph.conv_layers().map(flop_count).sum()
}

/// Scales every scalable width by a single constant `0 < alpha <= 1`
/// with ceiling rounding — the uniform baseline MBS is compared
/// against.
pub fn alpha_scale(graph: &ModelGraph, alpha: f64) -> Result<ModelGraph> {
    if !(alpha > 0.0 && alpha <= 1.0) || !alpha.is_finite() {
        return Err(Error::AlphaRange { alpha });
    }
    let ceil_alpha = |w: u32| (alpha * w as f64).ceil() as u32;
    let mb_widths: Vec<u32> = graph
        .macroblocks
        .iter()
        .map(|mb| ceil_alpha(mb.base_width))
        .collect();
    rescale_graph(graph, &mb_widths, &|_, w| ceil_alpha(w))
}

// ─── Comparison report ───────────────────────────────────────────────────────

/// One model variant's totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: String,
    pub params: u64,
    pub flops: u64,
    /// `1 - params / params_before`.
    pub reduction_ratio: f64,
}

/// Per-macroblock width change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthRow {
    pub macroblock_id: usize,
    pub before: u32,
    pub after: u32,
}

/// Counting conventions applied to every row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub batch_norm_params: bool,
    pub bias_params: String,
    pub classifier_coupling: Option<usize>,
}

/// Reduction comparison between the original model, an optional plan,
/// and any number of alpha baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub model_name: String,
    pub params_before: u64,
    pub flops_before: u64,
    pub rows: Vec<VariantRow>,
    pub widths: Vec<WidthRow>,
    pub conventions: Conventions,
}

fn variant_row(label: String, before: u64, graph: &ModelGraph) -> VariantRow {
    let params = count_params(graph);
    VariantRow {
        variant: label,
        params,
        flops: count_flops(graph),
        reduction_ratio: 1.0 - params as f64 / before as f64,
    }
}

/// Builds comparison rows: the plan's compact model (when given) and
/// one uniform baseline per alpha, all measured against the original.
/// With neither, a single `original` row is emitted.
pub fn compare(
    graph: &ModelGraph,
    plan: Option<&ScalingPlan>,
    alphas: &[f64],
) -> Result<ReductionReport> {
    let params_before = count_params(graph);
    let flops_before = count_flops(graph);
    let mut rows = Vec::new();
    let mut widths: Vec<WidthRow> = graph
        .macroblocks
        .iter()
        .map(|mb| WidthRow {
            macroblock_id: mb.id,
            before: mb.base_width,
            after: mb.base_width,
        })
        .collect();

    if let Some(plan) = plan {
        let compact = apply_plan(graph, plan)?;
        for (row, mb) in widths.iter_mut().zip(&compact.macroblocks) {
            row.after = mb.base_width;
        }
        rows.push(variant_row("mbs".into(), params_before, &compact));
    }
    for &alpha in alphas {
        let scaled = alpha_scale(graph, alpha)?;
        rows.push(variant_row(
            format!("alpha-{alpha}"),
            params_before,
            &scaled,
        ));
    }
    if rows.is_empty() {
        rows.push(variant_row("original".into(), params_before, graph));
    }

    Ok(ReductionReport {
        model_name: graph.name.clone(),
        params_before,
        flops_before,
        rows,
        widths,
        conventions: Conventions {
            batch_norm_params: graph.batch_norm,
            bias_params: "classifier-only".into(),
            classifier_coupling: graph.classifier_width_coupling,
        },
    })
}

// ─── Tradeoff sweep ──────────────────────────────────────────────────────────

/// One threshold setting's outcome in a sweep over `z = k * L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub k: f64,
    pub z: f64,
    pub reduction_ratio: f64,
    pub params_after: u64,
}

/// Runs the planner once per `k` and reports the resulting model size.
/// Rows come back in the order the `k` values were given; smaller `k`
/// never reduces less.
pub fn tradeoff_table(
    graph: &ModelGraph,
    stats: &StatsCollection,
    k_values: &[f64],
) -> Result<Vec<TradeoffRow>> {
    let params_before = count_params(graph);
    k_values
        .iter()
        .map(|&k| {
            let plan = run_mbs(graph, stats, &PlannerConfig::from_k(k))?;
            let compact = apply_plan(graph, &plan)?;
            let params_after = count_params(&compact);
            Ok(TradeoffRow {
                k,
                z: plan.z,
                reduction_ratio: 1.0 - params_after as f64 / params_before as f64,
                params_after,
            })
        })
        .collect()
}

// ─── Rendering ───────────────────────────────────────────────────────────────

/// Comparison rows as CSV (header + one row per variant).
pub fn report_csv(report: &ReductionReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["variant", "params", "flops", "reduction_ratio"])
        .expect("csv record");
    for row in &report.rows {
        w.write_record([
            row.variant.clone(),
            row.params.to_string(),
            row.flops.to_string(),
            row.reduction_ratio.to_string(),
        ])
        .expect("csv record");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}

/// Comparison report as aligned text.
pub fn report_text(report: &ReductionReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "model {}  params {}  flops {}\n",
        report.model_name, report.params_before, report.flops_before
    ));
    out.push_str(&format!(
        "conventions: batch_norm={} biases={} classifier_coupling={}\n\n",
        report.conventions.batch_norm_params,
        report.conventions.bias_params,
        report
            .conventions
            .classifier_coupling
            .map_or("none".to_string(), |m| m.to_string())
    ));
    out.push_str(&format!(
        "{:<12} {:>14} {:>16} {:>10}\n",
        "variant", "params", "flops", "reduction"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<12} {:>14} {:>16} {:>9.2}%\n",
            row.variant,
            row.params,
            row.flops,
            row.reduction_ratio * 100.0
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<12} {:>8} {:>8}\n",
        "macroblock", "before", "after"
    ));
    for row in &report.widths {
        out.push_str(&format!(
            "{:<12} {:>8} {:>8}\n",
            row.macroblock_id, row.before, row.after
        ));
    }
    out
}

/// Comparison report as pretty JSON.
pub fn report_json(report: &ReductionReport) -> String {
    let mut doc = serde_json::to_string_pretty(report).expect("report serialize");
    doc.push('\n');
    doc
}

/// Tradeoff rows as CSV with columns k, z, reduction_ratio,
/// params_after.
pub fn tradeoff_csv(rows: &[TradeoffRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "z", "reduction_ratio", "params_after"])
        .expect("csv record");
    for row in rows {
        w.write_record([
            row.k.to_string(),
            row.z.to_string(),
            row.reduction_ratio.to_string(),
            row.params_after.to_string(),
        ])
        .expect("csv record");
    }
    String::from_utf8(w.into_inner().expect("csv flush")).expect("utf8")
}

/// Tradeoff rows as aligned text.
pub fn tradeoff_text(rows: &[TradeoffRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>6} {:>10} {:>12} {:>14}\n",
        "k", "z", "reduction", "params_after"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:>6} {:>10} {:>11.2}% {:>14}\n",
            row.k,
            row.z,
            row.reduction_ratio * 100.0,
            row.params_after
        ));
    }
    out
}

// ─── Tests ───────────────────────────────────────────────────────────────────

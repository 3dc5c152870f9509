//! Redundancy estimation and the channel-scaling plan.
//!
//! Each conv layer's *effective flops* are `e = p * flop`: the share
//! of its multiply-adds that produce a non-zero ReLU output. For each
//! macroblock `i`, two cumulative totals run over the pipeline prefix
//! `m_0 ..= m_i`: `E_total` sums every conv layer's `e`, and `E_base`
//! sums only base layers (receptive field at or below the boundary).
//! The redundancy ratio and width multiplier follow as
//!
//! ```text
//! r_i    = 1 - E_base(m_i) / E_total(m_i)        (0 <= r < 1)
//! beta_i = 1 / (1 + r_i)                         (0.5 < beta <= 1)
//! compact_width_i = ceil(beta_i * base_width_i)
//! ```
//!
//! Base layers always precede enhancement layers (receptive fields are
//! monotone along the pipeline), so restricting `E_base` to the same
//! prefix as `E_total` keeps `E_base <= E_total` and the bounds above
//! provable.
//!
//! All ratio arithmetic runs on exact rationals: `p` enters as the
//! exact dyadic value of its f64, so `r` and `beta` are invariant
//! under any common positive scaling of the effective flops, and the
//! ceiling in the compact width is never subject to float dust. The
//! reported `r`/`beta` are the f64 renderings of those rationals.

use num::{BigInt, BigRational, FromPrimitive, One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{check_version, ModelGraph};
use crate::rf::{classify_layers, compute_rf, RfProfile};
use crate::stats::{flop_count, StatsCollection};

/// Plan document version written and accepted by this crate.
pub const PLAN_VERSION: &str = "mbs-plan/1";

/// Exact scalar used for all flop-ratio arithmetic.
pub type Exact = BigRational;

/// Renders an exact ratio as f64 (shortest deterministic conversion).
pub fn exact_to_f64(value: &Exact) -> f64 {
    value.to_f64().expect("finite ratio")
}

// ─── Configuration ───────────────────────────────────────────────────────────

/// Receptive-field threshold configuration: an absolute `z` in pixels
/// or a factor `k` with `z = k * L`. The default is `k = 1`, i.e.
/// `z = L` — receptive fields beyond the input image are treated as
/// enhancement territory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub z: Option<f64>,
    pub k_factor: Option<f64>,
}

impl PlannerConfig {
    pub fn from_z(z: f64) -> Self {
        Self {
            z: Some(z),
            k_factor: None,
        }
    }

    pub fn from_k(k: f64) -> Self {
        Self {
            z: None,
            k_factor: Some(k),
        }
    }

    /// Resolves to concrete `(z, k_factor)` for a given input size.
    pub fn resolve(&self, input_resolution: u32) -> Result<(f64, f64)> {
        let length = input_resolution as f64;
        let (z, k) = match (self.z, self.k_factor) {
            (Some(_), Some(_)) => {
                return Err(Error::Schema(
                    "planner config: set either z or k_factor, not both".into(),
                ))
            }
            (Some(z), None) => (z, z / length),
            (None, Some(k)) => (k * length, k),
            (None, None) => (length, 1.0),
        };
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::ThresholdRange { z });
        }
        Ok((z, k))
    }
}

// ─── Effective flops ─────────────────────────────────────────────────────────

/// One conv layer's flop count, non-zero probability, and exact
/// effective flops `e = p * flop`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerEffective {
    pub layer_id: usize,
    pub macroblock_id: usize,
    pub flops: u64,
    pub p: f64,
    pub e: Exact,
}

/// Cumulative totals for one macroblock (over `m_0 ..= m_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct MacroblockEffective {
    pub macroblock_id: usize,
    pub e_total: Exact,
    pub e_base: Exact,
}

/// Per-layer and per-macroblock effective-flop table.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveFlops {
    pub layers: Vec<LayerEffective>,
    pub macroblocks: Vec<MacroblockEffective>,
}

/// Computes per-layer effective flops from a stats collection bound to
/// the graph (fingerprints must match).
pub fn effective_flops(graph: &ModelGraph, stats: &StatsCollection) -> Result<Vec<LayerEffective>> {
    let expected = graph.fingerprint();
    if stats.fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            expected,
            found: stats.fingerprint.clone(),
        });
    }
    if graph.macroblocks.is_empty() {
        return Err(Error::MacroblockPartition(
            "resolve macroblocks before planning".into(),
        ));
    }
    graph
        .conv_layers()
        .map(|conv| {
            let p = stats
                .p_of(conv.id)
                .ok_or(Error::MissingLayer { layer: conv.id })?;
            let flops = flop_count(conv);
            let exact_p = Exact::from_f64(p).ok_or(Error::ProbabilityRange {
                layer: conv.id,
                p,
            })?;
            Ok(LayerEffective {
                layer_id: conv.id,
                macroblock_id: conv.macroblock_id.expect("resolved graph"),
                flops,
                p,
                e: exact_p * Exact::from(BigInt::from(flops)),
            })
        })
        .collect()
}

/// Tallies cumulative `E_total` and `E_base` per macroblock. Each
/// macroblock re-walks the layer list, touching every layer O(M)
/// times.
pub fn accumulate(
    graph: &ModelGraph,
    profile: &RfProfile,
    layers: &[LayerEffective],
) -> EffectiveFlops {
    let mut base = vec![false; graph.layers.len()];
    for entry in &profile.entries {
        base[entry.layer_id] = entry.is_base;
    }
    let macroblocks = (0..graph.macroblocks.len())
        .map(|i| {
            let mut e_total = Exact::zero();
            let mut e_base = Exact::zero();
            for layer in layers {
                if layer.macroblock_id <= i {
                    e_total += &layer.e;
                    if base[layer.layer_id] {
                        e_base += &layer.e;
                    }
                }
            }
            MacroblockEffective {
                macroblock_id: i,
                e_total,
                e_base,
            }
        })
        .collect();
    EffectiveFlops {
        layers: layers.to_vec(),
        macroblocks,
    }
}

// ─── Scaling plan ────────────────────────────────────────────────────────────

fn is_false(b: &bool) -> bool {
    !*b
}

/// One macroblock's planned reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroblockPlan {
    pub macroblock_id: usize,
    /// Redundancy ratio in [0, 1).
    pub r: f64,
    /// Width multiplier `1 / (1 + r)` in (0.5, 1].
    pub beta: f64,
    pub original_width: u32,
    /// `ceil(beta * original_width)`.
    pub compact_width: u32,
    /// Set when the macroblock had no usable effective-flop signal
    /// (zero totals); such macroblocks keep beta = 1.
    #[serde(default, skip_serializing_if = "is_false")]
    pub degenerate: bool,
}

/// A complete channel-width plan for one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingPlan {
    pub version: String,
    pub model_name: String,
    /// Fingerprint of the architecture the plan was computed for.
    pub fingerprint: String,
    pub z: f64,
    pub k_factor: f64,
    pub macroblocks: Vec<MacroblockPlan>,
}

impl ScalingPlan {
    /// Serializes to the canonical pretty document form.
    pub fn to_document(&self) -> String {
        let mut doc = serde_json::to_string_pretty(self).expect("plan serialize");
        doc.push('\n');
        doc
    }

    /// Whether any macroblock lacked effective-flop signal.
    pub fn has_degenerate(&self) -> bool {
        self.macroblocks.iter().any(|m| m.degenerate)
    }

    /// Compact widths in macroblock order.
    pub fn compact_widths(&self) -> Vec<u32> {
        self.macroblocks.iter().map(|m| m.compact_width).collect()
    }

    fn validate_bounds(&self) -> Result<()> {
        for mb in &self.macroblocks {
            let id = mb.macroblock_id;
            if !(0.0..1.0).contains(&mb.r) {
                return Err(Error::Schema(format!(
                    "plan macroblock {id}: r {} outside [0, 1)",
                    mb.r
                )));
            }
            if !(mb.beta > 0.5 && mb.beta <= 1.0) {
                return Err(Error::Schema(format!(
                    "plan macroblock {id}: beta {} outside (0.5, 1]",
                    mb.beta
                )));
            }
            if mb.compact_width == 0 {
                return Err(Error::WidthUnderflow { macroblock: id });
            }
            if mb.compact_width > mb.original_width
                || (mb.compact_width as u64) * 2 <= mb.original_width as u64
            {
                return Err(Error::Schema(format!(
                    "plan macroblock {id}: compact_width {} outside ({}/2, {}]",
                    mb.compact_width, mb.original_width, mb.original_width
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a plan document.
pub fn load_plan(document: &str) -> Result<ScalingPlan> {
    let plan: ScalingPlan =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    check_version(&plan.version, "mbs-plan")?;
    plan.validate_bounds()?;
    Ok(plan)
}

/// Derives each macroblock's redundancy, scaling factor, and compact
/// width from the accumulated totals.
///
/// Macroblocks with `E_total > E_base` get `r = 1 - E_base / E_total`
/// and `beta = 1 / (1 + r)`; the rest keep `beta = 1`. A macroblock
/// whose prefix carries no effective-flop signal at all is flagged
/// degenerate (and also kept at `beta = 1`) rather than dividing by
/// zero.
pub fn plan(graph: &ModelGraph, eff: &EffectiveFlops, z: f64, k_factor: f64) -> ScalingPlan {
    let macroblocks = graph
        .macroblocks
        .iter()
        .zip(&eff.macroblocks)
        .map(|(mb, totals)| {
            let original_width = mb.base_width;
            let degenerate = totals.e_total.is_zero()
                || (totals.e_base.is_zero() && totals.e_total.is_positive());
            let (exact_r, exact_beta) = if !degenerate && totals.e_total > totals.e_base {
                let r = Exact::one() - &totals.e_base / &totals.e_total;
                let beta = (Exact::one() + &r).recip();
                (r, beta)
            } else {
                (Exact::zero(), Exact::one())
            };
            debug_assert!(!exact_r.is_negative() && exact_r < Exact::one());
            debug_assert!(
                exact_beta > Exact::new(BigInt::from(1), BigInt::from(2))
                    && exact_beta <= Exact::one()
            );
            let compact = (&exact_beta * Exact::from(BigInt::from(original_width)))
                .ceil()
                .to_integer()
                .to_u32()
                .expect("width fits");
            MacroblockPlan {
                macroblock_id: mb.id,
                r: exact_to_f64(&exact_r),
                beta: exact_to_f64(&exact_beta),
                original_width,
                compact_width: compact,
                degenerate,
            }
        })
        .collect();
    ScalingPlan {
        version: PLAN_VERSION.to_string(),
        model_name: graph.name.clone(),
        fingerprint: graph.fingerprint(),
        z,
        k_factor,
        macroblocks,
    }
}

/// End-to-end planning: classify layers at the configured threshold,
/// compute effective flops, accumulate, and derive the plan.
pub fn run_mbs(
    graph: &ModelGraph,
    stats: &StatsCollection,
    config: &PlannerConfig,
) -> Result<ScalingPlan> {
    let (z, k_factor) = config.resolve(graph.input_resolution)?;
    let rf_table = compute_rf(graph);
    let profile = classify_layers(graph, &rf_table, z)?;
    let layers = effective_flops(graph, stats)?;
    let eff = accumulate(graph, &profile, &layers);
    Ok(plan(graph, &eff, z, k_factor))
}

/// Builds a plan that pins each macroblock to an explicit compact
/// width (e.g. a published configuration). `beta` is recorded as
/// `compact / original` and `r` as its reciprocal minus one.
pub fn plan_from_widths(graph: &ModelGraph, widths: &[u32]) -> Result<ScalingPlan> {
    if graph.macroblocks.is_empty() {
        return Err(Error::MacroblockPartition(
            "resolve macroblocks before planning".into(),
        ));
    }
    if widths.len() != graph.macroblocks.len() {
        return Err(Error::PlanMismatch(format!(
            "{} widths supplied for {} macroblocks",
            widths.len(),
            graph.macroblocks.len()
        )));
    }
    let macroblocks = graph
        .macroblocks
        .iter()
        .zip(widths)
        .map(|(mb, &compact)| {
            if compact == 0 {
                return Err(Error::WidthUnderflow { macroblock: mb.id });
            }
            if compact > mb.base_width || (compact as u64) * 2 <= mb.base_width as u64 {
                return Err(Error::PlanMismatch(format!(
                    "macroblock {}: target width {compact} outside ({}/2, {}]",
                    mb.id, mb.base_width, mb.base_width
                )));
            }
            let beta = Exact::new(BigInt::from(compact), BigInt::from(mb.base_width));
            let r = beta.recip() - Exact::one();
            Ok(MacroblockPlan {
                macroblock_id: mb.id,
                r: exact_to_f64(&r),
                beta: exact_to_f64(&beta),
                original_width: mb.base_width,
                compact_width: compact,
                degenerate: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalingPlan {
        version: PLAN_VERSION.to_string(),
        model_name: graph.name.clone(),
        fingerprint: graph.fingerprint(),
        z: graph.input_resolution as f64,
        k_factor: 1.0,
        macroblocks,
    })
}

// ─── Tests ───────────────────────────────────────────────────────────────────

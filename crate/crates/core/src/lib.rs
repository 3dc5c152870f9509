//! Macroblock channel-width scaling for CNN architectures.
//!
//! This crate plans structured channel reductions for convolutional
//! networks without touching weights. Given an architecture description
//! and per-layer non-zero ReLU probabilities, it measures how much of
//! each macroblock's convolution work is *effective* (produces non-zero
//! activations inside the useful receptive-field range) and derives a
//! per-macroblock width multiplier `beta = 1 / (1 + r)` from the
//! redundancy ratio `r`. The outputs are a compact channel-width plan
//! plus parameter/flop reduction reports.
//!
//! The pipeline is:
//!
//! 1. [`ir`] — parse and validate the architecture IR (`mbs-ir/1`),
//!    group conv layers into macroblocks, apply plans to produce
//!    compact graphs.
//! 2. [`rf`] — receptive-field sizes and the base/enhancement split at
//!    the boundary: the smallest realized RF exceeding a threshold `z`.
//! 3. [`stats`] — per-layer non-zero probabilities `p`, either loaded
//!    from a recorded `mbs-stats/1` file or simulated at desk scale
//!    with the built-in dense inference engine.
//! 4. [`planner`] — effective flops `e = p * flop`, cumulative
//!    macroblock totals, redundancy ratios, and the scaling plan
//!    (`mbs-plan/1`).
//! 5. [`report`] — parameter/flop accounting, the uniform alpha-scaling
//!    baseline, comparison rows, and threshold-sweep tradeoff tables.
//! 6. [`zoo`] — programmatic generators for reference architectures
//!    used by tests and benchmarks.
//!
//! All operations are pure functions over immutable values; every
//! artifact serializes deterministically so identical inputs produce
//! byte-identical outputs.

pub mod error;
pub mod ir;
pub mod planner;
pub mod report;
pub mod rf;
pub mod stats;
pub mod zoo;

pub use error::{Error, Result};
pub use ir::{ConvKind, ConvLayer, InputRef, Layer, Macroblock, ModelGraph, PoolKind, PoolLayer};
pub use planner::{
    EffectiveFlops, LayerEffective, MacroblockEffective, MacroblockPlan, PlannerConfig,
    ScalingPlan,
};
pub use report::{ParamBreakdown, ReductionReport, TradeoffRow, VariantRow, WidthRow};
pub use rf::{RfEntry, RfProfile};
pub use stats::{LayerStats, StatsCollection, StatsSource};
pub use zoo::{ZooFamily, ZooSpec};

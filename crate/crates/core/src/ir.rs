//! Architecture intermediate representation.
//!
//! A model is an ordered list of conv/pool layers plus macroblock
//! annotations. The IR stores *resolved* spatial sizes rather than a
//! padding enum: the validator accepts any `out_spatial` between the
//! "valid" and "same" conventions, `ceil((in - k + 1) / stride) ..=
//! ceil(in / stride)`, so explicit overrides are legal and nothing is
//! guessed.
//!
//! Branching connections are width-coupling edges only: a layer's
//! `inputs` name its producers, and its `in_channels` must equal the
//! sum of their output widths (concatenation semantics; a single
//! producer is the common case). Full tensor dataflow is not modeled —
//! widths, spatial sizes, and flop counts are all the planner needs.
//!
//! Serialized documents carry version `mbs-ir/1`.

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use crate::error::{Error, Result};
use crate::planner::ScalingPlan;

/// IR document version written and accepted by this crate.
pub const IR_VERSION: &str = "mbs-ir/1";

// ─── Layer kinds ─────────────────────────────────────────────────────────────

/// Convolution flavor; decides the parameter and flop formulas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvKind {
    /// Dense k×k convolution over all input channels.
    Standard,
    /// Per-channel k×k convolution; `in_channels == out_channels`.
    Depthwise,
    /// 1×1 channel-mixing convolution.
    Pointwise,
}

/// Pooling flavor used by the simulation engine; pools never carry
/// parameters or effective flops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// Reference to a layer's producer: an earlier layer id or the input
/// image. Serialized as the layer id number or the string `"image"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputRef {
    Image,
    Layer(usize),
}

impl Serialize for InputRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Image => s.serialize_str("image"),
            Self::Layer(id) => s.serialize_u64(*id as u64),
        }
    }
}

impl<'de> Deserialize<'de> for InputRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RefVisitor;
        impl<'de> Visitor<'de> for RefVisitor {
            type Value = InputRef;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a layer id or the string \"image\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<InputRef, E> {
                Ok(InputRef::Layer(v as usize))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<InputRef, E> {
                if v < 0 {
                    Err(E::custom("negative layer id in inputs"))
                } else {
                    Ok(InputRef::Layer(v as usize))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<InputRef, E> {
                if v == "image" {
                    Ok(InputRef::Image)
                } else {
                    Err(E::custom(format!(
                        "invalid input reference {v:?}, expected \"image\" or a layer id"
                    )))
                }
            }
        }
        d.deserialize_any(RefVisitor)
    }
}

// ─── Layers ──────────────────────────────────────────────────────────────────

fn default_true() -> bool {
    true
}
fn is_true(b: &bool) -> bool {
    *b
}
fn is_one(g: &u32) -> bool {
    *g == 1
}
fn is_false(b: &bool) -> bool {
    !*b
}

/// A convolution layer. `id` is the 0-based layer index; `in_spatial`
/// and `out_spatial` are side lengths of the square feature maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvLayer {
    pub id: usize,
    pub conv_kind: ConvKind,
    pub kernel_size: u32,
    pub stride: u32,
    pub in_channels: u32,
    pub out_channels: u32,
    pub in_spatial: u32,
    pub out_spatial: u32,
    pub has_relu: bool,
    /// Whether `out_channels` participates in width scaling.
    pub scalable: bool,
    /// Index of the owning macroblock, once grouping is resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macroblock_id: Option<usize>,
    /// Producers; `None` means the previous layer (the input image for
    /// layer 0). Multiple producers concatenate along channels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<InputRef>>,
    /// Channel groups for grouped standard convolutions (parameter
    /// formula divides by this). 1 for ungrouped.
    #[serde(skip_serializing_if = "is_one")]
    pub groups: u32,
}

/// A pooling layer; affects receptive fields and spatial chaining but
/// carries zero parameters and zero effective flops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolLayer {
    pub id: usize,
    pub window: u32,
    pub stride: u32,
    pub in_spatial: u32,
    pub out_spatial: u32,
    pub pool_kind: PoolKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<InputRef>>,
}

/// One pipeline element.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv(ConvLayer),
    Pool(PoolLayer),
}

impl Layer {
    pub fn id(&self) -> usize {
        match self {
            Self::Conv(c) => c.id,
            Self::Pool(p) => p.id,
        }
    }
    pub fn in_spatial(&self) -> u32 {
        match self {
            Self::Conv(c) => c.in_spatial,
            Self::Pool(p) => p.in_spatial,
        }
    }
    pub fn out_spatial(&self) -> u32 {
        match self {
            Self::Conv(c) => c.out_spatial,
            Self::Pool(p) => p.out_spatial,
        }
    }
    pub fn stride(&self) -> u32 {
        match self {
            Self::Conv(c) => c.stride,
            Self::Pool(p) => p.stride,
        }
    }
    /// Kernel side for convs, window side for pools.
    pub fn window(&self) -> u32 {
        match self {
            Self::Conv(c) => c.kernel_size,
            Self::Pool(p) => p.window,
        }
    }
    pub fn as_conv(&self) -> Option<&ConvLayer> {
        match self {
            Self::Conv(c) => Some(c),
            Self::Pool(_) => None,
        }
    }
    fn inputs_field(&self) -> &Option<Vec<InputRef>> {
        match self {
            Self::Conv(c) => &c.inputs,
            Self::Pool(p) => &p.inputs,
        }
    }
}

// Deserialization goes through a flat raw struct so that schema errors
// name the offending field and unknown fields (e.g. a `dilation` key,
// which v1 does not support) are rejected outright.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    id: usize,
    #[serde(rename = "type")]
    layer_type: String,
    conv_kind: Option<ConvKind>,
    kernel_size: Option<u32>,
    window: Option<u32>,
    stride: Option<u32>,
    in_channels: Option<u32>,
    out_channels: Option<u32>,
    in_spatial: Option<u32>,
    out_spatial: Option<u32>,
    has_relu: Option<bool>,
    scalable: Option<bool>,
    macroblock_id: Option<usize>,
    inputs: Option<Vec<InputRef>>,
    groups: Option<u32>,
    pool_kind: Option<PoolKind>,
}

impl RawLayer {
    fn require<T>(field: Option<T>, id: usize, name: &str) -> std::result::Result<T, String> {
        field.ok_or_else(|| format!("layer {id}: missing field `{name}`"))
    }

    fn into_layer(self) -> std::result::Result<Layer, String> {
        let id = self.id;
        match self.layer_type.as_str() {
            "conv" => {
                for (present, name) in [(self.window.is_some(), "window"), (self.pool_kind.is_some(), "pool_kind")] {
                    if present {
                        return Err(format!("layer {id}: field `{name}` is not valid on conv layers"));
                    }
                }
                Ok(Layer::Conv(ConvLayer {
                    id,
                    conv_kind: self.conv_kind.unwrap_or(ConvKind::Standard),
                    kernel_size: Self::require(self.kernel_size, id, "kernel_size")?,
                    stride: Self::require(self.stride, id, "stride")?,
                    in_channels: Self::require(self.in_channels, id, "in_channels")?,
                    out_channels: Self::require(self.out_channels, id, "out_channels")?,
                    in_spatial: Self::require(self.in_spatial, id, "in_spatial")?,
                    out_spatial: Self::require(self.out_spatial, id, "out_spatial")?,
                    has_relu: self.has_relu.unwrap_or(true),
                    scalable: self.scalable.unwrap_or(true),
                    macroblock_id: self.macroblock_id,
                    inputs: self.inputs,
                    groups: self.groups.unwrap_or(1),
                }))
            }
            "pool" => {
                for (present, name) in [
                    (self.conv_kind.is_some(), "conv_kind"),
                    (self.kernel_size.is_some(), "kernel_size"),
                    (self.in_channels.is_some(), "in_channels"),
                    (self.out_channels.is_some(), "out_channels"),
                    (self.has_relu.is_some(), "has_relu"),
                    (self.scalable.is_some(), "scalable"),
                    (self.macroblock_id.is_some(), "macroblock_id"),
                    (self.groups.is_some(), "groups"),
                ] {
                    if present {
                        return Err(format!("layer {id}: field `{name}` is not valid on pool layers"));
                    }
                }
                Ok(Layer::Pool(PoolLayer {
                    id,
                    window: Self::require(self.window, id, "window")?,
                    stride: Self::require(self.stride, id, "stride")?,
                    in_spatial: Self::require(self.in_spatial, id, "in_spatial")?,
                    out_spatial: Self::require(self.out_spatial, id, "out_spatial")?,
                    pool_kind: self.pool_kind.unwrap_or(PoolKind::Max),
                    inputs: self.inputs,
                }))
            }
            other => Err(format!("layer {id}: unknown layer type {other:?}")),
        }
    }
}

impl<'de> Deserialize<'de> for Layer {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        RawLayer::deserialize(d)?.into_layer().map_err(de::Error::custom)
    }
}

// ─── Macroblocks ─────────────────────────────────────────────────────────────

/// A group of conv layers scaled together. Regular macroblocks collect
/// layers sharing one output spatial size; `custom` segments group
/// layers with complex interconnects (or width-based stages) and are
/// exempt from the common-spatial rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Macroblock {
    pub id: usize,
    /// Member conv layer ids, ascending.
    pub layer_ids: Vec<usize>,
    /// Common output spatial size (last member's for custom segments).
    pub out_spatial: u32,
    /// Design channel width the scaling factor applies to; must be the
    /// out width of at least one member layer.
    pub base_width: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub custom: bool,
}

// ─── ModelGraph ──────────────────────────────────────────────────────────────

fn default_input_channels() -> u32 {
    3
}

/// A validated architecture: ordered layers, macroblock grouping, and
/// the opaque classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelGraph {
    pub version: String,
    pub name: String,
    /// Input image side length L; layer 0's in_spatial must equal it.
    pub input_resolution: u32,
    #[serde(default = "default_input_channels")]
    pub input_channels: u32,
    /// Count batch-norm parameters (2 × out_channels per conv layer).
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub batch_norm: bool,
    /// Parameter count of the non-conv tail (FC layers etc.).
    #[serde(default)]
    pub classifier_params: u64,
    /// Macroblock whose output width the classifier input depends on;
    /// the classifier term scales linearly with that width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_width_coupling: Option<usize>,
    pub layers: Vec<Layer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub macroblocks: Vec<Macroblock>,
}

/// Checks a `kind/major` version string against the expected kind,
/// accepting only major version 1.
pub(crate) fn check_version(found: &str, kind: &str) -> Result<()> {
    let expected = format!("{kind}/1");
    match found.split_once('/') {
        Some((k, major)) if k == kind && major == "1" => Ok(()),
        _ => Err(Error::Version {
            found: found.to_string(),
            expected,
        }),
    }
}

/// Parses and validates an architecture document.
///
/// Errors name the offending field (schema violations), the layer pair
/// (chain inconsistencies), or the macroblock (partition violations).
pub fn parse_model(document: &str) -> Result<ModelGraph> {
    let mut graph: ModelGraph =
        serde_json::from_str(document).map_err(|e| Error::Schema(e.to_string()))?;
    check_version(&graph.version, "mbs-ir")?;
    graph.validate()?;
    graph.fill_macroblock_ids();
    Ok(graph)
}

impl ModelGraph {
    /// Serializes to the canonical pretty document form.
    pub fn to_document(&self) -> String {
        let mut doc = serde_json::to_string_pretty(self).expect("graph serializes");
        doc.push('\n');
        doc
    }

    /// Content hash of the canonicalized document (compact JSON form),
    /// used to bind stats and plan files to one architecture.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(self).expect("graph serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.layers.iter().filter_map(Layer::as_conv)
    }

    pub fn layer(&self, id: usize) -> &Layer {
        &self.layers[id]
    }

    /// Resolved producer list: the declared `inputs`, or the previous
    /// layer (the image for layer 0).
    pub fn inputs_of(&self, id: usize) -> Vec<InputRef> {
        match self.layers[id].inputs_field() {
            Some(refs) => refs.clone(),
            None if id == 0 => vec![InputRef::Image],
            None => vec![InputRef::Layer(id - 1)],
        }
    }

    /// Output channel width carried by each layer: a conv's own
    /// out_channels, a pool's producer width passed through.
    pub fn effective_widths(&self) -> Vec<u32> {
        let mut widths = vec![0u32; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate() {
            widths[i] = match layer {
                Layer::Conv(c) => c.out_channels,
                Layer::Pool(_) => {
                    let mut w = 0;
                    for input in self.inputs_of(i) {
                        w += match input {
                            InputRef::Image => self.input_channels,
                            InputRef::Layer(j) => widths[j],
                        };
                    }
                    w
                }
            };
        }
        widths
    }

    fn input_width(&self, widths: &[u32], r: InputRef) -> u32 {
        match r {
            InputRef::Image => self.input_channels,
            InputRef::Layer(j) => widths[j],
        }
    }

    fn input_spatial(&self, r: InputRef) -> u32 {
        match r {
            InputRef::Image => self.input_resolution,
            InputRef::Layer(j) => self.layers[j].out_spatial(),
        }
    }

    /// Structural validation; see the module docs for the rules.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Schema("layers: model has no layers".into()));
        }
        if self.input_resolution == 0 || self.input_channels == 0 {
            return Err(Error::Schema(
                "input_resolution and input_channels must be at least 1".into(),
            ));
        }

        for (i, layer) in self.layers.iter().enumerate() {
            if layer.id() != i {
                return Err(Error::Schema(format!(
                    "layers[{i}].id: expected {i}, found {} (ids must be contiguous)",
                    layer.id()
                )));
            }
            self.validate_layer_fields(layer)?;
            self.validate_layer_inputs(i)?;
        }

        let widths = self.effective_widths();
        for (i, layer) in self.layers.iter().enumerate() {
            // Spatial chaining: every producer must end at this layer's
            // declared input size.
            for input in self.inputs_of(i) {
                let produced = self.input_spatial(input);
                if produced != layer.in_spatial() {
                    let producer = match input {
                        InputRef::Image => i, // reported against the layer itself
                        InputRef::Layer(j) => j,
                    };
                    return Err(Error::Chain {
                        producer,
                        consumer: i,
                        detail: format!(
                            "producer out_spatial {produced} != consumer in_spatial {}",
                            layer.in_spatial()
                        ),
                    });
                }
            }
            // Channel chaining: conv in_channels equals the sum of
            // producer widths (concatenation).
            if let Layer::Conv(c) = layer {
                let feeding: u32 = self
                    .inputs_of(i)
                    .iter()
                    .map(|r| self.input_width(&widths, *r))
                    .sum();
                if feeding != c.in_channels {
                    let producer = match self.inputs_of(i)[0] {
                        InputRef::Image => i,
                        InputRef::Layer(j) => j,
                    };
                    return Err(Error::Chain {
                        producer,
                        consumer: i,
                        detail: format!(
                            "producer widths sum to {feeding} but in_channels is {}",
                            c.in_channels
                        ),
                    });
                }
            }
        }

        if !self.macroblocks.is_empty() {
            self.validate_macroblocks()?;
        } else if let Some(conv) = self.conv_layers().find(|c| c.macroblock_id.is_some()) {
            return Err(Error::MacroblockPartition(format!(
                "layer {} carries macroblock_id but the document declares no macroblocks",
                conv.id
            )));
        }

        if let Some(mb) = self.classifier_width_coupling {
            if !self.macroblocks.is_empty() && mb >= self.macroblocks.len() {
                return Err(Error::Schema(format!(
                    "classifier_width_coupling: macroblock {mb} does not exist"
                )));
            }
        }
        Ok(())
    }

    fn validate_layer_fields(&self, layer: &Layer) -> Result<()> {
        let id = layer.id();
        if layer.window() == 0 || layer.stride() == 0 {
            return Err(Error::Schema(format!(
                "layer {id}: kernel/window and stride must be at least 1"
            )));
        }
        if layer.in_spatial() == 0 || layer.out_spatial() == 0 {
            return Err(Error::Schema(format!(
                "layer {id}: spatial sizes must be at least 1"
            )));
        }
        // out_spatial must lie between the "valid" and "same" padding
        // conventions for the declared stride.
        let in_s = layer.in_spatial() as u64;
        let k = layer.window() as u64;
        let s = layer.stride() as u64;
        let same = in_s.div_ceil(s);
        let valid = if in_s >= k { (in_s - k + 1).div_ceil(s) } else { 1 };
        let out = layer.out_spatial() as u64;
        if out > same || out < valid.min(same) {
            return Err(Error::Schema(format!(
                "layer {id}: out_spatial {out} outside the supported range {}..={} for in_spatial {in_s}, kernel {k}, stride {s}",
                valid.min(same),
                same
            )));
        }
        if let Layer::Conv(c) = layer {
            if c.in_channels == 0 || c.out_channels == 0 {
                return Err(Error::Schema(format!(
                    "layer {id}: channel widths must be at least 1"
                )));
            }
            if c.groups == 0 {
                return Err(Error::Schema(format!("layer {id}: groups must be at least 1")));
            }
            match c.conv_kind {
                ConvKind::Depthwise => {
                    if c.in_channels != c.out_channels {
                        return Err(Error::Schema(format!(
                            "layer {id}: depthwise layers require in_channels == out_channels"
                        )));
                    }
                    if c.groups != 1 {
                        return Err(Error::Schema(format!(
                            "layer {id}: groups is only valid on standard convolutions"
                        )));
                    }
                }
                ConvKind::Pointwise => {
                    if c.kernel_size != 1 {
                        return Err(Error::Schema(format!(
                            "layer {id}: pointwise layers require kernel_size == 1"
                        )));
                    }
                    if c.groups != 1 {
                        return Err(Error::Schema(format!(
                            "layer {id}: groups is only valid on standard convolutions"
                        )));
                    }
                }
                ConvKind::Standard => {
                    if c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0 {
                        return Err(Error::Schema(format!(
                            "layer {id}: groups must divide in_channels and out_channels"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_layer_inputs(&self, id: usize) -> Result<()> {
        let layer = &self.layers[id];
        if let Some(refs) = layer.inputs_field() {
            if refs.is_empty() {
                return Err(Error::Schema(format!("layer {id}: inputs must not be empty")));
            }
            if matches!(layer, Layer::Pool(_)) && refs.len() != 1 {
                return Err(Error::Schema(format!(
                    "layer {id}: pool layers take exactly one input"
                )));
            }
            for r in refs {
                if let InputRef::Layer(j) = r {
                    if *j >= id {
                        return Err(Error::Schema(format!(
                            "layer {id}: input {j} does not precede the layer (graph must be acyclic)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_macroblocks(&self) -> Result<()> {
        let mut owner = vec![None::<usize>; self.layers.len()];
        let mut previous_last: Option<usize> = None;
        for (i, mb) in self.macroblocks.iter().enumerate() {
            if mb.id != i {
                return Err(Error::MacroblockPartition(format!(
                    "macroblock ids must be contiguous: position {i} has id {}",
                    mb.id
                )));
            }
            if mb.layer_ids.is_empty() {
                return Err(Error::MacroblockPartition(format!("macroblock {i} is empty")));
            }
            if mb.base_width == 0 {
                return Err(Error::MacroblockPartition(format!(
                    "macroblock {i} has base_width 0"
                )));
            }
            let mut member_widths = Vec::new();
            for pair in mb.layer_ids.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(Error::MacroblockPartition(format!(
                        "macroblock {i} layer_ids must be strictly ascending"
                    )));
                }
            }
            if let Some(last) = previous_last {
                if mb.layer_ids[0] <= last {
                    return Err(Error::MacroblockPartition(format!(
                        "macroblock {i} starts at layer {} before macroblock {} ends",
                        mb.layer_ids[0],
                        i - 1
                    )));
                }
            }
            for &lid in &mb.layer_ids {
                let Some(conv) = self.layers.get(lid).and_then(Layer::as_conv) else {
                    return Err(Error::MacroblockPartition(format!(
                        "macroblock {i} member {lid} is not a conv layer"
                    )));
                };
                if owner[lid].is_some() {
                    return Err(Error::MacroblockPartition(format!(
                        "conv layer {lid} belongs to more than one macroblock"
                    )));
                }
                owner[lid] = Some(i);
                member_widths.push(conv.out_channels);
                if !mb.custom && conv.out_spatial != mb.out_spatial {
                    return Err(Error::MacroblockPartition(format!(
                        "macroblock {i} declares out_spatial {} but member layer {lid} has {}",
                        mb.out_spatial, conv.out_spatial
                    )));
                }
                if let Some(declared) = conv.macroblock_id {
                    if declared != i {
                        return Err(Error::MacroblockPartition(format!(
                            "layer {lid} declares macroblock_id {declared} but is listed in macroblock {i}"
                        )));
                    }
                }
            }
            if mb.custom
                && !mb
                    .layer_ids
                    .iter()
                    .any(|&lid| self.layers[lid].out_spatial() == mb.out_spatial)
            {
                return Err(Error::MacroblockPartition(format!(
                    "macroblock {i} out_spatial {} matches no member layer",
                    mb.out_spatial
                )));
            }
            if !member_widths.contains(&mb.base_width) {
                return Err(Error::MacroblockPartition(format!(
                    "macroblock {i} base_width {} is not the out width of any member",
                    mb.base_width
                )));
            }
            previous_last = Some(*mb.layer_ids.last().unwrap());
        }
        for (lid, layer) in self.layers.iter().enumerate() {
            if layer.as_conv().is_some() && owner[lid].is_none() {
                return Err(Error::MacroblockPartition(format!(
                    "conv layer {lid} belongs to no macroblock"
                )));
            }
        }
        Ok(())
    }

    fn fill_macroblock_ids(&mut self) {
        let mut owner = vec![None::<usize>; self.layers.len()];
        for mb in &self.macroblocks {
            for &lid in &mb.layer_ids {
                owner[lid] = Some(mb.id);
            }
        }
        for layer in &mut self.layers {
            if let Layer::Conv(c) = layer {
                if c.macroblock_id.is_none() {
                    c.macroblock_id = owner[c.id];
                }
            }
        }
    }
}

// ─── Macroblock inference ────────────────────────────────────────────────────

/// Groups conv layers into macroblocks by equal output spatial size.
///
/// Explicit annotations, when present, are preserved untouched, which
/// also makes the operation idempotent. Errors if the conv layers'
/// out_spatial sequence ever increases.
pub fn infer_macroblocks(graph: &ModelGraph) -> Result<ModelGraph> {
    if !graph.macroblocks.is_empty() {
        return Ok(graph.clone());
    }
    let mut result = graph.clone();
    let mut blocks: Vec<Macroblock> = Vec::new();
    let mut previous: Option<u32> = None;
    for conv in graph.conv_layers() {
        match previous {
            Some(spatial) if conv.out_spatial > spatial => {
                return Err(Error::NonMonotoneSpatial { layer: conv.id });
            }
            Some(spatial) if conv.out_spatial == spatial => {
                let last = blocks.last_mut().unwrap();
                last.layer_ids.push(conv.id);
                last.base_width = conv.out_channels;
            }
            _ => {
                blocks.push(Macroblock {
                    id: blocks.len(),
                    layer_ids: vec![conv.id],
                    out_spatial: conv.out_spatial,
                    base_width: conv.out_channels,
                    custom: false,
                });
            }
        }
        previous = Some(conv.out_spatial);
    }
    if let Some(mb) = result.classifier_width_coupling {
        if mb >= blocks.len() {
            return Err(Error::Schema(format!(
                "classifier_width_coupling: macroblock {mb} does not exist after inference"
            )));
        }
    }
    result.macroblocks = blocks;
    result.fill_macroblock_ids();
    Ok(result)
}

/// Parses a document and resolves macroblocks (inferring them when the
/// document declares none). Fingerprints are taken on resolved graphs.
pub fn parse_and_resolve(document: &str) -> Result<ModelGraph> {
    let graph = parse_model(document)?;
    infer_macroblocks(&graph)
}

// ─── Width rescaling ─────────────────────────────────────────────────────────

/// Core width-propagation pass shared by plan application and uniform
/// alpha-scaling.
///
/// `mb_widths` gives each macroblock's new base width; `layer_scale`
/// maps (macroblock id, old out width) to the new out width for
/// scalable non-depthwise convs. Depthwise layers always follow their
/// producer, and every conv's in_channels is recomputed from its
/// producers' new widths. The classifier term scales linearly with the
/// coupled macroblock's base width, rounded to the nearest count.
pub(crate) fn rescale_graph(
    graph: &ModelGraph,
    mb_widths: &[u32],
    layer_scale: &dyn Fn(usize, u32) -> u32,
) -> Result<ModelGraph> {
    assert_eq!(mb_widths.len(), graph.macroblocks.len());
    let mut result = graph.clone();
    let mut widths = vec![0u32; graph.layers.len()];

    for i in 0..result.layers.len() {
        let feeding: u32 = graph
            .inputs_of(i)
            .iter()
            .map(|r| match r {
                InputRef::Image => graph.input_channels,
                InputRef::Layer(j) => widths[*j],
            })
            .sum();
        match &mut result.layers[i] {
            Layer::Conv(c) => {
                c.in_channels = feeding;
                c.out_channels = match c.conv_kind {
                    ConvKind::Depthwise => feeding,
                    _ if c.scalable => {
                        let mb = c.macroblock_id.expect("resolved graph");
                        layer_scale(mb, c.out_channels)
                    }
                    _ => c.out_channels,
                };
                widths[i] = c.out_channels;
            }
            Layer::Pool(_) => widths[i] = feeding,
        }
    }

    for (mb, &width) in result.macroblocks.iter_mut().zip(mb_widths) {
        if width == 0 {
            return Err(Error::WidthUnderflow { macroblock: mb.id });
        }
        mb.base_width = width;
    }
    if let Some(coupled) = graph.classifier_width_coupling {
        let before = graph.macroblocks[coupled].base_width;
        let after = result.macroblocks[coupled].base_width;
        let scaled = graph.classifier_params as f64 * (after as f64 / before as f64);
        result.classifier_params = scaled.round() as u64;
    }
    result.validate()?;
    Ok(result)
}

fn ceil_ratio(width: u32, numer: u32, denom: u32) -> u32 {
    ((width as u64 * numer as u64).div_ceil(denom as u64)) as u32
}

/// Applies a scaling plan, producing a new graph whose scalable widths
/// in macroblock `i` are scaled by `compact_width / original_width`
/// with ceiling rounding (the integer form of the plan's `beta`,
/// exact across plan-file round trips).
pub fn apply_plan(graph: &ModelGraph, plan: &ScalingPlan) -> Result<ModelGraph> {
    if graph.macroblocks.is_empty() {
        return Err(Error::PlanMismatch(
            "graph has no macroblock annotations; resolve macroblocks first".into(),
        ));
    }
    if plan.macroblocks.len() != graph.macroblocks.len() {
        return Err(Error::PlanMismatch(format!(
            "plan has {} macroblocks, graph has {}",
            plan.macroblocks.len(),
            graph.macroblocks.len()
        )));
    }
    if !plan.fingerprint.is_empty() {
        let actual = graph.fingerprint();
        if plan.fingerprint != actual {
            return Err(Error::FingerprintMismatch {
                expected: plan.fingerprint.clone(),
                found: actual,
            });
        }
    }
    let mut ratios = Vec::with_capacity(plan.macroblocks.len());
    let mut new_widths = Vec::with_capacity(plan.macroblocks.len());
    for (mb, planned) in graph.macroblocks.iter().zip(&plan.macroblocks) {
        if planned.macroblock_id != mb.id {
            return Err(Error::PlanMismatch(format!(
                "plan entry {} does not match macroblock {}",
                planned.macroblock_id, mb.id
            )));
        }
        if planned.original_width != mb.base_width {
            return Err(Error::PlanMismatch(format!(
                "macroblock {}: plan original_width {} but graph base_width {}",
                mb.id, planned.original_width, mb.base_width
            )));
        }
        if planned.compact_width == 0 {
            return Err(Error::WidthUnderflow { macroblock: mb.id });
        }
        ratios.push((planned.compact_width, planned.original_width));
        new_widths.push(planned.compact_width);
    }
    rescale_graph(graph, &new_widths, &|mb, w| {
        let (numer, denom) = ratios[mb];
        ceil_ratio(w, numer, denom)
    })
}

// ─── Builder ─────────────────────────────────────────────────────────────────

/// Incremental graph construction helper used by the generator zoo and
/// tests. Tracks the running spatial size and channel width so layers
/// chain by default; `out_spatial` is always `ceil(in / stride)`.
pub struct GraphBuilder {
    name: String,
    input_resolution: u32,
    input_channels: u32,
    batch_norm: bool,
    classifier_params: u64,
    classifier_width_coupling: Option<usize>,
    layers: Vec<Layer>,
    spatial: u32,
    width: u32,
}

impl GraphBuilder {
    pub fn new(name: &str, input_resolution: u32) -> Self {
        Self {
            name: name.to_string(),
            input_resolution,
            input_channels: 3,
            batch_norm: true,
            classifier_params: 0,
            classifier_width_coupling: None,
            layers: Vec::new(),
            spatial: input_resolution,
            width: 3,
        }
    }

    pub fn input_channels(mut self, channels: u32) -> Self {
        self.input_channels = channels;
        self.width = channels;
        self
    }

    pub fn batch_norm(mut self, enabled: bool) -> Self {
        self.batch_norm = enabled;
        self
    }

    pub fn classifier(mut self, params: u64, coupled_macroblock: Option<usize>) -> Self {
        self.classifier_params = params;
        self.classifier_width_coupling = coupled_macroblock;
        self
    }

    pub fn next_id(&self) -> usize {
        self.layers.len()
    }

    pub fn current_width(&self) -> u32 {
        self.width
    }

    pub fn current_spatial(&self) -> u32 {
        self.spatial
    }

    /// Appends a conv chained to the previous layer.
    pub fn conv(
        &mut self,
        kind: ConvKind,
        kernel: u32,
        stride: u32,
        out_channels: u32,
        has_relu: bool,
        scalable: bool,
    ) -> usize {
        let in_channels = self.width;
        self.push_conv(None, kind, kernel, stride, in_channels, out_channels, has_relu, scalable)
    }

    /// Appends a conv with explicit producers (widths are summed).
    pub fn conv_from(
        &mut self,
        inputs: Vec<InputRef>,
        kind: ConvKind,
        kernel: u32,
        stride: u32,
        out_channels: u32,
        has_relu: bool,
        scalable: bool,
    ) -> usize {
        let in_channels: u32 = inputs.iter().map(|r| self.ref_width(*r)).sum();
        let in_spatial = self.ref_spatial(inputs[0]);
        self.spatial = in_spatial;
        self.push_conv(
            Some(inputs),
            kind,
            kernel,
            stride,
            in_channels,
            out_channels,
            has_relu,
            scalable,
        )
    }

    fn ref_width(&self, r: InputRef) -> u32 {
        match r {
            InputRef::Image => self.input_channels,
            InputRef::Layer(id) => match &self.layers[id] {
                Layer::Conv(c) => c.out_channels,
                Layer::Pool(p) => {
                    let upstream = p
                        .inputs
                        .as_ref()
                        .map(|refs| refs[0])
                        .unwrap_or(if id == 0 {
                            InputRef::Image
                        } else {
                            InputRef::Layer(id - 1)
                        });
                    self.ref_width(upstream)
                }
            },
        }
    }

    fn ref_spatial(&self, r: InputRef) -> u32 {
        match r {
            InputRef::Image => self.input_resolution,
            InputRef::Layer(id) => self.layers[id].out_spatial(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push_conv(
        &mut self,
        inputs: Option<Vec<InputRef>>,
        kind: ConvKind,
        kernel: u32,
        stride: u32,
        in_channels: u32,
        out_channels: u32,
        has_relu: bool,
        scalable: bool,
    ) -> usize {
        let id = self.layers.len();
        let in_spatial = self.spatial;
        let out_spatial = in_spatial.div_ceil(stride);
        self.layers.push(Layer::Conv(ConvLayer {
            id,
            conv_kind: kind,
            kernel_size: kernel,
            stride,
            in_channels,
            out_channels,
            in_spatial,
            out_spatial,
            has_relu,
            scalable,
            macroblock_id: None,
            inputs,
            groups: 1,
        }));
        self.spatial = out_spatial;
        self.width = out_channels;
        id
    }

    /// Sets the groups of the most recently added conv layer.
    pub fn grouped(&mut self, groups: u32) {
        if let Some(Layer::Conv(c)) = self.layers.last_mut() {
            c.groups = groups;
        }
    }

    pub fn pool(&mut self, window: u32, stride: u32, kind: PoolKind) -> usize {
        let id = self.layers.len();
        let in_spatial = self.spatial;
        let out_spatial = in_spatial.div_ceil(stride);
        self.layers.push(Layer::Pool(PoolLayer {
            id,
            window,
            stride,
            in_spatial,
            out_spatial,
            pool_kind: kind,
            inputs: None,
        }));
        self.spatial = out_spatial;
        id
    }

    /// Appends a pool with an explicit producer (for parallel
    /// downsampling branches).
    pub fn pool_from(&mut self, input: InputRef, window: u32, stride: u32, kind: PoolKind) -> usize {
        let id = self.layers.len();
        let in_spatial = self.ref_spatial(input);
        let out_spatial = in_spatial.div_ceil(stride);
        self.layers.push(Layer::Pool(PoolLayer {
            id,
            window,
            stride,
            in_spatial,
            out_spatial,
            pool_kind: kind,
            inputs: Some(vec![input]),
        }));
        self.spatial = out_spatial;
        id
    }

    fn graph(self, macroblocks: Vec<Macroblock>) -> ModelGraph {
        ModelGraph {
            version: IR_VERSION.to_string(),
            name: self.name,
            input_resolution: self.input_resolution,
            input_channels: self.input_channels,
            batch_norm: self.batch_norm,
            classifier_params: self.classifier_params,
            classifier_width_coupling: self.classifier_width_coupling,
            layers: self.layers,
            macroblocks,
        }
    }

    /// Finishes with inferred macroblocks.
    pub fn build(self) -> Result<ModelGraph> {
        let graph = self.graph(Vec::new());
        graph.validate()?;
        infer_macroblocks(&graph)
    }

    /// Finishes with explicit macroblock segments; `segments` lists
    /// (member layer ids, base_width) per macroblock in order.
    pub fn build_with_segments(self, segments: Vec<(Vec<usize>, u32)>) -> Result<ModelGraph> {
        let mut macroblocks = Vec::new();
        for (id, (layer_ids, base_width)) in segments.into_iter().enumerate() {
            let last = *layer_ids.last().expect("segment not empty");
            let out_spatial = self.layers[last].out_spatial();
            let custom = layer_ids
                .iter()
                .any(|&lid| self.layers[lid].out_spatial() != out_spatial);
            macroblocks.push(Macroblock {
                id,
                layer_ids,
                out_spatial,
                base_width,
                custom,
            });
        }
        let mut graph = self.graph(macroblocks);
        graph.validate()?;
        graph.fill_macroblock_ids();
        Ok(graph)
    }
}

// ─── Tests ───────────────────────────────────────────────────────────────────

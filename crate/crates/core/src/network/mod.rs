//! Hybrid model description, validation against the core's hardware limits,
//! and functional (non-cycle-accurate) inference.

mod encoding;
mod forward;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::BiasMode;
use crate::quant;

pub use encoding::{
    levels_to_count, normalize_columns, parse_value_rows, rate_encode, rate_train, Activations,
    EncodeTarget, EncodedBatch, EncodedInput,
};
pub use forward::{argmax, forward, forward_layers, forward_with, Prediction};

/// Bit-width of quantized weights and ANN activations in deployed models.
pub const ACT_BITS: u32 = 8;
pub const ACT_MAX: u32 = (1 << ACT_BITS) - 1;

/// Read granularities supported by the input spike FIFO.
pub const FIFO_WIDTHS: [u32; 5] = [1, 2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Ann,
    If,
    Ssf,
}

impl LayerKind {
    pub fn code(self) -> u8 {
        match self {
            LayerKind::Ann => 0,
            LayerKind::If => 1,
            LayerKind::Ssf => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(LayerKind::Ann),
            1 => Some(LayerKind::If),
            2 => Some(LayerKind::Ssf),
            _ => None,
        }
    }

    pub fn is_spiking(self) -> bool {
        !matches!(self, LayerKind::Ann)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerKind::Ann => "ANN",
            LayerKind::If => "IF",
            LayerKind::Ssf => "SSF",
        })
    }
}

/// One quantized layer as it is deployed on the core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_width: usize,
    pub out_width: usize,
    pub bias_mode: BiasMode,
    /// Quantized firing threshold (spiking layers).
    pub threshold_q: i32,
    /// Requantization multipliers and shifts (ANN layers).
    pub m_w: u32,
    pub n_shift: u8,
    pub m_b: u32,
    pub m_shift: u8,
    /// Row-major `[out][in]`.
    pub weights: Vec<i8>,
    pub biases: Vec<i32>,
}

impl LayerSpec {
    fn blank(kind: LayerKind, in_width: usize, out_width: usize) -> Self {
        Self {
            kind,
            in_width,
            out_width,
            bias_mode: BiasMode::Scaled,
            threshold_q: 0,
            m_w: 0,
            n_shift: 0,
            m_b: 0,
            m_shift: 0,
            weights: vec![0; in_width * out_width],
            biases: vec![0; out_width],
        }
    }

    /// Spiking layer (`LayerKind::If` or `LayerKind::Ssf`) with zero weights.
    pub fn spiking(kind: LayerKind, in_width: usize, out_width: usize, threshold_q: i32) -> Self {
        debug_assert!(kind.is_spiking());
        Self {
            threshold_q,
            ..Self::blank(kind, in_width, out_width)
        }
    }

    /// ANN layer with zero weights and unit requantization at 16-bit shifts.
    pub fn ann(in_width: usize, out_width: usize) -> Self {
        Self {
            m_w: 1 << 16,
            n_shift: 16,
            m_b: 1 << 16,
            m_shift: 16,
            ..Self::blank(LayerKind::Ann, in_width, out_width)
        }
    }

    pub fn with_weights(mut self, weights: Vec<i8>, biases: Vec<i32>) -> Self {
        self.weights = weights;
        self.biases = biases;
        self
    }

    pub fn with_bias_mode(mut self, mode: BiasMode) -> Self {
        self.bias_mode = mode;
        self
    }

    pub fn row(&self, neuron: usize) -> &[i8] {
        &self.weights[neuron * self.in_width..(neuron + 1) * self.in_width]
    }

    pub fn param_count(&self) -> usize {
        self.in_width * self.out_width + self.out_width
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Timestep window `T`.
    pub window: u32,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(window: u32, layers: Vec<LayerSpec>) -> Self {
        Self { window, layers }
    }

    pub fn input_width(&self) -> Option<usize> {
        self.layers.first().map(|l| l.in_width)
    }

    pub fn output_width(&self) -> Option<usize> {
        self.layers.last().map(|l| l.out_width)
    }

    pub fn param_count(&self) -> usize {
        param_count(self)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.out_width).collect()
    }

    /// Structured model config: the integer network as JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Weights plus biases over all layers.
pub fn param_count(spec: &NetworkSpec) -> usize {
    spec.layers.iter().map(LayerSpec::param_count).sum()
}

/// Physical limits of one accelerator core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardwareLimits {
    pub max_layers: usize,
    pub max_width: usize,
    pub weight_mem_bytes: usize,
    pub act_mem_bytes: usize,
    pub port_bits: u32,
    /// Timesteps of IF membrane state buffered per weight pass.
    pub membrane_buffer_depth: u32,
}

impl Default for HardwareLimits {
    fn default() -> Self {
        Self {
            max_layers: 6,
            max_width: 128,
            weight_mem_bytes: 65536,
            act_mem_bytes: 4096,
            port_bits: 128,
            membrane_buffer_depth: 16,
        }
    }
}

impl HardwareLimits {
    pub fn port_bytes(&self) -> usize {
        self.port_bits as usize / 8
    }

    pub fn check(&self) -> Result<()> {
        if ![8, 16, 32, 64, 128].contains(&self.port_bits) {
            return Err(Error::Fault(format!(
                "port width {} is not one of 8/16/32/64/128",
                self.port_bits
            )));
        }
        if !(1..=16).contains(&self.membrane_buffer_depth) {
            return Err(Error::Fault(format!(
                "membrane buffer depth {} outside [1, 16]",
                self.membrane_buffer_depth
            )));
        }
        Ok(())
    }
}

/// `ceil(log2(T + 1))`: bits to hold a spike count in `[0, T]`.
pub fn count_bits(window: u32) -> u32 {
    32 - window.leading_zeros()
}

/// Narrowest FIFO read width that holds `bits`.
pub fn fifo_width(bits: u32) -> Option<u32> {
    FIFO_WIDTHS.iter().copied().find(|&w| w >= bits)
}

/// A contiguous run of stored activations: for IF layers one block of up to
/// `membrane_buffer_depth` timesteps, otherwise the whole layer output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub first_step: u32,
    pub steps: u32,
    /// Stored bits per neuron (a FIFO read width).
    pub bits: u32,
}

/// How a layer of `kind` lays out its output in activation memory.
pub fn output_segments(kind: LayerKind, window: u32, depth: u32) -> Vec<Segment> {
    match kind {
        LayerKind::Ann => vec![Segment {
            first_step: 0,
            steps: window,
            bits: ACT_BITS,
        }],
        LayerKind::Ssf => {
            let bits = fifo_width(count_bits(window)).unwrap_or(16);
            vec![Segment {
                first_step: 0,
                steps: window,
                bits,
            }]
        }
        LayerKind::If => (0..window.div_ceil(depth))
            .map(|p| {
                let first_step = p * depth;
                let steps = depth.min(window - first_step);
                Segment {
                    first_step,
                    steps,
                    bits: fifo_width(steps).unwrap_or(16),
                }
            })
            .collect(),
    }
}

fn align_up(value: usize, to: usize) -> usize {
    value.div_ceil(to) * to
}

/// Bytes used by `width` neurons stored in `segments`, each segment port-aligned.
pub fn segments_bytes(segments: &[Segment], width: usize, port_bytes: usize) -> usize {
    segments
        .iter()
        .map(|s| align_up((width * s.bits as usize).div_ceil(8), port_bytes))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRegion {
    pub weights: usize,
    pub biases: usize,
    pub end: usize,
}

/// Weight-memory image layout: each layer's int8 weights then its int32 biases,
/// both starting on a port boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightLayout {
    pub layers: Vec<LayerRegion>,
    pub total_bytes: usize,
}

pub fn weight_layout(spec: &NetworkSpec, port_bytes: usize) -> WeightLayout {
    let mut cursor = 0;
    let layers = spec
        .layers
        .iter()
        .map(|l| {
            let weights = cursor;
            let biases = align_up(weights + l.in_width * l.out_width, port_bytes);
            let end = align_up(biases + 4 * l.out_width, port_bytes);
            cursor = end;
            LayerRegion {
                weights,
                biases,
                end,
            }
        })
        .collect();
    WeightLayout {
        layers,
        total_bytes: cursor,
    }
}

/// Activation memory split: two ping-pong regions and a residual-potential
/// spill area for multi-pass IF layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActivationLayout {
    pub region_bytes: usize,
    pub regions: [usize; 2],
    pub spill_base: usize,
}

pub const SPILL_BYTES_PER_NEURON: usize = 4;

pub fn activation_layout(limits: &HardwareLimits) -> ActivationLayout {
    let port = limits.port_bytes();
    let spill = align_up(limits.max_width * SPILL_BYTES_PER_NEURON, port);
    let region_bytes = (limits.act_mem_bytes.saturating_sub(spill) / 2) / port * port;
    ActivationLayout {
        region_bytes,
        regions: [0, region_bytes],
        spill_base: 2 * region_bytes,
    }
}

/// Stored representation that a layer of `kind` consumes.
pub fn input_segments(kind: LayerKind, window: u32, depth: u32) -> Vec<Segment> {
    output_segments(kind, window, depth)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    NoLayers,
    TooManyLayers { count: usize, max: usize },
    WindowOutOfRange { window: u32 },
    WidthOutOfRange { width: usize, max: usize },
    ChainMismatch { previous_out: usize, input: usize },
    WeightShape { expected: usize, actual: usize },
    BiasShape { expected: usize, actual: usize },
    ThresholdNotPositive { threshold: i32 },
    ShiftOutOfRange { shift: u8 },
    WeightCapacity { bytes: usize, capacity: usize },
    ActivationCapacity { bytes: usize, capacity: usize },
    Accumulator { needed: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub layer: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.layer {
            write!(f, "layer {l}: ")?;
        }
        match &self.kind {
            ViolationKind::NoLayers => write!(f, "network has no layers"),
            ViolationKind::TooManyLayers { count, max } => {
                write!(f, "layers > {max} ({count} layers)")
            }
            ViolationKind::WindowOutOfRange { window } => {
                write!(f, "window {window} outside [1, 255]")
            }
            ViolationKind::WidthOutOfRange { width, max } => {
                write!(f, "width > {max} (width {width})")
            }
            ViolationKind::ChainMismatch {
                previous_out,
                input,
            } => {
                write!(
                    f,
                    "input width {input} does not match previous output width {previous_out}"
                )
            }
            ViolationKind::WeightShape { expected, actual } => {
                write!(f, "{actual} weights, expected {expected}")
            }
            ViolationKind::BiasShape { expected, actual } => {
                write!(f, "{actual} biases, expected {expected}")
            }
            ViolationKind::ThresholdNotPositive { threshold } => {
                write!(f, "spiking threshold {threshold} must be positive")
            }
            ViolationKind::ShiftOutOfRange { shift } => write!(f, "shift {shift} outside [0, 31]"),
            ViolationKind::WeightCapacity { bytes, capacity } => {
                write!(
                    f,
                    "params > capacity ({bytes} bytes of weight memory, {capacity} available)"
                )
            }
            ViolationKind::ActivationCapacity { bytes, capacity } => {
                write!(f, "activations need {bytes} bytes, region holds {capacity}")
            }
            ViolationKind::Accumulator { needed } => {
                write!(f, "accumulator needs {needed} bits, 32 available")
            }
        }
    }
}

/// Checks every hardware limit; returns all violations found.
pub fn validate(spec: &NetworkSpec) -> std::result::Result<(), Vec<Violation>> {
    validate_with(spec, &HardwareLimits::default())
}

pub fn validate_with(
    spec: &NetworkSpec,
    limits: &HardwareLimits,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let mut push = |layer: Option<usize>, kind: ViolationKind| out.push(Violation { layer, kind });

    if spec.layers.is_empty() {
        push(None, ViolationKind::NoLayers);
    }
    if spec.layers.len() > limits.max_layers {
        push(
            None,
            ViolationKind::TooManyLayers {
                count: spec.layers.len(),
                max: limits.max_layers,
            },
        );
    }
    if !(1..=255).contains(&spec.window) {
        push(
            None,
            ViolationKind::WindowOutOfRange {
                window: spec.window,
            },
        );
    }

    let act = activation_layout(limits);
    let depth = limits.membrane_buffer_depth.max(1);
    let window = spec.window.max(1);
    let port = limits.port_bytes();

    for (i, l) in spec.layers.iter().enumerate() {
        let at = Some(i);
        for width in [l.in_width, l.out_width] {
            if width == 0 || width > limits.max_width {
                push(
                    at,
                    ViolationKind::WidthOutOfRange {
                        width,
                        max: limits.max_width,
                    },
                );
            }
        }
        if i > 0 && spec.layers[i - 1].out_width != l.in_width {
            push(
                at,
                ViolationKind::ChainMismatch {
                    previous_out: spec.layers[i - 1].out_width,
                    input: l.in_width,
                },
            );
        }
        if l.weights.len() != l.in_width * l.out_width {
            push(
                at,
                ViolationKind::WeightShape {
                    expected: l.in_width * l.out_width,
                    actual: l.weights.len(),
                },
            );
        }
        if l.biases.len() != l.out_width {
            push(
                at,
                ViolationKind::BiasShape {
                    expected: l.out_width,
                    actual: l.biases.len(),
                },
            );
        }
        match l.kind {
            LayerKind::Ann => {
                for shift in [l.n_shift, l.m_shift] {
                    if shift > 31 {
                        push(at, ViolationKind::ShiftOutOfRange { shift });
                    }
                }
                let needed = quant::accumulator_bits(l.in_width.max(1), ACT_BITS);
                if needed > 32 {
                    push(at, ViolationKind::Accumulator { needed });
                }
            }
            LayerKind::If | LayerKind::Ssf => {
                if l.threshold_q <= 0 {
                    push(
                        at,
                        ViolationKind::ThresholdNotPositive {
                            threshold: l.threshold_q,
                        },
                    );
                }
            }
        }
        // Each layer stores its output in its own representation; the external
        // input arrives in the first layer's representation.
        let mut stored = vec![segments_bytes(
            &output_segments(l.kind, window, depth),
            l.out_width,
            port,
        )];
        if i == 0 {
            stored.push(segments_bytes(
                &input_segments(l.kind, window, depth),
                l.in_width,
                port,
            ));
        }
        for bytes in stored {
            if bytes > act.region_bytes {
                push(
                    at,
                    ViolationKind::ActivationCapacity {
                        bytes,
                        capacity: act.region_bytes,
                    },
                );
            }
        }
    }

    let image = weight_layout(spec, port).total_bytes;
    if image > limits.weight_mem_bytes {
        push(
            None,
            ViolationKind::WeightCapacity {
                bytes: image,
                capacity: limits.weight_mem_bytes,
            },
        );
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// `validate` mapped into the crate error type.
pub fn ensure_valid(spec: &NetworkSpec, limits: &HardwareLimits) -> Result<()> {
    validate_with(spec, limits).map_err(Error::InvalidNetwork)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn shaped(
        kind: LayerKind,
        input: usize,
        widths: &[usize],
        window: u32,
    ) -> NetworkSpec {
        let mut prev = input;
        let layers = widths
            .iter()
            .map(|&w| {
                let l = match kind {
                    LayerKind::Ann => LayerSpec::ann(prev, w),
                    k => LayerSpec::spiking(k, prev, w, 1),
                };
                prev = w;
                l
            })
            .collect();
        NetworkSpec::new(window, layers)
    }

    #[test]
    fn ecg_shape_is_valid() {
        let spec = shaped(LayerKind::Ssf, 128, &[32, 64, 32, 16, 64], 31);
        assert_eq!(validate(&spec), Ok(()));
    }

    #[test]
    fn wide_layer_is_flagged() {
        let spec = shaped(LayerKind::Ssf, 16, &[256, 16], 4);
        let v = validate(&spec).unwrap_err();
        assert!(
            v.iter().any(|v| v.to_string().contains("width > 128")),
            "{v:?}"
        );
        assert!(v.iter().all(|v| v.layer.is_some()));
    }

    #[test]
    fn seven_wide_layers_are_flagged() {
        let spec = shaped(LayerKind::Ssf, 128, &[128; 7], 4);
        // 7 * (128 * 128 + 128) = 115584 parameters against 64 KiB of weight memory
        assert_eq!(param_count(&spec), 115_584);
        let v = validate(&spec).unwrap_err();
        let text: Vec<String> = v.iter().map(|v| v.to_string()).collect();
        assert!(text.iter().any(|t| t.contains("layers > 6")), "{text:?}");
        assert!(
            text.iter().any(|t| t.contains("params > capacity")),
            "{text:?}"
        );
    }

    #[test]
    fn chaining_and_shapes_are_checked() {
        let mut spec = shaped(LayerKind::Ann, 4, &[8, 3], 4);
        spec.layers[1].in_width = 7;
        let v = validate(&spec).unwrap_err();
        assert!(v.iter().any(|v| matches!(
            v.kind,
            ViolationKind::ChainMismatch {
                previous_out: 8,
                input: 7
            }
        )));
        assert!(v
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::WeightShape { .. })));
    }

    #[test]
    fn long_if_window_overflows_activation_memory() {
        let spec = shaped(LayerKind::If, 128, &[128, 16], 255);
        let v = validate(&spec).unwrap_err();
        assert!(v
            .iter()
            .any(|v| matches!(v.kind, ViolationKind::ActivationCapacity { .. })));
        assert!(validate(&shaped(LayerKind::If, 128, &[128, 16], 100)).is_ok());
    }

    #[test]
    fn param_count_examples() {
        let single = shaped(LayerKind::Ann, 2, &[3], 4);
        assert_eq!(param_count(&single), 9);
        let eeg = shaped(LayerKind::Ssf, 128, &[128, 32, 32], 31);
        // 128*128+128 + 128*32+32 + 32*32+32
        assert_eq!(param_count(&eeg), 16_512 + 4_128 + 1_056);
        assert_eq!(param_count(&eeg), 21_696);
        assert_eq!(param_count(&NetworkSpec::new(4, vec![])), 0);
    }

    #[test]
    fn count_and_fifo_widths() {
        assert_eq!(
            [1, 3, 4, 7, 15, 31, 255].map(count_bits),
            [1, 2, 3, 3, 4, 5, 8]
        );
        assert_eq!(fifo_width(3), Some(4));
        assert_eq!(fifo_width(5), Some(8));
        assert_eq!(fifo_width(17), None);
    }

    #[test]
    fn if_segments_split_by_depth() {
        let s = output_segments(LayerKind::If, 31, 16);
        assert_eq!(s.len(), 2);
        assert_eq!(
            (
                s[0].steps,
                s[0].bits,
                s[1].first_step,
                s[1].steps,
                s[1].bits
            ),
            (16, 16, 16, 15, 16)
        );
        let s = output_segments(LayerKind::If, 3, 16);
        assert_eq!((s.len(), s[0].bits), (1, 4));
    }

    #[test]
    fn weight_layout_is_port_aligned() {
        let spec = shaped(LayerKind::Ssf, 5, &[3, 2], 4);
        let layout = weight_layout(&spec, 16);
        assert_eq!(
            layout.layers[0],
            LayerRegion {
                weights: 0,
                biases: 16,
                end: 32
            }
        );
        assert_eq!(
            layout.layers[1],
            LayerRegion {
                weights: 32,
                biases: 48,
                end: 64
            }
        );
    }
}

//! Reference workloads: ECG- and EEG-shaped networks in all-IF, all-SSF and
//! hybrid form converted from one float model, plus random valid networks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{quantize_model, FloatLayer, FloatModel};
use crate::network::{
    rate_encode, validate_with, Activations, EncodeTarget, EncodedInput, HardwareLimits, LayerKind,
    LayerSpec, NetworkSpec, ACT_MAX,
};
use crate::neuron::{BiasMode, SpikeTrain};
use crate::quant::QuantConfig;

pub const REFERENCE_INPUT_WIDTH: usize = 128;
pub const ECG_WIDTHS: [usize; 5] = [32, 64, 32, 16, 64];
pub const EEG_WIDTHS: [usize; 3] = [128, 32, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    If,
    Ssf,
    Hybrid,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::If, Variant::Ssf, Variant::Hybrid];

    pub fn kind(self, layer: usize) -> LayerKind {
        match (self, layer) {
            (Variant::If, _) => LayerKind::If,
            (Variant::Ssf, _) => LayerKind::Ssf,
            (Variant::Hybrid, 0) => LayerKind::Ann,
            (Variant::Hybrid, _) => LayerKind::Ssf,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::If => "if",
            Variant::Ssf => "ssf",
            Variant::Hybrid => "hybrid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

/// Uniform inputs in `[0, 1]`.
pub fn random_inputs(width: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..width).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

/// All-ANN float model with He-uniform weights and small biases.
pub fn random_float_ann(input: usize, widths: &[usize], rng: &mut impl Rng) -> FloatModel {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for &w in widths {
        let limit = (6.0 / fan_in as f64).sqrt();
        layers.push(FloatLayer {
            kind: LayerKind::Ann,
            weights: (0..w)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-limit..limit)).collect())
                .collect(),
            bias: (0..w).map(|_| rng.gen_range(-0.05..0.05)).collect(),
            threshold: None,
            bias_mode: BiasMode::Scaled,
        });
        fan_in = w;
    }
    FloatModel { window: 1, layers }
}

fn relu_layer(l: &FloatLayer, x: &[f64]) -> Vec<f64> {
    l.weights
        .iter()
        .zip(&l.bias)
        .map(|(row, b)| (b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()).max(0.0))
        .collect()
}

/// Converts an all-ANN float model to `variant` by threshold balancing: each
/// spiking layer is rescaled so that a full-window count stands for the largest
/// activation that layer reached on `calibration`, with unit threshold.
pub fn convert(
    ann: &FloatModel,
    variant: Variant,
    window: u32,
    calibration: &[Vec<f64>],
) -> Result<FloatModel> {
    if ann.layers.iter().any(|l| l.kind != LayerKind::Ann) {
        return Err(Error::Shape("conversion expects an all-ANN model".into()));
    }
    if calibration.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut acts: Vec<Vec<f64>> = calibration.to_vec();
    let mut prev_peak = 1.0;
    let mut layers = Vec::with_capacity(ann.layers.len());
    for (i, l) in ann.layers.iter().enumerate() {
        acts = acts.iter().map(|x| relu_layer(l, x)).collect();
        let peak = acts.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
        let peak = if peak > 0.0 { peak } else { 1.0 };
        let kind = variant.kind(i);
        layers.push(match kind {
            LayerKind::Ann => l.clone(),
            _ => {
                let gain = prev_peak / peak;
                FloatLayer {
                    kind,
                    weights: l
                        .weights
                        .iter()
                        .map(|r| r.iter().map(|w| w * gain).collect())
                        .collect(),
                    bias: l.bias.iter().map(|b| b / peak).collect(),
                    threshold: Some(1.0),
                    bias_mode: BiasMode::Scaled,
                }
            }
        });
        prev_peak = peak;
    }
    Ok(FloatModel { window, layers })
}

/// A reference network: `widths` over a 128-wide input, converted to `variant`
/// and quantized to 8 bits. The float weights depend only on `seed`, so all
/// variants and windows share them.
pub fn reference_network(
    widths: &[usize],
    variant: Variant,
    window: u32,
    seed: u64,
) -> Result<NetworkSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ann = random_float_ann(REFERENCE_INPUT_WIDTH, widths, &mut rng);
    let calibration = random_inputs(REFERENCE_INPUT_WIDTH, 64, &mut rng);
    let model = convert(&ann, variant, window, &calibration)?;
    quantize_model(&model, &calibration, &QuantConfig::default())
}

pub fn ecg_network(variant: Variant, window: u32, seed: u64) -> Result<NetworkSpec> {
    reference_network(&ECG_WIDTHS, variant, window, seed)
}

pub fn eeg_network(variant: Variant, window: u32, seed: u64) -> Result<NetworkSpec> {
    reference_network(&EEG_WIDTHS, variant, window, seed)
}

/// A random raw sample encoded for the first layer of `spec`.
pub fn reference_input(spec: &NetworkSpec, seed: u64) -> Result<EncodedInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.input_width().unwrap_or(0);
    let kind = spec.layers.first().map_or(LayerKind::Ann, |l| l.kind);
    rate_encode(
        &random_inputs(width, 1, &mut rng)[0],
        spec.window,
        EncodeTarget::for_layer(kind),
    )
}

/// Random integer network that passes [`validate_with`] against `limits`.
pub fn random_network(
    rng: &mut impl Rng,
    max_layers: usize,
    max_width: usize,
    limits: &HardwareLimits,
) -> NetworkSpec {
    loop {
        let window = rng.gen_range(1..=31);
        let depth = rng.gen_range(1..=max_layers.min(limits.max_layers));
        let mut in_width = rng.gen_range(1..=max_width);
        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let out_width = rng.gen_range(1..=max_width);
            let kind = match rng.gen_range(0..3) {
                0 => LayerKind::Ann,
                1 => LayerKind::If,
                _ => LayerKind::Ssf,
            };
            layers.push(random_layer(kind, in_width, out_width, rng));
            in_width = out_width;
        }
        let spec = NetworkSpec::new(window, layers);
        if validate_with(&spec, limits).is_ok() {
            return spec;
        }
    }
}

fn random_layer(
    kind: LayerKind,
    in_width: usize,
    out_width: usize,
    rng: &mut impl Rng,
) -> LayerSpec {
    let weights = (0..in_width * out_width).map(|_| rng.gen::<i8>()).collect();
    let biases = (0..out_width)
        .map(|_| rng.gen_range(-2000..=2000))
        .collect();
    let mode = if rng.gen_bool(0.5) {
        BiasMode::Scaled
    } else {
        BiasMode::Once
    };
    let layer = match kind {
        LayerKind::Ann => {
            let n_shift = rng.gen_range(8..=20);
            let m_shift = rng.gen_range(8..=20);
            LayerSpec {
                m_w: rng.gen_range(1..=1u32 << (n_shift - 6)),
                n_shift,
                m_b: rng.gen_range(1..=1u32 << (m_shift - 4)),
                m_shift,
                ..LayerSpec::ann(in_width, out_width)
            }
        }
        _ => LayerSpec::spiking(kind, in_width, out_width, rng.gen_range(1..=4000)),
    };
    layer.with_weights(weights, biases).with_bias_mode(mode)
}

/// Random input in the format expected by the first layer of `spec`.
pub fn random_input(spec: &NetworkSpec, rng: &mut impl Rng) -> EncodedInput {
    let width = spec.input_width().unwrap_or(0);
    let window = spec.window;
    match spec.layers.first().map_or(LayerKind::Ann, |l| l.kind) {
        LayerKind::Ann => {
            Activations::Levels((0..width).map(|_| rng.gen_range(0..=ACT_MAX)).collect())
        }
        LayerKind::Ssf => {
            Activations::Counts((0..width).map(|_| rng.gen_range(0..=window)).collect())
        }
        LayerKind::If => Activations::Trains(
            (0..width)
                .map(|_| {
                    let density = rng.gen::<f64>();
                    let bits: Vec<bool> = (0..window).map(|_| rng.gen_bool(density)).collect();
                    SpikeTrain::from_bools(bits)
                })
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, forward_layers};

    #[test]
    fn variants_share_shape() {
        for v in Variant::ALL {
            let spec = ecg_network(v, 31, 1).unwrap();
            assert_eq!(spec.widths(), ECG_WIDTHS);
            assert_eq!(spec.input_width(), Some(REFERENCE_INPUT_WIDTH));
            assert_eq!(spec.layers[0].kind, v.kind(0));
            assert_eq!(spec.layers[1].kind, v.kind(1));
        }
    }

    #[test]
    fn converted_networks_are_active() {
        for v in Variant::ALL {
            let spec = eeg_network(v, 15, 3).unwrap();
            let x = reference_input(&spec, 9).unwrap();
            let acts = forward_layers(&spec, &x).unwrap();
            for (i, a) in acts.iter().enumerate() {
                let total: u64 = a.scores().iter().map(|&s| u64::from(s)).sum();
                assert!(total > 0, "{v:?} layer {i} silent");
            }
        }
    }

    #[test]
    fn random_networks_are_valid_and_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let limits = HardwareLimits::default();
        for _ in 0..20 {
            let spec = random_network(&mut rng, 4, 64, &limits);
            let x = random_input(&spec, &mut rng);
            forward(&spec, &x).unwrap();
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()), Some(v));
        }
    }
}

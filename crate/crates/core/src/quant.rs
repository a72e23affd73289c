//! Post-training integer quantization and fixed-point requantized layer inference.
//!
//! Scales are per layer. Rounding is half away from zero everywhere
//! (`f64::round`). Requantization multiplies the integer accumulator by a
//! fixed-point multiplier and arithmetically shifts it back down.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale used when a tensor or calibration range is constant.
pub const ZERO_RANGE_SCALE: f64 = 1.0 / 65536.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u32,
    pub n_shift: u32,
    pub m_shift: u32,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: 8,
            n_shift: 16,
            m_shift: 16,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=16).contains(&self.bits) {
            return Err(Error::InvalidQuantConfig(format!(
                "bit-width {} outside [1, 16]",
                self.bits
            )));
        }
        if self.n_shift > 31 || self.m_shift > 31 {
            return Err(Error::InvalidQuantConfig(format!(
                "shifts ({}, {}) must lie in [0, 31]",
                self.n_shift, self.m_shift
            )));
        }
        Ok(())
    }

    pub fn signed_range(&self) -> (i64, i64) {
        let half = 1i64 << (self.bits - 1);
        (-half, half - 1)
    }

    pub fn unsigned_max(&self) -> i64 {
        (1i64 << self.bits) - 1
    }
}

/// Per-layer scales and the integer parameters derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub weight_scale: f64,
    pub input_scale: f64,
    pub output_scale: f64,
    /// Fixed-point multiplier for the accumulator, `round(r_i * r_w / r_o * 2^n_shift)`.
    pub m_w: u32,
    /// Fixed-point multiplier for the bias, `round(r_w / r_o * 2^m_shift)`.
    pub m_b: u32,
    pub threshold_q: i32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTensor {
    pub values: Vec<i32>,
    pub bits: u32,
    pub signed: bool,
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn range_scale(min: f64, max: f64, bits: u32) -> f64 {
    let range = max - min;
    if range > 0.0 {
        range / ((1u64 << bits) - 1) as f64
    } else {
        ZERO_RANGE_SCALE
    }
}

fn min_max<'a>(values: impl Iterator<Item = &'a f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// `(max - min) / (2^q - 1)` over the union of weights and biases.
pub fn compute_weight_scale(weights: &[f64], bias: &[f64], bits: u32) -> Result<f64> {
    let (lo, hi) = min_max(weights.iter().chain(bias)).ok_or(Error::EmptyTensor)?;
    Ok(range_scale(lo, hi, bits))
}

/// Round to nearest (half away from zero), then clamp to the q-bit range.
pub fn quantize_value(value: f64, scale: f64, bits: u32, signed: bool) -> i32 {
    let (lo, hi) = if signed {
        let half = 1i64 << (bits - 1);
        (-half, half - 1)
    } else {
        (0, (1i64 << bits) - 1)
    };
    let q = (value / scale).round();
    q.clamp(lo as f64, hi as f64) as i32
}

pub fn quantize_tensor(
    values: &[f64],
    scale: f64,
    bits: u32,
    signed: bool,
) -> Result<QuantizedTensor> {
    check_scale(scale)?;
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidQuantConfig(format!(
            "bit-width {bits} outside [1, 16]"
        )));
    }
    let values = values
        .iter()
        .map(|&v| quantize_value(v, scale, bits, signed))
        .collect();
    Ok(QuantizedTensor {
        values,
        bits,
        signed,
    })
}

pub fn dequantize(tensor: &QuantizedTensor, scale: f64) -> Vec<f64> {
    tensor
        .values
        .iter()
        .map(|&v| f64::from(v) * scale)
        .collect()
}

/// Scale of one activation boundary from the values observed over a calibration set.
pub fn calibrate_activation_scale(values: &[f64], bits: u32) -> Result<f64> {
    let (lo, hi) = min_max(values.iter()).ok_or(Error::EmptyCalibration)?;
    Ok(range_scale(lo, hi, bits))
}

/// Input and output scales `(r_i, r_o)` of a layer.
pub fn calibrate_activation_scales(
    inputs: &[f64],
    outputs: &[f64],
    bits: u32,
) -> Result<(f64, f64)> {
    Ok((
        calibrate_activation_scale(inputs, bits)?,
        calibrate_activation_scale(outputs, bits)?,
    ))
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(scale))
    }
}

fn fixed_point(value: f64, shift: u32) -> Result<u32> {
    let m = (value * (1u64 << shift) as f64).round();
    if m > f64::from(u32::MAX) {
        return Err(Error::MultiplierOverflow(m));
    }
    Ok(m as u32)
}

/// Integer multipliers `(M_w, M_b)` for requantizing an ANN layer.
pub fn build_requant(
    input_scale: f64,
    weight_scale: f64,
    output_scale: f64,
    cfg: &QuantConfig,
) -> Result<(u32, u32)> {
    cfg.validate()?;
    for s in [input_scale, weight_scale, output_scale] {
        check_scale(s)?;
    }
    let m_w = fixed_point(input_scale * weight_scale / output_scale, cfg.n_shift)?;
    let m_b = fixed_point(weight_scale / output_scale, cfg.m_shift)?;
    Ok((m_w, m_b))
}

/// `round(threshold / r_w)`; a threshold that vanishes is an error.
pub fn quantize_threshold(threshold: f64, weight_scale: f64) -> Result<i32> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::NonPositiveThreshold(threshold));
    }
    check_scale(weight_scale)?;
    let q = (threshold / weight_scale).round();
    if q < 1.0 {
        return Err(Error::ThresholdUnderflow {
            threshold,
            scale: weight_scale,
        });
    }
    if q > f64::from(i32::MAX) {
        return Err(Error::InvalidScale(weight_scale));
    }
    Ok(q as i32)
}

/// Bits needed to hold a worst-case dot product of `fan_in` signed weights and
/// unsigned activations, both `bits` wide.
pub fn accumulator_bits(fan_in: usize, bits: u32) -> u32 {
    let max_abs = (fan_in as u128) * (1u128 << (bits - 1)) * ((1u128 << bits) - 1);
    // sign bit plus magnitude
    1 + (128 - max_abs.leading_zeros())
}

/// Rejects layers whose dot product could overflow a 32-bit accumulator.
pub fn check_accumulator_width(fan_in: usize, bits: u32) -> Result<()> {
    let needed = accumulator_bits(fan_in, bits);
    if needed > 32 {
        return Err(Error::AccumulatorWidth {
            fan_in,
            bits,
            needed,
        });
    }
    Ok(())
}

/// Requantizes one accumulator: `((acc * M_w) >> n) + ((b * M_b) >> m)`, clamped to `[0, 2^q - 1]`.
#[inline]
pub fn requantize(
    acc: i64,
    bias_q: i64,
    m_w: u32,
    m_b: u32,
    n_shift: u32,
    m_shift: u32,
    bits: u32,
) -> u32 {
    let main = (acc * i64::from(m_w)) >> n_shift;
    let bias = (bias_q * i64::from(m_b)) >> m_shift;
    (main + bias).clamp(0, (1i64 << bits) - 1) as u32
}

/// Fixed-point ANN layer: `weights` is row-major `[out][in]`.
pub fn quantized_ann_layer(
    input: &QuantizedTensor,
    weights: &QuantizedTensor,
    bias: &QuantizedTensor,
    m_w: u32,
    m_b: u32,
    cfg: &QuantConfig,
) -> Result<QuantizedTensor> {
    cfg.validate()?;
    let fan_in = input.len();
    let out = bias.len();
    if fan_in == 0 || weights.len() != fan_in * out {
        return Err(Error::Shape(format!(
            "weights hold {} values, expected {} x {}",
            weights.len(),
            out,
            fan_in
        )));
    }
    check_accumulator_width(fan_in, cfg.bits)?;
    let values = weights
        .values
        .chunks_exact(fan_in)
        .zip(&bias.values)
        .map(|(row, &b)| {
            let acc: i32 = row.iter().zip(&input.values).map(|(&w, &x)| w * x).sum();
            requantize(
                i64::from(acc),
                i64::from(b),
                m_w,
                m_b,
                cfg.n_shift,
                cfg.m_shift,
                cfg.bits,
            ) as i32
        })
        .collect();
    Ok(QuantizedTensor {
        values,
        bits: cfg.bits,
        signed: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weight_scale_examples() {
        assert!(
            (compute_weight_scale(&[-1.0, 1.0], &[0.0], 8).unwrap() - 2.0 / 255.0).abs() < 1e-15
        );
        assert_eq!(
            compute_weight_scale(&[0.0, 0.0], &[0.0], 8).unwrap(),
            ZERO_RANGE_SCALE
        );
        assert!((compute_weight_scale(&[0.0, 2.55], &[0.0], 8).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(
            compute_weight_scale(&[], &[], 8),
            Err(Error::EmptyTensor)
        ));
    }

    #[test]
    fn quantize_examples() {
        let s = 2.0 / 255.0;
        let t = quantize_tensor(&[0.0, 1.0, -1.0], s, 8, true).unwrap();
        assert_eq!(t.values, vec![0, 127, -128]);
        assert_eq!(
            quantize_tensor(&[0.0], 1e-9, 8, false).unwrap().values,
            vec![0]
        );
        assert!(matches!(
            quantize_tensor(&[1.0], 0.0, 8, true),
            Err(Error::InvalidScale(_))
        ));
        // half away from zero on both sides
        assert_eq!(quantize_value(2.5, 1.0, 8, true), 3);
        assert_eq!(quantize_value(-2.5, 1.0, 8, true), -3);
    }

    #[test]
    fn calibration_examples() {
        let unit: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
        assert!((calibrate_activation_scale(&unit, 8).unwrap() - 1.0 / 255.0).abs() < 1e-15);
        assert_eq!(
            calibrate_activation_scale(&[0.3, 0.3], 8).unwrap(),
            ZERO_RANGE_SCALE
        );
        assert!((calibrate_activation_scale(&[0.0, 1.2, 2.55], 8).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(
            calibrate_activation_scale(&[], 8),
            Err(Error::EmptyCalibration)
        ));
    }

    #[test]
    fn requant_examples() {
        let cfg8 = QuantConfig {
            bits: 8,
            n_shift: 8,
            m_shift: 8,
        };
        assert_eq!(build_requant(1.0, 1.0, 1.0, &cfg8).unwrap().0, 256);
        let cfg16 = QuantConfig::default();
        let (m_w, _) = build_requant(1.0 / 255.0, 2.0 / 255.0, 1.0 / 255.0, &cfg16).unwrap();
        assert_eq!(m_w, 514);
        let (_, m_b) = build_requant(1.0, 0.01, 0.01, &cfg8).unwrap();
        assert_eq!(m_b, 256);
        assert!(build_requant(0.0, 1.0, 1.0, &cfg8).is_err());
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(quantize_threshold(1.0, 1.0).unwrap(), 1);
        assert_eq!(quantize_threshold(1.0, 2.0 / 255.0).unwrap(), 128);
        assert!(matches!(
            quantize_threshold(0.001, 1.0),
            Err(Error::ThresholdUnderflow { .. })
        ));
    }

    #[test]
    fn ann_layer_examples() {
        let cfg = QuantConfig::default();
        let x = QuantizedTensor {
            values: vec![0; 4],
            bits: 8,
            signed: false,
        };
        let w = QuantizedTensor {
            values: vec![3, -2, 5, 1, 7, 7, -7, 0],
            bits: 8,
            signed: true,
        };
        let b = QuantizedTensor {
            values: vec![0, 0],
            bits: 8,
            signed: true,
        };
        let y = quantized_ann_layer(&x, &w, &b, 1 << 16, 1 << 16, &cfg).unwrap();
        assert_eq!(y.values, vec![0, 0]);

        // unit multipliers: plain clamp(W x + b)
        let x = QuantizedTensor {
            values: vec![10, 20, 30, 40],
            bits: 8,
            signed: false,
        };
        let b = QuantizedTensor {
            values: vec![5, -100],
            bits: 8,
            signed: true,
        };
        let y = quantized_ann_layer(&x, &w, &b, 1 << 16, 1 << 16, &cfg).unwrap();
        let row0 = 3 * 10 - 2 * 20 + 5 * 30 + 40 + 5;
        let row1 = 7 * 10 + 7 * 20 - 7 * 30 - 100;
        assert_eq!(y.values, vec![row0.clamp(0, 255), row1.clamp(0, 255)]);
    }

    #[test]
    fn ann_layer_shape_errors() {
        let cfg = QuantConfig::default();
        let x = QuantizedTensor {
            values: vec![1; 3],
            bits: 8,
            signed: false,
        };
        let w = QuantizedTensor {
            values: vec![1; 5],
            bits: 8,
            signed: true,
        };
        let b = QuantizedTensor {
            values: vec![0; 2],
            bits: 8,
            signed: true,
        };
        assert!(matches!(
            quantized_ann_layer(&x, &w, &b, 1, 1, &cfg),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn accumulator_width_limits() {
        assert!(check_accumulator_width(128, 8).is_ok());
        // 128 * 2^15 * (2^16 - 1) needs 39 bits
        assert!(matches!(
            check_accumulator_width(128, 16),
            Err(Error::AccumulatorWidth { needed: 39, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(QuantConfig {
            bits: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(QuantConfig {
            bits: 17,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(QuantConfig {
            n_shift: 32,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(QuantConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(x in -1.0f64..1.0, scale in 1e-3f64..0.1) {
            let q = quantize_tensor(&[x], scale, 16, true).unwrap();
            let back = dequantize(&q, scale)[0];
            prop_assert!((back - x).abs() <= scale / 2.0 + 1e-12);
        }

        #[test]
        fn quantize_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0, scale in 1e-3f64..0.5) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_value(lo, scale, 8, true) <= quantize_value(hi, scale, 8, true));
        }
    }
}

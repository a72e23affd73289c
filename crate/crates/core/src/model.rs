//! Real-valued model description and its post-training quantization into a
//! deployable integer [`NetworkSpec`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{
    levels_to_count, rate_train, LayerKind, LayerSpec, NetworkSpec, ACT_BITS, ACT_MAX,
};
use crate::neuron::{count_spikes, if_run, BiasMode, Potential};
use crate::quant::{self, QuantConfig, QuantParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatLayer {
    pub kind: LayerKind,
    /// Row-major `[out][in]`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub bias_mode: BiasMode,
}

impl FloatLayer {
    pub fn in_width(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn out_width(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.in_width();
        if self.weights.is_empty() || n == 0 {
            return Err(Error::EmptyTensor);
        }
        if let Some(r) = self.weights.iter().position(|r| r.len() != n) {
            return Err(Error::Shape(format!(
                "weight row {r} has {} entries, expected {n}",
                self.weights[r].len()
            )));
        }
        if self.bias.len() != self.out_width() {
            return Err(Error::Shape(format!(
                "{} biases for {} outputs",
                self.bias.len(),
                self.out_width()
            )));
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Shape("non-finite weight or bias".into()));
        }
        match (self.kind, self.threshold) {
            (LayerKind::Ann, _) => Ok(()),
            (_, None) => Err(Error::Shape(format!(
                "{} layer needs a threshold",
                self.kind
            ))),
            (_, Some(t)) if !(t > 0.0 && t.is_finite()) => Err(Error::NonPositiveThreshold(t)),
            _ => Ok(()),
        }
    }

    fn flat_weights(&self) -> Vec<f64> {
        self.weights.iter().flatten().copied().collect()
    }
}

/// Float model: layer stack plus timestep window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloatModel {
    pub window: u32,
    pub layers: Vec<FloatLayer>,
}

/// Float activations at a layer boundary, mirroring the integer representations:
/// real ANN outputs, or spike counts.
#[derive(Debug, Clone, PartialEq)]
enum FloatActs {
    Raw(Vec<f64>),
    Real(Vec<f64>),
    Counts(Vec<u32>),
}

impl FloatModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("model has no layers".into()));
        }
        if !(1..=255).contains(&self.window) {
            return Err(Error::Shape(format!(
                "window {} outside [1, 255]",
                self.window
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.check().map_err(|e| layer_error(i, e))?;
            if i > 0 && self.layers[i - 1].out_width() != l.in_width() {
                return Err(layer_error(
                    i,
                    Error::Shape(format!(
                        "input width {} after output width {}",
                        l.in_width(),
                        self.layers[i - 1].out_width()
                    )),
                ));
            }
        }
        Ok(())
    }
}

fn layer_error(layer: usize, e: Error) -> Error {
    Error::LayerContext {
        layer,
        source: Box::new(e),
    }
}

/// One float layer evaluated on one sample. `out_scale` is the calibrated
/// output scale of the producing ANN layer, used at ANN-to-spike boundaries.
fn float_layer(l: &FloatLayer, x: &FloatActs, window: u32, prev_scale: Option<f64>) -> FloatActs {
    let t = f64::from(window);
    let counts = || -> Vec<u32> {
        match x {
            FloatActs::Raw(v) => v
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * t).round() as u32)
                .collect(),
            FloatActs::Counts(c) => c.clone(),
            FloatActs::Real(v) => {
                let r_o = prev_scale.unwrap_or(1.0);
                v.iter()
                    .map(|&y| {
                        levels_to_count(
                            (y / r_o).round().clamp(0.0, f64::from(ACT_MAX)) as u32,
                            window,
                        )
                    })
                    .collect()
            }
        }
    };
    match l.kind {
        LayerKind::Ann => {
            let input: Vec<f64> = match x {
                FloatActs::Raw(v) | FloatActs::Real(v) => v.clone(),
                FloatActs::Counts(c) => c.iter().map(|&c| f64::from(c)).collect(),
            };
            FloatActs::Real(
                l.weights
                    .iter()
                    .zip(&l.bias)
                    .map(|(row, b)| {
                        (b + row.iter().zip(&input).map(|(w, x)| w * x).sum::<f64>()).max(0.0)
                    })
                    .collect(),
            )
        }
        LayerKind::Ssf => {
            let c = counts();
            let theta = l.threshold.unwrap_or(1.0);
            FloatActs::Counts(
                l.weights
                    .iter()
                    .zip(&l.bias)
                    .map(|(row, &b)| {
                        let u = l.bias_mode.window_bias(b, window)
                            + row
                                .iter()
                                .zip(&c)
                                .map(|(w, &c)| w * f64::from(c))
                                .sum::<f64>();
                        u.fire_count(theta, window)
                    })
                    .collect(),
            )
        }
        LayerKind::If => {
            let trains: Vec<_> = counts()
                .into_iter()
                .map(|c| rate_train(c, window))
                .collect();
            let theta = l.threshold.unwrap_or(1.0);
            FloatActs::Counts(
                l.weights
                    .iter()
                    .zip(&l.bias)
                    .map(|(row, &b)| {
                        let out = if_run(&trains, row, b, theta, l.bias_mode, window as usize)
                            .expect("shapes checked");
                        count_spikes(&out).get()
                    })
                    .collect(),
            )
        }
    }
}

/// Scales chosen for each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantReport {
    pub params: Vec<QuantParams>,
}

/// Quantizes `model` with per-layer weight scales and ANN activation scales
/// calibrated on `calibration` (raw inputs in `[0, 1]`).
pub fn quantize_model(
    model: &FloatModel,
    calibration: &[Vec<f64>],
    cfg: &QuantConfig,
) -> Result<NetworkSpec> {
    quantize_model_with_report(model, calibration, cfg).map(|(spec, _)| spec)
}

pub fn quantize_model_with_report(
    model: &FloatModel,
    calibration: &[Vec<f64>],
    cfg: &QuantConfig,
) -> Result<(NetworkSpec, QuantReport)> {
    cfg.validate()?;
    if cfg.bits != ACT_BITS {
        return Err(Error::InvalidQuantConfig(format!(
            "deployed models use {ACT_BITS}-bit weights and activations, got {}",
            cfg.bits
        )));
    }
    model.check()?;
    let needs_calibration = model.layers.iter().any(|l| l.kind == LayerKind::Ann);
    if needs_calibration && calibration.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let width = model.layers[0].in_width();
    if let Some(r) = calibration.iter().position(|r| r.len() != width) {
        return Err(Error::Shape(format!(
            "calibration row {r} has {} values, model expects {width}",
            calibration[r].len()
        )));
    }

    let mut acts: Vec<FloatActs> = calibration
        .iter()
        .map(|r| FloatActs::Raw(r.clone()))
        .collect();
    let mut prev_out_scale: Option<f64> = None;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut params = Vec::with_capacity(model.layers.len());

    for (i, l) in model.layers.iter().enumerate() {
        let wrap = |e| layer_error(i, e);
        let flat = l.flat_weights();
        let r_w = quant::compute_weight_scale(&flat, &l.bias, cfg.bits).map_err(wrap)?;
        let weights = quant::quantize_tensor(&flat, r_w, cfg.bits, true).map_err(wrap)?;
        let biases = quant::quantize_tensor(&l.bias, r_w, cfg.bits, true).map_err(wrap)?;
        let next: Vec<FloatActs> = acts
            .iter()
            .map(|x| float_layer(l, x, model.window, prev_out_scale))
            .collect();

        let mut spec = LayerSpec {
            kind: l.kind,
            in_width: l.in_width(),
            out_width: l.out_width(),
            bias_mode: l.bias_mode,
            threshold_q: 0,
            m_w: 0,
            n_shift: cfg.n_shift as u8,
            m_b: 0,
            m_shift: cfg.m_shift as u8,
            weights: weights.values.iter().map(|&w| w as i8).collect(),
            biases: biases.values,
        };
        let mut p = QuantParams {
            weight_scale: r_w,
            input_scale: 1.0,
            output_scale: 1.0,
            m_w: 0,
            m_b: 0,
            threshold_q: 0,
        };

        match l.kind {
            LayerKind::Ann => {
                quant::check_accumulator_width(l.in_width(), cfg.bits).map_err(wrap)?;
                let r_i = if i == 0 {
                    1.0 / f64::from(ACT_MAX)
                } else if model.layers[i - 1].kind == LayerKind::Ann {
                    prev_out_scale.unwrap_or(1.0)
                } else {
                    1.0
                };
                // Post-ReLU range anchored at zero.
                let outputs: Vec<f64> = next
                    .iter()
                    .flat_map(|a| match a {
                        FloatActs::Real(v) => v.clone(),
                        _ => Vec::new(),
                    })
                    .chain(std::iter::once(0.0))
                    .collect();
                let r_o = quant::calibrate_activation_scale(&outputs, cfg.bits).map_err(wrap)?;
                let (m_w, m_b) = quant::build_requant(r_i, r_w, r_o, cfg).map_err(wrap)?;
                spec.m_w = m_w;
                spec.m_b = m_b;
                p = QuantParams {
                    weight_scale: r_w,
                    input_scale: r_i,
                    output_scale: r_o,
                    m_w,
                    m_b,
                    threshold_q: 0,
                };
                prev_out_scale = Some(r_o);
            }
            LayerKind::If | LayerKind::Ssf => {
                let theta = l.threshold.expect("checked");
                let theta_q = quant::quantize_threshold(theta, r_w).map_err(wrap)?;
                spec.threshold_q = theta_q;
                p.threshold_q = theta_q;
                prev_out_scale = None;
            }
        }
        layers.push(spec);
        params.push(p);
        acts = next;
    }
    Ok((
        NetworkSpec::new(model.window, layers),
        QuantReport { params },
    ))
}

/// Class scores of the float model on one raw input in `[0, 1]`, using the
/// activation scales found during quantization for ANN-to-spike boundaries.
pub fn float_forward(model: &FloatModel, report: &QuantReport, input: &[f64]) -> Vec<f64> {
    let mut x = FloatActs::Raw(input.to_vec());
    let mut prev_scale = None;
    for (l, p) in model.layers.iter().zip(&report.params) {
        x = float_layer(l, &x, model.window, prev_scale);
        prev_scale = (l.kind == LayerKind::Ann).then_some(p.output_scale);
    }
    match x {
        FloatActs::Raw(v) | FloatActs::Real(v) => v,
        FloatActs::Counts(c) => c.into_iter().map(f64::from).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{forward, rate_encode, EncodeTarget};

    fn toy() -> FloatModel {
        FloatModel {
            window: 8,
            layers: vec![
                FloatLayer {
                    kind: LayerKind::Ann,
                    weights: vec![vec![0.5, -0.25, 0.1], vec![-0.3, 0.8, 0.2]],
                    bias: vec![0.05, -0.02],
                    threshold: None,
                    bias_mode: BiasMode::Scaled,
                },
                FloatLayer {
                    kind: LayerKind::Ssf,
                    weights: vec![vec![0.4, -0.2], vec![-0.1, 0.6]],
                    bias: vec![0.0, 0.01],
                    threshold: Some(1.0),
                    bias_mode: BiasMode::Scaled,
                },
            ],
        }
    }

    fn calib() -> Vec<Vec<f64>> {
        (0..20)
            .map(|i| vec![(i as f64 / 19.0), 1.0 - i as f64 / 19.0, 0.5])
            .collect()
    }

    #[test]
    fn toy_model_quantizes_and_runs() {
        let spec = quantize_model(&toy(), &calib(), &QuantConfig::default()).unwrap();
        assert_eq!(spec.layers.len(), 2);
        assert!(spec.layers[0].m_w > 0 && spec.layers[0].m_b > 0);
        assert!(spec.layers[1].threshold_q > 0);
        let x = rate_encode(&[0.9, 0.1, 0.5], 8, EncodeTarget::Level).unwrap();
        forward(&spec, &x).unwrap();
    }

    #[test]
    fn weights_use_full_signed_range() {
        let spec = quantize_model(&toy(), &calib(), &QuantConfig::default()).unwrap();
        // r_w = (0.8 - (-0.3)) / 255; 0.8 / r_w = 185.5 clamps to 127
        assert!(spec.layers[0].weights.contains(&127));
    }

    #[test]
    fn vanishing_threshold_names_layer() {
        let mut m = toy();
        m.layers[1].threshold = Some(1e-6);
        let err = quantize_model(&m, &calib(), &QuantConfig::default()).unwrap_err();
        assert!(
            matches!(&err, Error::LayerContext { layer: 1, source } if matches!(**source, Error::ThresholdUnderflow { .. }))
        );
        assert!(err.to_string().starts_with("layer 1:"));
    }

    #[test]
    fn calibration_required_for_ann_layers() {
        assert!(matches!(
            quantize_model(&toy(), &[], &QuantConfig::default()),
            Err(Error::EmptyCalibration)
        ));
    }

    #[test]
    fn json_round_trip_and_shape_errors() {
        let m = toy();
        assert_eq!(FloatModel::from_json(&m.to_json()).unwrap(), m);
        let mut bad = toy();
        bad.layers[1].weights[0].push(0.0);
        assert!(FloatModel::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn non_default_bit_width_is_rejected() {
        let cfg = QuantConfig {
            bits: 4,
            ..QuantConfig::default()
        };
        assert!(matches!(
            quantize_model(&toy(), &calib(), &cfg),
            Err(Error::InvalidQuantConfig(_))
        ));
    }
}

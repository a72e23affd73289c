use super::{
    ensure_valid, Activations, EncodedInput, HardwareLimits, LayerKind, LayerSpec, NetworkSpec,
    ACT_BITS,
};
use crate::error::{Error, Result};
use crate::neuron::{if_run, ssf_integrate_with, Potential};
use crate::quant::requantize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    /// Output-layer values: ANN levels, SSF counts or IF spike totals.
    pub scores: Vec<u32>,
    pub class: usize,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[u32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Bit-exact integer inference under the default hardware limits.
pub fn forward(spec: &NetworkSpec, input: &EncodedInput) -> Result<Prediction> {
    forward_with(spec, input, &HardwareLimits::default())
}

pub fn forward_with(
    spec: &NetworkSpec,
    input: &EncodedInput,
    limits: &HardwareLimits,
) -> Result<Prediction> {
    ensure_valid(spec, limits)?;
    let outputs = forward_layers(spec, input)?;
    let scores = outputs.last().map(Activations::scores).unwrap_or_default();
    Ok(Prediction {
        class: argmax(&scores),
        scores,
    })
}

/// Outputs of every layer, without checking hardware limits.
pub fn forward_layers(spec: &NetworkSpec, input: &EncodedInput) -> Result<Vec<Activations>> {
    let expected = spec.input_width().unwrap_or(0);
    if input.width() != expected {
        return Err(Error::Shape(format!(
            "input has {} values, network expects {expected}",
            input.width()
        )));
    }
    input.check(spec.window)?;

    let mut outputs: Vec<Activations> = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        let x = outputs.last().unwrap_or(input);
        let y = layer_forward(layer, x, spec.window).map_err(|e| Error::LayerContext {
            layer: i,
            source: Box::new(e),
        })?;
        outputs.push(y);
    }
    Ok(outputs)
}

fn layer_forward(layer: &LayerSpec, input: &Activations, window: u32) -> Result<Activations> {
    let theta = i64::from(layer.threshold_q);
    let rows = (0..layer.out_width).map(|n| (layer.row(n), i64::from(layer.biases[n])));
    Ok(match layer.kind {
        LayerKind::If => {
            let trains = input.to_trains(window);
            let out = rows
                .map(|(row, b)| {
                    let w: Vec<i64> = row.iter().map(|&w| i64::from(w)).collect();
                    if_run(&trains, &w, b, theta, layer.bias_mode, window as usize)
                })
                .collect::<Result<_>>()?;
            Activations::Trains(out)
        }
        LayerKind::Ssf => {
            let counts = input.to_counts(window);
            let out = rows
                .map(|(row, b)| {
                    let w: Vec<i64> = row.iter().map(|&w| i64::from(w)).collect();
                    let u = ssf_integrate_with(&counts, &w, b, layer.bias_mode, window)?;
                    Ok(u.fire_count(theta, window))
                })
                .collect::<Result<_>>()?;
            Activations::Counts(out)
        }
        LayerKind::Ann => {
            let levels = input.to_levels();
            let out = rows
                .map(|(row, b)| {
                    let acc: i64 = row
                        .iter()
                        .zip(&levels)
                        .map(|(&w, &x)| i64::from(w) * i64::from(x))
                        .sum();
                    requantize(
                        acc,
                        b,
                        layer.m_w,
                        layer.m_b,
                        layer.n_shift.into(),
                        layer.m_shift.into(),
                        ACT_BITS,
                    )
                })
                .collect();
            Activations::Levels(out)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{rate_encode, EncodeTarget};
    use crate::neuron::SpikeTrain;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1, 3, 3, 0]), 1);
        assert_eq!(argmax(&[0, 0]), 0);
        assert_eq!(argmax(&[]), 0);
    }

    #[test]
    fn single_ssf_layer() {
        // counts [2, 4], weights [1, 2], bias 1 scaled over T=4: u = 2 + 8 + 4 = 14, theta 3 -> 4
        let l = LayerSpec::spiking(LayerKind::Ssf, 2, 1, 3).with_weights(vec![1, 2], vec![1]);
        let spec = NetworkSpec::new(4, vec![l]);
        let p = forward(&spec, &Activations::Counts(vec![2, 4])).unwrap();
        assert_eq!(p.scores, vec![4]);
    }

    #[test]
    fn single_if_layer_matches_neuron() {
        let l = LayerSpec::spiking(LayerKind::If, 1, 1, 2).with_weights(vec![3], vec![0]);
        let spec = NetworkSpec::new(4, vec![l]);
        let input = Activations::Trains(vec![SpikeTrain::from_bits(&[1, 0, 0, 1]).unwrap()]);
        let out = forward_layers(&spec, &input).unwrap();
        // V: 3 -> fire, 1; 1; 1; 4 -> fire, 2
        let Activations::Trains(t) = &out[0] else {
            panic!()
        };
        assert_eq!(t[0].to_string(), "1001");
    }

    #[test]
    fn ann_layer_requantizes() {
        // unit multipliers: acc = 2*10 + (-1)*4 = 16, bias 5 -> 21
        let l = LayerSpec::ann(2, 1).with_weights(vec![2, -1], vec![5]);
        let spec = NetworkSpec::new(4, vec![l]);
        assert_eq!(
            forward(&spec, &Activations::Levels(vec![10, 4]))
                .unwrap()
                .scores,
            vec![21]
        );
    }

    #[test]
    fn hybrid_chain_converts_at_boundaries() {
        let ann = LayerSpec::ann(2, 2).with_weights(vec![1, 0, 0, 1], vec![0, 0]);
        let ssf =
            LayerSpec::spiking(LayerKind::Ssf, 2, 2, 1).with_weights(vec![1, 0, 0, 1], vec![0, 0]);
        let spec = NetworkSpec::new(4, vec![ann, ssf]);
        let input = rate_encode(&[1.0, 0.5], 4, EncodeTarget::Level).unwrap();
        let p = forward(&spec, &input).unwrap();
        // levels [255, 128] -> counts [4, 2]
        assert_eq!((p.scores, p.class), (vec![4, 2], 0));
    }

    #[test]
    fn rejects_wrong_input_width() {
        let spec = NetworkSpec::new(4, vec![LayerSpec::ann(3, 1)]);
        assert!(matches!(
            forward(&spec, &Activations::Levels(vec![1, 2])),
            Err(Error::Shape(_))
        ));
    }
}

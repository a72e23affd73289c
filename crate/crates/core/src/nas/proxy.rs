//! Brief-training proxy: a float ReLU MLP trained with per-sample SGD on
//! softmax cross-entropy, scored by stratified k-fold validation accuracy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::quant;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub epochs: usize,
    pub k_folds: usize,
    pub learning_rate: f64,
    /// Score the trained proxy with 8-bit fake-quantized weights.
    pub quantized_eval: bool,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            k_folds: 3,
            learning_rate: 0.01,
            quantized_eval: false,
        }
    }
}

struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `[out][in]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Hidden ReLU layers of the given widths followed by a linear head.
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// He-uniform weights, zero biases.
    pub fn new<R: Rng>(n_inputs: usize, hidden: &[usize], n_classes: usize, rng: &mut R) -> Self {
        let mut prev = n_inputs;
        let layers = hidden
            .iter()
            .copied()
            .chain(std::iter::once(n_classes))
            .map(|out| {
                let limit = (6.0 / prev as f64).sqrt();
                let weights = (0..out * prev)
                    .map(|_| rng.gen_range(-limit..limit))
                    .collect();
                let layer = Dense {
                    inputs: prev,
                    outputs: out,
                    weights,
                    bias: vec![0.0; out],
                };
                prev = out;
                layer
            })
            .collect();
        Self { layers }
    }

    fn buffers(&self, n_inputs: usize) -> Vec<Vec<f64>> {
        std::iter::once(n_inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .map(|n| vec![0.0; n])
            .collect()
    }

    /// Fills `acts[0]` with `x` and every later entry with a layer output
    /// (ReLU for hidden layers, logits for the head).
    fn forward_into(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let (prev, next) = acts.split_at_mut(i + 1);
            let (input, output) = (&prev[i], &mut next[0]);
            for (o, out) in output.iter_mut().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                let z = l.bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                *out = if i < last { z.max(0.0) } else { z };
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut acts = self.buffers(x.len());
        self.forward_into(x, &mut acts);
        argmax_f64(acts.last().unwrap())
    }

    fn sgd_step(
        &mut self,
        x: &[f64],
        label: usize,
        lr: f64,
        acts: &mut [Vec<f64>],
        grads: &mut [Vec<f64>],
    ) {
        self.forward_into(x, acts);
        let logits = acts.last().unwrap();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        let delta = grads.last_mut().unwrap();
        for (k, d) in delta.iter_mut().enumerate() {
            *d = (logits[k] - max).exp() / sum - if k == label { 1.0 } else { 0.0 };
        }
        for i in (0..self.layers.len()).rev() {
            let (lower, upper) = grads.split_at_mut(i + 1);
            let delta = &upper[0];
            let input = &acts[i];
            let l = &mut self.layers[i];
            if i > 0 {
                let back = &mut lower[i];
                back.iter_mut().for_each(|g| *g = 0.0);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                    for (g, w) in back.iter_mut().zip(row) {
                        *g += d * w;
                    }
                }
                for (g, &a) in back.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            for (o, &d) in delta.iter().enumerate() {
                let step = lr * d;
                let row = &mut l.weights[o * l.inputs..(o + 1) * l.inputs];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w -= step * x;
                }
                l.bias[o] -= step;
            }
        }
    }

    /// Replaces every layer's weights and biases by their 8-bit symmetric
    /// quantize-dequantize image.
    pub fn fake_quantize(&mut self) -> Result<()> {
        for l in &mut self.layers {
            let scale = quant::compute_weight_scale(&l.weights, &l.bias, 8)?;
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = f64::from(quant::quantize_value(*v, scale, 8, true)) * scale;
            }
        }
        Ok(())
    }
}

fn argmax_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-feature mean and standard deviation over the selected rows.
fn standardizer(data: &Dataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let f = data.n_features();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; f];
    for &r in rows {
        for (m, x) in mean.iter_mut().zip(data.row(r)) {
            *m += x / n;
        }
    }
    let mut std = vec![0.0; f];
    for &r in rows {
        for ((s, x), m) in std.iter_mut().zip(data.row(r)).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    let std = std
        .into_iter()
        .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, std)
}

/// Mean stratified k-fold validation accuracy of an MLP with `hidden` widths
/// after `cfg.epochs` epochs per fold. Deterministic in `seed`.
pub fn proxy_evaluate(
    hidden: &[usize],
    data: &Dataset,
    cfg: &ProxyConfig,
    seed: u64,
) -> Result<f64> {
    if cfg.epochs == 0 || !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidSearch(format!(
            "proxy needs epochs >= 1 and a positive learning rate, got {} and {}",
            cfg.epochs, cfg.learning_rate
        )));
    }
    if data.n_classes() < 2 {
        return Err(Error::Dataset("need at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let folds = data.stratified_folds(cfg.k_folds, &mut rng)?;
    let f = data.n_features();

    let mut total = 0.0;
    for fold in 0..cfg.k_folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != fold).collect();
        let valid: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == fold).collect();
        let (mean, std) = standardizer(data, &train);
        let normalize = |i: usize, out: &mut Vec<f64>| {
            out.clear();
            out.extend(
                data.row(i)
                    .iter()
                    .zip(&mean)
                    .zip(&std)
                    .map(|((x, m), s)| (x - m) / s),
            );
        };

        let mut mlp = Mlp::new(f, hidden, data.n_classes(), &mut rng);
        let mut acts = mlp.buffers(f);
        let mut grads = mlp.buffers(f);
        let mut order = train.clone();
        let mut x = Vec::with_capacity(f);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                normalize(i, &mut x);
                mlp.sgd_step(&x, data.label(i), cfg.learning_rate, &mut acts, &mut grads);
            }
        }
        if cfg.quantized_eval {
            mlp.fake_quantize()?;
        }
        let correct = valid
            .iter()
            .filter(|&&i| {
                normalize(i, &mut x);
                mlp.forward_into(&x, &mut acts);
                argmax_f64(acts.last().unwrap()) == data.label(i)
            })
            .count();
        total += correct as f64 / valid.len() as f64;
    }
    Ok(total / cfg.k_folds as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> Dataset {
        Dataset::two_blobs(30, 4, 1.5, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn separable_data_is_learned() {
        let acc = proxy_evaluate(&[16, 16, 16], &blobs(3), &ProxyConfig::default(), 7).unwrap();
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn deterministic_in_seed() {
        let d = blobs(4);
        let cfg = ProxyConfig::default();
        let a = proxy_evaluate(&[32, 16, 64], &d, &cfg, 11).unwrap();
        let b = proxy_evaluate(&[32, 16, 64], &d, &cfg, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn quantized_eval_stays_close() {
        let cfg = ProxyConfig {
            quantized_eval: true,
            ..ProxyConfig::default()
        };
        let acc = proxy_evaluate(&[32, 32, 32], &blobs(5), &cfg, 2).unwrap();
        assert!(acc > 0.9, "{acc}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = ProxyConfig {
            epochs: 0,
            ..ProxyConfig::default()
        };
        assert!(proxy_evaluate(&[16, 16, 16], &blobs(1), &cfg, 0).is_err());
    }
}

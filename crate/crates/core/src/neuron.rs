//! Neuron dynamics: integrate-and-fire (IF), leaky IF and sum-spikes-and-fire (SSF).
//!
//! IF and LIF integrate per timestep and emit at most one spike per step with
//! subtractive reset. SSF sums the presynaptic spike counts over the whole
//! window, integrates once, and converts the integrated potential directly to
//! an output count.
//!
//! The update rules are generic over [`Potential`] so the same code drives the
//! real-valued reference (`f64`) and the quantized integer datapath (`i64`).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type of a membrane potential.
pub trait Potential:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
{
    fn from_count(count: u32) -> Self;

    /// `floor(max(0, self) / threshold)` clipped to `[0, window]`.
    fn fire_count(self, threshold: Self, window: u32) -> u32;
}

impl Potential for f64 {
    fn from_count(count: u32) -> Self {
        f64::from(count)
    }

    fn fire_count(self, threshold: Self, window: u32) -> u32 {
        let q = (self.max(0.0) / threshold).floor();
        if q >= f64::from(window) {
            window
        } else {
            q as u32
        }
    }
}

impl Potential for i64 {
    fn from_count(count: u32) -> Self {
        i64::from(count)
    }

    fn fire_count(self, threshold: Self, window: u32) -> u32 {
        let q = self.max(0) / threshold;
        q.min(i64::from(window)) as u32
    }
}

/// How the bias enters the window integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// Bias added every timestep (IF) or `T * b` once (SSF).
    #[default]
    Scaled,
    /// Bias added a single time per window (first timestep for IF).
    Once,
}

impl BiasMode {
    pub fn code(self) -> u8 {
        match self {
            BiasMode::Scaled => 0,
            BiasMode::Once => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BiasMode::Scaled),
            1 => Some(BiasMode::Once),
            _ => None,
        }
    }

    /// Bias contribution at zero-based timestep `t`.
    #[inline]
    pub fn step_bias<P: Potential>(self, bias: P, t: usize) -> P {
        match self {
            BiasMode::Scaled => bias,
            BiasMode::Once if t == 0 => bias,
            BiasMode::Once => P::default(),
        }
    }

    /// Bias contribution to a whole-window integration.
    #[inline]
    pub fn window_bias<P: Potential>(self, bias: P, window: u32) -> P {
        match self {
            BiasMode::Scaled => P::from_count(window) * bias,
            BiasMode::Once => bias,
        }
    }
}

/// Binary spike sequence over one window.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SpikeTrain {
    bits: Vec<bool>,
}

impl SpikeTrain {
    pub fn zeros(window: usize) -> Self {
        Self {
            bits: vec![false; window],
        }
    }

    pub fn from_bools(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Builds a train from `0`/`1` values, rejecting anything else.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Representation(format!(
                    "spike bit {b} at timestep {i} is not 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self::from_bools)
    }

    pub fn window(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, t: usize) -> bool {
        self.bits[t]
    }

    pub fn set(&mut self, t: usize, spike: bool) {
        self.bits[t] = spike;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        self.bits.iter().copied()
    }
}

impl fmt::Display for SpikeTrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Number of spikes in one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SpikeCount(u32);

impl SpikeCount {
    pub fn new(count: u32, window: u32) -> Result<Self> {
        if count > window {
            return Err(Error::CountOutOfRange { count, window });
        }
        Ok(Self(count))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

/// Parameters of a single neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    /// Leak factor applied to the previous potential; 1.0 is pure IF.
    pub decay: f64,
    pub bias_mode: BiasMode,
}

impl NeuronParams {
    pub fn new(weights: Vec<f64>, bias: f64, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(Self {
            weights,
            bias,
            threshold,
            decay: 1.0,
            bias_mode: BiasMode::Scaled,
        })
    }

    pub fn with_decay(mut self, decay: f64) -> Result<Self> {
        check_decay(decay)?;
        self.decay = decay;
        Ok(self)
    }

    pub fn with_bias_mode(mut self, mode: BiasMode) -> Self {
        self.bias_mode = mode;
        self
    }

    pub fn fan_in(&self) -> usize {
        self.weights.len()
    }
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveThreshold(threshold))
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if decay > 0.0 && decay <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidDecay(decay))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MembraneState<P = f64> {
    pub potential: P,
    pub spikes_emitted: u32,
}

/// One IF timestep: integrate, fire if `V >= threshold`, subtract one threshold.
///
/// A potential several thresholds above firing still loses only one threshold;
/// the remainder stays as backlog for later steps.
#[inline]
pub fn if_step<P: Potential>(
    state: MembraneState<P>,
    weighted_input: P,
    threshold: P,
) -> (MembraneState<P>, bool) {
    let mut potential = state.potential + weighted_input;
    let spike = potential >= threshold;
    if spike {
        potential = potential - threshold;
    }
    let spikes_emitted = state.spikes_emitted + u32::from(spike);
    (
        MembraneState {
            potential,
            spikes_emitted,
        },
        spike,
    )
}

fn check_trains(inputs: &[SpikeTrain], fan_in: usize, window: usize) -> Result<()> {
    if inputs.len() != fan_in {
        return Err(Error::FanInMismatch {
            inputs: inputs.len(),
            weights: fan_in,
        });
    }
    if let Some(bad) = inputs.iter().find(|s| s.window() != window) {
        return Err(Error::WindowMismatch {
            expected: window,
            actual: bad.window(),
        });
    }
    Ok(())
}

/// Weighted input at timestep `t` including the bias contribution.
#[inline]
pub fn step_input<P: Potential>(
    inputs: &[SpikeTrain],
    weights: &[P],
    bias: P,
    mode: BiasMode,
    t: usize,
) -> P {
    let mut x = mode.step_bias(bias, t);
    for (train, &w) in inputs.iter().zip(weights) {
        if train.get(t) {
            x = x + w;
        }
    }
    x
}

/// Runs an IF (`decay == 1`) or LIF neuron over a window from a zero potential.
pub fn leaky_run<P: Potential>(
    inputs: &[SpikeTrain],
    weights: &[P],
    bias: P,
    threshold: P,
    decay: P,
    mode: BiasMode,
    window: usize,
) -> Result<SpikeTrain> {
    check_trains(inputs, weights.len(), window)?;
    let mut state = MembraneState::<P>::default();
    let mut out = SpikeTrain::zeros(window);
    for t in 0..window {
        let x = step_input(inputs, weights, bias, mode, t);
        state.potential = decay * state.potential;
        let (next, spike) = if_step(state, x, threshold);
        state = next;
        out.set(t, spike);
    }
    Ok(out)
}

/// Integer-or-real IF window run without leak.
pub fn if_run<P: Potential>(
    inputs: &[SpikeTrain],
    weights: &[P],
    bias: P,
    threshold: P,
    mode: BiasMode,
    window: usize,
) -> Result<SpikeTrain> {
    check_trains(inputs, weights.len(), window)?;
    let mut state = MembraneState::<P>::default();
    let mut out = SpikeTrain::zeros(window);
    for t in 0..window {
        let x = step_input(inputs, weights, bias, mode, t);
        let (next, spike) = if_step(state, x, threshold);
        state = next;
        out.set(t, spike);
    }
    Ok(out)
}

pub fn if_run_window(
    inputs: &[SpikeTrain],
    params: &NeuronParams,
    window: usize,
) -> Result<SpikeTrain> {
    check_threshold(params.threshold)?;
    if_run(
        inputs,
        &params.weights,
        params.bias,
        params.threshold,
        params.bias_mode,
        window,
    )
}

/// LIF: the previous potential is scaled by `params.decay` before each integration.
pub fn lif_run_window(
    inputs: &[SpikeTrain],
    params: &NeuronParams,
    window: usize,
) -> Result<SpikeTrain> {
    check_threshold(params.threshold)?;
    check_decay(params.decay)?;
    leaky_run(
        inputs,
        &params.weights,
        params.bias,
        params.threshold,
        params.decay,
        params.bias_mode,
        window,
    )
}

pub fn count_spikes(train: &SpikeTrain) -> SpikeCount {
    SpikeCount(train.iter().filter(|&b| b).count() as u32)
}

/// `u = sum_j counts[j] * w_j + bias term`, generic over the potential type.
pub fn ssf_integrate_with<P: Potential>(
    counts: &[u32],
    weights: &[P],
    bias: P,
    mode: BiasMode,
    window: u32,
) -> Result<P> {
    if counts.len() != weights.len() {
        return Err(Error::FanInMismatch {
            inputs: counts.len(),
            weights: weights.len(),
        });
    }
    let mut u = mode.window_bias(bias, window);
    for (&c, &w) in counts.iter().zip(weights) {
        if c > window {
            return Err(Error::CountOutOfRange { count: c, window });
        }
        u = u + P::from_count(c) * w;
    }
    Ok(u)
}

pub fn ssf_integrate(counts: &[u32], params: &NeuronParams, window: u32) -> Result<f64> {
    ssf_integrate_with(
        counts,
        &params.weights,
        params.bias,
        params.bias_mode,
        window,
    )
}

/// Output count `clip(floor(max(0, u) / threshold), 0, window)`.
pub fn ssf_fire(u: f64, threshold: f64, window: u32) -> Result<SpikeCount> {
    check_threshold(threshold)?;
    Ok(SpikeCount(u.fire_count(threshold, window)))
}

/// Outcome of comparing one IF neuron against its SSF counterpart on a
/// nonnegative per-step input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepresentabilityReport {
    pub if_count: u32,
    pub ssf_count: u32,
    pub equal: bool,
    /// The cumulative input reaches every level `k * threshold`, `k <= ssf_count`,
    /// at distinct timesteps that can each carry one spike.
    pub condition_holds: bool,
}

/// Checks IF against SSF for the per-step inputs `x(t) >= 0`.
///
/// `if_count` comes from stepping an IF neuron; `ssf_count` from the window sum;
/// `condition_holds` from the level crossings of the cumulative sum alone.
pub fn representability_check(
    inputs: &[f64],
    threshold: f64,
    window: usize,
) -> Result<RepresentabilityReport> {
    check_threshold(threshold)?;
    if inputs.len() != window {
        return Err(Error::WindowMismatch {
            expected: window,
            actual: inputs.len(),
        });
    }
    if let Some((index, &value)) = inputs
        .iter()
        .enumerate()
        .find(|(_, v)| v.is_nan() || **v < 0.0)
    {
        return Err(Error::NegativeInput { index, value });
    }

    let mut state = MembraneState::<f64>::default();
    for &x in inputs {
        state = if_step(state, x, threshold).0;
    }
    let if_count = state.spikes_emitted;

    let total: f64 = inputs.iter().sum();
    let ssf_count = total.fire_count(threshold, window as u32);

    // Level k is first reached at step first_reach(k); the k-th spike can be placed
    // no earlier than that and no earlier than one step after spike k-1.
    let mut cumulative = 0.0;
    let mut first_reach = Vec::with_capacity(ssf_count as usize);
    for (t, &x) in inputs.iter().enumerate() {
        cumulative += x;
        while first_reach.len() < ssf_count as usize
            && cumulative >= (first_reach.len() as f64 + 1.0) * threshold
        {
            first_reach.push(t);
        }
    }
    let mut slot: Option<usize> = None;
    let mut condition_holds = first_reach.len() == ssf_count as usize;
    for &t in &first_reach {
        let next = slot.map_or(t, |s| t.max(s + 1));
        if next >= window {
            condition_holds = false;
            break;
        }
        slot = Some(next);
    }

    if if_count > ssf_count {
        return Err(Error::Fault(format!(
            "IF emitted {if_count} spikes, above the SSF bound {ssf_count}"
        )));
    }
    Ok(RepresentabilityReport {
        if_count,
        ssf_count,
        equal: if_count == ssf_count,
        condition_holds,
    })
}

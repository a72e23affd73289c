use std::fmt::Write as _;
use std::ops::{Add, AddAssign};

use super::Phase;
use crate::error::{Error, Result};

macro_rules! event_counts {
    ($($(#[$doc:meta])* $name:ident),* $(,)?) => {
        /// Exact per-inference event counts, the input to energy pricing.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
        pub struct EventCounts {
            $($(#[$doc])* pub $name: u64,)*
        }

        impl EventCounts {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn entries(&self) -> Vec<(&'static str, u64)> {
                vec![$((stringify!($name), self.$name)),*]
            }

            pub fn get_mut(&mut self, name: &str) -> Option<&mut u64> {
                match name {
                    $(stringify!($name) => Some(&mut self.$name),)*
                    _ => None,
                }
            }
        }

        impl AddAssign for EventCounts {
            fn add_assign(&mut self, rhs: Self) {
                $(self.$name += rhs.$name;)*
            }
        }
    };
}

event_counts! {
    /// Weight-memory bursts carrying weights.
    weight_reads,
    /// Weight-memory bursts carrying biases.
    bias_reads,
    act_reads,
    act_writes,
    /// Residual-potential bursts between IF passes.
    spill_reads,
    spill_writes,
    macs,
    /// Conditional accumulations triggered by input spikes (IF).
    accs,
    bias_accs,
    /// Threshold or ReLU-clamp comparisons.
    compares,
    /// SSF count divisions and the conditional-subtract steps they take.
    divides,
    divide_steps,
    /// ANN requantizations, two multiplies each.
    requants,
    /// Element-wise representation changes between layers of different kinds.
    conversions,
    classifier_compares,
    output_flushes,
    fifo_loads,
}

/// Cycle count, event counts and per-phase cycle histogram of one or more inferences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTrace {
    pub cycles: u64,
    pub port_bits: u32,
    pub events: EventCounts,
    pub phase_cycles: [u64; Phase::ALL.len()],
}

impl Default for SimTrace {
    fn default() -> Self {
        Self::new(128)
    }
}

impl SimTrace {
    pub fn new(port_bits: u32) -> Self {
        Self {
            cycles: 0,
            port_bits,
            events: EventCounts::default(),
            phase_cycles: [0; Phase::ALL.len()],
        }
    }

    pub fn phase(&self, phase: Phase) -> u64 {
        self.phase_cycles[phase.index()]
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "cycles {}", self.cycles);
        let _ = writeln!(out, "port_bits {}", self.port_bits);
        for (name, v) in self.events.entries() {
            let _ = writeln!(out, "{name} {v}");
        }
        for p in Phase::ALL {
            let _ = writeln!(out, "phase.{} {}", p.name(), self.phase(p));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut trace = Self::new(128);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| perr(format!("expected `key value`, got `{line}`")))?;
            let value: u64 = value
                .trim()
                .parse()
                .map_err(|_| perr(format!("bad count `{}`", value.trim())))?;
            let slot = match key {
                "cycles" => &mut trace.cycles,
                "port_bits" => {
                    trace.port_bits = u32::try_from(value)
                        .map_err(|_| perr(format!("port width {value} too large")))?;
                    continue;
                }
                k => match k.strip_prefix("phase.") {
                    Some(p) => {
                        let phase = Phase::from_name(p)
                            .ok_or_else(|| Error::UnknownEvent(k.to_string()))?;
                        &mut trace.phase_cycles[phase.index()]
                    }
                    None => trace
                        .events
                        .get_mut(k)
                        .ok_or_else(|| Error::UnknownEvent(k.to_string()))?,
                },
            };
            *slot = value;
        }
        Ok(trace)
    }
}

impl AddAssign<&SimTrace> for SimTrace {
    fn add_assign(&mut self, rhs: &SimTrace) {
        self.cycles += rhs.cycles;
        self.events += rhs.events;
        for (a, b) in self.phase_cycles.iter_mut().zip(rhs.phase_cycles) {
            *a += b;
        }
    }
}

/// Concatenation of two traces recorded on the same port width.
impl Add<&SimTrace> for &SimTrace {
    type Output = SimTrace;

    fn add(self, rhs: &SimTrace) -> SimTrace {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

/// Event counts of a trace.
pub fn trace_event_counts(trace: &SimTrace) -> EventCounts {
    trace.events
}

/// `cycles / clock_hz` seconds.
pub fn trace_latency(trace: &SimTrace, clock_hz: f64) -> Result<f64> {
    if !(clock_hz > 0.0 && clock_hz.is_finite()) {
        return Err(Error::Fault(format!(
            "clock frequency must be positive, got {clock_hz}"
        )));
    }
    Ok(trace.cycles as f64 / clock_hz)
}

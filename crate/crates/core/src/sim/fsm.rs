use crate::error::{Error, Result};

/// Controller phase, one per stage of the layer/neuron loop nest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Idle,
    LoadWeights,
    Accumulate,
    Bias,
    Activate,
    WriteBack,
    Classify,
    Done,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Idle,
        Phase::LoadWeights,
        Phase::Accumulate,
        Phase::Bias,
        Phase::Activate,
        Phase::WriteBack,
        Phase::Classify,
        Phase::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::LoadWeights => "load_weights",
            Phase::Accumulate => "accumulate",
            Phase::Bias => "bias",
            Phase::Activate => "activate",
            Phase::WriteBack => "write_back",
            Phase::Classify => "classify",
            Phase::Done => "done",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Whether the controller may move from `self` to `next`.
    pub fn may_enter(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (Idle, LoadWeights)
                    | (LoadWeights, Accumulate)
                    | (Accumulate, LoadWeights)
                    | (Accumulate, Bias)
                    | (Bias, Activate)
                    | (Activate, WriteBack)
                    | (WriteBack, LoadWeights)
                    | (WriteBack, Accumulate)
                    | (WriteBack, Classify)
                    | (Classify, Done)
                    | (Done, Idle)
            )
    }
}

/// Controller registers: current phase and loop indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FsmState {
    pub phase: Phase,
    pub layer: usize,
    pub neuron_out: usize,
    pub neuron_in: usize,
    pub timestep: u32,
}

impl Default for FsmState {
    fn default() -> Self {
        Self {
            phase: Phase::Idle,
            layer: 0,
            neuron_out: 0,
            neuron_in: 0,
            timestep: 0,
        }
    }
}

impl FsmState {
    pub fn enter(&mut self, next: Phase) -> Result<()> {
        if !self.phase.may_enter(next) {
            return Err(Error::Fault(format!(
                "illegal controller transition {:?} -> {:?}",
                self.phase, next
            )));
        }
        self.phase = next;
        Ok(())
    }
}

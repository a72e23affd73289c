//! Fixtures shared by the benchmarks.

use sparrow_core::network::{Activations, NetworkSpec};
use sparrow_core::reference::{ecg_network, eeg_network, reference_input, Variant};

pub const WINDOWS: [u32; 4] = [3, 7, 15, 31];

pub struct Fixture {
    pub name: String,
    pub spec: NetworkSpec,
    pub input: Activations,
}

/// The ECG-shaped reference model for `variant` at window `t`.
pub fn ecg(variant: Variant, t: u32) -> Fixture {
    let spec = ecg_network(variant, t, 1).expect("reference model builds");
    let input = reference_input(&spec, 2).expect("reference input builds");
    Fixture {
        name: format!("ecg/{}/T{t}", variant.name()),
        spec,
        input,
    }
}

/// The EEG-shaped reference model for `variant` at window `t`.
pub fn eeg(variant: Variant, t: u32) -> Fixture {
    let spec = eeg_network(variant, t, 1).expect("reference model builds");
    let input = reference_input(&spec, 2).expect("reference input builds");
    Fixture {
        name: format!("eeg/{}/T{t}", variant.name()),
        spec,
        input,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        for v in Variant::ALL {
            assert_eq!(ecg(v, 7).spec.window, 7);
            assert_eq!(eeg(v, 31).spec.layers.len(), 3);
        }
    }
}
